//! Node state machines: warm container pools, the coordinator's profile
//! table, and the event handlers tying them together.
//!
//! Every device owns a pre-warmed container pool. An arriving task either
//! takes an available container (its service time fixed at dispatch from
//! the device's calibration) or waits in the device's pending queue. When a
//! container finishes it immediately picks up the pending head, otherwise
//! it returns to the available queue. Pools never grow mid-run: cold starts
//! cost tens of seconds (see the cold-start tables), so on-demand container
//! creation is never worth it and the simulation does not model it.
//!
//! Every device reports a load snapshot to the edge server on a fixed
//! period (default 20 ms). The coordinator's offload decisions read those
//! snapshots, so offload decisions may act on slightly stale state, as
//! the real protocol would.

use std::collections::VecDeque;

use crate::engine::{DeviceId, Engine, Event, EventHandler, NetworkLink, Payload, SendOutcome};
use crate::error::{Error, Result};
use crate::metrics::RunRecorder;
use crate::profiles::{DeviceClass, DeviceProfile};
use crate::schedulers::{decide_coordinator, decide_source, Decision, Policy, Task};
use crate::time::{SimDuration, SimTime};

/// A container currently serving a task.
#[derive(Debug, Clone, Copy)]
pub struct BusyContainer {
    pub container: u32,
    pub task: Task,
    pub completes_at: SimTime,
}

/// One device's warm containers and task backlog.
///
/// Invariant: every container is either available or busy, so
/// `available.len() + busy.len() == warm_pool_size` at every event
/// boundary, and the pending queue is non-empty only while no container
/// is available.
#[derive(Debug)]
pub struct ContainerPool {
    warm_pool_size: u32,
    available: VecDeque<u32>,
    busy: Vec<BusyContainer>,
    pending: VecDeque<Task>,
}

impl ContainerPool {
    pub fn new(warm_pool_size: u32) -> Self {
        ContainerPool {
            warm_pool_size,
            available: (1..=warm_pool_size).collect(),
            busy: Vec::new(),
            pending: VecDeque::new(),
        }
    }

    pub fn warm_pool_size(&self) -> u32 {
        self.warm_pool_size
    }

    /// Containers currently serving a task.
    pub fn running(&self) -> u32 {
        self.busy.len() as u32
    }

    pub fn available_len(&self) -> u32 {
        self.available.len() as u32
    }

    pub fn pending_len(&self) -> u32 {
        self.pending.len() as u32
    }

    pub fn busy(&self) -> &[BusyContainer] {
        &self.busy
    }

    fn take_available(&mut self) -> Option<u32> {
        self.available.pop_front()
    }

    fn return_available(&mut self, container: u32) {
        self.available.push_back(container);
    }

    fn mark_busy(&mut self, container: u32, task: Task, completes_at: SimTime) {
        self.busy.push(BusyContainer {
            container,
            task,
            completes_at,
        });
    }

    /// Removes the busy entry for `container`. An unknown pairing is a
    /// logic error and fails fast.
    fn release(&mut self, container: u32, task_id: u64) -> Task {
        let idx = self
            .busy
            .iter()
            .position(|b| b.container == container && b.task.task_id == task_id)
            .unwrap_or_else(|| panic!("container {container} is not busy with task {task_id}"));
        self.busy.swap_remove(idx).task
    }

    pub fn push_pending(&mut self, task: Task) {
        self.pending.push_back(task);
    }

    fn pop_pending(&mut self) -> Option<Task> {
        self.pending.pop_front()
    }

    /// Checks the pool invariants, returning the violation if any.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.available.len() + self.busy.len() != self.warm_pool_size as usize {
            return Err(format!(
                "available ({}) + busy ({}) != warm_pool_size ({})",
                self.available.len(),
                self.busy.len(),
                self.warm_pool_size
            ));
        }
        let mut seen: Vec<u32> = self
            .available
            .iter()
            .copied()
            .chain(self.busy.iter().map(|b| b.container))
            .collect();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.warm_pool_size as usize {
            return Err("a container id appears in more than one place".to_string());
        }
        if !self.pending.is_empty() && !self.available.is_empty() {
            return Err(format!(
                "{} tasks pending while {} containers are available",
                self.pending.len(),
                self.available.len()
            ));
        }
        Ok(())
    }
}

/// A device's periodically reported load state.
#[derive(Debug, Clone, Copy)]
pub struct ProfileSnapshot {
    pub device: DeviceId,
    pub running_containers: u32,
    pub cpu_load: f64,
    pub pending_count: u32,
    pub taken_at: SimTime,
}

/// The coordinator's view of every registered device's latest snapshot.
#[derive(Debug)]
pub struct GlobalProfileTable {
    latest: Vec<Option<ProfileSnapshot>>,
}

impl GlobalProfileTable {
    pub fn new(device_count: usize) -> Self {
        GlobalProfileTable {
            latest: vec![None; device_count],
        }
    }

    pub fn update(&mut self, snapshot: ProfileSnapshot) {
        let idx = snapshot.device.index();
        if idx >= self.latest.len() {
            self.latest.resize(idx + 1, None);
        }
        self.latest[idx] = Some(snapshot);
    }

    pub fn latest(&self, device: DeviceId) -> Option<ProfileSnapshot> {
        self.latest.get(device.index()).copied().flatten()
    }

    pub fn len(&self) -> usize {
        self.latest.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A simulated device: its calibration, its uplink to the edge server, its
/// container pool, and a constant exogenous CPU load.
#[derive(Debug)]
pub struct Device {
    pub id: DeviceId,
    pub name: String,
    pub profile: DeviceProfile,
    link: Option<NetworkLink>,
    pub pool: ContainerPool,
    pub cpu_load: f64,
}

impl Device {
    pub fn new(
        id: DeviceId,
        name: String,
        profile: DeviceProfile,
        link: Option<NetworkLink>,
        warm_pool_size: Option<u32>,
        cpu_load: f64,
    ) -> Self {
        let pool_size = warm_pool_size.unwrap_or(profile.warm_pool_size);
        Device {
            id,
            name,
            pool: ContainerPool::new(pool_size),
            profile,
            link,
            cpu_load,
        }
    }

    /// The device's link to the edge server. The edge server has none.
    pub fn uplink(&self) -> &NetworkLink {
        self.link
            .as_ref()
            .unwrap_or_else(|| panic!("device `{}` has no uplink", self.name))
    }

    pub fn snapshot(&self, now: SimTime) -> ProfileSnapshot {
        ProfileSnapshot {
            device: self.id,
            running_containers: self.pool.running(),
            cpu_load: self.cpu_load,
            pending_count: self.pool.pending_len(),
            taken_at: now,
        }
    }

    fn service_time(&self, task: &Task) -> SimDuration {
        self.profile
            .predict_process_time(self.pool.running(), self.cpu_load, task.size_kb)
            .expect("task and device parameters validated at configuration time")
    }
}

/// Input for registering one device with the world.
#[derive(Debug, Clone)]
pub struct DeviceSetup {
    pub name: String,
    pub profile: DeviceProfile,
    /// Link to the edge server; `None` only for the edge server itself.
    pub link: Option<NetworkLink>,
    /// Overrides the profile's default warm pool size.
    pub warm_pool_size: Option<u32>,
    pub cpu_load: f64,
}

/// Run-wide knobs that are not part of the workload.
#[derive(Debug, Clone)]
pub struct WorldSettings {
    pub policy: Policy,
    /// Period of the profile-update protocol.
    pub update_period: SimDuration,
    /// Size of one profile-update message.
    pub profile_msg_kb: f64,
    /// Check pool and staleness invariants after every event.
    pub validate_invariants: bool,
    /// Optional hard stop for the virtual clock.
    pub max_sim_time: Option<SimDuration>,
}

impl Default for WorldSettings {
    fn default() -> Self {
        WorldSettings {
            policy: Policy::Dds,
            update_period: SimDuration::from_ms(20.0),
            profile_msg_kb: 0.1,
            validate_invariants: true,
            max_sim_time: None,
        }
    }
}

impl WorldSettings {
    pub fn with_policy(policy: Policy) -> Self {
        WorldSettings {
            policy,
            ..WorldSettings::default()
        }
    }
}

/// The full simulated topology plus per-run bookkeeping. Drives all node
/// state machines from inside the single-threaded event loop.
pub struct World {
    devices: Vec<Device>,
    edge: Option<DeviceId>,
    settings: WorldSettings,
    table: GlobalProfileTable,
    recorder: RunRecorder,
    warnings: Vec<String>,
    started: bool,
    stopped: bool,
}

impl World {
    pub fn new(settings: WorldSettings, total_tasks: usize) -> Self {
        World {
            devices: Vec::new(),
            edge: None,
            settings,
            table: GlobalProfileTable::new(0),
            recorder: RunRecorder::new(total_tasks),
            warnings: Vec::new(),
            started: false,
            stopped: false,
        }
    }

    /// Adds a device to the topology: it joins the coordinator's profile
    /// table with an initial idle snapshot and its periodic profile updates
    /// begin at the current instant.
    pub fn register_device(&mut self, setup: DeviceSetup, engine: &mut Engine) -> Result<DeviceId> {
        assert!(!self.started, "cannot register devices after start");
        if self.devices.iter().any(|d| d.name == setup.name) {
            return Err(Error::Config(format!(
                "duplicate device id `{}`",
                setup.name
            )));
        }
        if !(0.0..=1.0).contains(&setup.cpu_load) {
            return Err(Error::Config(format!(
                "device `{}`: cpu_load must be within [0, 1], got {}",
                setup.name, setup.cpu_load
            )));
        }
        match setup.profile.device_class {
            DeviceClass::EdgeServer => {
                if self.edge.is_some() {
                    return Err(Error::Config(
                        "exactly one edge server is required, found more than one".to_string(),
                    ));
                }
            }
            DeviceClass::EndDevice => {
                if setup.link.is_none() {
                    return Err(Error::Config(format!(
                        "end device `{}` needs a link to the edge server",
                        setup.name
                    )));
                }
            }
        }
        if let Some(link) = &setup.link {
            link.validate()?;
        }
        if let Some(size) = setup.warm_pool_size {
            if size > setup.profile.warm_table.max_container_count() {
                return Err(Error::Config(format!(
                    "device `{}`: warm_pool_size {} exceeds the largest calibrated container count {}",
                    setup.name,
                    size,
                    setup.profile.warm_table.max_container_count()
                )));
            }
        }
        let id = DeviceId(self.devices.len());
        let device = Device::new(
            id,
            setup.name,
            setup.profile,
            setup.link,
            setup.warm_pool_size,
            setup.cpu_load,
        );
        if device.pool.warm_pool_size() == 0 {
            self.warnings.push(format!(
                "device `{}` has warm_pool_size 0: tasks sent to it will wait forever",
                device.name
            ));
        }
        if device.profile.device_class == DeviceClass::EdgeServer {
            self.edge = Some(id);
        }
        self.table.update(device.snapshot(engine.now()));
        engine.schedule_at(engine.now(), Event::ProfileTick { device: id });
        self.devices.push(device);
        Ok(id)
    }

    /// Finishes topology construction. Fails unless exactly one edge
    /// server was registered.
    pub fn start(&mut self, engine: &mut Engine) -> Result<()> {
        if self.edge.is_none() {
            return Err(Error::Config(
                "exactly one edge server is required, found none".to_string(),
            ));
        }
        engine.set_device_names(self.devices.iter().map(|d| d.name.clone()).collect());
        if let Some(max) = self.settings.max_sim_time {
            engine.schedule_at(SimTime::ZERO + max, Event::ExperimentEnd);
        }
        self.started = true;
        Ok(())
    }

    pub fn edge(&self) -> DeviceId {
        self.edge.expect("topology has an edge server")
    }

    pub fn device(&self, id: DeviceId) -> &Device {
        &self.devices[id.index()]
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn device_by_name(&self, name: &str) -> Option<DeviceId> {
        self.devices.iter().find(|d| d.name == name).map(|d| d.id)
    }

    pub fn device_names(&self) -> Vec<String> {
        self.devices.iter().map(|d| d.name.clone()).collect()
    }

    pub fn table(&self) -> &GlobalProfileTable {
        &self.table
    }

    pub fn recorder(&self) -> &RunRecorder {
        &self.recorder
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Dispatches a task onto an available container, or queues it. The
    /// service time is fixed at dispatch from the device's calibration at
    /// the dispatch-time concurrency.
    fn dispatch_or_enqueue(&mut self, device_id: DeviceId, task: Task, engine: &mut Engine) {
        let device = &mut self.devices[device_id.index()];
        match device.pool.take_available() {
            Some(container) => {
                let service = device.service_time(&task);
                let completes_at = engine.now() + service;
                device.pool.mark_busy(container, task, completes_at);
                self.recorder.on_executed(task.task_id, device_id);
                engine.schedule_at(
                    completes_at,
                    Event::ContainerComplete {
                        device: device_id,
                        container,
                        task_id: task.task_id,
                    },
                );
            }
            None => device.pool.push_pending(task),
        }
    }

    fn on_task_arrival(&mut self, task: Task, engine: &mut Engine) {
        debug_assert_eq!(task.arrival, engine.now());
        self.recorder.on_arrival(task.task_id, engine.now());
        let origin = task.origin;
        let device = &self.devices[origin.index()];
        let decision = decide_source(
            self.settings.policy,
            &task,
            &device.pool,
            &device.profile,
            device.cpu_load,
            engine.now(),
            self.edge(),
        );
        match decision {
            Decision::RunLocal => self.dispatch_or_enqueue(origin, task, engine),
            // Degenerate topologies can make the source its own target.
            Decision::OffloadTo(target) if target == origin => {
                self.dispatch_or_enqueue(origin, task, engine)
            }
            Decision::OffloadTo(target) => {
                let link = *self.devices[origin.index()].uplink();
                let outcome = engine.send_lossy(
                    origin,
                    target,
                    task.size_kb,
                    &link,
                    Payload::TaskTransfer { task },
                );
                if outcome == SendOutcome::Lost {
                    self.recorder.on_lost(task.task_id);
                }
            }
        }
    }

    fn on_task_delivery(&mut self, to: DeviceId, task: Task, engine: &mut Engine) {
        if to != self.edge() {
            // Worker end devices run whatever the coordinator sends them.
            self.dispatch_or_enqueue(to, task, engine);
            return;
        }
        let decision = decide_coordinator(
            self.settings.policy,
            &task,
            engine.now(),
            &self.table,
            &self.devices,
            self.edge(),
        );
        match decision {
            Decision::RunLocal => self.dispatch_or_enqueue(to, task, engine),
            Decision::OffloadTo(worker) => {
                let link = *self.devices[worker.index()].uplink();
                let outcome = engine.send_lossy(
                    to,
                    worker,
                    task.size_kb,
                    &link,
                    Payload::TaskTransfer { task },
                );
                if outcome == SendOutcome::Lost {
                    self.recorder.on_lost(task.task_id);
                }
            }
        }
    }

    fn on_container_complete(
        &mut self,
        device_id: DeviceId,
        container: u32,
        task_id: u64,
        engine: &mut Engine,
    ) {
        let now = engine.now();
        let finished = self.devices[device_id.index()]
            .pool
            .release(container, task_id);

        // Route the result toward the task's origin. A remote worker's
        // result goes through the edge server; latency accounting includes
        // that hop.
        if device_id == finished.origin {
            self.recorder.on_completed(task_id, now);
        } else {
            let result_kb = self.devices[device_id.index()].profile.result_size_kb;
            let payload = Payload::ResultReturn {
                task_id,
                origin: finished.origin,
                executed_on: device_id,
            };
            if device_id == self.edge() {
                let link = *self.devices[finished.origin.index()].uplink();
                engine.send_reliable(device_id, finished.origin, result_kb, &link, payload);
            } else {
                let link = *self.devices[device_id.index()].uplink();
                engine.send_reliable(device_id, self.edge(), result_kb, &link, payload);
            }
        }

        // The freed container immediately picks up the pending head.
        let device = &mut self.devices[device_id.index()];
        match device.pool.pop_pending() {
            Some(next) => {
                let service = device.service_time(&next);
                let completes_at = now + service;
                device.pool.mark_busy(container, next, completes_at);
                self.recorder.on_executed(next.task_id, device_id);
                engine.schedule_at(
                    completes_at,
                    Event::ContainerComplete {
                        device: device_id,
                        container,
                        task_id: next.task_id,
                    },
                );
            }
            None => device.pool.return_available(container),
        }
    }

    fn on_result_delivery(
        &mut self,
        to: DeviceId,
        task_id: u64,
        origin: DeviceId,
        executed_on: DeviceId,
        engine: &mut Engine,
    ) {
        if to == origin {
            self.recorder.on_completed(task_id, engine.now());
        } else {
            debug_assert_eq!(to, self.edge(), "results route through the edge server");
            let result_kb = self.devices[executed_on.index()].profile.result_size_kb;
            let link = *self.devices[origin.index()].uplink();
            engine.send_reliable(
                to,
                origin,
                result_kb,
                &link,
                Payload::ResultReturn {
                    task_id,
                    origin,
                    executed_on,
                },
            );
        }
    }

    fn on_profile_tick(&mut self, device_id: DeviceId, engine: &mut Engine) {
        let snapshot = self.devices[device_id.index()].snapshot(engine.now());
        if device_id == self.edge() {
            self.table.update(snapshot);
        } else {
            let link = *self.devices[device_id.index()].uplink();
            engine.send_reliable(
                device_id,
                self.edge(),
                self.settings.profile_msg_kb,
                &link,
                Payload::ProfileUpdate { snapshot },
            );
        }
        engine.schedule_in(
            self.settings.update_period,
            Event::ProfileTick { device: device_id },
        );
    }

    /// Checks pool conservation on every device and bounds the staleness
    /// of each snapshot in the coordinator's table by one update period
    /// plus its in-flight delivery delay.
    fn validate(&self, now: SimTime) {
        for device in &self.devices {
            if let Err(reason) = device.pool.validate() {
                panic!("pool invariant violated on `{}`: {reason}", device.name);
            }
        }
        for device in &self.devices {
            if let Some(snapshot) = self.table.latest(device.id) {
                let delivery = if device.id == self.edge() {
                    SimDuration::ZERO
                } else {
                    device.uplink().transfer_time(self.settings.profile_msg_kb)
                };
                let bound = self.settings.update_period + delivery;
                let staleness = now.since(snapshot.taken_at);
                assert!(
                    staleness <= bound,
                    "snapshot of `{}` is stale: {staleness} > {bound}",
                    device.name
                );
            }
        }
    }
}

impl EventHandler for World {
    fn handle(&mut self, event: Event, engine: &mut Engine) {
        match event {
            Event::TaskArrival { task } => self.on_task_arrival(task, engine),
            Event::MessageDelivery { to, payload, .. } => match payload {
                Payload::TaskTransfer { task } => self.on_task_delivery(to, task, engine),
                Payload::ResultReturn {
                    task_id,
                    origin,
                    executed_on,
                } => self.on_result_delivery(to, task_id, origin, executed_on, engine),
                Payload::ProfileUpdate { snapshot } => {
                    debug_assert_eq!(to, self.edge());
                    self.table.update(snapshot);
                }
            },
            Event::ContainerComplete {
                device,
                container,
                task_id,
            } => self.on_container_complete(device, container, task_id, engine),
            Event::ProfileTick { device } => self.on_profile_tick(device, engine),
            Event::ExperimentEnd => self.stopped = true,
        }
        if self.settings.validate_invariants {
            self.validate(engine.now());
        }
    }

    fn finished(&self) -> bool {
        self.stopped || self.recorder.all_terminal()
    }
}
