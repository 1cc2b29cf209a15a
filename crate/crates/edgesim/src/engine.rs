//! Deterministic discrete-event engine.
//!
//! A single virtual clock, an ordered event queue, and a message transport
//! with bandwidth/propagation delay and optional datagram loss. Events are
//! dispatched in `(timestamp, insertion sequence)` order, so two events
//! scheduled for the same instant fire in the order they were scheduled.
//! All randomness comes from one seeded generator and is consumed only for
//! loss draws, so runs with the same seed (and runs with no lossy links)
//! replay identically.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::nodes::ProfileSnapshot;
use crate::schedulers::Task;
use crate::time::{SimDuration, SimTime};

/// Index of a device in the topology. Assigned in registration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DeviceId(pub usize);

impl DeviceId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A point-to-point link between an end device and the edge server.
///
/// Loss applies only to task-bearing datagrams (image uploads and offload
/// hops); result returns and profile updates are delivered reliably.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkLink {
    pub bandwidth_kb_per_ms: f64,
    #[serde(default)]
    pub propagation_ms: f64,
    #[serde(default)]
    pub loss_probability: f64,
}

impl NetworkLink {
    pub fn new(
        bandwidth_kb_per_ms: f64,
        propagation_ms: f64,
        loss_probability: f64,
    ) -> Result<Self> {
        let link = NetworkLink {
            bandwidth_kb_per_ms,
            propagation_ms,
            loss_probability,
        };
        link.validate()?;
        Ok(link)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.bandwidth_kb_per_ms.is_finite() || self.bandwidth_kb_per_ms <= 0.0 {
            return Err(Error::Config(format!(
                "link bandwidth must be positive, got {}",
                self.bandwidth_kb_per_ms
            )));
        }
        if !self.propagation_ms.is_finite() || self.propagation_ms < 0.0 {
            return Err(Error::Config(format!(
                "link propagation must be non-negative, got {}",
                self.propagation_ms
            )));
        }
        if !(0.0..=1.0).contains(&self.loss_probability) {
            return Err(Error::Config(format!(
                "loss probability must be within [0, 1], got {}",
                self.loss_probability
            )));
        }
        Ok(())
    }

    /// One-way delivery delay for a payload of `size_kb`.
    pub fn transfer_time(&self, size_kb: f64) -> SimDuration {
        SimDuration::from_ms(size_kb / self.bandwidth_kb_per_ms + self.propagation_ms)
    }
}

/// Message content carried by a [`Event::MessageDelivery`].
#[derive(Debug, Clone)]
pub enum Payload {
    /// A task (image) travelling toward the device that will run it.
    TaskTransfer { task: Task },
    /// A finished task's result travelling back toward its origin.
    ResultReturn {
        task_id: u64,
        origin: DeviceId,
        executed_on: DeviceId,
    },
    /// A periodic load report for the coordinator's profile table.
    ProfileUpdate { snapshot: ProfileSnapshot },
}

/// A timestamped simulation occurrence.
#[derive(Debug, Clone)]
pub enum Event {
    TaskArrival {
        task: Task,
    },
    MessageDelivery {
        from: DeviceId,
        to: DeviceId,
        payload: Payload,
    },
    ContainerComplete {
        device: DeviceId,
        container: u32,
        task_id: u64,
    },
    ProfileTick {
        device: DeviceId,
    },
    ExperimentEnd,
}

impl Event {
    fn kind_name(&self) -> &'static str {
        match self {
            Event::TaskArrival { .. } => "TaskArrival",
            Event::MessageDelivery { payload, .. } => match payload {
                Payload::TaskTransfer { .. } => "MessageDelivery:task",
                Payload::ResultReturn { .. } => "MessageDelivery:result",
                Payload::ProfileUpdate { .. } => "MessageDelivery:profile",
            },
            Event::ContainerComplete { .. } => "ContainerComplete",
            Event::ProfileTick { .. } => "ProfileTick",
            Event::ExperimentEnd => "ExperimentEnd",
        }
    }
}

/// Queue entry; total order is `(at, seq)` so equal timestamps dispatch in
/// insertion order.
struct Scheduled {
    at: SimTime,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want the earliest first.
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Outcome of handing a datagram to a lossy link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendOutcome {
    /// Delivery scheduled for the given instant.
    Delivered(SimTime),
    /// Dropped in transit; no delivery will occur.
    Lost,
}

/// Receives dispatched events. Implemented by the node layer.
pub trait EventHandler {
    fn handle(&mut self, event: Event, engine: &mut Engine);

    /// When true the run loop stops before dispatching further events.
    fn finished(&self) -> bool {
        false
    }
}

/// Safety bound on dispatched events per run.
const MAX_EVENTS: u64 = 50_000_000;

pub struct Engine {
    now: SimTime,
    queue: BinaryHeap<Scheduled>,
    next_seq: u64,
    rng: ChaCha8Rng,
    dispatched: u64,
    trace: Option<Vec<String>>,
    device_names: Vec<String>,
}

impl Engine {
    pub fn new(seed: u64) -> Self {
        Engine {
            now: SimTime::ZERO,
            queue: BinaryHeap::new(),
            next_seq: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            dispatched: 0,
            trace: None,
            device_names: Vec::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Enables the per-event trace (one line per dispatched event).
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace_lines(&self) -> Option<&[String]> {
        self.trace.as_deref()
    }

    /// Names used when formatting trace lines.
    pub fn set_device_names(&mut self, names: Vec<String>) {
        self.device_names = names;
    }

    /// Enqueues an event for dispatch at `at`. Scheduling into the past is
    /// a logic error and fails fast.
    pub fn schedule_at(&mut self, at: SimTime, event: Event) {
        assert!(
            at >= self.now,
            "scheduled event in the past: {at} < now {}",
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Scheduled { at, seq, event });
    }

    pub fn schedule_in(&mut self, delay: SimDuration, event: Event) {
        self.schedule_at(self.now + delay, event);
    }

    /// Sends a task-bearing datagram over a lossy link. With probability
    /// `loss_probability` the payload is dropped and the caller must record
    /// the loss; otherwise delivery is scheduled after the transfer time.
    pub fn send_lossy(
        &mut self,
        from: DeviceId,
        to: DeviceId,
        size_kb: f64,
        link: &NetworkLink,
        payload: Payload,
    ) -> SendOutcome {
        let p = link.loss_probability;
        // Draw only when the outcome is actually random, so loss-free runs
        // are seed-independent.
        let lost = if p <= 0.0 {
            false
        } else if p >= 1.0 {
            true
        } else {
            self.rng.gen::<f64>() < p
        };
        if lost {
            return SendOutcome::Lost;
        }
        let at = self.now + link.transfer_time(size_kb);
        self.schedule_at(at, Event::MessageDelivery { from, to, payload });
        SendOutcome::Delivered(at)
    }

    /// Sends a message that is never lost (results, profile updates).
    pub fn send_reliable(
        &mut self,
        from: DeviceId,
        to: DeviceId,
        size_kb: f64,
        link: &NetworkLink,
        payload: Payload,
    ) -> SimTime {
        let at = self.now + link.transfer_time(size_kb);
        self.schedule_at(at, Event::MessageDelivery { from, to, payload });
        at
    }

    /// Dispatches events in `(at, seq)` order until the queue is empty,
    /// `ExperimentEnd` fires, or the handler reports completion. Returns
    /// the final clock.
    pub fn run_until_idle<H: EventHandler>(&mut self, handler: &mut H) -> Result<SimTime> {
        while let Some(scheduled) = self.queue.pop() {
            debug_assert!(scheduled.at >= self.now, "event queue regressed");
            self.now = scheduled.at;
            self.dispatched += 1;
            if self.dispatched > MAX_EVENTS {
                return Err(Error::Runaway {
                    events: self.dispatched,
                    clock_ms: self.now.as_ms(),
                });
            }
            if let Some(trace) = &mut self.trace {
                trace.push(format_trace_line(&scheduled, &self.device_names));
            }
            let end = matches!(scheduled.event, Event::ExperimentEnd);
            handler.handle(scheduled.event, self);
            if end || handler.finished() {
                break;
            }
        }
        Ok(self.now)
    }
}

fn format_trace_line(scheduled: &Scheduled, names: &[String]) -> String {
    let name = |id: DeviceId| -> &str { names.get(id.index()).map(String::as_str).unwrap_or("?") };
    let (device, task) = match &scheduled.event {
        Event::TaskArrival { task } => (name(task.origin).to_string(), task.task_id.to_string()),
        Event::MessageDelivery { to, payload, .. } => {
            let task = match payload {
                Payload::TaskTransfer { task } => task.task_id.to_string(),
                Payload::ResultReturn { task_id, .. } => task_id.to_string(),
                Payload::ProfileUpdate { .. } => "-".to_string(),
            };
            (name(*to).to_string(), task)
        }
        Event::ContainerComplete {
            device, task_id, ..
        } => (name(*device).to_string(), task_id.to_string()),
        Event::ProfileTick { device } => (name(*device).to_string(), "-".to_string()),
        Event::ExperimentEnd => ("-".to_string(), "-".to_string()),
    };
    format!(
        "{:.3} {} {} {}",
        scheduled.at.as_ms(),
        scheduled.event.kind_name(),
        device,
        task
    )
}
