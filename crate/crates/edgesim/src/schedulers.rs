//! Scheduling policies and their decision functions.
//!
//! Two decision points exist per task. The source device decides whether to
//! run locally or hand the task to the edge server; the edge server's
//! coordinator then decides whether to keep it or push it to another end
//! device. Four policies are implemented:
//!
//! * `aor`: run everything on the source device,
//! * `aoe`: offload everything to the edge server,
//! * `eods`: odd task ids local, even ids to the edge server,
//! * `dds`: local whenever the profile-predicted total time fits the
//!   remaining deadline budget, otherwise offload; the coordinator may
//!   further push work to an idle end device when that also fits.
//!
//! All decisions are pure functions of the task, the decision-time state
//! snapshots, and the configuration.

use std::fmt;
use std::str::FromStr;

use crate::engine::{DeviceId, NetworkLink};
use crate::nodes::{ContainerPool, Device, GlobalProfileTable, ProfileSnapshot};
use crate::profiles::{DeviceClass, DeviceProfile};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    Aor,
    Aoe,
    Eods,
    Dds,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Aor, Policy::Aoe, Policy::Eods, Policy::Dds];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Aor => "aor",
            Policy::Aoe => "aoe",
            Policy::Eods => "eods",
            Policy::Dds => "dds",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "aor" => Ok(Policy::Aor),
            "aoe" => Ok(Policy::Aoe),
            "eods" => Ok(Policy::Eods),
            "dds" => Ok(Policy::Dds),
            other => Err(crate::error::Error::Config(format!(
                "unknown policy `{other}` (expected aor, aoe, eods, or dds)"
            ))),
        }
    }
}

/// Where a task should run next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    RunLocal,
    OffloadTo(DeviceId),
}

/// One image-processing job.
#[derive(Debug, Clone, Copy)]
pub struct Task {
    /// 1-based sequence number, contiguous within a run.
    pub task_id: u64,
    pub size_kb: f64,
    pub arrival: SimTime,
    /// The experiment's per-task time constraint.
    pub deadline: SimDuration,
    pub origin: DeviceId,
}

/// Deadline budget consumed so far.
pub fn elapsed(task: &Task, now: SimTime) -> SimDuration {
    now.since(task.arrival)
}

/// The source device's decision for a newly arrived task.
pub fn decide_source(
    policy: Policy,
    task: &Task,
    pool: &ContainerPool,
    profile: &DeviceProfile,
    cpu_load: f64,
    now: SimTime,
    edge: DeviceId,
) -> Decision {
    match policy {
        Policy::Aor => Decision::RunLocal,
        Policy::Aoe => Decision::OffloadTo(edge),
        Policy::Eods => {
            if task.task_id % 2 == 1 {
                Decision::RunLocal
            } else {
                Decision::OffloadTo(edge)
            }
        }
        Policy::Dds => {
            let budget = task.deadline.saturating_sub(elapsed(task, now));
            let predicted = profile
                .predict_total_time(
                    None,
                    pool.running(),
                    cpu_load,
                    task.size_kb,
                    pool.pending_len(),
                )
                .expect("task parameters validated at configuration time")
                .total();
            // Local-first: a tie goes local.
            if predicted <= budget {
                Decision::RunLocal
            } else {
                Decision::OffloadTo(edge)
            }
        }
    }
}

/// Predicted end-to-end time if the coordinator forwards `task` to
/// `worker`, judged from the worker's last profile snapshot: the forward
/// hop, the worker's queueing and processing, the result hop back to the
/// edge server, and the final hop to the task's origin.
pub fn predict_remote_total(
    worker: &Device,
    snapshot: &ProfileSnapshot,
    task: &Task,
    origin_uplink: Option<&NetworkLink>,
) -> SimDuration {
    let estimate = worker
        .profile
        .predict_total_time(
            Some(worker.uplink()),
            snapshot.running_containers,
            snapshot.cpu_load,
            task.size_kb,
            snapshot.pending_count,
        )
        .expect("task parameters validated at configuration time");
    let origin_hop = match origin_uplink {
        Some(link) => link.transfer_time(worker.profile.result_size_kb),
        None => SimDuration::ZERO,
    };
    estimate.total() + origin_hop
}

/// The edge server's decision for a task it received. Only `dds` ever
/// offloads further: it considers worker end devices (excluding the task's
/// origin) whose snapshot shows a free warm container and whose predicted
/// total fits the remaining budget, and picks the fastest; ties break on
/// device name. Anything else runs on the edge server.
pub fn decide_coordinator(
    policy: Policy,
    task: &Task,
    now: SimTime,
    table: &GlobalProfileTable,
    devices: &[Device],
    edge: DeviceId,
) -> Decision {
    if policy != Policy::Dds {
        return Decision::RunLocal;
    }
    let budget = task.deadline.saturating_sub(elapsed(task, now));
    let origin_uplink = if task.origin == edge {
        None
    } else {
        Some(devices[task.origin.index()].uplink())
    };
    let mut best: Option<(SimDuration, &str, DeviceId)> = None;
    for worker in devices {
        if worker.id == edge
            || worker.id == task.origin
            || worker.profile.device_class != DeviceClass::EndDevice
        {
            continue;
        }
        let Some(snapshot) = table.latest(worker.id) else {
            continue;
        };
        // Never pick a device whose snapshot shows no available container.
        if snapshot.running_containers >= worker.pool.warm_pool_size() {
            continue;
        }
        let predicted = predict_remote_total(worker, &snapshot, task, origin_uplink);
        if predicted > budget {
            continue;
        }
        let candidate = (predicted, worker.name.as_str(), worker.id);
        let better = match &best {
            None => true,
            Some((t, n, _)) => (predicted, worker.name.as_str()) < (*t, *n),
        };
        if better {
            best = Some(candidate);
        }
    }
    match best {
        Some((_, _, id)) => Decision::OffloadTo(id),
        None => Decision::RunLocal,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::test_fixtures::{edge_profile, pi_profile};

    fn task(id: u64, deadline_ms: f64, arrival_ms: f64) -> Task {
        Task {
            task_id: id,
            size_kb: 29.0,
            arrival: SimTime::from_ms(arrival_ms),
            deadline: SimDuration::from_ms(deadline_ms),
            origin: DeviceId(1),
        }
    }

    const EDGE: DeviceId = DeviceId(0);

    #[test]
    fn elapsed_is_now_minus_arrival() {
        let t = task(1, 1000.0, 100.0);
        assert_eq!(elapsed(&t, SimTime::from_ms(100.0)), SimDuration::ZERO);
        assert_eq!(
            elapsed(&t, SimTime::from_ms(350.0)),
            SimDuration::from_ms(250.0)
        );
    }

    #[test]
    fn dds_runs_local_when_prediction_fits() {
        // Idle end device predicts 597 ms; a 1000 ms constraint fits.
        let pool = ContainerPool::new(2);
        let profile = pi_profile();
        let d = decide_source(
            Policy::Dds,
            &task(1, 1000.0, 0.0),
            &pool,
            &profile,
            0.0,
            SimTime::ZERO,
            EDGE,
        );
        assert_eq!(d, Decision::RunLocal);
    }

    #[test]
    fn dds_offloads_when_prediction_exceeds_budget() {
        let pool = ContainerPool::new(2);
        let profile = pi_profile();
        let d = decide_source(
            Policy::Dds,
            &task(1, 500.0, 0.0),
            &pool,
            &profile,
            0.0,
            SimTime::ZERO,
            EDGE,
        );
        assert_eq!(d, Decision::OffloadTo(EDGE));
    }

    #[test]
    fn dds_tie_goes_local() {
        let pool = ContainerPool::new(2);
        let profile = pi_profile();
        let d = decide_source(
            Policy::Dds,
            &task(1, 597.0, 0.0),
            &pool,
            &profile,
            0.0,
            SimTime::ZERO,
            EDGE,
        );
        assert_eq!(d, Decision::RunLocal);
    }

    #[test]
    fn dds_budget_shrinks_with_elapsed_time() {
        // 597 ms prediction against a 1000 ms deadline of which 450 ms is
        // already spent: 597 > 550, so the task leaves.
        let pool = ContainerPool::new(2);
        let profile = pi_profile();
        let d = decide_source(
            Policy::Dds,
            &task(1, 1000.0, 0.0),
            &pool,
            &profile,
            0.0,
            SimTime::from_ms(450.0),
            EDGE,
        );
        assert_eq!(d, Decision::OffloadTo(EDGE));
    }

    #[test]
    fn eods_follows_task_id_parity_only() {
        let pool = ContainerPool::new(2);
        let profile = pi_profile();
        for (id, expected) in [
            (7, Decision::RunLocal),
            (8, Decision::OffloadTo(EDGE)),
            (1, Decision::RunLocal),
            (1000, Decision::OffloadTo(EDGE)),
        ] {
            let d = decide_source(
                Policy::Eods,
                &task(id, 1.0, 0.0),
                &pool,
                &profile,
                0.9,
                SimTime::from_ms(0.5),
                EDGE,
            );
            assert_eq!(d, expected, "task {id}");
        }
    }

    #[test]
    fn aor_and_aoe_ignore_all_state() {
        let profile = pi_profile();
        for pool_size in [1, 2] {
            let pool = ContainerPool::new(pool_size);
            for deadline in [1.0, 100000.0] {
                assert_eq!(
                    decide_source(
                        Policy::Aor,
                        &task(3, deadline, 0.0),
                        &pool,
                        &profile,
                        1.0,
                        SimTime::ZERO,
                        EDGE
                    ),
                    Decision::RunLocal
                );
                assert_eq!(
                    decide_source(
                        Policy::Aoe,
                        &task(3, deadline, 0.0),
                        &pool,
                        &profile,
                        0.0,
                        SimTime::ZERO,
                        EDGE
                    ),
                    Decision::OffloadTo(EDGE)
                );
            }
        }
    }

    #[test]
    fn dds_is_local_first_whenever_feasible() {
        // Whenever the local prediction fits the remaining budget the
        // decision must be RunLocal, over a spread of queue states.
        use rand::{Rng, SeedableRng};
        let profile = pi_profile();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..500 {
            let mut pool = ContainerPool::new(2);
            let backlog = rng.gen_range(0..5);
            for i in 0..backlog {
                pool.push_pending(task(100 + i, 1000.0, 0.0));
            }
            let deadline: f64 = rng.gen_range(100.0..4000.0);
            let t = task(1, deadline, 0.0);
            let predicted = profile
                .predict_total_time(None, pool.running(), 0.0, t.size_kb, pool.pending_len())
                .unwrap()
                .total();
            let d = decide_source(Policy::Dds, &t, &pool, &profile, 0.0, SimTime::ZERO, EDGE);
            if predicted <= t.deadline {
                assert_eq!(d, Decision::RunLocal);
            } else {
                assert_eq!(d, Decision::OffloadTo(EDGE));
            }
        }
    }

    // Coordinator tests build a tiny topology by hand.
    fn worker(id: usize, name: &str) -> Device {
        Device::new(
            DeviceId(id),
            name.to_string(),
            pi_profile(),
            Some(NetworkLink::new(5.0, 1.0, 0.0).unwrap()),
            None,
            0.0,
        )
    }

    fn edge_device() -> Device {
        Device::new(
            DeviceId(0),
            "edge".to_string(),
            edge_profile(),
            None,
            None,
            0.0,
        )
    }

    fn snapshot(id: usize, running: u32, pending: u32) -> ProfileSnapshot {
        ProfileSnapshot {
            device: DeviceId(id),
            running_containers: running,
            cpu_load: 0.0,
            pending_count: pending,
            taken_at: SimTime::ZERO,
        }
    }

    #[test]
    fn coordinator_runs_local_without_workers() {
        let devices = vec![edge_device(), worker(1, "rasp1")];
        let mut table = GlobalProfileTable::new(2);
        table.update(snapshot(1, 0, 0));
        // The only end device is the task's origin; no candidates remain.
        let d = decide_coordinator(
            Policy::Dds,
            &task(1, 5000.0, 0.0),
            SimTime::ZERO,
            &table,
            &devices,
            EDGE,
        );
        assert_eq!(d, Decision::RunLocal);
    }

    #[test]
    fn coordinator_runs_local_on_an_empty_profile_table() {
        let devices = vec![edge_device(), worker(1, "rasp1"), worker(2, "rasp2")];
        let table = GlobalProfileTable::new(0);
        let d = decide_coordinator(
            Policy::Dds,
            &task(1, 50000.0, 0.0),
            SimTime::ZERO,
            &table,
            &devices,
            EDGE,
        );
        assert_eq!(d, Decision::RunLocal);
    }

    #[test]
    fn coordinator_skips_saturated_workers() {
        let devices = vec![edge_device(), worker(1, "rasp1"), worker(2, "rasp2")];
        let mut table = GlobalProfileTable::new(3);
        table.update(snapshot(1, 0, 0));
        table.update(snapshot(2, 2, 0)); // pool of 2, both busy
        let d = decide_coordinator(
            Policy::Dds,
            &task(1, 50000.0, 0.0),
            SimTime::ZERO,
            &table,
            &devices,
            EDGE,
        );
        assert_eq!(d, Decision::RunLocal);
    }

    #[test]
    fn coordinator_offloads_to_an_idle_worker_within_budget() {
        let devices = vec![edge_device(), worker(1, "rasp1"), worker(2, "rasp2")];
        let mut table = GlobalProfileTable::new(3);
        table.update(snapshot(1, 0, 0));
        table.update(snapshot(2, 0, 0));
        let t = task(1, 5000.0, 0.0);
        let d = decide_coordinator(Policy::Dds, &t, SimTime::ZERO, &table, &devices, EDGE);
        assert_eq!(d, Decision::OffloadTo(DeviceId(2)));
        // Exhaustive argmin over candidates must agree with the decision.
        let snap = table.latest(DeviceId(2)).unwrap();
        let predicted = predict_remote_total(&devices[2], &snap, &t, Some(devices[1].uplink()));
        assert!(predicted <= t.deadline);
    }

    #[test]
    fn coordinator_prefers_the_faster_candidate() {
        let devices = vec![
            edge_device(),
            worker(1, "rasp1"),
            worker(2, "rasp2"),
            worker(3, "rasp3"),
        ];
        let mut table = GlobalProfileTable::new(4);
        table.update(snapshot(1, 0, 0));
        table.update(snapshot(2, 1, 0)); // one container busy: next runs at the 613 ms knot
        table.update(snapshot(3, 0, 0)); // idle: 597 ms
        let t = task(1, 50000.0, 0.0);
        let d = decide_coordinator(Policy::Dds, &t, SimTime::ZERO, &table, &devices, EDGE);
        assert_eq!(d, Decision::OffloadTo(DeviceId(3)));

        // With equal predictions the smaller device name wins.
        table.update(snapshot(2, 0, 0));
        let d = decide_coordinator(Policy::Dds, &t, SimTime::ZERO, &table, &devices, EDGE);
        assert_eq!(d, Decision::OffloadTo(DeviceId(2)));
    }

    #[test]
    fn coordinator_is_inert_for_static_policies() {
        let devices = vec![edge_device(), worker(1, "rasp1"), worker(2, "rasp2")];
        let mut table = GlobalProfileTable::new(3);
        table.update(snapshot(1, 0, 0));
        table.update(snapshot(2, 0, 0));
        for policy in [Policy::Aor, Policy::Aoe, Policy::Eods] {
            let d = decide_coordinator(
                policy,
                &task(2, 50000.0, 0.0),
                SimTime::ZERO,
                &table,
                &devices,
                EDGE,
            );
            assert_eq!(d, Decision::RunLocal);
        }
    }

    #[test]
    fn policy_names_round_trip() {
        for p in Policy::ALL {
            assert_eq!(p.name().parse::<Policy>().unwrap(), p);
        }
        assert!("fifo".parse::<Policy>().is_err());
    }
}
