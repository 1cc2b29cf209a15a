//! Cross-module behavior of full simulation runs.

use std::path::{Path, PathBuf};

use edgesim::config::Experiment;
use edgesim::{Policy, SimDuration};

fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
}

fn reference_experiment() -> Experiment {
    Experiment::load(&repo_path("configs/reference.toml")).unwrap()
}

/// Deadline-blind policies produce identical per-task latencies at every
/// deadline, so their met counts are step functions of the sorted latency
/// vector.
#[test]
fn deadline_blind_policies_have_deadline_invariant_latencies() {
    let experiment = reference_experiment();
    for policy in [Policy::Aor, Policy::Aoe, Policy::Eods] {
        let (at_500, _) = experiment.run_one(policy, 500.0, None, false).unwrap();
        let (at_5000, _) = experiment.run_one(policy, 5000.0, None, false).unwrap();
        let lat = |r: &edgesim::ExperimentResult| -> Vec<Option<SimDuration>> {
            r.records.iter().map(|t| t.latency).collect()
        };
        assert_eq!(lat(&at_500), lat(&at_5000), "{policy}");

        // met_count equals a direct recount over the latency vector.
        for (deadline, result) in [(500.0, &at_500), (5000.0, &at_5000)] {
            let expected = result
                .records
                .iter()
                .filter(|t| {
                    t.latency
                        .map(|l| l <= SimDuration::from_ms(deadline))
                        .unwrap_or(false)
                })
                .count() as u32;
            assert_eq!(result.met_count, expected, "{policy} at {deadline}");
        }
    }
}

/// For deadline-blind policies, met counts can only grow with the deadline.
#[test]
fn met_counts_grow_with_deadline_for_blind_policies() {
    let experiment = reference_experiment();
    let grid = [200.0, 500.0, 1000.0, 2000.0, 5000.0, 10000.0];
    for policy in [Policy::Aor, Policy::Aoe, Policy::Eods] {
        let mut prev = 0;
        for &deadline in &grid {
            let (result, _) = experiment.run_one(policy, deadline, None, false).unwrap();
            assert!(
                result.met_count >= prev,
                "{policy}: met fell from {prev} to {} at {deadline}",
                result.met_count
            );
            prev = result.met_count;
        }
    }
}

/// The even/odd split is visible in where tasks execute: odd ids stay on
/// the source device, even ids land on the edge server.
#[test]
fn eods_splits_execution_by_parity() {
    let experiment = reference_experiment();
    let (result, _) = experiment
        .run_one(Policy::Eods, 5000.0, None, false)
        .unwrap();
    let source = result
        .executed_per_device
        .iter()
        .position(|(name, _)| name == "rasp1")
        .unwrap();
    let edge = result
        .executed_per_device
        .iter()
        .position(|(name, _)| name == "edge")
        .unwrap();
    for record in &result.records {
        let device = record.executed_on.expect("loss-free run").index();
        if record.task_id % 2 == 1 {
            assert_eq!(device, source, "task {}", record.task_id);
        } else {
            assert_eq!(device, edge, "task {}", record.task_id);
        }
    }
}

/// Certain loss on the uplink makes every offloaded task lost-in-transit,
/// and losses are counted as missed deadlines.
#[test]
fn lossy_uplink_accounts_tasks_as_lost() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(
        repo_path("profiles/edge_server.toml"),
        dir.path().join("edge_server.toml"),
    )
    .unwrap();
    std::fs::copy(
        repo_path("profiles/raspberry_pi.toml"),
        dir.path().join("raspberry_pi.toml"),
    )
    .unwrap();
    let config = dir.path().join("lossy.toml");
    std::fs::write(
        &config,
        r#"
seed = 3
policy = "aoe"

[workload]
image_count = 20
interval_ms = 50.0
deadline_ms = 5000.0
source_device = "rasp1"

[[devices]]
id = "edge"
profile = "edge_server.toml"

[[devices]]
id = "rasp1"
profile = "raspberry_pi.toml"
[devices.link]
bandwidth_kb_per_ms = 1.0
propagation_ms = 1.0
loss_probability = 1.0
"#,
    )
    .unwrap();
    let experiment = Experiment::load(&config).unwrap();
    let (result, _) = experiment.run_single(false).unwrap();
    assert_eq!(result.loss_count, 20);
    assert_eq!(result.met_count, 0);
    assert!(result.records.iter().all(|r| r.lost && !r.met_deadline));
}

/// Partial loss terminates every task one way or the other and losses are
/// seed-reproducible.
#[test]
fn partial_loss_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(
        repo_path("profiles/edge_server.toml"),
        dir.path().join("edge_server.toml"),
    )
    .unwrap();
    std::fs::copy(
        repo_path("profiles/raspberry_pi.toml"),
        dir.path().join("raspberry_pi.toml"),
    )
    .unwrap();
    let config = dir.path().join("lossy.toml");
    std::fs::write(
        &config,
        r#"
seed = 11
policy = "aoe"

[workload]
image_count = 100
interval_ms = 50.0
deadline_ms = 5000.0
source_device = "rasp1"

[[devices]]
id = "edge"
profile = "edge_server.toml"

[[devices]]
id = "rasp1"
profile = "raspberry_pi.toml"
[devices.link]
bandwidth_kb_per_ms = 1.0
propagation_ms = 1.0
loss_probability = 0.15
"#,
    )
    .unwrap();
    let experiment = Experiment::load(&config).unwrap();
    let (first, _) = experiment.run_single(false).unwrap();
    let (second, _) = experiment.run_single(false).unwrap();
    assert!(
        first.loss_count > 0,
        "a 15% loss rate should drop something"
    );
    assert_eq!(first.loss_count, second.loss_count);
    let lost_ids = |r: &edgesim::ExperimentResult| -> Vec<u64> {
        r.records
            .iter()
            .filter(|t| t.lost)
            .map(|t| t.task_id)
            .collect()
    };
    assert_eq!(lost_ids(&first), lost_ids(&second));
    assert!(first
        .records
        .iter()
        .all(|r| r.lost != r.completion.is_some()));
}

/// The shipped sweep config produces the full policy-by-deadline table.
#[test]
fn shipped_sweep_config_runs() {
    let experiment = Experiment::load(&repo_path("configs/fig5_sweep.toml")).unwrap();
    let mut rows = Vec::new();
    experiment.run_sweep(&mut rows).unwrap();
    // 4 policies x 6 deadlines.
    assert_eq!(rows.len(), 24);
    let mut buf = Vec::new();
    edgesim::metrics::write_sweep_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("policy,axis,value,met_count,loss_count,mean_latency_ms\n"));
    assert_eq!(text.lines().count(), 25);
}

/// Every completed task's recorded latency is recomputable from the event
/// trace: delivery of its result at the origin (or local completion) minus
/// its arrival.
#[test]
fn recorded_latencies_match_the_event_trace() {
    let experiment = reference_experiment();
    let (result, trace) = experiment.run_one(Policy::Dds, 2000.0, None, true).unwrap();
    let trace = trace.expect("trace enabled");
    let origin = "rasp1";

    let micros = |field: &str| -> u64 { (field.parse::<f64>().unwrap() * 1000.0).round() as u64 };
    let mut arrivals = std::collections::HashMap::new();
    let mut completions = std::collections::HashMap::new();
    for line in &trace {
        let parts: Vec<&str> = line.split(' ').collect();
        let (time, kind, device, task) = (parts[0], parts[1], parts[2], parts[3]);
        if device != origin || task == "-" {
            continue;
        }
        let task: u64 = task.parse().unwrap();
        match kind {
            "TaskArrival" => {
                arrivals.insert(task, micros(time));
            }
            // The event that completes a task at its origin is either its
            // local container finishing or its result arriving back.
            "ContainerComplete" | "MessageDelivery:result" => {
                completions.insert(task, micros(time));
            }
            _ => {}
        }
    }

    let mut checked = 0;
    for record in &result.records {
        let latency = record.latency.expect("loss-free run").as_micros();
        let from_trace = completions[&record.task_id] - arrivals[&record.task_id];
        assert_eq!(latency, from_trace, "task {}", record.task_id);
        checked += 1;
    }
    assert_eq!(checked, 50);
    // The run exercised all three execution sites.
    assert!(result.executed_per_device.iter().all(|(_, c)| *c > 0));
}
