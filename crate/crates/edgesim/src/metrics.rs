//! Deadline accounting and experiment outputs.
//!
//! Per-task records are collected during a run, folded into an
//! [`ExperimentResult`], and written as plot-ready CSV. A sweep runs one
//! full simulation per `(policy, axis value)` pair and emits a long-format
//! table with one row per run.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use crate::engine::DeviceId;
use crate::error::{Error, Result};
use crate::schedulers::Policy;
use crate::time::{SimDuration, SimTime};

/// Outcome of a single task.
#[derive(Debug, Clone)]
pub struct TaskRecord {
    pub task_id: u64,
    pub arrival: SimTime,
    /// Instant the result was delivered back at the task's origin.
    pub completion: Option<SimTime>,
    pub executed_on: Option<DeviceId>,
    pub latency: Option<SimDuration>,
    pub met_deadline: bool,
    pub lost: bool,
}

#[derive(Debug, Clone, Copy, Default)]
struct Slot {
    arrival: Option<SimTime>,
    completion: Option<SimTime>,
    executed_on: Option<DeviceId>,
    lost: bool,
}

impl Slot {
    fn terminal(&self) -> bool {
        self.completion.is_some() || self.lost
    }
}

/// Tracks every task of a run from arrival to its single terminal state
/// (completed or lost in transit). Double transitions are logic errors.
#[derive(Debug)]
pub struct RunRecorder {
    slots: Vec<Slot>,
    terminal: usize,
    loss_count: u32,
}

impl RunRecorder {
    pub fn new(total_tasks: usize) -> Self {
        RunRecorder {
            slots: vec![Slot::default(); total_tasks],
            terminal: 0,
            loss_count: 0,
        }
    }

    fn slot_mut(&mut self, task_id: u64) -> &mut Slot {
        assert!(
            task_id >= 1 && task_id as usize <= self.slots.len(),
            "task id {task_id} outside 1..={}",
            self.slots.len()
        );
        &mut self.slots[task_id as usize - 1]
    }

    pub fn on_arrival(&mut self, task_id: u64, at: SimTime) {
        let slot = self.slot_mut(task_id);
        assert!(slot.arrival.is_none(), "task {task_id} arrived twice");
        slot.arrival = Some(at);
    }

    pub fn on_executed(&mut self, task_id: u64, device: DeviceId) {
        let slot = self.slot_mut(task_id);
        assert!(
            slot.executed_on.is_none(),
            "task {task_id} dispatched twice"
        );
        slot.executed_on = Some(device);
    }

    pub fn on_completed(&mut self, task_id: u64, at: SimTime) {
        let slot = self.slot_mut(task_id);
        assert!(
            !slot.terminal(),
            "task {task_id} reached two terminal states"
        );
        assert!(
            slot.arrival.is_some(),
            "task {task_id} completed before arriving"
        );
        slot.completion = Some(at);
        self.terminal += 1;
    }

    pub fn on_lost(&mut self, task_id: u64) {
        let slot = self.slot_mut(task_id);
        assert!(
            !slot.terminal(),
            "task {task_id} reached two terminal states"
        );
        slot.lost = true;
        self.terminal += 1;
        self.loss_count += 1;
    }

    pub fn total(&self) -> usize {
        self.slots.len()
    }

    pub fn all_terminal(&self) -> bool {
        self.terminal == self.slots.len()
    }

    pub fn loss_count(&self) -> u32 {
        self.loss_count
    }

    /// Folds the raw slots into task records against the given deadline.
    /// Lost tasks never meet the deadline.
    pub fn finalize(&self, deadline: SimDuration) -> Vec<TaskRecord> {
        self.slots
            .iter()
            .enumerate()
            .map(|(i, slot)| {
                let arrival = slot
                    .arrival
                    .unwrap_or_else(|| panic!("task {} never arrived", i + 1));
                let latency = slot.completion.map(|c| c.since(arrival));
                TaskRecord {
                    task_id: i as u64 + 1,
                    arrival,
                    completion: slot.completion,
                    executed_on: slot.executed_on,
                    latency,
                    met_deadline: latency.map(|l| l <= deadline).unwrap_or(false),
                    lost: slot.lost,
                }
            })
            .collect()
    }
}

/// Aggregated outcome of one simulation run.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub policy: Policy,
    pub seed: u64,
    pub deadline: SimDuration,
    pub records: Vec<TaskRecord>,
    pub met_count: u32,
    pub loss_count: u32,
    /// Tasks executed per device, in topology order.
    pub executed_per_device: Vec<(String, u32)>,
    pub final_clock: SimTime,
    /// Host time the simulation took; reported, never written to files.
    pub sim_wall: std::time::Duration,
}

impl ExperimentResult {
    pub fn mean_latency_ms(&self) -> Option<f64> {
        let latencies: Vec<f64> = self
            .records
            .iter()
            .filter_map(|r| r.latency.map(|l| l.as_ms()))
            .collect();
        if latencies.is_empty() {
            None
        } else {
            Some(latencies.iter().sum::<f64>() / latencies.len() as f64)
        }
    }
}

/// Aggregates per-task records; ordering is stable by task id.
pub fn summarize(
    policy: Policy,
    seed: u64,
    deadline: SimDuration,
    records: Vec<TaskRecord>,
    device_names: &[String],
    final_clock: SimTime,
    sim_wall: std::time::Duration,
) -> ExperimentResult {
    debug_assert!(records.windows(2).all(|w| w[0].task_id < w[1].task_id));
    let met_count = records.iter().filter(|r| r.met_deadline).count() as u32;
    let loss_count = records.iter().filter(|r| r.lost).count() as u32;
    let mut executed_per_device: Vec<(String, u32)> =
        device_names.iter().map(|n| (n.clone(), 0)).collect();
    for r in &records {
        if let Some(d) = r.executed_on {
            executed_per_device[d.index()].1 += 1;
        }
    }
    ExperimentResult {
        policy,
        seed,
        deadline,
        records,
        met_count,
        loss_count,
        executed_per_device,
        final_clock,
        sim_wall,
    }
}

/// The swept experiment parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    DeadlineMs,
    CpuLoad,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::DeadlineMs => "deadline_ms",
            SweepAxis::CpuLoad => "cpu_load",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deadline_ms" => Ok(SweepAxis::DeadlineMs),
            "cpu_load" => Ok(SweepAxis::CpuLoad),
            other => Err(Error::Config(format!(
                "unknown sweep axis `{other}` (expected deadline_ms or cpu_load)"
            ))),
        }
    }
}

/// One row of the long-format sweep table.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub policy: Policy,
    pub axis: SweepAxis,
    pub value: f64,
    pub met_count: u32,
    pub loss_count: u32,
    pub mean_latency_ms: Option<f64>,
}

impl SweepRow {
    pub fn from_result(axis: SweepAxis, value: f64, result: &ExperimentResult) -> Self {
        SweepRow {
            policy: result.policy,
            axis,
            value,
            met_count: result.met_count,
            loss_count: result.loss_count,
            mean_latency_ms: result.mean_latency_ms(),
        }
    }
}

/// Runs one full simulation per `(policy, value)` pair via the supplied
/// runner, appending a row per run. Rows already produced stay in `rows`
/// when a run fails, so callers can flag partial output.
pub fn sweep<F>(
    policies: &[Policy],
    axis: SweepAxis,
    values: &[f64],
    rows: &mut Vec<SweepRow>,
    mut run: F,
) -> Result<()>
where
    F: FnMut(Policy, f64) -> Result<ExperimentResult>,
{
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep values must be non-empty".into(),
        ));
    }
    if policies.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep policies must be non-empty".into(),
        ));
    }
    for &policy in policies {
        for &value in values {
            let result = run(policy, value)?;
            rows.push(SweepRow::from_result(axis, value, &result));
        }
    }
    Ok(())
}

fn fmt_mean(mean: Option<f64>) -> String {
    match mean {
        Some(v) => format!("{v:.3}"),
        None => "nan".to_string(),
    }
}

/// Long-format results table: `policy,axis,value,met_count,loss_count,mean_latency_ms`.
pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> io::Result<()> {
    writeln!(w, "policy,axis,value,met_count,loss_count,mean_latency_ms")?;
    for row in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            row.policy,
            row.axis,
            row.value,
            row.met_count,
            row.loss_count,
            fmt_mean(row.mean_latency_ms)
        )?;
    }
    Ok(())
}

/// Per-task detail table for a single run.
pub fn write_tasks_csv<W: Write>(mut w: W, result: &ExperimentResult) -> io::Result<()> {
    writeln!(
        w,
        "task_id,arrival_ms,completion_ms,executed_on,latency_ms,met_deadline,lost"
    )?;
    for r in &result.records {
        let completion = r
            .completion
            .map(|c| format!("{:.3}", c.as_ms()))
            .unwrap_or_default();
        let executed_on = r
            .executed_on
            .map(|d| result.executed_per_device[d.index()].0.clone())
            .unwrap_or_default();
        let latency = r
            .latency
            .map(|l| format!("{:.3}", l.as_ms()))
            .unwrap_or_default();
        writeln!(
            w,
            "{},{:.3},{},{},{},{},{}",
            r.task_id,
            r.arrival.as_ms(),
            completion,
            executed_on,
            latency,
            r.met_deadline,
            r.lost
        )?;
    }
    Ok(())
}
