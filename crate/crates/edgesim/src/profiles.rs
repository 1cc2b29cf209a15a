//! Calibrated device timing tables and latency prediction.
//!
//! Every device carries four measured tables: per-image processing time
//! against the number of concurrently busy warm containers, cold-start cost
//! against existing container count, runtime against input image size, and
//! a CPU-load slowdown curve. Predictions interpolate these tables
//! piecewise-linearly (exact at the measured points, clamped outside the
//! measured range) and compose the size and load effects multiplicatively
//! onto the warm-container base time.
//!
//! End-to-end predictions decompose into transfer + queueing + processing +
//! result-return; a local run has both network terms identically zero.

use std::path::Path;

use serde::Deserialize;

use crate::engine::NetworkLink;
use crate::error::{Error, Result};
use crate::time::SimDuration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceClass {
    EdgeServer,
    EndDevice,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmEntry {
    pub container_count: u32,
    pub avg_per_image_ms: f64,
    pub total_batch_ms: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColdEntry {
    pub container_count: u32,
    pub existing_run_ms: f64,
    pub new_container_ms: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeEntry {
    pub image_size_kb: f64,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadKnot {
    pub cpu_load: f64,
    pub multiplier: f64,
}

/// Finite and strictly positive; rejects NaN.
fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

/// Piecewise-linear lookup over `entries`, projected to (x, y) points.
/// Exact at every knot; clamps to the nearest endpoint outside the range.
fn piecewise_linear<T>(entries: &[T], x: f64, point: impl Fn(&T) -> (f64, f64)) -> f64 {
    let (x_first, y_first) = point(&entries[0]);
    if x <= x_first {
        return y_first;
    }
    let (x_last, y_last) = point(&entries[entries.len() - 1]);
    if x >= x_last {
        return y_last;
    }
    let mut i = 1;
    while point(&entries[i]).0 < x {
        i += 1;
    }
    let (x1, y1) = point(&entries[i]);
    if x1 == x {
        return y1;
    }
    let (x0, y0) = point(&entries[i - 1]);
    y0 + (x - x0) * (y1 - y0) / (x1 - x0)
}

/// Average per-image service time for a given count of busy warm containers.
#[derive(Debug, Clone)]
pub struct WarmProfileTable {
    entries: Vec<WarmEntry>,
}

impl WarmProfileTable {
    pub fn new(entries: Vec<WarmEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyCalibration {
                table: "warm_table",
            });
        }
        for pair in entries.windows(2) {
            if pair[1].container_count <= pair[0].container_count {
                return Err(Error::Calibration {
                    table: "warm_table",
                    reason: format!(
                        "container counts must be strictly increasing ({} then {})",
                        pair[0].container_count, pair[1].container_count
                    ),
                });
            }
            if pair[1].avg_per_image_ms < pair[0].avg_per_image_ms {
                return Err(Error::Calibration {
                    table: "warm_table",
                    reason: format!(
                        "avg_per_image_ms must be non-decreasing ({} then {})",
                        pair[0].avg_per_image_ms, pair[1].avg_per_image_ms
                    ),
                });
            }
        }
        for e in &entries {
            if e.container_count < 1 || !positive(e.avg_per_image_ms) || !positive(e.total_batch_ms)
            {
                return Err(Error::Calibration {
                    table: "warm_table",
                    reason: format!("invalid entry at container_count {}", e.container_count),
                });
            }
        }
        Ok(WarmProfileTable { entries })
    }

    pub fn entries(&self) -> &[WarmEntry] {
        &self.entries
    }

    pub fn max_container_count(&self) -> u32 {
        self.entries
            .last()
            .expect("non-empty by construction")
            .container_count
    }

    /// Interpolated average per-image time at a (possibly fractional)
    /// container count.
    pub fn avg_at(&self, containers: f64) -> f64 {
        piecewise_linear(&self.entries, containers, |e| {
            (e.container_count as f64, e.avg_per_image_ms)
        })
    }
}

/// Startup cost of a cold container next to `container_count` existing ones.
#[derive(Debug, Clone)]
pub struct ColdStartTable {
    entries: Vec<ColdEntry>,
}

impl ColdStartTable {
    pub fn new(entries: Vec<ColdEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyCalibration {
                table: "cold_table",
            });
        }
        for pair in entries.windows(2) {
            if pair[1].container_count <= pair[0].container_count {
                return Err(Error::Calibration {
                    table: "cold_table",
                    reason: "container counts must be strictly increasing".to_string(),
                });
            }
        }
        for e in &entries {
            if e.container_count < 1
                || !positive(e.existing_run_ms)
                || !positive(e.new_container_ms)
            {
                return Err(Error::Calibration {
                    table: "cold_table",
                    reason: format!("invalid entry at container_count {}", e.container_count),
                });
            }
        }
        Ok(ColdStartTable { entries })
    }

    pub fn entries(&self) -> &[ColdEntry] {
        &self.entries
    }

    pub fn new_container_ms_at(&self, containers: f64) -> f64 {
        piecewise_linear(&self.entries, containers, |e| {
            (e.container_count as f64, e.new_container_ms)
        })
    }
}

/// Measured runtime against input image size. The smallest size in the
/// table is the reference point all predictions are scaled from.
#[derive(Debug, Clone)]
pub struct SizeRuntimeTable {
    entries: Vec<SizeEntry>,
}

impl SizeRuntimeTable {
    pub fn new(entries: Vec<SizeEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyCalibration {
                table: "size_table",
            });
        }
        for pair in entries.windows(2) {
            if pair[1].image_size_kb <= pair[0].image_size_kb
                || pair[1].runtime_ms <= pair[0].runtime_ms
            {
                return Err(Error::Calibration {
                    table: "size_table",
                    reason: "sizes and runtimes must be strictly increasing".to_string(),
                });
            }
        }
        for e in &entries {
            if !positive(e.image_size_kb) || !positive(e.runtime_ms) {
                return Err(Error::Calibration {
                    table: "size_table",
                    reason: format!("invalid entry at size {}", e.image_size_kb),
                });
            }
        }
        Ok(SizeRuntimeTable { entries })
    }

    pub fn entries(&self) -> &[SizeEntry] {
        &self.entries
    }

    pub fn reference_size_kb(&self) -> f64 {
        self.entries[0].image_size_kb
    }

    pub fn runtime_at(&self, size_kb: f64) -> f64 {
        piecewise_linear(&self.entries, size_kb, |e| (e.image_size_kb, e.runtime_ms))
    }
}

/// Processing-time multiplier as a function of exogenous CPU load.
#[derive(Debug, Clone)]
pub struct LoadFactorCurve {
    knots: Vec<LoadKnot>,
}

impl LoadFactorCurve {
    pub fn new(knots: Vec<LoadKnot>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::EmptyCalibration {
                table: "load_curve",
            });
        }
        if knots[0].cpu_load != 0.0 || knots[0].multiplier != 1.0 {
            return Err(Error::Calibration {
                table: "load_curve",
                reason: "first knot must be (0.0, 1.0)".to_string(),
            });
        }
        for pair in knots.windows(2) {
            if pair[1].cpu_load <= pair[0].cpu_load {
                return Err(Error::Calibration {
                    table: "load_curve",
                    reason: "loads must be strictly increasing".to_string(),
                });
            }
            if pair[1].multiplier < pair[0].multiplier {
                return Err(Error::Calibration {
                    table: "load_curve",
                    reason: "multipliers must be non-decreasing".to_string(),
                });
            }
        }
        for k in &knots {
            if !(0.0..=1.0).contains(&k.cpu_load) || k.multiplier < 1.0 {
                return Err(Error::Calibration {
                    table: "load_curve",
                    reason: format!("invalid knot at load {}", k.cpu_load),
                });
            }
        }
        Ok(LoadFactorCurve { knots })
    }

    pub fn knots(&self) -> &[LoadKnot] {
        &self.knots
    }

    pub fn multiplier_at(&self, cpu_load: f64) -> f64 {
        piecewise_linear(&self.knots, cpu_load, |k| (k.cpu_load, k.multiplier))
    }
}

/// End-to-end latency prediction, broken into the four model terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyEstimate {
    pub transfer: SimDuration,
    pub queueing: SimDuration,
    pub processing: SimDuration,
    pub result_return: SimDuration,
}

impl LatencyEstimate {
    pub fn total(&self) -> SimDuration {
        self.transfer + self.queueing + self.processing + self.result_return
    }
}

/// A device's calibrated capability tables plus its default link parameters.
#[derive(Debug, Clone)]
pub struct DeviceProfile {
    pub device_id: String,
    pub device_class: DeviceClass,
    pub warm_table: WarmProfileTable,
    pub cold_table: ColdStartTable,
    pub size_table: SizeRuntimeTable,
    pub load_curve: LoadFactorCurve,
    pub warm_pool_size: u32,
    pub uplink_bandwidth_kb_per_ms: f64,
    pub result_size_kb: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    device_id: String,
    device_class: DeviceClass,
    warm_pool_size: u32,
    uplink_bandwidth_kb_per_ms: f64,
    result_size_kb: f64,
    warm_table: Vec<WarmEntry>,
    cold_table: Vec<ColdEntry>,
    size_table: Vec<SizeEntry>,
    load_curve: Vec<LoadKnot>,
}

impl DeviceProfile {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        device_id: String,
        device_class: DeviceClass,
        warm_table: WarmProfileTable,
        cold_table: ColdStartTable,
        size_table: SizeRuntimeTable,
        load_curve: LoadFactorCurve,
        warm_pool_size: u32,
        uplink_bandwidth_kb_per_ms: f64,
        result_size_kb: f64,
    ) -> Result<Self> {
        if warm_pool_size > warm_table.max_container_count() {
            return Err(Error::Calibration {
                table: "warm_table",
                reason: format!(
                    "warm_pool_size {} exceeds the largest calibrated container count {}",
                    warm_pool_size,
                    warm_table.max_container_count()
                ),
            });
        }
        if !positive(uplink_bandwidth_kb_per_ms) {
            return Err(Error::Calibration {
                table: "profile",
                reason: "uplink bandwidth must be positive".to_string(),
            });
        }
        if !result_size_kb.is_finite() || result_size_kb < 0.0 {
            return Err(Error::Calibration {
                table: "profile",
                reason: "result size must be non-negative".to_string(),
            });
        }
        Ok(DeviceProfile {
            device_id,
            device_class,
            warm_table,
            cold_table,
            size_table,
            load_curve,
            warm_pool_size,
            uplink_bandwidth_kb_per_ms,
            result_size_kb,
        })
    }

    /// Loads and validates a profile from its calibration file.
    pub fn from_toml_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::FileRead {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Schema { message, .. } => Error::Schema {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: ProfileFile = toml::from_str(text).map_err(|e| Error::Schema {
            path: "<inline>".into(),
            message: e.to_string(),
        })?;
        DeviceProfile::new(
            raw.device_id,
            raw.device_class,
            WarmProfileTable::new(raw.warm_table)?,
            ColdStartTable::new(raw.cold_table)?,
            SizeRuntimeTable::new(raw.size_table)?,
            LoadFactorCurve::new(raw.load_curve)?,
            raw.warm_pool_size,
            raw.uplink_bandwidth_kb_per_ms,
            raw.result_size_kb,
        )
    }

    /// Predicted per-image processing time with `running_containers` already
    /// busy: the warm-table base at `running_containers + 1`, scaled by the
    /// size ratio against the reference size and by the load multiplier.
    pub fn predict_process_time(
        &self,
        running_containers: u32,
        cpu_load: f64,
        image_size_kb: f64,
    ) -> Result<SimDuration> {
        if !cpu_load.is_finite() || !(0.0..=1.0).contains(&cpu_load) {
            return Err(Error::InvalidArgument(format!(
                "cpu_load must be within [0, 1], got {cpu_load}"
            )));
        }
        if !positive(image_size_kb) {
            return Err(Error::InvalidArgument(format!(
                "image_size_kb must be positive, got {image_size_kb}"
            )));
        }
        let base = self.warm_table.avg_at((running_containers + 1) as f64);
        let size_ratio = self.size_table.runtime_at(image_size_kb)
            / self
                .size_table
                .runtime_at(self.size_table.reference_size_kb());
        let load_multiplier = self.load_curve.multiplier_at(cpu_load);
        Ok(SimDuration::from_ms(base * size_ratio * load_multiplier))
    }

    /// Predicted end-to-end latency: transfer + queueing + processing +
    /// result return. `link: None` models a local decision, where both
    /// network terms are identically zero. The queueing term spreads the
    /// pending backlog over the estimated free warm slots.
    pub fn predict_total_time(
        &self,
        link: Option<&NetworkLink>,
        running_containers: u32,
        cpu_load: f64,
        image_size_kb: f64,
        queue_depth: u32,
    ) -> Result<LatencyEstimate> {
        let processing = self.predict_process_time(running_containers, cpu_load, image_size_kb)?;
        let free_slots = self
            .warm_pool_size
            .saturating_sub(running_containers)
            .max(1);
        let queueing = SimDuration::from_micros(
            processing.as_micros() * queue_depth as u64 / free_slots as u64,
        );
        let (transfer, result_return) = match link {
            None => (SimDuration::ZERO, SimDuration::ZERO),
            Some(l) => (
                l.transfer_time(image_size_kb),
                l.transfer_time(self.result_size_kb),
            ),
        };
        Ok(LatencyEstimate {
            transfer,
            queueing,
            processing,
            result_return,
        })
    }

    /// Startup cost of one additional cold container next to
    /// `existing_containers` running ones. Kept for reporting; the
    /// simulation itself never cold-starts (pools are pre-warmed).
    pub fn cold_start_penalty(&self, existing_containers: u32) -> SimDuration {
        SimDuration::from_ms(
            self.cold_table
                .new_container_ms_at(existing_containers as f64),
        )
    }
}
