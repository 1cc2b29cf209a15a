//! Experiment workload generation.
//!
//! A workload is a fixed-count image stream injected at one end device at
//! a constant inter-arrival interval. Named presets cover the standard
//! comparison runs; a jittered mode exists for robustness checks but is
//! off by default so that generation stays fully deterministic.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::engine::DeviceId;
use crate::error::{Error, Result};
use crate::schedulers::Task;
use crate::time::{SimDuration, SimTime};

/// A fixed-rate image stream.
#[derive(Debug, Clone)]
pub struct WorkloadSpec {
    pub image_count: u32,
    pub interval: SimDuration,
    pub image_size_kb: f64,
    /// Per-task time constraint; identical for every task of a run.
    pub deadline: SimDuration,
    pub source: DeviceId,
    /// Optional uniform jitter added to each arrival, strictly less than
    /// the interval so arrival order is preserved.
    pub jitter_ms: Option<f64>,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_count == 0 {
            return Err(Error::Config("image_count must be at least 1".to_string()));
        }
        if self.interval == SimDuration::ZERO {
            return Err(Error::Config("interval_ms must be positive".to_string()));
        }
        if !self.image_size_kb.is_finite() || self.image_size_kb <= 0.0 {
            return Err(Error::Config(format!(
                "image_size_kb must be positive, got {}",
                self.image_size_kb
            )));
        }
        if let Some(jitter) = self.jitter_ms {
            if !jitter.is_finite() || jitter < 0.0 || SimDuration::from_ms(jitter) >= self.interval
            {
                return Err(Error::Config(format!(
                    "jitter_ms must be within [0, interval), got {jitter}"
                )));
            }
        }
        Ok(())
    }

    /// Emits `image_count` arrivals at `k * interval`, task ids `1..=count`,
    /// all with the same size and deadline.
    pub fn generate(&self) -> Result<Vec<(SimTime, Task)>> {
        self.validate()?;
        if self.jitter_ms.is_some() {
            return Err(Error::Config(
                "jittered workloads need a generator; use generate_jittered".to_string(),
            ));
        }
        Ok(self.arrivals(None))
    }

    /// Jittered variant; the caller owns the generator so arrival noise
    /// stays independent of the transport loss stream.
    pub fn generate_jittered(&self, rng: &mut ChaCha8Rng) -> Result<Vec<(SimTime, Task)>> {
        self.validate()?;
        Ok(self.arrivals(Some(rng)))
    }

    fn arrivals(&self, mut rng: Option<&mut ChaCha8Rng>) -> Vec<(SimTime, Task)> {
        let jitter = self.jitter_ms.unwrap_or(0.0);
        (0..self.image_count)
            .map(|k| {
                let noise = match rng.as_deref_mut() {
                    Some(r) if jitter > 0.0 => r.gen_range(0.0..jitter),
                    _ => 0.0,
                };
                let at = SimTime::from_micros(self.interval.as_micros() * k as u64)
                    + SimDuration::from_ms(noise);
                let task = Task {
                    task_id: k as u64 + 1,
                    size_kb: self.image_size_kb,
                    arrival: at,
                    deadline: self.deadline,
                    origin: self.source,
                };
                (at, task)
            })
            .collect()
    }
}

/// A named workload configuration for the standard comparison figures.
#[derive(Debug, Clone, Copy)]
pub struct Preset {
    pub name: &'static str,
    pub image_count: u32,
    pub interval_ms: f64,
    /// Used when the experiment config leaves the deadline unset.
    pub default_deadline_ms: f64,
    /// Presets that sweep the edge server's CPU load instead of running a
    /// single point.
    pub cpu_load_sweep: bool,
}

pub const PRESETS: [Preset; 7] = [
    Preset {
        name: "fig5a",
        image_count: 50,
        interval_ms: 50.0,
        default_deadline_ms: 1000.0,
        cpu_load_sweep: false,
    },
    Preset {
        name: "fig5b",
        image_count: 50,
        interval_ms: 100.0,
        default_deadline_ms: 1000.0,
        cpu_load_sweep: false,
    },
    Preset {
        name: "fig5c",
        image_count: 50,
        interval_ms: 200.0,
        default_deadline_ms: 1000.0,
        cpu_load_sweep: false,
    },
    Preset {
        name: "fig5d",
        image_count: 50,
        interval_ms: 500.0,
        default_deadline_ms: 1000.0,
        cpu_load_sweep: false,
    },
    Preset {
        name: "fig6a",
        image_count: 1000,
        interval_ms: 50.0,
        default_deadline_ms: 1000.0,
        cpu_load_sweep: false,
    },
    Preset {
        name: "fig6b",
        image_count: 1000,
        interval_ms: 100.0,
        default_deadline_ms: 1000.0,
        cpu_load_sweep: false,
    },
    Preset {
        name: "fig8",
        image_count: 1000,
        interval_ms: 50.0,
        default_deadline_ms: 5000.0,
        cpu_load_sweep: true,
    },
];

pub fn preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

/// Stable one-line-per-preset listing for the CLI.
pub fn preset_listing() -> String {
    let mut out = String::new();
    for p in &PRESETS {
        let extra = if p.cpu_load_sweep {
            "  cpu-load sweep 0..1"
        } else {
            ""
        };
        out.push_str(&format!(
            "{:<6} images={:<5} interval_ms={:<6} default_deadline_ms={}{}\n",
            p.name, p.image_count, p.interval_ms, p.default_deadline_ms, extra
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn spec(count: u32, interval_ms: f64) -> WorkloadSpec {
        WorkloadSpec {
            image_count: count,
            interval: SimDuration::from_ms(interval_ms),
            image_size_kb: 29.0,
            deadline: SimDuration::from_ms(1000.0),
            source: DeviceId(1),
            jitter_ms: None,
        }
    }

    #[test]
    fn fifty_images_every_fifty_ms_end_at_2450() {
        let arrivals = spec(50, 50.0).generate().unwrap();
        assert_eq!(arrivals.len(), 50);
        // (50 - 1) * 50
        assert_eq!(arrivals.last().unwrap().0, SimTime::from_ms(2450.0));
    }

    #[test]
    fn single_image_arrives_at_time_zero() {
        let arrivals = spec(1, 500.0).generate().unwrap();
        assert_eq!(arrivals.len(), 1);
        assert_eq!(arrivals[0].0, SimTime::ZERO);
    }

    #[test]
    fn thousand_images_get_contiguous_ids() {
        let arrivals = spec(1000, 100.0).generate().unwrap();
        assert_eq!(arrivals.len(), 1000);
        for (i, (_, task)) in arrivals.iter().enumerate() {
            assert_eq!(task.task_id, i as u64 + 1);
        }
    }

    #[test]
    fn arrival_times_strictly_increase() {
        let arrivals = spec(200, 10.0).generate().unwrap();
        assert!(arrivals.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn zero_count_or_interval_is_rejected() {
        assert!(spec(0, 50.0).generate().is_err());
        assert!(spec(10, 0.0).generate().is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = spec(100, 25.0).generate().unwrap();
        let b = spec(100, 25.0).generate().unwrap();
        assert_eq!(a.len(), b.len());
        for ((ta, xa), (tb, xb)) in a.iter().zip(&b) {
            assert_eq!(ta, tb);
            assert_eq!(xa.task_id, xb.task_id);
        }
    }

    #[test]
    fn jitter_preserves_order_and_stays_seeded() {
        let mut with = spec(50, 50.0);
        with.jitter_ms = Some(20.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = with.generate_jittered(&mut rng).unwrap();
        assert!(a.windows(2).all(|w| w[0].0 < w[1].0));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = with.generate_jittered(&mut rng).unwrap();
        assert_eq!(
            a.iter().map(|(t, _)| *t).collect::<Vec<_>>(),
            b.iter().map(|(t, _)| *t).collect::<Vec<_>>()
        );
        // Jitter at or above the interval would reorder arrivals.
        with.jitter_ms = Some(50.0);
        assert!(with.generate_jittered(&mut rng).is_err());
    }

    #[test]
    fn presets_cover_the_standard_figures() {
        for name in ["fig5a", "fig5b", "fig5c", "fig5d", "fig6a", "fig6b", "fig8"] {
            assert!(preset(name).is_some(), "{name}");
        }
        assert!(preset("fig9").is_none());
        let listing = preset_listing();
        assert!(listing.contains("fig5a"));
        assert!(listing.contains("images=50"));
        assert!(listing.contains("interval_ms=50"));
        assert_eq!(listing, preset_listing()); // stable
    }
}
