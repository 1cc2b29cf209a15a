//! Experiment configuration: loading, validation, and run orchestration.
//!
//! An experiment file names the topology (devices referencing per-device
//! calibration files), the policy, the workload (explicit or by preset),
//! and optionally a sweep over deadlines or edge CPU load. Profile paths
//! are resolved relative to the config file. All validation happens before
//! any simulation starts, so a bad config never produces partial output.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use serde::Deserialize;

use crate::engine::{DeviceId, Engine, Event, NetworkLink};
use crate::error::{Error, Result};
use crate::metrics::{self, ExperimentResult, SweepAxis, SweepRow};
use crate::nodes::{DeviceSetup, World, WorldSettings};
use crate::profiles::{DeviceClass, DeviceProfile};
use crate::schedulers::Policy;
use crate::time::SimDuration;
use crate::workload::{self, WorkloadSpec};

/// Propagation assumed when a device entry does not configure its link.
const DEFAULT_PROPAGATION_MS: f64 = 5.0;
/// Size of one profile-update message.
const DEFAULT_PROFILE_MSG_KB: f64 = 0.1;
/// Period of the profile-update protocol.
const DEFAULT_UPDATE_PERIOD_MS: f64 = 20.0;
/// Image size used when neither config nor preset sets one.
const DEFAULT_IMAGE_SIZE_KB: f64 = 29.0;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    policy: Option<String>,
    workload: WorkloadSection,
    sweep: Option<SweepSection>,
    devices: Vec<DeviceSection>,
    protocol: Option<ProtocolSection>,
    output: Option<OutputSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkloadSection {
    preset: Option<String>,
    image_count: Option<u32>,
    interval_ms: Option<f64>,
    image_size_kb: Option<f64>,
    deadline_ms: Option<f64>,
    source_device: Option<String>,
    jitter_ms: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    axis: String,
    values: Vec<f64>,
    policies: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceSection {
    id: String,
    profile: String,
    link: Option<NetworkLink>,
    warm_pool_size: Option<u32>,
    cpu_load: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProtocolSection {
    update_period_ms: Option<f64>,
    profile_msg_kb: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: Option<String>,
    write_tasks: Option<bool>,
}

/// CLI-level overrides applied on top of the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub preset: Option<String>,
    pub policy: Option<String>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

/// One device of the resolved topology.
#[derive(Debug, Clone)]
pub struct ResolvedDevice {
    pub name: String,
    pub profile: DeviceProfile,
    pub link: Option<NetworkLink>,
    pub warm_pool_size: Option<u32>,
    pub cpu_load: f64,
}

/// Workload parameters after preset resolution.
#[derive(Debug, Clone)]
pub struct ResolvedWorkload {
    pub image_count: u32,
    pub interval_ms: f64,
    pub image_size_kb: f64,
    pub deadline_ms: f64,
    pub source_index: usize,
    pub jitter_ms: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub policies: Vec<Policy>,
}

/// A fully validated experiment, ready to run.
#[derive(Debug)]
pub struct Experiment {
    pub seed: u64,
    pub policy: Policy,
    pub devices: Vec<ResolvedDevice>,
    pub workload: ResolvedWorkload,
    pub sweep: Option<SweepPlan>,
    pub update_period_ms: f64,
    pub profile_msg_kb: f64,
    pub out_dir: PathBuf,
    pub write_tasks: bool,
    pub preset_name: Option<String>,
    pub warnings: Vec<String>,
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Experiment> {
        Self::load_with_overrides(path, &Overrides::default())
    }

    pub fn load_with_overrides(path: &Path, overrides: &Overrides) -> Result<Experiment> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::FileRead {
            path: path.to_path_buf(),
            source,
        })?;
        let raw: ConfigFile = toml::from_str(&text).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base_dir = path.parent().unwrap_or_else(|| Path::new("."));
        Self::resolve(raw, base_dir, overrides)
    }

    fn resolve(raw: ConfigFile, base_dir: &Path, overrides: &Overrides) -> Result<Experiment> {
        if raw.devices.is_empty() {
            return Err(Error::Config("no devices defined".to_string()));
        }

        let mut warnings = Vec::new();
        let mut devices = Vec::with_capacity(raw.devices.len());
        let mut edge_count = 0;
        for section in &raw.devices {
            if raw.devices.iter().filter(|d| d.id == section.id).count() > 1 {
                return Err(Error::Config(format!(
                    "duplicate device id `{}`",
                    section.id
                )));
            }
            let profile_path = base_dir.join(&section.profile);
            let profile = DeviceProfile::from_toml_path(&profile_path)?;
            let link = match profile.device_class {
                DeviceClass::EdgeServer => {
                    edge_count += 1;
                    None
                }
                DeviceClass::EndDevice => {
                    let link = section.link.unwrap_or(NetworkLink {
                        bandwidth_kb_per_ms: profile.uplink_bandwidth_kb_per_ms,
                        propagation_ms: DEFAULT_PROPAGATION_MS,
                        loss_probability: 0.0,
                    });
                    link.validate()?;
                    Some(link)
                }
            };
            let cpu_load = section.cpu_load.unwrap_or(0.0);
            if !(0.0..=1.0).contains(&cpu_load) {
                return Err(Error::Config(format!(
                    "device `{}`: cpu_load must be within [0, 1], got {}",
                    section.id, cpu_load
                )));
            }
            if section.warm_pool_size == Some(0) {
                warnings.push(format!(
                    "device `{}` has warm_pool_size 0: tasks sent to it will wait forever",
                    section.id
                ));
            }
            devices.push(ResolvedDevice {
                name: section.id.clone(),
                profile,
                link,
                warm_pool_size: section.warm_pool_size,
                cpu_load,
            });
        }
        if edge_count != 1 {
            return Err(Error::Config(format!(
                "exactly one edge server is required, found {edge_count}"
            )));
        }

        let policy_name = overrides
            .policy
            .clone()
            .or_else(|| raw.policy.clone())
            .unwrap_or_else(|| "dds".to_string());
        let policy: Policy = policy_name.parse()?;

        // Preset fills whatever the workload section leaves unset.
        let preset_name = overrides
            .preset
            .clone()
            .or_else(|| raw.workload.preset.clone());
        let preset = match &preset_name {
            Some(name) => Some(
                workload::preset(name)
                    .ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))?,
            ),
            None => None,
        };
        let image_count = raw
            .workload
            .image_count
            .or(preset.map(|p| p.image_count))
            .ok_or_else(|| Error::Config("workload needs image_count or a preset".to_string()))?;
        let interval_ms = raw
            .workload
            .interval_ms
            .or(preset.map(|p| p.interval_ms))
            .ok_or_else(|| Error::Config("workload needs interval_ms or a preset".to_string()))?;
        let deadline_ms = raw
            .workload
            .deadline_ms
            .or(preset.map(|p| p.default_deadline_ms))
            .ok_or_else(|| Error::Config("workload needs deadline_ms or a preset".to_string()))?;
        let image_size_kb = raw.workload.image_size_kb.unwrap_or(DEFAULT_IMAGE_SIZE_KB);

        let source_index = match &raw.workload.source_device {
            Some(name) => devices
                .iter()
                .position(|d| &d.name == name)
                .ok_or_else(|| Error::Config(format!("unknown source_device `{name}`")))?,
            // Default: the first end device, or the edge server if none.
            None => devices
                .iter()
                .position(|d| d.profile.device_class == DeviceClass::EndDevice)
                .unwrap_or(0),
        };

        // A cpu-load-sweeping preset implies a sweep unless the config
        // already defines one.
        let sweep_section = raw.sweep;
        let sweep = match (&sweep_section, preset) {
            (Some(section), _) => Some(Self::resolve_sweep(section, policy)?),
            (None, Some(p)) if p.cpu_load_sweep => Some(SweepPlan {
                axis: SweepAxis::CpuLoad,
                values: vec![0.0, 0.25, 0.5, 0.75, 1.0],
                policies: vec![policy],
            }),
            _ => None,
        };

        let protocol = raw.protocol.unwrap_or(ProtocolSection {
            update_period_ms: None,
            profile_msg_kb: None,
        });
        let output = raw.output.unwrap_or(OutputSection {
            dir: None,
            write_tasks: None,
        });
        let out_dir = overrides
            .out_dir
            .clone()
            .or_else(|| output.dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("results"));

        let experiment = Experiment {
            seed: overrides.seed.or(raw.seed).unwrap_or(0),
            policy,
            devices,
            workload: ResolvedWorkload {
                image_count,
                interval_ms,
                image_size_kb,
                deadline_ms,
                source_index,
                jitter_ms: raw.workload.jitter_ms,
            },
            sweep,
            update_period_ms: protocol
                .update_period_ms
                .unwrap_or(DEFAULT_UPDATE_PERIOD_MS),
            profile_msg_kb: protocol.profile_msg_kb.unwrap_or(DEFAULT_PROFILE_MSG_KB),
            out_dir,
            write_tasks: output.write_tasks.unwrap_or(true),
            preset_name,
            warnings,
        };
        // Surface workload mistakes now rather than at run time.
        experiment
            .workload_spec(experiment.workload.deadline_ms)?
            .validate()?;
        Ok(experiment)
    }

    fn resolve_sweep(section: &SweepSection, default_policy: Policy) -> Result<SweepPlan> {
        let axis: SweepAxis = section.axis.parse()?;
        if section.values.is_empty() {
            return Err(Error::Config("sweep values must be non-empty".to_string()));
        }
        let policies = match &section.policies {
            Some(names) => names
                .iter()
                .map(|n| n.parse())
                .collect::<Result<Vec<Policy>>>()?,
            None => vec![default_policy],
        };
        if policies.is_empty() {
            return Err(Error::Config(
                "sweep policies must be non-empty".to_string(),
            ));
        }
        Ok(SweepPlan {
            axis,
            values: section.values.clone(),
            policies,
        })
    }

    fn workload_spec(&self, deadline_ms: f64) -> Result<WorkloadSpec> {
        Ok(WorkloadSpec {
            image_count: self.workload.image_count,
            interval: SimDuration::from_ms(self.workload.interval_ms),
            image_size_kb: self.workload.image_size_kb,
            deadline: SimDuration::from_ms(deadline_ms),
            source: DeviceId(self.workload.source_index),
            jitter_ms: self.workload.jitter_ms,
        })
    }

    /// Runs one simulation. `deadline_ms`/`edge_cpu_load` override the
    /// configured values (sweeps vary exactly one of them per run).
    pub fn run_one(
        &self,
        policy: Policy,
        deadline_ms: f64,
        edge_cpu_load: Option<f64>,
        trace: bool,
    ) -> Result<(ExperimentResult, Option<Vec<String>>)> {
        let wall_start = Instant::now();
        let mut engine = Engine::new(self.seed);
        if trace {
            engine.enable_trace();
        }
        let settings = WorldSettings {
            policy,
            update_period: SimDuration::from_ms(self.update_period_ms),
            profile_msg_kb: self.profile_msg_kb,
            validate_invariants: true,
            max_sim_time: None,
        };
        let mut world = World::new(settings, self.workload.image_count as usize);
        for device in &self.devices {
            let cpu_load = match (edge_cpu_load, device.profile.device_class) {
                (Some(load), DeviceClass::EdgeServer) => load,
                _ => device.cpu_load,
            };
            world.register_device(
                DeviceSetup {
                    name: device.name.clone(),
                    profile: device.profile.clone(),
                    link: device.link,
                    warm_pool_size: device.warm_pool_size,
                    cpu_load,
                },
                &mut engine,
            )?;
        }
        world.start(&mut engine)?;

        let spec = self.workload_spec(deadline_ms)?;
        let arrivals = match spec.jitter_ms {
            None => spec.generate()?,
            Some(_) => {
                // Arrival noise draws from its own stream so transport loss
                // draws stay aligned across configs.
                let mut rng =
                    rand_chacha::ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e3779b97f4a7c15);
                spec.generate_jittered(&mut rng)?
            }
        };
        for (at, task) in arrivals {
            engine.schedule_at(at, Event::TaskArrival { task });
        }

        let final_clock = engine.run_until_idle(&mut world)?;
        let records = world.recorder().finalize(spec.deadline);
        let result = metrics::summarize(
            policy,
            self.seed,
            spec.deadline,
            records,
            &world.device_names(),
            final_clock,
            wall_start.elapsed(),
        );
        let trace_lines = engine.trace_lines().map(|l| l.to_vec());
        Ok((result, trace_lines))
    }

    /// Runs the configured single experiment.
    pub fn run_single(&self, trace: bool) -> Result<(ExperimentResult, Option<Vec<String>>)> {
        self.run_one(self.policy, self.workload.deadline_ms, None, trace)
    }

    /// Runs the configured sweep, appending one row per `(policy, value)`.
    /// Rows already produced survive an error so callers can flag partial
    /// output.
    pub fn run_sweep(&self, rows: &mut Vec<SweepRow>) -> Result<()> {
        let plan = self
            .sweep
            .as_ref()
            .ok_or_else(|| Error::Config("config has no sweep section".to_string()))?;
        metrics::sweep(
            &plan.policies,
            plan.axis,
            &plan.values,
            rows,
            |policy, value| {
                let (result, _) = match plan.axis {
                    SweepAxis::DeadlineMs => self.run_one(policy, value, None, false)?,
                    SweepAxis::CpuLoad => {
                        if !(0.0..=1.0).contains(&value) {
                            return Err(Error::Config(format!(
                                "cpu_load sweep value {value} outside [0, 1]"
                            )));
                        }
                        self.run_one(policy, self.workload.deadline_ms, Some(value), false)?
                    }
                };
                Ok(result)
            },
        )
    }
}
