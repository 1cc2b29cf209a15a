//! edgesim: a deterministic discrete-event simulator for deadline-aware
//! task offloading between end devices and an edge server.
//!
//! Devices are modeled from measured container-timing tables: per-image
//! processing time against warm-container concurrency, runtime against
//! image size, a CPU-load slowdown curve, and (for reporting) cold-start
//! costs. A two-level scheduler decides per task where it runs: the source
//! device keeps a task whenever its own profile predicts the deadline can
//! be met locally, otherwise the edge server's coordinator places it using
//! the periodically gossiped load snapshots of every registered device.
//!
//! ```text
//!  end device ──(datagram, lossy)──▶ edge server ──▶ worker end device
//!      │                                │
//!      └── local warm-container pool    └── coordinator + profile table
//! ```
//!
//! Everything runs on a virtual clock: identical configs and seeds replay
//! byte-identically, and with loss-free links the seed does not matter at
//! all. Four policies are built in (`aor`, `aoe`, `eods`, `dds`); sweeps
//! over deadlines or edge CPU load produce plot-ready CSV tables.

pub mod config;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod nodes;
pub mod profiles;
pub mod schedulers;
pub mod time;
pub mod workload;

pub use config::{Experiment, Overrides};
pub use engine::{DeviceId, Engine, Event, EventHandler, NetworkLink, Payload, SendOutcome};
pub use error::{Error, Result};
pub use metrics::{ExperimentResult, RunRecorder, SweepAxis, SweepRow, TaskRecord};
pub use nodes::{
    ContainerPool, Device, DeviceSetup, GlobalProfileTable, ProfileSnapshot, World, WorldSettings,
};
pub use profiles::{DeviceClass, DeviceProfile, LatencyEstimate};
pub use schedulers::{Decision, Policy, Task};
pub use time::{SimDuration, SimTime};
pub use workload::{Preset, WorkloadSpec, PRESETS};
