//! Deadline-aware age-of-information scheduling for a symmetric industrial
//! wireless sensor-actuator network.
//!
//! The crate simulates `M` sensor-actuator pairs sharing one unreliable TDMA
//! channel. Each slot the controller serves at most one active sensor sample;
//! served flows go inactive for an actuation period, unserved samples lose
//! freshness and are dropped once they miss their deadline.
//!
//! * [`model`]: per-flow calculus (latency, freshness, laxity, utility, priority).
//! * [`plan`]: policy-independent randomness shared by compared policies.
//! * [`engine`]: the slot loop, traces and structural audits.
//! * [`policies`]: HLF-D and the HLF / EDF / LLF / random baselines.
//! * [`metrics`]: objective value, age, latency and jitter with Monte Carlo aggregation.
//! * [`oracle`]: exhaustive schedule enumeration on small instances and trace ordering checks.
//! * [`experiment`]: presets, CSV output and the scaling benchmark behind the CLI.

pub mod engine;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod plan;
pub mod policies;

pub use engine::{run_horizon, run_with_plan, SimError, Simulator, SlotRecord, Trace};
pub use model::{FlowId, FlowState, Mode, Priority, SimConfig, SlotRange};
pub use plan::RandomnessPlan;
pub use policies::{Policy, PolicyDecision, PolicyKind};
