//! Deterministic simulator for self-organizing cooperative adaptive cruise
//! control of heterogeneous longitudinal platoons.
//!
//! Vehicles run a baseline CACC law plus homogenizing inputs that steer them
//! toward a common group model agreed on by consensus. Max-min consensus on
//! the acceleration bounds and an anti-windup law handle heterogeneous limits;
//! a high-gain / sliding-mode observer replaces the predecessor signal when
//! communication drops; an optional safety layer verifies every control cycle
//! against a braking fallback.
//!
//! ```ignore
//! use platoon_core::{presets, run_scenario};
//!
//! let mut cfg = presets::reference_platoon(20.0);
//! cfg.noise.enabled = false;
//! let out = run_scenario(&cfg).unwrap();
//! assert!(!out.metrics.collision);
//! ```

// `!(x > 0.0)` rejects NaN along with non-positive values; indexed loops
// mirror the per-vehicle math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod consensus;
pub mod controller;
pub mod error;
pub mod integrator;
pub mod linalg;
pub mod log;
pub mod noise;
pub mod observer;
pub mod platoon;
pub mod presets;
pub mod safety;
pub mod scenario;
pub mod sim;
pub mod suites;
pub mod vehicle;

pub use consensus::{consensus_limits, CommGraph, ConsensusConfig, ConsensusLimits, ConsensusState};
pub use controller::{ControllerConfig, ControllerMode, GroupParams};
pub use error::{Error, Result};
pub use log::{compute_metrics, Event, EventKind, Metrics, TrajectoryLog, VehicleMetrics};
pub use noise::NoiseConfig;
pub use observer::{build_observer_matrices, Observer, ObserverConfig, ObserverMatrices};
pub use safety::{SafetyConfig, SafetyMode, SafetyVerdict};
pub use scenario::{LeaderProfile, ScenarioConfig};
pub use sim::{run_scenario, SimOutcome};
pub use vehicle::{PlatoonState, VehicleParams, VehicleState};
