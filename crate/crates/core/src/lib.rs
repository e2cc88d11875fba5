//! Dynamic energy sharing between two battery-backed renewable generators.
//!
//! Each agent covers the other's deficit from its battery up to a peak rate
//! `c_i` and passes on overflow when its own battery is full. The crate
//! simulates this hybrid system exactly between background transitions,
//! estimates long-run loss-of-load rates, and sweeps the Pareto frontier of
//! sharing configurations to find the egalitarian bargaining point.

pub mod analysis;
pub mod background;
pub mod config;
pub mod coupling;
pub mod dynamics;
pub mod error;
pub mod ingestion;
pub mod model;
pub mod presets;
pub mod simulator;
pub mod surrogate;

pub use dynamics::{instantaneous_rates, RateBundle, Region};
pub use error::{Error, Result};
pub use model::{
    c_max, validate_model, Agent, AgentChain, BackgroundSpec, CtmcSpec, ModelSpec, SharingConfig,
    TraceSpec, ValidationReport,
};
pub use simulator::{
    advance_slot, simulate, simulate_standalone, Accumulators, HybridState, SimOptions,
    SimulationResult,
};
