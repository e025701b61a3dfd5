//! Synthetic networks and outcomes, forward simulation of the longitudinal
//! processes, and Monte Carlo scenario runs with bias/MSE/coverage tables.

mod metrics;
mod network;
mod outcome;
mod scenario;
mod seed;

pub use metrics::{Estimate, MetricsRow, MetricsTable, METRICS_HEADER};
pub use network::{generate_network, NetParams, SimNetwork};
pub use outcome::{
    draw_limiting_outcome, forward_simulate, linear_predictor, validate_limit, ForwardSimConfig, LimitReport,
    LimitingSampler, Trajectory, LIMIT_COV_FRACTION, LIMIT_Z_THRESHOLD,
};
pub use scenario::{
    aggregate, perturbed_draws, run_replicate, run_scenario, LatentSource, Method, MethodOutcome, NetworkSource,
    PreparedNetwork, ReplicateRecord, ScenarioConfig, ScenarioRun,
};
pub use seed::mix_seed;
