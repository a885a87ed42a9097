//! Monte Carlo simulation of the population under decentralized or
//! centralized feedback, with common random numbers across laws.

mod engine;
mod noise;

pub use engine::{
    mean_and_se, simulate_centralized, simulate_decentralized, simulate_stacked, social_cost, CostSummary,
    PathRecord, SimOptions, SimResult, STORAGE_LIMIT,
};
pub use noise::{AgentStream, NoiseBank};
