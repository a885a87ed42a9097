//! Monte Carlo checks of the mean-field approximation: the fixed-point
//! property of `x̂` and the `O(1/N)` decay of `E sup_t |x̃⁽ᴺ⁾ − x̂|²`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg_ode::Trajectory;
use crate::model::ModelParams;
use crate::riccati::FeedbackLaw;
use crate::simulator::{mean_and_se, simulate_decentralized, NoiseBank, SimOptions, SimResult};

/// Relative size of round-off in a population average.
const ROUNDOFF: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub population: usize,
    pub replications: usize,
    /// `E sup_t |x̃⁽ᴺ⁾ − x̂|²`
    pub estimate: f64,
    pub std_error: f64,
    /// `E sup_t |x̃₁ − x̂|²` for agent 0.
    pub agent_estimate: f64,
    pub agent_std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares fit of `ln estimate = slope · ln N + intercept`; absent
    /// with fewer than two positive estimates.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
}

fn sup_squared_gap(result: &SimResult, path: usize, mean_state: &Trajectory<DVector<f64>>, agent: bool) -> f64 {
    (0..result.grid.len())
        .map(|k| {
            let x = if agent {
                result.first_agent_at(path, k)
            } else {
                result.average_at(path, k)
            };
            x.iter().zip(mean_state.at(k).iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Least-squares line through `(ln x, ln y)` over pairs with `y > 0`.
pub fn fit_log_log(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let points: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if points.len() < 2 {
        return None;
    }
    let count = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / count;
    let my = points.iter().map(|p| p.1).sum::<f64>() / count;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// For each `N`, `replications` independent decentralized runs; each run
/// contributes `sup_t |x̃⁽ᴺ⁾(t) − x̂(t)|²`.
pub fn convergence_study(
    params: &ModelParams,
    law: &FeedbackLaw,
    mean_state: &Trajectory<DVector<f64>>,
    populations: &[usize],
    replications: usize,
    seed: u64,
) -> Result<ConvergenceTable> {
    mean_state.ensure_grid(&params.grid)?;
    if replications == 0 {
        return Err(Error::Invalid("at least one replication is required".into()));
    }
    let options = SimOptions {
        store: false,
        skip_costs: true,
    };
    let mut rows = Vec::with_capacity(populations.len());
    for &population in populations {
        let result = simulate_decentralized(params, law, population, NoiseBank::new(seed), replications, options)?;
        let gaps: Vec<f64> = (0..replications).map(|r| sup_squared_gap(&result, r, mean_state, false)).collect();
        let agent_gaps: Vec<f64> = (0..replications).map(|r| sup_squared_gap(&result, r, mean_state, true)).collect();
        let (estimate, std_error) = mean_and_se(&gaps);
        let (agent_estimate, agent_std_error) = mean_and_se(&agent_gaps);
        rows.push(ConvergenceRow {
            population,
            replications,
            estimate,
            std_error,
            agent_estimate,
            agent_std_error,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.population as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.estimate).collect();
    let fit = fit_log_log(&xs, &ys);
    Ok(ConvergenceTable {
        rows,
        slope: fit.map(|f| f.0),
        intercept: fit.map(|f| f.1),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeComparison {
    pub node: usize,
    pub time: f64,
    pub estimate: Vec<f64>,
    pub std_error: Vec<f64>,
    pub target: Vec<f64>,
    /// Largest `|estimate − target| / std_error` over coordinates.
    pub z_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanConsistency {
    pub population: usize,
    pub replications: usize,
    pub nodes: Vec<NodeComparison>,
}

impl MeanConsistency {
    pub fn worst_z(&self) -> f64 {
        self.nodes.iter().map(|n| n.z_score).fold(0.0, f64::max)
    }
}

/// Compares the Monte Carlo mean of `x̃ᵢ` with `x̂` at every `stride`-th
/// node. Each replication contributes its population average, an unbiased
/// estimate of `Ex̃ᵢ` by exchangeability.
pub fn mean_consistency(
    params: &ModelParams,
    law: &FeedbackLaw,
    mean_state: &Trajectory<DVector<f64>>,
    population: usize,
    replications: usize,
    seed: u64,
    stride: usize,
) -> Result<MeanConsistency> {
    mean_state.ensure_grid(&params.grid)?;
    if replications < 2 || stride == 0 {
        return Err(Error::Invalid("need at least two replications and a positive stride".into()));
    }
    let options = SimOptions {
        store: false,
        skip_costs: true,
    };
    let result = simulate_decentralized(params, law, population, NoiseBank::new(seed), replications, options)?;
    let n = params.state_dim;
    let nodes = (0..params.grid.len())
        .step_by(stride)
        .map(|k| {
            let (estimate, std_error): (Vec<f64>, Vec<f64>) = (0..n)
                .map(|c| {
                    let samples: Vec<f64> = (0..replications).map(|r| result.average_at(r, k)[c]).collect();
                    mean_and_se(&samples)
                })
                .unzip();
            let target: Vec<f64> = mean_state.at(k).iter().copied().collect();
            let z_score = (0..n)
                .map(|c| {
                    let diff = (estimate[c] - target[c]).abs();
                    // Averaging identical states still rounds; never divide
                    // by less than the round-off of the average itself.
                    let floor = ROUNDOFF * (1.0 + target[c].abs());
                    if diff <= floor {
                        0.0
                    } else {
                        diff / std_error[c].max(floor)
                    }
                })
                .fold(0.0, f64::max);
            NodeComparison {
                node: k,
                time: params.grid.node(k),
                estimate,
                std_error,
                target,
                z_score,
            }
        })
        .collect();
    Ok(MeanConsistency {
        population,
        replications,
        nodes,
    })
}
