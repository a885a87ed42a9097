//! Per-capita social-cost gap between the decentralized law and the
//! centralized oracle, under common random numbers.

use crate::cc_solver::solve_cc;
use crate::convexity::{assess, ConvexityStatus};
use crate::error::{Error, Result, StageExt};
use crate::model::{AugmentedModel, ModelParams};
use crate::riccati::{solve_oracle_checked, LinearLaw, StationarityOptions};
use crate::simulator::{mean_and_se, simulate_centralized, simulate_decentralized, NoiseBank, SimOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub population: usize,
    pub paths: usize,
    /// `J_soc(ũ) / N`
    pub decentralized: f64,
    /// `J_soc(u*) / N`
    pub centralized: f64,
    /// Mean of the paired per-path differences, divided by `N`.
    pub gap: f64,
    pub std_error: f64,
    /// The same per-capita costs from exact moment equations.
    pub exact_decentralized: f64,
    pub exact_centralized: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapStudy {
    pub rows: Vec<GapRow>,
    pub warnings: Vec<String>,
}

impl GapStudy {
    /// Oracle dominance: `gap ≥ −k·SE` on every row.
    pub fn oracle_dominates(&self, k: f64) -> bool {
        self.rows.iter().all(|r| r.gap >= -k * r.std_error)
    }

    /// `gap` does not increase from one row to the next by more than
    /// `k` combined standard errors.
    pub fn non_increasing(&self, k: f64) -> bool {
        self.rows.windows(2).all(|w| {
            let slack = k * (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
            w[1].gap <= w[0].gap + slack
        })
    }
}

pub fn gap_study(params: &ModelParams, populations: &[usize], paths: usize, seed: u64) -> Result<GapStudy> {
    if paths < 2 {
        return Err(Error::Invalid("need at least two paths".into()));
    }
    let mut warnings = Vec::new();
    if !assess(params)?
        .iter()
        .any(|v| v.status == ConvexityStatus::UniformlyConvex)
    {
        warnings.push("uniform convexity not verified by any criterion; oracle optimality is assumed".to_string());
    }
    let (_, law) = solve_cc(params)?;
    let noise = NoiseBank::new(seed);
    let options = SimOptions::default();
    let stationarity = StationarityOptions {
        seed,
        ..StationarityOptions::default()
    };

    let mut rows = Vec::with_capacity(populations.len());
    for &population in populations {
        let scale = 1.0 / population as f64;
        let model = AugmentedModel::new(params, population).stage("augmented system")?;
        let (oracle, _) = solve_oracle_checked(&model, &stationarity).stage("oracle")?;
        let dec = simulate_decentralized(params, &law, population, noise, paths, options)?.social_costs();
        let cen = simulate_centralized(&model, &oracle, noise, paths, options)?.social_costs();
        let diffs: Vec<f64> = dec.iter().zip(&cen).map(|(d, c)| (d - c) * scale).collect();
        let (gap, std_error) = mean_and_se(&diffs);
        let exact_decentralized = LinearLaw::decentralized(&law, population).expected_cost(&model, None)? * scale;
        let exact_centralized = oracle.law.expected_cost(&model, None)? * scale;
        rows.push(GapRow {
            population,
            paths,
            decentralized: mean_and_se(&dec).0 * scale,
            centralized: mean_and_se(&cen).0 * scale,
            gap,
            std_error,
            exact_decentralized,
            exact_centralized,
        });
    }
    Ok(GapStudy { rows, warnings })
}
