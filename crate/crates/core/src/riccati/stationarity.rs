//! Finite-difference stationarity test of the centralized oracle.
//!
//! For open-loop perturbations `δu` of the oracle's offset, the centered
//! difference `[J(u* + hδu) − J(u* − hδu)] / 2h` is estimated by Monte Carlo
//! with common random numbers and must vanish relative to
//! `‖δu‖ (1 + |J(u*)|)`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::{LinearLaw, OracleLaw};
use crate::error::{Error, Result};
use crate::linalg_ode::{trapezoid, Trajectory};
use crate::model::AugmentedModel;
use crate::simulator::{mean_and_se, simulate_stacked, NoiseBank, SimOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationarityOptions {
    pub perturbations: usize,
    pub step: f64,
    pub paths: usize,
    pub seed: u64,
    /// Relative bound on the normalized directional derivative.
    pub tolerance: f64,
    /// Standard errors allowed below `J(u*)` for the one-sided check.
    pub slack_se: f64,
}

impl Default for StationarityOptions {
    fn default() -> Self {
        Self {
            perturbations: 5,
            step: 1e-4,
            paths: 4000,
            seed: 0x5eed,
            tolerance: 1e-2,
            slack_se: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionCheck {
    /// `‖δu‖` in `L²(0, T)`.
    pub norm: f64,
    /// Monte Carlo centered difference.
    pub derivative: f64,
    pub derivative_se: f64,
    /// The same difference from exact moment equations.
    pub exact_derivative: f64,
    pub bound: f64,
    /// `J(u* + hδu) − J(u*)` and its standard error.
    pub increase: f64,
    pub increase_se: f64,
}

impl DirectionCheck {
    pub fn passes(&self, slack_se: f64) -> bool {
        self.derivative.abs() <= self.bound && self.increase >= -slack_se * self.increase_se
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarityReport {
    pub cost: f64,
    pub cost_se: f64,
    pub directions: Vec<DirectionCheck>,
}

/// Smooth bounded direction `a + b sin(2πt/T) + c cos(2πt/T)` per control
/// coordinate, coefficients uniform in `[−1, 1]`.
fn random_direction(rng: &mut ChaCha8Rng, grid: crate::linalg_ode::TimeGrid, len: usize) -> Trajectory<DVector<f64>> {
    let coeffs: Vec<[f64; 3]> = (0..len)
        .map(|_| [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)])
        .collect();
    let omega = std::f64::consts::TAU / grid.horizon();
    Trajectory::from_fn(grid, |k| {
        let t = grid.node(k);
        DVector::from_iterator(len, coeffs.iter().map(|[a, b, c]| a + b * (omega * t).sin() + c * (omega * t).cos()))
    })
}

fn shifted(law: &LinearLaw, direction: &Trajectory<DVector<f64>>, scale: f64) -> LinearLaw {
    let offset = Trajectory::from_fn(*law.offset.grid(), |k| law.offset.at(k) + direction.at(k) * scale);
    LinearLaw {
        gain: law.gain.clone(),
        offset,
    }
}

fn path_costs(model: &AugmentedModel, law: &LinearLaw, options: &StationarityOptions) -> Result<Vec<f64>> {
    let noise = NoiseBank::new(options.seed);
    Ok(simulate_stacked(model, law, noise, options.paths, SimOptions::default())?.social_costs())
}

/// Runs the stationarity test; fails with [`Error::StationarityFailed`] on
/// the first direction that violates either inequality.
pub fn check_stationarity(
    model: &AugmentedModel,
    oracle: &OracleLaw,
    options: &StationarityOptions,
) -> Result<StationarityReport> {
    let grid = model.params().grid;
    let len = model.population() * model.params().control_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let h = options.step;

    let base = path_costs(model, &oracle.law, options)?;
    let (cost, cost_se) = mean_and_se(&base);
    let mut directions = Vec::with_capacity(options.perturbations);
    for _ in 0..options.perturbations {
        let du = random_direction(&mut rng, grid, len);
        let norm = trapezoid(&du.values().iter().map(|v| v.norm_squared()).collect::<Vec<_>>(), grid.dt()).sqrt();
        let plus_law = shifted(&oracle.law, &du, h);
        let minus_law = shifted(&oracle.law, &du, -h);
        let plus = path_costs(model, &plus_law, options)?;
        let minus = path_costs(model, &minus_law, options)?;

        let slopes: Vec<f64> = plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect();
        let (derivative, derivative_se) = mean_and_se(&slopes);
        let rises: Vec<f64> = plus.iter().zip(&base).map(|(p, b)| p - b).collect();
        let (increase, increase_se) = mean_and_se(&rises);
        let exact_derivative = (plus_law.expected_cost(model, None)? - minus_law.expected_cost(model, None)?) / (2.0 * h);

        let check = DirectionCheck {
            norm,
            derivative,
            derivative_se,
            exact_derivative,
            bound: options.tolerance * norm * (1.0 + cost.abs()),
            increase,
            increase_se,
        };
        if !check.passes(options.slack_se) {
            return Err(Error::StationarityFailed {
                derivative: check.derivative,
                bound: check.bound,
            });
        }
        directions.push(check);
    }
    Ok(StationarityReport {
        cost,
        cost_se,
        directions,
    })
}
