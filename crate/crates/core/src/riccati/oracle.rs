//! Centralized optimal control of the stacked population (small `N` only).
//!
//! ```text
//! 𝐏̇ = −[𝐏𝐀 + 𝐀ᵀ𝐏 + Σ𝐂ᵢᵀ𝐏𝐂ᵢ + 𝐐 − 𝐋ᵀ𝐒⁻¹𝐋],    𝐏(T) = 𝐆
//! 𝐒 = 𝐑 + Σ𝐃ᵢᵀ𝐏𝐃ᵢ,   𝐋 = 𝐁ᵀ𝐏 + Σ𝐃ᵢᵀ𝐏𝐂ᵢ,   𝚯 = −𝐒⁻¹𝐋
//! 𝛗̇ = −[(𝐀 + 𝐁𝚯)ᵀ𝛗 + 𝐒₁],                     𝛗(T) = 𝐒₂
//! u* = 𝚯x − 𝐒⁻¹𝐁ᵀ𝛗
//! ```

use nalgebra::{DMatrix, DVector};

use super::auxiliary::{spd_inverse, REGULARITY_TOL};
use super::stationarity::{check_stationarity, StationarityOptions, StationarityReport};
use crate::error::{Error, Result};
use crate::linalg_ode::{integrate_ode, integrate_ode_projected, lambda_min, symmetrize, Direction, Trajectory};
use crate::model::{AugmentedModel, AugmentedSystem};

/// A linear state-feedback law `u = gain·x + offset` on the stacked state.
#[derive(Debug, Clone)]
pub struct LinearLaw {
    pub gain: Trajectory<DMatrix<f64>>,
    pub offset: Trajectory<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct OracleLaw {
    pub p: Trajectory<DMatrix<f64>>,
    pub phi: Trajectory<DVector<f64>>,
    pub law: LinearLaw,
    /// `min_t λ_min(𝐑 + Σ𝐃ᵢᵀ𝐏𝐃ᵢ)`
    pub margin: f64,
    pub population: usize,
}

struct StackedParts {
    s: DMatrix<f64>,
    coupling: DMatrix<f64>,
    noise_quadratic: DMatrix<f64>,
}

/// `𝐒`, `𝐋` and `Σ𝐂ᵢᵀ𝐏𝐂ᵢ`, using that `𝐂ᵢ`, `𝐃ᵢ` vanish outside block row `i`.
fn stacked_parts(sys: &AugmentedSystem, p: &DMatrix<f64>) -> StackedParts {
    let mut s = sys.control_weight.clone();
    let mut coupling = sys.control.transpose() * p;
    let mut noise_quadratic = DMatrix::zeros(sys.dim(), sys.dim());
    for i in 0..sys.population {
        let (row, n) = sys.noise_rows(i);
        let block = p.view((row, row), (n, n));
        let ci = sys.state_noise[i].rows(row, n);
        let di = sys.control_noise[i].rows(row, n);
        let p_ci = block * ci;
        noise_quadratic += ci.transpose() * &p_ci;
        coupling += di.transpose() * &p_ci;
        s += di.transpose() * block * di;
    }
    StackedParts {
        s,
        coupling,
        noise_quadratic,
    }
}

fn stacked_inverse(s: &DMatrix<f64>, node: usize, time: f64) -> Result<DMatrix<f64>> {
    spd_inverse(s).ok_or_else(|| Error::RegularityLost {
        node,
        time,
        lambda_min: lambda_min(&symmetrize(s)).unwrap_or(f64::NAN),
    })
}

/// Solves the stacked problem and runs the stationarity self-test with
/// default options.
pub fn solve_oracle(model: &AugmentedModel) -> Result<OracleLaw> {
    solve_oracle_checked(model, &StationarityOptions::default()).map(|(law, _)| law)
}

pub fn solve_oracle_checked(
    model: &AugmentedModel,
    options: &StationarityOptions,
) -> Result<(OracleLaw, StationarityReport)> {
    let oracle = solve_oracle_unchecked(model)?;
    let report = check_stationarity(model, &oracle, options)?;
    Ok((oracle, report))
}

/// The stacked Riccati and affine solve alone, without the self-test.
pub fn solve_oracle_unchecked(model: &AugmentedModel) -> Result<OracleLaw> {
    let grid = model.params().grid;
    let node_of = |t: f64| ((t / grid.dt()).round() as usize).min(grid.steps());
    let terminal = model.at_node(grid.steps()).terminal_weight.clone();

    let p = integrate_ode_projected(
        |t, p: &DMatrix<f64>| {
            let sys = model.at_time(t);
            let parts = stacked_parts(&sys, p);
            let s_inv = stacked_inverse(&parts.s, node_of(t), t)?;
            let inner = p * &sys.drift + sys.drift.transpose() * p + &parts.noise_quadratic + &sys.state_weight
                - parts.coupling.transpose() * s_inv * &parts.coupling;
            Ok(-inner)
        },
        terminal,
        &grid,
        Direction::Backward,
        |p| *p = symmetrize(p),
    )?;

    let mut margin = f64::INFINITY;
    let mut gains = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let sys = model.at_node(k);
        let parts = stacked_parts(&sys, p.at(k));
        let lam = lambda_min(&symmetrize(&parts.s))?;
        if lam <= REGULARITY_TOL {
            return Err(Error::RegularityLost {
                node: k,
                time: grid.node(k),
                lambda_min: lam,
            });
        }
        margin = margin.min(lam);
        let s_inv = stacked_inverse(&parts.s, k, grid.node(k))?;
        gains.push((-(&s_inv * &parts.coupling), s_inv));
    }

    let terminal_linear = model.at_node(grid.steps()).terminal_linear.clone();
    let phi = integrate_ode(
        |t, phi: &DVector<f64>| {
            let sys = model.at_time(t);
            let pt = p.interpolate(t);
            let parts = stacked_parts(&sys, &pt);
            let s_inv = stacked_inverse(&parts.s, node_of(t), t)?;
            let closed = &sys.drift - &sys.control * (&s_inv * &parts.coupling);
            Ok(-(closed.transpose() * phi + &sys.running_linear))
        },
        terminal_linear,
        &grid,
        Direction::Backward,
    )?;

    let offset = Trajectory::from_fn(grid, |k| {
        let sys = model.at_node(k);
        -(&gains[k].1 * sys.control.transpose() * phi.at(k))
    });
    let gain = Trajectory::new(grid, gains.into_iter().map(|(g, _)| g).collect())?;
    Ok(OracleLaw {
        p,
        phi,
        law: LinearLaw { gain, offset },
        margin,
        population: model.population(),
    })
}

/// Exact expected social cost of `u = gain(t)·x + offset(t)` on the stacked
/// system, from the first and second moment equations.
///
/// ```text
/// ṁ = 𝐌m + 𝐁k
/// Ṡ = 𝐌S + S𝐌ᵀ + 𝐁k mᵀ + m kᵀ𝐁ᵀ + Σᵢ 𝐍ᵢ(S − mmᵀ)𝐍ᵢᵀ + vᵢvᵢᵀ
/// 𝐌 = 𝐀 + 𝐁𝐊,  𝐍ᵢ = 𝐂ᵢ + 𝐃ᵢ𝐊,  vᵢ = 𝐍ᵢm + 𝐃ᵢk
/// ```
pub fn expected_cost<G, K>(model: &AugmentedModel, gain: G, offset: K) -> Result<f64>
where
    G: Fn(f64) -> DMatrix<f64>,
    K: Fn(f64) -> DVector<f64>,
{
    let grid = model.params().grid;
    let sys0 = model.at_node(0);
    let m0 = sys0.initial_state.clone();
    let s0 = &m0 * m0.transpose();
    type State = (DVector<f64>, (DMatrix<f64>, f64));

    let traj = integrate_ode(
        |t, state: &State| {
            let (mean, (second, _)) = state;
            let sys = model.at_time(t);
            let k_gain = gain(t);
            let k_off = offset(t);
            let closed = &sys.drift + &sys.control * &k_gain;
            let push = &sys.control * &k_off;
            let d_mean = &closed * mean + &push;
            let mut d_second = &closed * second + second * closed.transpose() + &push * mean.transpose()
                + mean * push.transpose();
            let centered = second - mean * mean.transpose();
            for i in 0..sys.population {
                let (row, n) = sys.noise_rows(i);
                let ni = sys.state_noise[i].rows(row, n) + sys.control_noise[i].rows(row, n) * &k_gain;
                let vi = &ni * mean + sys.control_noise[i].rows(row, n) * &k_off;
                let block = &ni * &centered * ni.transpose() + &vi * vi.transpose();
                let mut target = d_second.view_mut((row, row), (n, n));
                target += block;
            }
            let control_quadratic = k_gain.transpose() * &sys.control_weight * &k_gain;
            let rate = 0.5
                * ((&sys.state_weight + control_quadratic).component_mul(second).sum()
                    + 2.0 * sys.running_linear.dot(mean)
                    + sys.running_constant
                    + 2.0 * k_off.dot(&(&sys.control_weight * &k_gain * mean))
                    + k_off.dot(&(&sys.control_weight * &k_off)));
            Ok((d_mean, (d_second, rate)))
        },
        (m0, (s0, 0.0)),
        &grid,
        Direction::Forward,
    )?;

    let (mean, (second, running)) = traj.last();
    let sys = model.at_node(grid.steps());
    let terminal = 0.5
        * (sys.terminal_weight.component_mul(second).sum()
            + 2.0 * sys.terminal_linear.dot(mean)
            + sys.terminal_constant);
    Ok(running + terminal)
}

impl LinearLaw {
    /// Expected social cost of this law, optionally with an open-loop
    /// perturbation added to the offset.
    pub fn expected_cost(&self, model: &AugmentedModel, perturbation: Option<&dyn Fn(f64) -> DVector<f64>>) -> Result<f64> {
        expected_cost(
            model,
            |t| self.gain.interpolate(t),
            |t| match perturbation {
                Some(du) => self.offset.interpolate(t) + du(t),
                None => self.offset.interpolate(t),
            },
        )
    }
}
