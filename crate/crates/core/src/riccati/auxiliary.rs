//! Per-agent Riccati equation, affine adjoint and feedback gains.
//!
//! ```text
//! Ṗ = −[PA + AᵀP + CᵀPC + Q − Lᵀ S⁻¹ L],   P(T) = G
//! S = R + DᵀPD,   L = BᵀP + DᵀPC
//! Θ₁ = −S⁻¹L,     Θ₂ = −S⁻¹(Bᵀφ + DᵀPF~x̂)
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg_ode::{integrate_ode, integrate_ode_projected, lambda_min, symmetrize, Direction, TimeGrid, Trajectory};
use crate::model::{Coefficients, ModelParams};

/// `R + DᵀPD` must keep its smallest eigenvalue above this.
pub const REGULARITY_TOL: f64 = 1e-10;

/// Inverse of a symmetric positive definite matrix, `None` if the Cholesky
/// factorization fails.
pub(crate) fn spd_inverse(s: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    nalgebra::Cholesky::new(symmetrize(s)).map(|c| c.inverse())
}

/// `S⁻¹`, `L` and `Θ₁` for a given `P`.
pub(crate) struct GainParts {
    pub s_inv: DMatrix<f64>,
    pub coupling: DMatrix<f64>,
    pub theta1: DMatrix<f64>,
}

pub(crate) fn gain_parts(co: &Coefficients, p: &DMatrix<f64>, node: usize, time: f64) -> Result<GainParts> {
    let d = &co.control_diffusion;
    let s = &co.control_weight + d.transpose() * p * d;
    let lost = |lambda_min| Error::RegularityLost { node, time, lambda_min };
    let s_inv = spd_inverse(&s).ok_or_else(|| lost(lambda_min(&symmetrize(&s)).unwrap_or(f64::NAN)))?;
    let coupling = co.control_drift.transpose() * p + d.transpose() * p * &co.state_diffusion;
    let theta1 = -(&s_inv * &coupling);
    Ok(GainParts { s_inv, coupling, theta1 })
}

fn nearest_node(grid: &TimeGrid, t: f64) -> usize {
    ((t / grid.dt()).round() as usize).min(grid.steps())
}

/// Right-hand side of the Riccati equation at one instant.
pub(crate) fn riccati_rhs(co: &Coefficients, p: &DMatrix<f64>, node: usize, time: f64) -> Result<DMatrix<f64>> {
    let parts = gain_parts(co, p, node, time)?;
    let a = &co.state_drift;
    let c = &co.state_diffusion;
    let inner = p * a + a.transpose() * p + c.transpose() * p * c + &co.state_weight
        - parts.coupling.transpose() * &parts.s_inv * &parts.coupling;
    Ok(-inner)
}

/// Solution of the per-agent Riccati equation.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub p: Trajectory<DMatrix<f64>>,
    /// `min_t λ_min(R + DᵀP(t)D)`
    pub margin: f64,
}

pub fn solve_p(params: &ModelParams, grid: &TimeGrid) -> Result<RiccatiSolution> {
    params.grid.eq(grid).then_some(()).ok_or(Error::GridMismatch)?;
    let p = integrate_ode_projected(
        |t, p: &DMatrix<f64>| riccati_rhs(&params.coefficients_at(t), p, nearest_node(grid, t), t),
        params.terminal_weight.clone(),
        grid,
        Direction::Backward,
        |p| *p = symmetrize(p),
    )?;
    let margin = regularity_margin(params, &p)?;
    Ok(RiccatiSolution { p, margin })
}

/// Smallest eigenvalue of `R + DᵀPD` over the grid; errors if it drops to
/// [`REGULARITY_TOL`] or below.
pub fn regularity_margin(params: &ModelParams, p: &Trajectory<DMatrix<f64>>) -> Result<f64> {
    let mut margin = f64::INFINITY;
    for (k, pk) in p.values().iter().enumerate() {
        let d = params.control_diffusion.at_node(k);
        let s = params.control_weight.at_node(k) + d.transpose() * pk * d;
        let lam = lambda_min(&symmetrize(&s))?;
        if lam <= REGULARITY_TOL {
            return Err(Error::RegularityLost {
                node: k,
                time: p.grid().node(k),
                lambda_min: lam,
            });
        }
        margin = margin.min(lam);
    }
    Ok(margin)
}

/// `Θ₁ = −(R + DᵀPD)⁻¹(BᵀP + DᵀPC)` at every node.
pub fn theta1(p: &Trajectory<DMatrix<f64>>, params: &ModelParams) -> Result<Trajectory<DMatrix<f64>>> {
    let grid = *p.grid();
    Trajectory::try_from_fn(grid, |k| {
        Ok(gain_parts(&params.coefficients_at_node(k), p.at(k), k, grid.node(k))?.theta1)
    })
}

/// Deterministic mean-field trajectories entering the adjoint equation.
#[derive(Debug, Clone)]
pub struct MeanFields {
    /// `x̂`
    pub state: Trajectory<DVector<f64>>,
    /// `ŷ₁`
    pub adjoint: Trajectory<DVector<f64>>,
    /// `ŷ₂`
    pub mean_adjoint: Trajectory<DVector<f64>>,
    /// `β̂₁`
    pub adjoint_diffusion: Trajectory<DVector<f64>>,
}

impl MeanFields {
    pub fn zeros(grid: TimeGrid, n: usize) -> Self {
        let z = Trajectory::from_fn(grid, |_| DVector::zeros(n));
        Self {
            state: z.clone(),
            adjoint: z.clone(),
            mean_adjoint: z.clone(),
            adjoint_diffusion: z,
        }
    }

    fn ensure_grid(&self, grid: &TimeGrid) -> Result<()> {
        self.state.ensure_grid(grid)?;
        self.adjoint.ensure_grid(grid)?;
        self.mean_adjoint.ensure_grid(grid)?;
        self.adjoint_diffusion.ensure_grid(grid)
    }
}

/// Terminal value `q₂ = −G(Γ̄x̂(T) + η̄) − Γ̄ᵀG[(I − Γ̄)x̂(T) − η̄]`.
pub fn adjoint_terminal(params: &ModelParams, state_at_end: &DVector<f64>) -> DVector<f64> {
    let g = &params.terminal_weight;
    let gb = &params.terminal_tracking_gain;
    let eb = &params.terminal_offset;
    let n = params.state_dim;
    let residual = (DMatrix::identity(n, n) - gb) * state_at_end - eb;
    -(g * (gb * state_at_end + eb)) - gb.transpose() * g * residual
}

/// Right-hand side `φ̇` of the affine adjoint equation.
pub(crate) fn adjoint_rhs(
    co: &Coefficients,
    p: &DMatrix<f64>,
    phi: &DVector<f64>,
    fields: [&DVector<f64>; 4],
    node: usize,
    time: f64,
) -> Result<DVector<f64>> {
    let [xhat, y1, y2, beta1] = fields;
    let n = xhat.len();
    let parts = gain_parts(co, p, node, time)?;
    let q = &co.state_weight;
    let gamma = &co.tracking_gain;
    let eta = &co.tracking_offset;
    let f = &co.mean_drift;
    let ft = &co.mean_diffusion;

    let forcing = -(q * (gamma * xhat + eta))
        - gamma.transpose() * q * ((DMatrix::identity(n, n) - gamma) * xhat - eta)
        + f.transpose() * y2
        + f.transpose() * y1
        + ft.transpose() * beta1;
    // Π₁ᵀ = Aᵀ − LᵀS⁻¹Bᵀ
    let closed = co.state_drift.transpose() - parts.coupling.transpose() * &parts.s_inv * co.control_drift.transpose();
    let noise = (parts.coupling.transpose() * &parts.s_inv * co.control_diffusion.transpose()
        - co.state_diffusion.transpose())
        * p
        * ft
        * xhat;
    Ok(-(closed * phi - noise + p * f * xhat + forcing))
}

/// Backward solve of the affine adjoint `φ` given the mean fields.
pub fn solve_phi(
    p: &Trajectory<DMatrix<f64>>,
    params: &ModelParams,
    fields: &MeanFields,
) -> Result<Trajectory<DVector<f64>>> {
    let grid = *p.grid();
    fields.ensure_grid(&grid)?;
    let terminal = adjoint_terminal(params, fields.state.last());
    integrate_ode(
        |t, phi: &DVector<f64>| {
            adjoint_rhs(
                &params.coefficients_at(t),
                &p.interpolate(t),
                phi,
                [
                    &fields.state.interpolate(t),
                    &fields.adjoint.interpolate(t),
                    &fields.mean_adjoint.interpolate(t),
                    &fields.adjoint_diffusion.interpolate(t),
                ],
                nearest_node(&grid, t),
                t,
            )
        },
        terminal,
        &grid,
        Direction::Backward,
    )
}

/// `Θ₂ = −(R + DᵀPD)⁻¹(Bᵀφ + DᵀPF~x̂)` at every node.
pub fn theta2(
    p: &Trajectory<DMatrix<f64>>,
    phi: &Trajectory<DVector<f64>>,
    xhat: &Trajectory<DVector<f64>>,
    params: &ModelParams,
) -> Result<Trajectory<DVector<f64>>> {
    let grid = *p.grid();
    phi.ensure_grid(&grid)?;
    xhat.ensure_grid(&grid)?;
    Trajectory::try_from_fn(grid, |k| {
        let co = params.coefficients_at_node(k);
        let parts = gain_parts(&co, p.at(k), k, grid.node(k))?;
        let d = &co.control_diffusion;
        let rhs = co.control_drift.transpose() * phi.at(k) + d.transpose() * p.at(k) * &co.mean_diffusion * xhat.at(k);
        Ok(-(&parts.s_inv * rhs))
    })
}

/// Central-difference residual of the Riccati equation, max over interior
/// nodes.
pub fn riccati_residual(params: &ModelParams, p: &Trajectory<DMatrix<f64>>) -> Result<f64> {
    let grid = p.grid();
    let dt = grid.dt();
    let mut worst = 0.0_f64;
    for k in 1..grid.steps() {
        let derivative = (p.at(k + 1) - p.at(k - 1)) / (2.0 * dt);
        let rhs = riccati_rhs(&params.coefficients_at_node(k), p.at(k), k, grid.node(k))?;
        worst = worst.max((derivative - rhs).amax());
    }
    Ok(worst)
}

/// The decentralized feedback law `u_i = Θ₁ x_i + Θ₂`.
#[derive(Debug, Clone)]
pub struct FeedbackLaw {
    pub p: Trajectory<DMatrix<f64>>,
    pub phi: Trajectory<DVector<f64>>,
    pub theta1: Trajectory<DMatrix<f64>>,
    pub theta2: Trajectory<DVector<f64>>,
    pub margin: f64,
}

impl FeedbackLaw {
    pub fn grid(&self) -> &TimeGrid {
        self.theta1.grid()
    }

    /// Assembles the law from a solved `P` and mean fields.
    pub fn from_parts(params: &ModelParams, riccati: RiccatiSolution, fields: &MeanFields) -> Result<Self> {
        let theta1 = theta1(&riccati.p, params)?;
        let phi = solve_phi(&riccati.p, params, fields)?;
        let theta2 = theta2(&riccati.p, &phi, &fields.state, params)?;
        Ok(Self {
            p: riccati.p,
            phi,
            theta1,
            theta2,
            margin: riccati.margin,
        })
    }
}
