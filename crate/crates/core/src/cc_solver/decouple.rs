//! Decoupling of the `6n` forward-backward system through `Ỹ = KX̃ + κ`.
//!
//! ```text
//! K̇ = Ã₂ + B̃₂K − K(Ã₁ + B̃₁K) + C̃₂K(Ã₁' + B̃₁'K) + C̄̃₂K(Ã₁' + B̃₁'K)J,   K(T) = G̃
//! κ̇ = [B̃₂ + (C̃₂ + C̄̃₂)KB̃₁' − KB̃₁]κ + f̃,                                κ(T) = g̃
//! ```
//!
//! `J = diag(I, 0)` projects `X̃` onto its deterministic half, so the mean
//! noise loading `C̄̃₂EZ̃` only sees `EX̃ = (X₁, 0)`. Matching drifts only after
//! taking expectations leaves the fluctuation columns of `K` unconstrained and
//! drops `C₂K₂₂(A₁' + B₁'K₂₂)` from the fluctuation block; that variant is kept
//! as [`KForm::MeanMatched`] for comparison.

use nalgebra::{DMatrix, DVector};

use super::blocks::{block2, CCMatrices, TildeBlocks};
use crate::error::{Error, Result};
use crate::linalg_ode::{integrate_ode, Direction, Trajectory};

/// Threshold on determinants and singular values below which an inverse is
/// treated as unavailable.
pub const SINGULAR_TOL: f64 = 1e-8;

/// Which drift-matching rule defines the decoupling Riccati equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KForm {
    /// Pathwise matching; the mean noise loading acts on `EX̃` only.
    #[default]
    Pathwise,
    /// Matching of expectations only, with `(C̃₂ + C̄̃₂)K(Ã₁' + B̃₁'K)`.
    MeanMatched,
}

fn k_rhs(tb: &TildeBlocks, k: &DMatrix<f64>, form: KForm) -> DMatrix<f64> {
    let loading = k * (&tb.a1_noise + &tb.b1_noise * k);
    let base = &tb.a2 + &tb.b2 * k - k * (&tb.a1 + &tb.b1 * k);
    match form {
        KForm::MeanMatched => base + (&tb.c2 + &tb.c2_mean) * loading,
        KForm::Pathwise => {
            let mut mean_part = loading.clone();
            let half = mean_part.ncols() / 2;
            mean_part.columns_mut(half, half).fill(0.0);
            base + &tb.c2 * loading + &tb.c2_mean * mean_part
        }
    }
}

fn kappa_bracket(tb: &TildeBlocks, k: &DMatrix<f64>) -> DMatrix<f64> {
    let noise = &tb.c2 + &tb.c2_mean;
    &tb.b2 + noise * k * &tb.b1_noise - k * &tb.b1
}

/// Backward RK4 solve of the decoupling Riccati equation in its pathwise
/// form. Divergence is reported as [`Error::NonFinite`].
pub fn solve_k(cc: &CCMatrices) -> Result<Trajectory<DMatrix<f64>>> {
    solve_k_with(cc, KForm::Pathwise)
}

pub fn solve_k_with(cc: &CCMatrices, form: KForm) -> Result<Trajectory<DMatrix<f64>>> {
    let grid = *cc.grid();
    let terminal = cc.at_node(grid.steps()).tilde.terminal.clone();
    integrate_ode(
        |t, k: &DMatrix<f64>| Ok(k_rhs(&cc.at_time(t)?.tilde, k, form)),
        terminal,
        &grid,
        Direction::Backward,
    )
}

pub fn solve_kappa(cc: &CCMatrices, k: &Trajectory<DMatrix<f64>>) -> Result<Trajectory<DVector<f64>>> {
    let grid = *cc.grid();
    k.ensure_grid(&grid)?;
    let terminal = cc.at_node(grid.steps()).tilde.terminal_offset.clone();
    integrate_ode(
        |t, kappa: &DVector<f64>| {
            let blocks = cc.at_time(t)?;
            let tb = &blocks.tilde;
            Ok(kappa_bracket(tb, &k.interpolate(t)) * kappa + &tb.forcing)
        },
        terminal,
        &grid,
        Direction::Backward,
    )
}

/// Largest central-difference residual of the `K` equation over interior
/// nodes.
pub fn k_residual(cc: &CCMatrices, k: &Trajectory<DMatrix<f64>>, form: KForm) -> Result<f64> {
    let grid = *cc.grid();
    k.ensure_grid(&grid)?;
    let dt = grid.dt();
    let mut worst = 0.0_f64;
    for j in 1..grid.steps() {
        let derivative = (k.at(j + 1) - k.at(j - 1)) / (2.0 * dt);
        let rhs = k_rhs(&cc.at_node(j).tilde, k.at(j), form);
        worst = worst.max((derivative - rhs).amax());
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Condition37 {
    pub holds: bool,
    pub determinant: f64,
}

/// Determinant of the lower-right `3n` block of the transition matrix of
/// ```text
/// [ A₁                            B₁      ]
/// [ A₂ − ḠA₁ + (B₂ − ḠB₁)Ḡ       B₂ − ḠB₁ ]
/// ```
/// over `[0, T]`. A nonzero value forces the means of the fluctuation part
/// to vanish.
pub fn check_condition_37(cc: &CCMatrices) -> Result<Condition37> {
    let grid = *cc.grid();
    let dim = 6 * cc.state_dim();
    let half = dim / 2;
    let phi = integrate_ode(
        |t, phi: &DMatrix<f64>| {
            let blocks = cc.at_time(t)?;
            let st = &blocks.stacked;
            let gbar = &st.terminal;
            let lower_right = &st.b2 - gbar * &st.b1;
            let lower_left = &st.a2 - gbar * &st.a1 + &lower_right * gbar;
            Ok(block2(&st.a1, &st.b1, &lower_left, &lower_right) * phi)
        },
        DMatrix::identity(dim, dim),
        &grid,
        Direction::Forward,
    )?;
    let determinant = phi.last().view((half, half), (half, half)).determinant();
    Ok(Condition37 {
        holds: determinant.abs() > SINGULAR_TOL,
        determinant,
    })
}

/// True when `C` and `F~` vanish at every node, so the noise coupling of the
/// decoupling equation drops out.
pub fn is_reduced_case(cc: &CCMatrices) -> bool {
    let params = cc.params();
    (0..cc.grid().len()).all(|k| {
        params.state_diffusion.at_node(k).amax() == 0.0 && params.mean_diffusion.at_node(k).amax() == 0.0
    })
}

/// Closed-form `K` for the reduced case through the transition matrix `Ψ` of
/// `[[Ã₁, B̃₁], [Ã₂, B̃₂]]`:
/// ```text
/// W(t) = (−G̃, I)Ψ(T, t),   K(t) = −[W(t)(0, I)ᵀ]⁻¹ W(t)(I, 0)ᵀ
/// ```
/// `W` is integrated backward from `W(T) = (−G̃, I)` by `Ẇ = −WM`.
pub fn explicit_k_reduced(cc: &CCMatrices) -> Result<Trajectory<DMatrix<f64>>> {
    if !is_reduced_case(cc) {
        return Err(Error::NotReducedCase);
    }
    let grid = *cc.grid();
    let half = 6 * cc.state_dim();
    let g_tilde = &cc.at_node(grid.steps()).tilde.terminal;
    let mut w_end = DMatrix::zeros(half, 2 * half);
    w_end.view_mut((0, 0), (half, half)).copy_from(&(-g_tilde));
    w_end.view_mut((0, half), (half, half)).fill_with_identity();

    let w = integrate_ode(
        |t, w: &DMatrix<f64>| {
            let blocks = cc.at_time(t)?;
            let tb = &blocks.tilde;
            Ok(-(w * block2(&tb.a1, &tb.b1, &tb.a2, &tb.b2)))
        },
        w_end,
        &grid,
        Direction::Backward,
    )?;

    Trajectory::try_from_fn(grid, |j| {
        let wj = w.at(j);
        let right = wj.view((0, half), (half, half)).into_owned();
        let left = wj.view((0, 0), (half, half)).into_owned();
        let svd = right.clone().svd(true, true);
        let sigma = svd.singular_values.min();
        if sigma <= SINGULAR_TOL {
            return Err(Error::NearSingular { node: j, sigma });
        }
        let solved = svd
            .solve(&left, 0.0)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        Ok(-solved)
    })
}

/// Means of the fluctuation part `(EX₂, EY₂)` under the decoupled law:
/// ```text
/// d EX₂ = [A₁EX₂ + B₁EY₂]dt,   EY₂ = K₂₁X₁ + K₂₂EX₂ + κ₂,   EX₂(0) = 0
/// ```
/// Both vanish identically when the decoupling is consistent.
pub fn fluctuation_means(
    cc: &CCMatrices,
    k: &Trajectory<DMatrix<f64>>,
    kappa: &Trajectory<DVector<f64>>,
    x1: &Trajectory<DVector<f64>>,
) -> Result<(Trajectory<DVector<f64>>, Trajectory<DVector<f64>>)> {
    let grid = *cc.grid();
    k.ensure_grid(&grid)?;
    kappa.ensure_grid(&grid)?;
    x1.ensure_grid(&grid)?;
    let dim = 3 * cc.state_dim();
    let lower_y = |k: &DMatrix<f64>, kappa: &DVector<f64>, x1: &DVector<f64>, x2: &DVector<f64>| {
        k.view((dim, 0), (dim, dim)) * x1 + k.view((dim, dim), (dim, dim)) * x2 + kappa.rows(dim, dim)
    };
    let x2 = integrate_ode(
        |t, x2: &DVector<f64>| {
            let blocks = cc.at_time(t)?;
            let st = &blocks.stacked;
            let y2 = lower_y(&k.interpolate(t), &kappa.interpolate(t), &x1.interpolate(t), x2);
            Ok(&st.a1 * x2 + &st.b1 * y2)
        },
        DVector::zeros(dim),
        &grid,
        Direction::Forward,
    )?;
    let y2 = Trajectory::from_fn(grid, |j| lower_y(k.at(j), kappa.at(j), x1.at(j), x2.at(j)));
    Ok((x2, y2))
}
