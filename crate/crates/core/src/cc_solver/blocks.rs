//! Block matrices of the consistency system and its stacked forms.
//!
//! The `3n` stacking is `X = (x̌, 0, 0)`, `Y = (φ̌, y̌₁, y̌₂)`, `Z = (0, β₁, 0)`;
//! the `6n` system doubles it into a mean part and a fluctuation part.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg_ode::{TimeGrid, Trajectory};
use crate::model::{Coefficients, ModelParams};
use crate::riccati::gain_parts;

/// The seven `n×n` blocks built from the per-agent Riccati solution.
#[derive(Debug, Clone, PartialEq)]
pub struct PiBlocks {
    /// `A + BΘ₁`
    pub pi1: DMatrix<f64>,
    /// `F − BS⁻¹DᵀPF~`
    pub pi2: DMatrix<f64>,
    /// `−BS⁻¹Bᵀ`
    pub pi3: DMatrix<f64>,
    /// Mean-state coefficient of the adjoint drift.
    pub pi4: DMatrix<f64>,
    /// `C + DΘ₁`
    pub pi1_noise: DMatrix<f64>,
    /// `F~ − DS⁻¹DᵀPF~`
    pub pi2_noise: DMatrix<f64>,
    /// `−DS⁻¹Bᵀ`
    pub pi3_noise: DMatrix<f64>,
}

/// The `3n` forward-backward system
/// ```text
/// dX = (A₁X + Ā₁EX + B₁Y)dt + (A₁'X + Ā₁'EX + B₁'Y)dB
/// dY = (A₂X + Ā₂EX + B₂Y + B̄₂EY + C₂Z + C̄₂EZ + f)dt + Z dB
/// X(0) = (ξ₀, 0, 0),   Y(T) = ḠX(T) + Ḡ'EX(T) + g
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct StackedBlocks {
    pub a1: DMatrix<f64>,
    pub a1_mean: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub a1_noise: DMatrix<f64>,
    pub a1_noise_mean: DMatrix<f64>,
    pub b1_noise: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    pub a2_mean: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub b2_mean: DMatrix<f64>,
    pub c2: DMatrix<f64>,
    pub c2_mean: DMatrix<f64>,
    pub forcing: DVector<f64>,
    pub terminal: DMatrix<f64>,
    pub terminal_mean: DMatrix<f64>,
    pub terminal_offset: DVector<f64>,
}

/// The `6n` system in `X~ = (X₁, X₂)`, `Y~ = (Y₁, Y₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TildeBlocks {
    pub a1: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub a1_noise: DMatrix<f64>,
    pub b1_noise: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub c2: DMatrix<f64>,
    pub c2_mean: DMatrix<f64>,
    pub terminal: DMatrix<f64>,
    pub forcing: DVector<f64>,
    pub initial: DVector<f64>,
    pub terminal_offset: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcBlocks {
    pub pi: PiBlocks,
    pub stacked: StackedBlocks,
    pub tilde: TildeBlocks,
}

/// `3n×3n` matrix with the given `n×n` blocks, zero elsewhere.
fn blocks3(n: usize, entries: &[(usize, usize, &DMatrix<f64>)]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(3 * n, 3 * n);
    for (i, j, block) in entries {
        out.view_mut((i * n, j * n), (n, n)).copy_from(*block);
    }
    out
}

/// `[[top_left, top_right], [bottom_left, bottom_right]]`.
pub(crate) fn block2(
    top_left: &DMatrix<f64>,
    top_right: &DMatrix<f64>,
    bottom_left: &DMatrix<f64>,
    bottom_right: &DMatrix<f64>,
) -> DMatrix<f64> {
    let (r, c) = top_left.shape();
    let mut out = DMatrix::zeros(2 * r, 2 * c);
    out.view_mut((0, 0), (r, c)).copy_from(top_left);
    out.view_mut((0, c), (r, c)).copy_from(top_right);
    out.view_mut((r, 0), (r, c)).copy_from(bottom_left);
    out.view_mut((r, c), (r, c)).copy_from(bottom_right);
    out
}

fn concat(top: &DVector<f64>, bottom: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(top.len() + bottom.len());
    out.rows_mut(0, top.len()).copy_from(top);
    out.rows_mut(top.len(), bottom.len()).copy_from(bottom);
    out
}

pub fn pi_blocks(co: &Coefficients, p: &DMatrix<f64>, node: usize, time: f64) -> Result<PiBlocks> {
    let n = p.nrows();
    let parts = gain_parts(co, p, node, time)?;
    let b = &co.control_drift;
    let d = &co.control_diffusion;
    let q = &co.state_weight;
    let gamma = &co.tracking_gain;
    let p_ft = p * &co.mean_diffusion;
    let s_inv_dt_pft = &parts.s_inv * d.transpose() * &p_ft;

    let pi4 = parts.coupling.transpose() * &s_inv_dt_pft - co.state_diffusion.transpose() * &p_ft
        - p * &co.mean_drift
        + q * gamma
        + gamma.transpose() * q * (DMatrix::identity(n, n) - gamma);

    Ok(PiBlocks {
        pi1: &co.state_drift + b * &parts.theta1,
        pi2: &co.mean_drift - b * &s_inv_dt_pft,
        pi3: -(b * &parts.s_inv * b.transpose()),
        pi4,
        pi1_noise: &co.state_diffusion + d * &parts.theta1,
        pi2_noise: &co.mean_diffusion - d * &s_inv_dt_pft,
        pi3_noise: -(d * &parts.s_inv * b.transpose()),
    })
}

pub fn stacked_blocks(params: &ModelParams, co: &Coefficients, pi: &PiBlocks) -> StackedBlocks {
    let n = params.state_dim;
    let id = DMatrix::identity(n, n);
    let q = &co.state_weight;
    let gamma = &co.tracking_gain;
    let a = &co.state_drift;
    let f = &co.mean_drift;
    let ft = &co.mean_diffusion;
    let g = &params.terminal_weight;
    let gb = &params.terminal_tracking_gain;
    let eb = &params.terminal_offset;

    let q_gamma = q * gamma;
    let tracking_cross = gamma.transpose() * q * (&id - gamma);
    let neg_ft = -f.transpose();
    let neg_ftt = -ft.transpose();

    let q_eta = q * &co.tracking_offset;
    let gq_eta = gamma.transpose() * &q_eta;
    let forcing = concat(&concat(&(&q_eta - &gq_eta), &q_eta), &(-&gq_eta));

    let g_gb = g * gb;
    let terminal_cross = gb.transpose() * g * (&id - gb);
    let g_eb = g * eb;
    let gb_g_eb = gb.transpose() * &g_eb;
    let terminal_offset = concat(&concat(&(&gb_g_eb - &g_eb), &(-&g_eb)), &gb_g_eb);

    StackedBlocks {
        a1: blocks3(n, &[(0, 0, &pi.pi1)]),
        a1_mean: blocks3(n, &[(0, 0, &pi.pi2)]),
        b1: blocks3(n, &[(0, 0, &pi.pi3)]),
        a1_noise: blocks3(n, &[(0, 0, &pi.pi1_noise)]),
        a1_noise_mean: blocks3(n, &[(0, 0, &pi.pi2_noise)]),
        b1_noise: blocks3(n, &[(0, 0, &pi.pi3_noise)]),
        a2: blocks3(n, &[(1, 0, &(-q))]),
        a2_mean: blocks3(n, &[(0, 0, &pi.pi4), (1, 0, &q_gamma), (2, 0, &tracking_cross)]),
        b2: blocks3(
            n,
            &[
                (0, 0, &(-pi.pi1.transpose())),
                (0, 2, &neg_ft),
                (1, 1, &(-a.transpose())),
                (2, 2, &(-(a + f).transpose())),
            ],
        ),
        b2_mean: blocks3(n, &[(0, 1, &neg_ft), (2, 1, &neg_ft)]),
        c2: blocks3(n, &[(1, 1, &(-co.state_diffusion.transpose()))]),
        c2_mean: blocks3(n, &[(0, 1, &neg_ftt), (2, 1, &neg_ftt)]),
        forcing,
        terminal: blocks3(n, &[(1, 0, g)]),
        terminal_mean: blocks3(
            n,
            &[(0, 0, &(-&g_gb - &terminal_cross)), (1, 0, &(-&g_gb)), (2, 0, &(-&terminal_cross))],
        ),
        terminal_offset,
    }
}

pub fn tilde_blocks(params: &ModelParams, st: &StackedBlocks) -> TildeBlocks {
    let n3 = 3 * params.state_dim;
    let z = DMatrix::zeros(n3, n3);
    let zv = DVector::zeros(n3);
    let mut initial = DVector::zeros(2 * n3);
    initial.rows_mut(0, params.state_dim).copy_from(&params.initial_state);
    TildeBlocks {
        a1: block2(&(&st.a1 + &st.a1_mean), &z, &z, &st.a1),
        b1: block2(&st.b1, &z, &z, &st.b1),
        a1_noise: block2(&z, &z, &(&st.a1_noise + &st.a1_noise_mean), &st.a1_noise),
        b1_noise: block2(&z, &z, &st.b1_noise, &st.b1_noise),
        a2: block2(&(&st.a2 + &st.a2_mean), &z, &z, &st.a2),
        b2: block2(&(&st.b2 + &st.b2_mean), &z, &z, &st.b2),
        c2: block2(&z, &z, &z, &st.c2),
        c2_mean: block2(&z, &(&st.c2 + &st.c2_mean), &z, &(-&st.c2)),
        terminal: block2(&(&st.terminal + &st.terminal_mean), &z, &z, &st.terminal),
        forcing: concat(&st.forcing, &zv),
        initial,
        terminal_offset: concat(&st.terminal_offset, &zv),
    }
}

pub fn cc_blocks(params: &ModelParams, co: &Coefficients, p: &DMatrix<f64>, node: usize, time: f64) -> Result<CcBlocks> {
    let pi = pi_blocks(co, p, node, time)?;
    let stacked = stacked_blocks(params, co, &pi);
    let tilde = tilde_blocks(params, &stacked);
    Ok(CcBlocks { pi, stacked, tilde })
}

/// Consistency-system blocks on the grid, with access between nodes.
#[derive(Debug, Clone)]
pub struct CCMatrices {
    params: ModelParams,
    p: Trajectory<DMatrix<f64>>,
    nodes: Trajectory<CcBlocks>,
}

pub fn build_cc(params: &ModelParams, p: &Trajectory<DMatrix<f64>>) -> Result<CCMatrices> {
    let grid = *p.grid();
    if grid != params.grid {
        return Err(Error::GridMismatch);
    }
    let nodes = Trajectory::try_from_fn(grid, |k| {
        cc_blocks(params, &params.coefficients_at_node(k), p.at(k), k, grid.node(k))
    })?;
    Ok(CCMatrices {
        params: params.clone(),
        p: p.clone(),
        nodes,
    })
}

impl CCMatrices {
    pub fn grid(&self) -> &TimeGrid {
        self.nodes.grid()
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn state_dim(&self) -> usize {
        self.params.state_dim
    }

    pub fn at_node(&self, k: usize) -> &CcBlocks {
        self.nodes.at(k)
    }

    pub fn nodes(&self) -> &Trajectory<CcBlocks> {
        &self.nodes
    }

    /// Blocks at an arbitrary time; exact at nodes, otherwise rebuilt from
    /// interpolated coefficients and `P`.
    pub fn at_time(&self, t: f64) -> Result<std::borrow::Cow<'_, CcBlocks>> {
        let grid = self.grid();
        let (k, s) = grid.locate(t);
        if s == 0.0 {
            return Ok(std::borrow::Cow::Borrowed(self.nodes.at(k)));
        }
        if s == 1.0 {
            return Ok(std::borrow::Cow::Borrowed(self.nodes.at(k + 1)));
        }
        let co = self.params.coefficients_at(t);
        let p = self.p.interpolate(t);
        let node = if s < 0.5 { k } else { k + 1 };
        Ok(std::borrow::Cow::Owned(cc_blocks(&self.params, &co, &p, node, t)?))
    }
}
