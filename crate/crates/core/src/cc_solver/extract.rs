//! Deterministic mean-field trajectories from the decoupled system, and the
//! end-to-end pipeline producing the decentralized law.

use nalgebra::{DMatrix, DVector};

use super::blocks::{build_cc, CCMatrices, CcBlocks};
use super::decouple::{check_condition_37, fluctuation_means, k_residual, solve_k_with, solve_kappa, Condition37, KForm};
use crate::error::{Result, StageExt};
use crate::linalg_ode::{integrate_ode, Direction, Trajectory};
use crate::model::ModelParams;
use crate::riccati::{riccati_residual, solve_p, FeedbackLaw, MeanFields};

/// Mean fields read off the deterministic part of the decoupled system.
#[derive(Debug, Clone)]
pub struct ExtractedFields {
    pub fields: MeanFields,
    /// First `n` entries of `Y₁`: the adjoint as carried by the consistency
    /// system.
    pub phi_check: Trajectory<DVector<f64>>,
    /// `X₁ = (x̂, 0, 0)`
    pub x1: Trajectory<DVector<f64>>,
    /// `Y₁ = (φ̌, ŷ₁, ŷ₂)`
    pub y1: Trajectory<DVector<f64>>,
}

fn top_y(k: &DMatrix<f64>, kappa: &DVector<f64>, x1: &DVector<f64>) -> DVector<f64> {
    let dim = x1.len();
    k.view((0, 0), (dim, dim)) * x1 + kappa.rows(0, dim)
}

/// Mean of the noise loading on the fluctuation adjoint, evaluated on
/// `X̃ = (X₁, 0)`: `K₂₂[(A₁' + Ā₁')X₁ + B₁'Y₁]`.
fn mean_noise_loading(blocks: &CcBlocks, k: &DMatrix<f64>, x1: &DVector<f64>, y1: &DVector<f64>) -> DVector<f64> {
    let dim = x1.len();
    let st = &blocks.stacked;
    let push = (&st.a1_noise + &st.a1_noise_mean) * x1 + &st.b1_noise * y1;
    k.view((dim, dim), (dim, dim)) * push
}

pub fn extract_mean_fields(
    cc: &CCMatrices,
    k: &Trajectory<DMatrix<f64>>,
    kappa: &Trajectory<DVector<f64>>,
) -> Result<ExtractedFields> {
    let grid = *cc.grid();
    k.ensure_grid(&grid)?;
    kappa.ensure_grid(&grid)?;
    let n = cc.state_dim();
    let initial = cc.at_node(0).tilde.initial.rows(0, 3 * n).into_owned();

    let x1 = integrate_ode(
        |t, x1: &DVector<f64>| {
            let blocks = cc.at_time(t)?;
            let st = &blocks.stacked;
            let y1 = top_y(&k.interpolate(t), &kappa.interpolate(t), x1);
            Ok((&st.a1 + &st.a1_mean) * x1 + &st.b1 * y1)
        },
        initial,
        &grid,
        Direction::Forward,
    )?;
    let y1 = Trajectory::from_fn(grid, |j| top_y(k.at(j), kappa.at(j), x1.at(j)));
    let loading = Trajectory::from_fn(grid, |j| mean_noise_loading(cc.at_node(j), k.at(j), x1.at(j), y1.at(j)));

    let block = |traj: &Trajectory<DVector<f64>>, b: usize| traj.map(|v| v.rows(b * n, n).into_owned());
    Ok(ExtractedFields {
        fields: MeanFields {
            state: block(&x1, 0),
            adjoint: block(&y1, 1),
            mean_adjoint: block(&y1, 2),
            adjoint_diffusion: block(&loading, 1),
        },
        phi_check: block(&y1, 0),
        x1,
        y1,
    })
}

#[derive(Debug, Clone)]
pub struct CcDiagnostics {
    pub regularity_margin: f64,
    pub riccati_residual: f64,
    pub k_residual: f64,
    pub condition_37: Condition37,
    /// Largest entry of the fluctuation means `(EX₂, EY₂)`.
    pub fluctuation_mean: f64,
    /// Largest gap between the adjoint carried by the consistency system and
    /// the one solved directly from the extracted fields.
    pub phi_gap: f64,
    /// `|Y₁(T) − (Ḡ + Ḡ')X₁(T) − g|`
    pub terminal_gap: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CCSolution {
    pub k: Trajectory<DMatrix<f64>>,
    pub kappa: Trajectory<DVector<f64>>,
    pub extracted: ExtractedFields,
    pub diagnostics: CcDiagnostics,
}

impl CCSolution {
    pub fn fields(&self) -> &MeanFields {
        &self.extracted.fields
    }
}

/// Full pipeline: per-agent Riccati, consistency blocks, decoupling, mean
/// fields and the resulting feedback law. Errors carry the failing stage.
pub fn solve_cc(params: &ModelParams) -> Result<(CCSolution, FeedbackLaw)> {
    solve_cc_with(params, KForm::Pathwise)
}

pub fn solve_cc_with(params: &ModelParams, form: KForm) -> Result<(CCSolution, FeedbackLaw)> {
    params.ensure_valid().stage("validate")?;
    let grid = params.grid;
    let riccati = solve_p(params, &grid).stage("riccati")?;
    let riccati_residual = riccati_residual(params, &riccati.p).stage("riccati")?;
    let cc = build_cc(params, &riccati.p).stage("consistency blocks")?;
    let k = solve_k_with(&cc, form).stage("decoupling riccati")?;
    let k_residual = k_residual(&cc, &k, form).stage("decoupling riccati")?;
    let kappa = solve_kappa(&cc, &k).stage("decoupling offset")?;
    let condition_37 = check_condition_37(&cc).stage("equivalence condition")?;
    let extracted = extract_mean_fields(&cc, &k, &kappa).stage("mean fields")?;
    let (x2, y2) = fluctuation_means(&cc, &k, &kappa, &extracted.x1).stage("mean fields")?;
    let fluctuation_mean = x2.sup_norm().max(y2.sup_norm());

    let last = cc.at_node(grid.steps());
    let st = &last.stacked;
    let expected_end = (&st.terminal + &st.terminal_mean) * extracted.x1.last() + &st.terminal_offset;
    let terminal_gap = (extracted.y1.last() - expected_end).amax();

    let margin = riccati.margin;
    let law = FeedbackLaw::from_parts(params, riccati, &extracted.fields).stage("feedback law")?;
    let phi_gap = law
        .phi
        .values()
        .iter()
        .zip(extracted.phi_check.values())
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max);

    let mut warnings = Vec::new();
    if !condition_37.holds {
        warnings.push(format!(
            "equivalence determinant {:e} is below threshold; zero fluctuation means are not certified",
            condition_37.determinant
        ));
    }
    let diagnostics = CcDiagnostics {
        regularity_margin: margin,
        riccati_residual,
        k_residual,
        condition_37,
        fluctuation_mean,
        phi_gap,
        terminal_gap,
        warnings,
    };
    Ok((
        CCSolution {
            k,
            kappa,
            extracted,
            diagnostics,
        },
        law,
    ))
}
