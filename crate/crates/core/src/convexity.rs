//! Sufficient conditions for (uniform) convexity of the social cost in the
//! control.
//!
//! Three criteria, from least to most general:
//! * all weights positive semidefinite;
//! * no mean-field coupling in the dynamics, with indefinite weights reduced
//!   to a single-agent problem with weights `(Q − ΔQ, R, G − ΔG)`;
//! * coupled dynamics, through the growth constant `K` and
//!   `K e^{2KT} λ_min(Q − ΔQ) + ½ λ_min(R) ≥ 0`.
//!
//! A negative outcome is always [`ConvexityStatus::NotVerified`]: none of
//! the conditions is necessary.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg_ode::{lambda_max, lambda_min, symmetrize};
use crate::model::{Coef, ModelParams};
use crate::riccati::solve_p;

/// Eigenvalue tolerance for semidefiniteness tests and the smallest margin
/// counted as uniform.
pub const CONVEXITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ConvexityStatus {
    NotVerified,
    Convex,
    UniformlyConvex,
}

impl ConvexityStatus {
    pub fn is_convex(self) -> bool {
        self >= ConvexityStatus::Convex
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConvexityStatus::NotVerified => "not_verified",
            ConvexityStatus::Convex => "convex",
            ConvexityStatus::UniformlyConvex => "uniformly_convex",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    /// `Q, R, G ⪰ 0`.
    PsdWeights,
    /// `F = F~ = 0`, reduced single-agent problem.
    DecoupledIndefinite,
    /// Growth-constant inequality.
    CoupledIndefinite,
}

impl Criterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::PsdWeights => "psd_weights",
            Criterion::DecoupledIndefinite => "decoupled_indefinite",
            Criterion::CoupledIndefinite => "coupled_indefinite",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityVerdict {
    pub status: ConvexityStatus,
    pub criterion: Criterion,
    /// Constants behind the verdict (eigenvalues, `K`, margins).
    pub witness: BTreeMap<String, f64>,
    /// The inequality or hypothesis that failed, if any.
    pub failure: Option<String>,
}

impl ConvexityVerdict {
    fn new(criterion: Criterion) -> Self {
        Self {
            status: ConvexityStatus::NotVerified,
            criterion,
            witness: BTreeMap::new(),
            failure: None,
        }
    }

    fn record(&mut self, key: &str, value: f64) {
        self.witness.insert(key.to_string(), value);
    }

    fn fail(mut self, reason: impl Into<String>) -> Self {
        self.status = ConvexityStatus::NotVerified;
        self.failure = Some(reason.into());
        self
    }
}

/// Smallest eigenvalue over every sample of a coefficient.
fn min_eigenvalue(coef: &Coef<DMatrix<f64>>) -> Result<f64> {
    coef.samples()
        .into_iter()
        .try_fold(f64::INFINITY, |acc, m| Ok(acc.min(lambda_min(&symmetrize(m))?)))
}

fn node_count(params: &ModelParams, coefs: &[&Coef<DMatrix<f64>>]) -> usize {
    if coefs.iter().all(|c| c.is_constant()) {
        1
    } else {
        params.grid.len()
    }
}

fn ensure_shape(params: &ModelParams, delta_q: &Coef<DMatrix<f64>>) -> Result<()> {
    let n = params.state_dim;
    if let Coef::Sampled(vs) = delta_q {
        if vs.len() != params.grid.len() {
            return Err(Error::Dimension(format!("dQ has {} samples for {} nodes", vs.len(), params.grid.len())));
        }
    }
    if delta_q.samples().iter().any(|m| m.shape() != (n, n)) {
        return Err(Error::Dimension(format!("dQ must be {n}x{n}")));
    }
    Ok(())
}

/// `Q − Q̂` node by node, the tightest admissible `ΔQ`.
pub fn default_delta_q(params: &ModelParams) -> Coef<DMatrix<f64>> {
    let nodes = node_count(params, &[&params.state_weight, &params.tracking_gain]);
    let gap = |k| symmetrize(&(params.state_weight.at_node(k) - params.weighted_tracking_at_node(k)));
    if nodes == 1 {
        Coef::Constant(gap(0))
    } else {
        Coef::Sampled((0..nodes).map(gap).collect())
    }
}

/// `G − Ĝ`, the tightest admissible `ΔG`.
pub fn default_delta_g(params: &ModelParams) -> DMatrix<f64> {
    symmetrize(&(&params.terminal_weight - params.weighted_terminal_tracking()))
}

/// Checks `Q − Q̂ ⪰ 0` and `ΔQ ⪰ Q − Q̂` at every node; returns the failed
/// hypothesis.
fn check_delta_q(params: &ModelParams, delta_q: &Coef<DMatrix<f64>>, verdict: &mut ConvexityVerdict) -> Result<Option<String>> {
    ensure_shape(params, delta_q)?;
    let tight = default_delta_q(params);
    let nodes = node_count(params, &[&params.state_weight, &params.tracking_gain, delta_q]);
    let mut gap_min = f64::INFINITY;
    let mut excess_min = f64::INFINITY;
    for k in 0..nodes {
        let gap = tight.at_node(k);
        let dq = delta_q.at_node(k);
        gap_min = gap_min.min(lambda_min(gap)?);
        excess_min = excess_min.min(lambda_min(&symmetrize(&(dq - gap)))?);
    }
    verdict.record("lambda_min_q_minus_qhat", gap_min);
    verdict.record("lambda_min_dq_excess", excess_min);
    if gap_min < -CONVEXITY_TOL {
        return Ok(Some(format!("Q - Qhat is not psd (lambda_min = {gap_min:e})")));
    }
    if excess_min < -CONVEXITY_TOL {
        return Ok(Some(format!("dQ >= Q - Qhat fails (lambda_min = {excess_min:e})")));
    }
    Ok(None)
}

fn check_delta_g(params: &ModelParams, delta_g: &DMatrix<f64>, verdict: &mut ConvexityVerdict) -> Result<Option<String>> {
    let tight = default_delta_g(params);
    let gap_min = lambda_min(&tight)?;
    let excess_min = lambda_min(&symmetrize(&(delta_g - &tight)))?;
    verdict.record("lambda_min_g_minus_ghat", gap_min);
    verdict.record("lambda_min_dg_excess", excess_min);
    if gap_min < -CONVEXITY_TOL {
        return Ok(Some(format!("G - Ghat is not psd (lambda_min = {gap_min:e})")));
    }
    if excess_min < -CONVEXITY_TOL {
        return Ok(Some(format!("dG >= G - Ghat fails (lambda_min = {excess_min:e})")));
    }
    Ok(None)
}

pub fn check_psd_case(params: &ModelParams) -> Result<ConvexityVerdict> {
    let mut verdict = ConvexityVerdict::new(Criterion::PsdWeights);
    let q = min_eigenvalue(&params.state_weight)?;
    let r = min_eigenvalue(&params.control_weight)?;
    let g = lambda_min(&symmetrize(&params.terminal_weight))?;
    verdict.record("lambda_min_q", q);
    verdict.record("lambda_min_r", r);
    verdict.record("lambda_min_g", g);
    for (name, value) in [("Q", q), ("R", r), ("G", g)] {
        if value < -CONVEXITY_TOL {
            return Ok(verdict.fail(format!("{name} is not psd (lambda_min = {value:e})")));
        }
    }
    if r >= CONVEXITY_TOL {
        verdict.status = ConvexityStatus::UniformlyConvex;
        verdict.record("margin", r);
    } else {
        verdict.status = ConvexityStatus::Convex;
    }
    Ok(verdict)
}

/// With `F = F~ = 0` the population cost dominates `N` copies of the
/// single-agent problem with weights `(Q − ΔQ, R, G − ΔG)`, zero initial
/// state and no tracking. That problem is uniformly convex exactly when its
/// Riccati equation has a regular solution on `[0, T]`.
pub fn check_decoupled_indefinite(
    params: &ModelParams,
    delta_q: &Coef<DMatrix<f64>>,
    delta_g: &DMatrix<f64>,
) -> Result<ConvexityVerdict> {
    let coupled = [&params.mean_drift, &params.mean_diffusion]
        .iter()
        .any(|c| c.samples().iter().any(|m| m.amax() != 0.0));
    if coupled {
        return Err(Error::CouplingPresent);
    }
    let mut verdict = ConvexityVerdict::new(Criterion::DecoupledIndefinite);
    if let Some(reason) = check_delta_q(params, delta_q, &mut verdict)? {
        return Ok(verdict.fail(reason));
    }
    if let Some(reason) = check_delta_g(params, delta_g, &mut verdict)? {
        return Ok(verdict.fail(reason));
    }

    let mut reduced = ModelParams::zeros(params.state_dim, params.control_dim, params.grid);
    reduced.state_drift = params.state_drift.clone();
    reduced.control_drift = params.control_drift.clone();
    reduced.state_diffusion = params.state_diffusion.clone();
    reduced.control_diffusion = params.control_diffusion.clone();
    reduced.control_weight = params.control_weight.clone();
    reduced.state_weight = match (&params.state_weight, delta_q) {
        (Coef::Constant(q), Coef::Constant(dq)) => Coef::Constant(q - dq),
        _ => Coef::Sampled(
            (0..params.grid.len())
                .map(|k| params.state_weight.at_node(k) - delta_q.at_node(k))
                .collect(),
        ),
    };
    reduced.terminal_weight = &params.terminal_weight - delta_g;

    match solve_p(&reduced, &reduced.grid) {
        Ok(sol) => {
            verdict.record("margin", sol.margin);
            verdict.status = ConvexityStatus::UniformlyConvex;
            Ok(verdict)
        }
        Err(e @ (Error::RegularityLost { .. } | Error::NonFinite { .. })) => {
            Ok(verdict.fail(format!("reduced Riccati equation has no regular solution: {e}")))
        }
        Err(e) => Err(e),
    }
}

/// The five quantities whose maximum is the growth constant, each already
/// maximized over nodes:
/// ```text
/// λ_max(Aᵀ + A) + λ_max(Fᵀ + F)
/// λ_max(CᵀC + (F~ + C)ᵀ(F~ + C))
/// √λ_max(BᵀB)
/// √(λ_max(Dᵀ(F~F~ᵀ + CF~ᵀ + F~Cᵀ)D) + λ_max(DᵀCCᵀD))
/// λ_max(DᵀD)
/// ```
pub fn growth_terms(params: &ModelParams) -> Result<[f64; 5]> {
    let mut terms = [f64::NEG_INFINITY; 5];
    for k in 0..params.grid.len() {
        let co = params.coefficients_at_node(k);
        let (a, b, c, d, f, ft) = (
            &co.state_drift,
            &co.control_drift,
            &co.state_diffusion,
            &co.control_diffusion,
            &co.mean_drift,
            &co.mean_diffusion,
        );
        let sym = |m: DMatrix<f64>| symmetrize(&m);
        let cf = ft + c;
        let cross = ft * ft.transpose() + c * ft.transpose() + ft * c.transpose();
        let node = [
            lambda_max(&sym(a.transpose() + a))? + lambda_max(&sym(f.transpose() + f))?,
            lambda_max(&sym(c.transpose() * c + cf.transpose() * &cf))?,
            lambda_max(&sym(b.transpose() * b))?.max(0.0).sqrt(),
            (lambda_max(&sym(d.transpose() * cross * d))? + lambda_max(&sym(d.transpose() * c * c.transpose() * d))?)
                .max(0.0)
                .sqrt(),
            lambda_max(&sym(d.transpose() * d))?,
        ];
        for (t, v) in terms.iter_mut().zip(node) {
            *t = t.max(v);
        }
        if params.is_time_invariant() {
            break;
        }
    }
    Ok(terms)
}

/// `K`, floored at zero.
pub fn growth_constant(params: &ModelParams) -> Result<f64> {
    Ok(growth_terms(params)?.into_iter().fold(0.0, f64::max))
}

pub fn check_coupled_indefinite(params: &ModelParams, delta_q: &Coef<DMatrix<f64>>) -> Result<ConvexityVerdict> {
    let mut verdict = ConvexityVerdict::new(Criterion::CoupledIndefinite);
    let g_min = lambda_min(&symmetrize(&params.terminal_weight))?;
    verdict.record("lambda_min_g", g_min);
    if g_min < -CONVEXITY_TOL {
        return Ok(verdict.fail(format!("G is not psd (lambda_min = {g_min:e})")));
    }
    if let Some(reason) = check_delta_q(params, delta_q, &mut verdict)? {
        return Ok(verdict.fail(reason));
    }
    let nodes = node_count(params, &[&params.state_weight, delta_q]);
    let mut q_min = f64::INFINITY;
    for k in 0..nodes {
        let dq = delta_q.at_node(k);
        q_min = q_min.min(lambda_min(&symmetrize(&(params.state_weight.at_node(k) - dq)))?);
    }
    let r_min = min_eigenvalue(&params.control_weight)?;
    let k = growth_constant(params)?;
    let value = k * (2.0 * k * params.horizon()).exp() * q_min + 0.5 * r_min;
    verdict.record("lambda_min_q_minus_dq", q_min);
    verdict.record("lambda_min_r", r_min);
    verdict.record("growth_constant", k);
    verdict.record("inequality", value);
    if q_min > 0.0 {
        return Ok(verdict.fail(format!("lambda_min(Q - dQ) <= 0 fails ({q_min:e})")));
    }
    if value > 0.0 {
        verdict.status = ConvexityStatus::UniformlyConvex;
        verdict.record("margin", value);
    } else if value == 0.0 {
        verdict.status = ConvexityStatus::Convex;
    } else {
        return Ok(verdict.fail(format!("K e^(2KT) lambda_min(Q - dQ) + lambda_min(R)/2 = {value:e} < 0")));
    }
    Ok(verdict)
}

/// Every applicable criterion with the default `ΔQ = Q − Q̂`, `ΔG = G − Ĝ`.
pub fn assess(params: &ModelParams) -> Result<Vec<ConvexityVerdict>> {
    assess_with(params, &default_delta_q(params), &default_delta_g(params))
}

pub fn assess_with(
    params: &ModelParams,
    delta_q: &Coef<DMatrix<f64>>,
    delta_g: &DMatrix<f64>,
) -> Result<Vec<ConvexityVerdict>> {
    let mut verdicts = vec![check_psd_case(params)?];
    match check_decoupled_indefinite(params, delta_q, delta_g) {
        Ok(v) => verdicts.push(v),
        Err(Error::CouplingPresent) => {}
        Err(e) => return Err(e),
    }
    verdicts.push(check_coupled_indefinite(params, delta_q)?);
    Ok(verdicts)
}
