use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg_ode::{asymmetry, symmetrize, symmetry_tolerance, OdeState, TimeGrid};

/// A coefficient that is either constant or sampled at every grid node.
///
/// Between nodes sampled coefficients are linear in time.
#[derive(Debug, Clone, PartialEq)]
pub enum Coef<T> {
    Constant(T),
    Sampled(Vec<T>),
}

impl<T: OdeState> Coef<T> {
    pub fn at_node(&self, k: usize) -> &T {
        match self {
            Coef::Constant(v) => v,
            Coef::Sampled(vs) => &vs[k],
        }
    }

    pub fn at_time(&self, t: f64, grid: &TimeGrid) -> T {
        match self {
            Coef::Constant(v) => v.clone(),
            Coef::Sampled(vs) => {
                let (k, s) = grid.locate(t);
                if s == 0.0 {
                    vs[k].clone()
                } else if s == 1.0 {
                    vs[k + 1].clone()
                } else {
                    vs[k].lin_comb(1.0 - s, &vs[k + 1], s)
                }
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Coef::Constant(_))
    }

    /// Every distinct value: one for constants, one per node otherwise.
    pub fn samples(&self) -> Vec<&T> {
        match self {
            Coef::Constant(v) => vec![v],
            Coef::Sampled(vs) => vs.iter().collect(),
        }
    }

    pub fn map(&self, mut f: impl FnMut(&T) -> T) -> Self {
        match self {
            Coef::Constant(v) => Coef::Constant(f(v)),
            Coef::Sampled(vs) => Coef::Sampled(vs.iter().map(f).collect()),
        }
    }
}

/// All problem data for the population of identical agents.
///
/// Each agent follows
/// ```text
/// dx_i = (A x_i + B u_i + F x_avg) dt + (C x_i + D u_i + F~ x_avg) dW_i,   x_i(0) = xi0
/// ```
/// and pays
/// ```text
/// J_i = 1/2 E[ ∫ |x_i − Γ x_avg − η|²_Q + |u_i|²_R dt + |x_i(T) − Γ̄ x_avg(T) − η̄|²_G ]
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub state_dim: usize,
    pub control_dim: usize,
    pub grid: TimeGrid,
    /// `A`
    pub state_drift: Coef<DMatrix<f64>>,
    /// `B`
    pub control_drift: Coef<DMatrix<f64>>,
    /// `C`
    pub state_diffusion: Coef<DMatrix<f64>>,
    /// `D`
    pub control_diffusion: Coef<DMatrix<f64>>,
    /// `F`
    pub mean_drift: Coef<DMatrix<f64>>,
    /// `F~`
    pub mean_diffusion: Coef<DMatrix<f64>>,
    /// `Q`
    pub state_weight: Coef<DMatrix<f64>>,
    /// `R`
    pub control_weight: Coef<DMatrix<f64>>,
    /// `Γ`
    pub tracking_gain: Coef<DMatrix<f64>>,
    /// `η`
    pub tracking_offset: Coef<DVector<f64>>,
    /// `G`
    pub terminal_weight: DMatrix<f64>,
    /// `Γ̄`
    pub terminal_tracking_gain: DMatrix<f64>,
    /// `η̄`
    pub terminal_offset: DVector<f64>,
    pub initial_state: DVector<f64>,
}

/// Coefficients frozen at one instant.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub state_drift: DMatrix<f64>,
    pub control_drift: DMatrix<f64>,
    pub state_diffusion: DMatrix<f64>,
    pub control_diffusion: DMatrix<f64>,
    pub mean_drift: DMatrix<f64>,
    pub mean_diffusion: DMatrix<f64>,
    pub state_weight: DMatrix<f64>,
    pub control_weight: DMatrix<f64>,
    pub tracking_gain: DMatrix<f64>,
    pub tracking_offset: DVector<f64>,
}

/// Everything wrong with a parameter set; empty means admissible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.issues.is_empty() {
            return write!(f, "ok");
        }
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

impl ModelParams {
    /// A model with every coefficient zero, identity weights and zero data.
    pub fn zeros(state_dim: usize, control_dim: usize, grid: TimeGrid) -> Self {
        let (n, m) = (state_dim, control_dim);
        let sq = || Coef::Constant(DMatrix::zeros(n, n));
        let nm = || Coef::Constant(DMatrix::zeros(n, m));
        Self {
            state_dim: n,
            control_dim: m,
            grid,
            state_drift: sq(),
            control_drift: nm(),
            state_diffusion: sq(),
            control_diffusion: nm(),
            mean_drift: sq(),
            mean_diffusion: sq(),
            state_weight: Coef::Constant(DMatrix::identity(n, n)),
            control_weight: Coef::Constant(DMatrix::identity(m, m)),
            tracking_gain: sq(),
            tracking_offset: Coef::Constant(DVector::zeros(n)),
            terminal_weight: DMatrix::zeros(n, n),
            terminal_tracking_gain: DMatrix::zeros(n, n),
            terminal_offset: DVector::zeros(n),
            initial_state: DVector::zeros(n),
        }
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    fn matrix_coefs(&self) -> [(&'static str, &Coef<DMatrix<f64>>, usize, usize); 9] {
        let (n, m) = (self.state_dim, self.control_dim);
        [
            ("A", &self.state_drift, n, n),
            ("B", &self.control_drift, n, m),
            ("C", &self.state_diffusion, n, n),
            ("D", &self.control_diffusion, n, m),
            ("F", &self.mean_drift, n, n),
            ("Ftilde", &self.mean_diffusion, n, n),
            ("Q", &self.state_weight, n, n),
            ("R", &self.control_weight, m, m),
            ("Gamma", &self.tracking_gain, n, n),
        ]
    }

    /// True when no coefficient varies in time.
    pub fn is_time_invariant(&self) -> bool {
        self.matrix_coefs().iter().all(|(_, c, _, _)| c.is_constant()) && self.tracking_offset.is_constant()
    }

    pub fn coefficients_at_node(&self, k: usize) -> Coefficients {
        Coefficients {
            state_drift: self.state_drift.at_node(k).clone(),
            control_drift: self.control_drift.at_node(k).clone(),
            state_diffusion: self.state_diffusion.at_node(k).clone(),
            control_diffusion: self.control_diffusion.at_node(k).clone(),
            mean_drift: self.mean_drift.at_node(k).clone(),
            mean_diffusion: self.mean_diffusion.at_node(k).clone(),
            state_weight: self.state_weight.at_node(k).clone(),
            control_weight: self.control_weight.at_node(k).clone(),
            tracking_gain: self.tracking_gain.at_node(k).clone(),
            tracking_offset: self.tracking_offset.at_node(k).clone(),
        }
    }

    pub fn coefficients_at(&self, t: f64) -> Coefficients {
        let g = &self.grid;
        Coefficients {
            state_drift: self.state_drift.at_time(t, g),
            control_drift: self.control_drift.at_time(t, g),
            state_diffusion: self.state_diffusion.at_time(t, g),
            control_diffusion: self.control_diffusion.at_time(t, g),
            mean_drift: self.mean_drift.at_time(t, g),
            mean_diffusion: self.mean_diffusion.at_time(t, g),
            state_weight: self.state_weight.at_time(t, g),
            control_weight: self.control_weight.at_time(t, g),
            tracking_gain: self.tracking_gain.at_time(t, g),
            tracking_offset: self.tracking_offset.at_time(t, g),
        }
    }

    /// `Q̂ = (Γ − I)ᵀ Q (Γ − I)` at node `k`.
    pub fn weighted_tracking_at_node(&self, k: usize) -> DMatrix<f64> {
        let n = self.state_dim;
        let shifted = self.tracking_gain.at_node(k) - DMatrix::identity(n, n);
        shifted.transpose() * self.state_weight.at_node(k) * shifted
    }

    /// `Ĝ = (Γ̄ − I)ᵀ G (Γ̄ − I)`.
    pub fn weighted_terminal_tracking(&self) -> DMatrix<f64> {
        let n = self.state_dim;
        let shifted = &self.terminal_tracking_gain - DMatrix::identity(n, n);
        shifted.transpose() * &self.terminal_weight * shifted
    }

    /// Lists every violated invariant.
    pub fn validate(&self) -> ValidationReport {
        let mut issues = Vec::new();
        let (n, m) = (self.state_dim, self.control_dim);
        let nodes = self.grid.len();
        if n == 0 {
            issues.push("state dimension n must be positive".to_string());
        }
        if m == 0 {
            issues.push("control dimension m must be positive".to_string());
        }

        for (name, coef, rows, cols) in self.matrix_coefs() {
            let sym = name == "Q" || name == "R";
            match coef {
                Coef::Constant(v) => check_matrix(&mut issues, name, v, rows, cols, sym),
                Coef::Sampled(vs) => {
                    if vs.len() != nodes {
                        issues.push(format!("{name}: expected {nodes} samples, got {}", vs.len()));
                        continue;
                    }
                    for (k, v) in vs.iter().enumerate() {
                        check_matrix(&mut issues, &format!("{name} at node {k}"), v, rows, cols, sym);
                    }
                }
            }
        }
        check_matrix(&mut issues, "G", &self.terminal_weight, n, n, true);
        check_matrix(&mut issues, "GammaBar", &self.terminal_tracking_gain, n, n, false);

        match &self.tracking_offset {
            Coef::Constant(v) => check_vector(&mut issues, n, "eta", v),
            Coef::Sampled(vs) => {
                if vs.len() != nodes {
                    issues.push(format!("eta: expected {nodes} samples, got {}", vs.len()));
                } else {
                    for (k, v) in vs.iter().enumerate() {
                        check_vector(&mut issues, n, &format!("eta at node {k}"), v);
                    }
                }
            }
        }
        check_vector(&mut issues, n, "etaBar", &self.terminal_offset);
        check_vector(&mut issues, n, "xi0", &self.initial_state);
        ValidationReport { issues }
    }

    /// Fails with the validation report when the parameters are inadmissible.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_ok() {
            Ok(())
        } else {
            Err(Error::Invalid(report.to_string()))
        }
    }

    /// Replaces `Q`, `R`, `G` by their symmetric parts; returns a warning for
    /// each matrix whose asymmetry exceeded `1e-8`.
    pub fn repair_symmetry(&mut self) -> Vec<String> {
        let mut warnings = Vec::new();
        let mut note = |name: &str, mat: &DMatrix<f64>| {
            let asym = asymmetry(mat);
            if asym > 1e-8 {
                warnings.push(format!("{name} symmetrized (asymmetry {asym:e})"));
            }
        };
        for v in self.state_weight.samples() {
            note("Q", v);
        }
        for v in self.control_weight.samples() {
            note("R", v);
        }
        note("G", &self.terminal_weight);
        self.state_weight = self.state_weight.map(symmetrize);
        self.control_weight = self.control_weight.map(symmetrize);
        self.terminal_weight = symmetrize(&self.terminal_weight);
        warnings
    }
}

fn check_matrix(issues: &mut Vec<String>, name: &str, mat: &DMatrix<f64>, rows: usize, cols: usize, sym: bool) {
    if mat.nrows() != rows || mat.ncols() != cols {
        issues.push(format!(
            "{name}: dimension mismatch, expected {rows}x{cols}, got {}x{}",
            mat.nrows(),
            mat.ncols()
        ));
        return;
    }
    if mat.iter().any(|v| !v.is_finite()) {
        issues.push(format!("{name}: non-finite entry"));
        return;
    }
    if sym {
        let asym = asymmetry(mat);
        let tol = symmetry_tolerance(mat);
        if asym > tol {
            issues.push(format!("{name}: asymmetry {asym:e} exceeds tolerance {tol:e}"));
        }
    }
}

fn check_vector(issues: &mut Vec<String>, len: usize, name: &str, v: &DVector<f64>) {
    if v.len() != len {
        issues.push(format!("{name}: dimension mismatch, expected length {len}, got {}", v.len()));
    } else if v.iter().any(|x| !x.is_finite()) {
        issues.push(format!("{name}: non-finite entry"));
    }
}
