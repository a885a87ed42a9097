//! The population stacked into one `N·n`-dimensional linear-quadratic problem.
//!
//! ```text
//! dx = (𝐀x + 𝐁u) dt + Σ_i (𝐂_i x + 𝐃_i u) dW_i
//! J_soc = 1/2 E[ ∫ xᵀ𝐐x + 2𝐒₁ᵀx + c₁ + uᵀ𝐑u dt + x(T)ᵀ𝐆x(T) + 2𝐒₂ᵀx(T) + c₂ ]
//! ```

use nalgebra::{DMatrix, DVector};

use super::params::{Coefficients, ModelParams};
use crate::error::{Error, Result};

/// Largest stacked state dimension we are willing to materialize.
pub const MAX_AUGMENTED_DIM: usize = 64;

#[derive(Debug, Clone)]
pub struct AugmentedSystem {
    pub population: usize,
    pub state_dim: usize,
    pub control_dim: usize,
    /// `𝐀`
    pub drift: DMatrix<f64>,
    /// `𝐁`
    pub control: DMatrix<f64>,
    /// `𝐂_i`: only block row `i` is nonzero.
    pub state_noise: Vec<DMatrix<f64>>,
    /// `𝐃_i`: only block `(i, i)` is nonzero.
    pub control_noise: Vec<DMatrix<f64>>,
    /// `𝐐`
    pub state_weight: DMatrix<f64>,
    /// `𝐑`
    pub control_weight: DMatrix<f64>,
    /// `𝐆`
    pub terminal_weight: DMatrix<f64>,
    /// `𝐒₁`
    pub running_linear: DVector<f64>,
    /// `𝐒₂`
    pub terminal_linear: DVector<f64>,
    /// `N ηᵀQη`
    pub running_constant: f64,
    /// `N η̄ᵀGη̄`
    pub terminal_constant: f64,
    /// `Ξ`
    pub initial_state: DVector<f64>,
    /// `(Γ − I)ᵀQ(Γ − I)`
    pub tracking_weight: DMatrix<f64>,
    /// `(Γ̄ − I)ᵀG(Γ̄ − I)`
    pub terminal_tracking_weight: DMatrix<f64>,
}

fn check_size(params: &ModelParams, population: usize) -> Result<()> {
    if population < 1 {
        return Err(Error::InvalidN(population));
    }
    let dim = population * params.state_dim;
    if dim > MAX_AUGMENTED_DIM {
        return Err(Error::TooLarge {
            dim,
            limit: MAX_AUGMENTED_DIM,
        });
    }
    Ok(())
}

/// Stacked system with coefficients taken at grid node `node`.
pub fn build_augmented(params: &ModelParams, population: usize, node: usize) -> Result<AugmentedSystem> {
    check_size(params, population)?;
    Ok(assemble(params, &params.coefficients_at_node(node), population))
}

/// Stacked system with coefficients interpolated at time `t`.
pub fn build_augmented_at(params: &ModelParams, population: usize, t: f64) -> Result<AugmentedSystem> {
    check_size(params, population)?;
    Ok(assemble(params, &params.coefficients_at(t), population))
}

/// `diag(X, …, X) + (1/N)·E⊗Y`, with `E` the all-ones `N×N` pattern.
fn diag_plus_coupled(diag: &DMatrix<f64>, coupled: &DMatrix<f64>, population: usize) -> DMatrix<f64> {
    let (r, c) = diag.shape();
    let scale = 1.0 / population as f64;
    let mut out = DMatrix::zeros(population * r, population * c);
    for i in 0..population {
        for j in 0..population {
            let mut block = coupled * scale;
            if i == j {
                block += diag;
            }
            out.view_mut((i * r, j * c), (r, c)).copy_from(&block);
        }
    }
    out
}

fn stack(v: &DVector<f64>, population: usize) -> DVector<f64> {
    let n = v.len();
    DVector::from_fn(population * n, |i, _| v[i % n])
}

fn assemble(params: &ModelParams, co: &Coefficients, population: usize) -> AugmentedSystem {
    let n = params.state_dim;
    let m = params.control_dim;
    let big_n = population * n;
    let zero_nm = DMatrix::zeros(m, m);

    let drift = diag_plus_coupled(&co.state_drift, &co.mean_drift, population);
    let control = diag_plus_coupled(&co.control_drift, &DMatrix::zeros(n, m), population);
    let control_weight = diag_plus_coupled(&co.control_weight, &zero_nm, population);

    let scale = 1.0 / population as f64;
    let state_noise = (0..population)
        .map(|i| {
            let mut ci = DMatrix::zeros(big_n, big_n);
            for j in 0..population {
                let mut block = &co.mean_diffusion * scale;
                if i == j {
                    block += &co.state_diffusion;
                }
                ci.view_mut((i * n, j * n), (n, n)).copy_from(&block);
            }
            ci
        })
        .collect();
    let control_noise = (0..population)
        .map(|i| {
            let mut di = DMatrix::zeros(big_n, population * m);
            di.view_mut((i * n, i * m), (n, m)).copy_from(&co.control_diffusion);
            di
        })
        .collect();

    let identity = DMatrix::identity(n, n);
    let shifted = &co.tracking_gain - &identity;
    let tracking_weight = shifted.transpose() * &co.state_weight * &shifted;
    let state_weight = diag_plus_coupled(&co.state_weight, &(&tracking_weight - &co.state_weight), population);

    let g = &params.terminal_weight;
    let terminal_tracking_weight = params.weighted_terminal_tracking();
    let terminal_weight = diag_plus_coupled(g, &(&terminal_tracking_weight - g), population);

    let q_eta = &co.state_weight * &co.tracking_offset;
    let running_linear = stack(&(co.tracking_gain.transpose() * &q_eta - &q_eta), population);
    let g_eta = g * &params.terminal_offset;
    let terminal_linear = stack(&(params.terminal_tracking_gain.transpose() * &g_eta - &g_eta), population);

    AugmentedSystem {
        population,
        state_dim: n,
        control_dim: m,
        drift,
        control,
        state_noise,
        control_noise,
        state_weight,
        control_weight,
        terminal_weight,
        running_linear,
        terminal_linear,
        running_constant: population as f64 * co.tracking_offset.dot(&q_eta),
        terminal_constant: population as f64 * params.terminal_offset.dot(&g_eta),
        initial_state: stack(&params.initial_state, population),
        tracking_weight,
        terminal_tracking_weight,
    }
}

impl AugmentedSystem {
    pub fn dim(&self) -> usize {
        self.population * self.state_dim
    }

    pub fn control_len(&self) -> usize {
        self.population * self.control_dim
    }

    /// Rows of `𝐂_i` (and `𝐃_i`) that can be nonzero.
    pub fn noise_rows(&self, agent: usize) -> (usize, usize) {
        (agent * self.state_dim, self.state_dim)
    }

    /// Running cost integrand (including the factor ½) summed over agents.
    pub fn running_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        0.5 * (x.dot(&(&self.state_weight * x))
            + 2.0 * self.running_linear.dot(x)
            + self.running_constant
            + u.dot(&(&self.control_weight * u)))
    }

    /// Terminal cost (including the factor ½) summed over agents.
    pub fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.dot(&(&self.terminal_weight * x)) + 2.0 * self.terminal_linear.dot(x) + self.terminal_constant)
    }
}

/// Stacked system as a function of time for a fixed population.
#[derive(Debug, Clone)]
pub struct AugmentedModel {
    params: ModelParams,
    population: usize,
    constant: Option<AugmentedSystem>,
}

impl AugmentedModel {
    pub fn new(params: &ModelParams, population: usize) -> Result<Self> {
        check_size(params, population)?;
        let constant = params
            .is_time_invariant()
            .then(|| assemble(params, &params.coefficients_at_node(0), population));
        Ok(Self {
            params: params.clone(),
            population,
            constant,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn population(&self) -> usize {
        self.population
    }

    pub fn at_time(&self, t: f64) -> std::borrow::Cow<'_, AugmentedSystem> {
        match &self.constant {
            Some(sys) => std::borrow::Cow::Borrowed(sys),
            None => std::borrow::Cow::Owned(assemble(&self.params, &self.params.coefficients_at(t), self.population)),
        }
    }

    pub fn at_node(&self, k: usize) -> std::borrow::Cow<'_, AugmentedSystem> {
        match &self.constant {
            Some(sys) => std::borrow::Cow::Borrowed(sys),
            None => std::borrow::Cow::Owned(assemble(
                &self.params,
                &self.params.coefficients_at_node(k),
                self.population,
            )),
        }
    }
}
