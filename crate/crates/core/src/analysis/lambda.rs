//! Uniform boundedness of the adjoint-average coefficients `Λ₁`, `Λ₂*`.
//!
//! For each population size `N`, backward from `Λ₁(T) = G`, `Λ₂*(T) = 0`:
//! ```text
//! Λ̇₁ + Λ₁(A + BΘ₁ + F/N) + AᵀΛ₁ − CᵀΛ₁(C + DΘ₁ + F~/N) + Λ₂*F/N + Q = 0
//! Λ̇₂* + Λ₂*(A + BΘ₁ + (N−1)F/N) + AᵀΛ₂* + (N−1)/N (Λ₁F − CᵀΛ₁F~) = 0
//! ```
//! and the `N`-free comparison pair, with `E` the all-ones matrix and `L` the
//! largest max-norm of `A, BΘ₁, F, C, DΘ₁, F~, Q`:
//! ```text
//! Λ̄̇₁ + 3LΛ̄₁E + LEΛ̄₁ + 3LEΛ̄₁E + LEΛ̄₂* + LE = 0,      Λ̄₁(T) = G
//! Λ̄̇₂* + 2LΛ̄₂*E + LEΛ̄₂* + L(Λ̄₁E + EΛ̄₁E) = 0,         Λ̄₂*(T) = 0
//! ```

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg_ode::{integrate_ode, Direction, Trajectory};
use crate::model::ModelParams;
use crate::riccati::theta1;

/// Relative slack for the element-wise comparison, absorbing round-off.
const DOMINANCE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct LambdaPair {
    pub population: usize,
    pub lambda1: Trajectory<DMatrix<f64>>,
    pub lambda2: Trajectory<DMatrix<f64>>,
    pub sup_lambda1: f64,
    pub sup_lambda2: f64,
    /// `|Λ₁| ≤ Λ̄₁` and `|Λ₂*| ≤ Λ̄₂*` entry-wise at every node.
    pub dominated: bool,
}

#[derive(Debug, Clone)]
pub struct LambdaStudy {
    /// The constant `L`.
    pub constant: f64,
    pub bound1: Trajectory<DMatrix<f64>>,
    pub bound2: Trajectory<DMatrix<f64>>,
    pub pairs: Vec<LambdaPair>,
    /// `(max − min) / max` of the sup norms across populations.
    pub variation1: f64,
    pub variation2: f64,
}

impl LambdaStudy {
    pub fn dominated(&self) -> bool {
        self.pairs.iter().all(|p| p.dominated)
    }

    pub fn uniform(&self, tolerance: f64) -> bool {
        self.variation1 < tolerance && self.variation2 < tolerance
    }
}

struct Frozen {
    a: DMatrix<f64>,
    b_theta: DMatrix<f64>,
    f: DMatrix<f64>,
    c: DMatrix<f64>,
    d_theta: DMatrix<f64>,
    f_tilde: DMatrix<f64>,
    q: DMatrix<f64>,
}

fn frozen(params: &ModelParams, theta: &Trajectory<DMatrix<f64>>, t: f64) -> Frozen {
    let co = params.coefficients_at(t);
    let th = theta.interpolate(t);
    Frozen {
        b_theta: &co.control_drift * &th,
        d_theta: &co.control_diffusion * &th,
        a: co.state_drift,
        f: co.mean_drift,
        c: co.state_diffusion,
        f_tilde: co.mean_diffusion,
        q: co.state_weight,
    }
}

/// Integrates `Λ₁`, `Λ₂*` for every population and the comparison pair once.
pub fn lambda_boundedness(
    params: &ModelParams,
    p: &Trajectory<DMatrix<f64>>,
    populations: &[usize],
) -> Result<LambdaStudy> {
    if let Some(&bad) = populations.iter().find(|&&n| n == 0) {
        return Err(Error::InvalidN(bad));
    }
    let grid = params.grid;
    let theta = theta1(p, params)?;
    let n = params.state_dim;

    let constant = (0..grid.len())
        .map(|k| {
            let fz = frozen(params, &theta, grid.node(k));
            [&fz.a, &fz.b_theta, &fz.f, &fz.c, &fz.d_theta, &fz.f_tilde, &fz.q]
                .iter()
                .map(|m| m.amax())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);

    let ones = DMatrix::from_element(n, n, 1.0);
    let el = constant;
    let bounds = integrate_ode(
        |_, (b1, b2): &(DMatrix<f64>, DMatrix<f64>)| {
            let d1 = b1 * &ones * (3.0 * el)
                + &ones * b1 * el
                + &ones * b1 * &ones * (3.0 * el)
                + &ones * b2 * el
                + &ones * el;
            let d2 = b2 * &ones * (2.0 * el) + &ones * b2 * el + (b1 * &ones + &ones * b1 * &ones) * el;
            Ok((-d1, -d2))
        },
        (params.terminal_weight.clone(), DMatrix::zeros(n, n)),
        &grid,
        Direction::Backward,
    )?;
    let bound1 = bounds.map(|(b1, _)| b1.clone());
    let bound2 = bounds.map(|(_, b2)| b2.clone());

    let mut pairs = Vec::with_capacity(populations.len());
    for &population in populations {
        let inv = 1.0 / population as f64;
        let share = (population - 1) as f64 * inv;
        let sol = integrate_ode(
            |t, (l1, l2): &(DMatrix<f64>, DMatrix<f64>)| {
                let fz = frozen(params, &theta, t);
                let d1 = l1 * (&fz.a + &fz.b_theta + &fz.f * inv) + fz.a.transpose() * l1
                    - fz.c.transpose() * l1 * (&fz.c + &fz.d_theta + &fz.f_tilde * inv)
                    + l2 * &fz.f * inv
                    + &fz.q;
                let d2 = l2 * (&fz.a + &fz.b_theta + &fz.f * share)
                    + fz.a.transpose() * l2
                    + (l1 * &fz.f - fz.c.transpose() * l1 * &fz.f_tilde) * share;
                Ok((-d1, -d2))
            },
            (params.terminal_weight.clone(), DMatrix::zeros(n, n)),
            &grid,
            Direction::Backward,
        )?;
        let lambda1 = sol.map(|(l1, _)| l1.clone());
        let lambda2 = sol.map(|(_, l2)| l2.clone());
        let dominated = dominated_by(&lambda1, &bound1) && dominated_by(&lambda2, &bound2);
        pairs.push(LambdaPair {
            population,
            sup_lambda1: lambda1.sup_norm(),
            sup_lambda2: lambda2.sup_norm(),
            lambda1,
            lambda2,
            dominated,
        });
    }

    let variation = |sup: fn(&LambdaPair) -> f64| {
        let hi = pairs.iter().map(sup).fold(0.0, f64::max);
        let lo = pairs.iter().map(sup).fold(f64::INFINITY, f64::min);
        if hi > 0.0 {
            (hi - lo) / hi
        } else {
            0.0
        }
    };
    Ok(LambdaStudy {
        constant,
        variation1: variation(|p| p.sup_lambda1),
        variation2: variation(|p| p.sup_lambda2),
        bound1,
        bound2,
        pairs,
    })
}

fn dominated_by(values: &Trajectory<DMatrix<f64>>, bound: &Trajectory<DMatrix<f64>>) -> bool {
    values.values().iter().zip(bound.values()).all(|(v, b)| {
        v.iter()
            .zip(b.iter())
            .all(|(x, y)| x.abs() <= y + DOMINANCE_SLACK * (1.0 + y.abs()))
    })
}
