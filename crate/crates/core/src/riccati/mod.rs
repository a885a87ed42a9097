//! Riccati equations: the per-agent law and the centralized stacked oracle.

mod auxiliary;
mod oracle;
mod stationarity;
#[cfg(test)]
mod tests;

pub use auxiliary::{
    adjoint_terminal, regularity_margin, riccati_residual, solve_p, solve_phi, theta1, theta2, FeedbackLaw, MeanFields,
    RiccatiSolution, REGULARITY_TOL,
};
pub(crate) use auxiliary::gain_parts;
pub use oracle::{expected_cost, solve_oracle, solve_oracle_checked, solve_oracle_unchecked, LinearLaw, OracleLaw};
pub use stationarity::{check_stationarity, DirectionCheck, StationarityOptions, StationarityReport};

use nalgebra::{DMatrix, DVector};

use crate::linalg_ode::Trajectory;

impl LinearLaw {
    /// The decentralized law `u_i = Θ₁x_i + Θ₂` written on the stacked state.
    pub fn decentralized(law: &FeedbackLaw, population: usize) -> Self {
        let gain = law.theta1.map(|t1| {
            let (m, n) = t1.shape();
            let mut big = DMatrix::zeros(population * m, population * n);
            for i in 0..population {
                big.view_mut((i * m, i * n), (m, n)).copy_from(t1);
            }
            big
        });
        let offset = law.theta2.map(|t2| {
            let m = t2.len();
            DVector::from_fn(population * m, |i, _| t2[i % m])
        });
        Self { gain, offset }
    }

    pub fn zero(grid: crate::linalg_ode::TimeGrid, controls: usize, states: usize) -> Self {
        Self {
            gain: Trajectory::from_fn(grid, |_| DMatrix::zeros(controls, states)),
            offset: Trajectory::from_fn(grid, |_| DVector::zeros(controls)),
        }
    }
}
