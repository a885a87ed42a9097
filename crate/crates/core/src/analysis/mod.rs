//! Experiments on the mean-field approximation: convergence of the state
//! average, the social-cost gap to the centralized optimum, and uniform
//! bounds on the adjoint-average coefficients.

mod convergence;
mod gap;
mod lambda;

pub use convergence::{
    convergence_study, fit_log_log, mean_consistency, ConvergenceRow, ConvergenceTable, MeanConsistency,
    NodeComparison,
};
pub use gap::{gap_study, GapRow, GapStudy};
pub use lambda::{lambda_boundedness, LambdaPair, LambdaStudy};

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};

    use super::*;
    use crate::cc_solver::solve_cc;
    use crate::linalg_ode::{integrate_ode, Direction, TimeGrid, Trajectory};
    use crate::model::{demo_params, Coef, ModelParams};
    use crate::riccati::{solve_p, theta1};

    fn scalar(value: f64) -> Coef<DMatrix<f64>> {
        Coef::Constant(DMatrix::from_element(1, 1, value))
    }

    #[test]
    fn log_log_fit_is_exact_on_power_law() {
        let xs = [10.0, 20.0, 40.0, 80.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-1.0)).collect();
        let (slope, intercept) = fit_log_log(&xs, &ys).unwrap();
        assert!((slope + 1.0).abs() < 1e-12);
        assert!((intercept - 3f64.ln()).abs() < 1e-12);
        assert!(fit_log_log(&[1.0], &[1.0]).is_none());
        assert!(fit_log_log(&[1.0, 2.0], &[0.0, 0.0]).is_none());
    }

    fn noiseless_demo() -> ModelParams {
        let mut p = demo_params();
        p.state_diffusion = Coef::Constant(DMatrix::zeros(2, 2));
        p.control_diffusion = Coef::Constant(DMatrix::zeros(2, 2));
        p.mean_diffusion = Coef::Constant(DMatrix::zeros(2, 2));
        p
    }

    /// Without noise and data the population sits at zero, as does `x̂`.
    #[test]
    fn noiseless_zero_data_collapses() {
        let mut p = noiseless_demo();
        p.initial_state = DVector::zeros(2);
        p.tracking_offset = Coef::Constant(DVector::zeros(2));
        let (sol, law) = solve_cc(&p).unwrap();
        let table = convergence_study(&p, &law, &sol.fields().state, &[5, 10], 3, 1).unwrap();
        assert!(table.rows.iter().all(|r| r.estimate < 1e-10));
    }

    /// With data but no noise the only gap is the Euler error, so the
    /// estimate drops four-fold when the step halves.
    #[test]
    fn noiseless_gap_is_discretization_error() {
        let estimate = |steps: usize| {
            let mut p = noiseless_demo();
            p.grid = TimeGrid::new(1.0, steps).unwrap();
            let (sol, law) = solve_cc(&p).unwrap();
            convergence_study(&p, &law, &sol.fields().state, &[7], 2, 1).unwrap().rows[0].estimate
        };
        let (coarse, fine) = (estimate(200), estimate(400));
        let order = (coarse / fine).log2();
        assert!((order - 2.0).abs() < 0.3, "order {order}");
    }

    #[test]
    fn mean_consistency_needs_replications() {
        let p = demo_params();
        let (sol, law) = solve_cc(&p).unwrap();
        assert!(mean_consistency(&p, &law, &sol.fields().state, 10, 1, 1, 10).is_err());
        assert!(mean_consistency(&p, &law, &sol.fields().state, 10, 5, 1, 0).is_err());
    }

    #[test]
    fn mean_consistency_on_demo() {
        let p = demo_params();
        let (sol, law) = solve_cc(&p).unwrap();
        let mc = mean_consistency(&p, &law, &sol.fields().state, 100, 50, 2, 100).unwrap();
        assert_eq!(mc.nodes.len(), 11);
        assert_eq!(mc.nodes[0].z_score, 0.0);
        assert!(mc.worst_z() < 4.0, "{}", mc.worst_z());
    }

    #[test]
    fn zero_problem_has_zero_lambdas() {
        let mut p = ModelParams::zeros(2, 1, TimeGrid::new(1.0, 50).unwrap());
        p.state_weight = Coef::Constant(DMatrix::zeros(2, 2));
        let sol = solve_p(&p, &p.grid).unwrap();
        let study = lambda_boundedness(&p, &sol.p, &[1, 10]).unwrap();
        assert!(study.pairs.iter().all(|q| q.sup_lambda1 == 0.0 && q.sup_lambda2 == 0.0));
        assert!(study.dominated());
    }

    /// `Λ₂*` is forced by `Λ₁F − CᵀΛ₁F~`, so both couplings must vanish.
    #[test]
    fn no_coupling_means_no_lambda2() {
        let mut p = demo_params();
        p.mean_drift = Coef::Constant(DMatrix::zeros(2, 2));
        let sol = solve_p(&p, &p.grid).unwrap();
        let study = lambda_boundedness(&p, &sol.p, &[3]).unwrap();
        assert!(study.pairs[0].sup_lambda2 > 0.0);
        p.mean_diffusion = Coef::Constant(DMatrix::zeros(2, 2));
        let sol = solve_p(&p, &p.grid).unwrap();
        let study = lambda_boundedness(&p, &sol.p, &[3, 30]).unwrap();
        assert!(study.pairs.iter().all(|q| q.sup_lambda2 == 0.0));
    }

    /// Uncoupled dynamics: `Λ₁` solves the single-agent Lyapunov equation.
    #[test]
    fn uncoupled_lambda1_is_lyapunov_solution() {
        let mut p = demo_params();
        p.mean_drift = Coef::Constant(DMatrix::zeros(2, 2));
        p.mean_diffusion = Coef::Constant(DMatrix::zeros(2, 2));
        p.terminal_weight = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.2]);
        let sol = solve_p(&p, &p.grid).unwrap();
        let theta = theta1(&sol.p, &p).unwrap();
        let co = p.coefficients_at_node(0);
        let lyapunov = integrate_ode(
            |t, l: &DMatrix<f64>| {
                let th = theta.interpolate(t);
                let closed = &co.state_drift + &co.control_drift * &th;
                let noisy = &co.state_diffusion + &co.control_diffusion * &th;
                Ok(-(l * closed + co.state_drift.transpose() * l - co.state_diffusion.transpose() * l * noisy
                    + &co.state_weight))
            },
            p.terminal_weight.clone(),
            &p.grid,
            Direction::Backward,
        )
        .unwrap();
        let study = lambda_boundedness(&p, &sol.p, &[4]).unwrap();
        let pair = &study.pairs[0];
        assert_eq!(pair.lambda1.last(), &p.terminal_weight);
        assert_eq!(pair.lambda2.last(), &DMatrix::zeros(2, 2));
        let gap = max_gap(&pair.lambda1, &lyapunov);
        assert!(gap < 1e-9, "gap {gap}");
    }

    fn max_gap(a: &Trajectory<DMatrix<f64>>, b: &Trajectory<DMatrix<f64>>) -> f64 {
        a.values().iter().zip(b.values()).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
    }

    #[test]
    fn demo_lambdas_are_dominated() {
        let p = demo_params();
        let sol = solve_p(&p, &p.grid).unwrap();
        let study = lambda_boundedness(&p, &sol.p, &[10, 1000]).unwrap();
        assert!(study.dominated());
        assert!(study.constant > 0.0);
        assert!(matches!(lambda_boundedness(&p, &sol.p, &[0]), Err(crate::Error::InvalidN(0))));
    }

    fn single_agent_scalar() -> ModelParams {
        let mut p = ModelParams::zeros(1, 1, TimeGrid::new(1.0, 100).unwrap());
        p.state_drift = scalar(0.3);
        p.control_drift = scalar(1.0);
        p.state_diffusion = scalar(0.3);
        p.control_diffusion = scalar(0.2);
        p.tracking_offset = Coef::Constant(DVector::from_element(1, 0.4));
        p.terminal_weight = DMatrix::from_element(1, 1, 0.5);
        p.initial_state = DVector::from_element(1, 1.0);
        p
    }

    /// One agent, nothing to couple: the decentralized law is optimal.
    #[test]
    fn single_agent_gap_vanishes() {
        let study = gap_study(&single_agent_scalar(), &[1], 500, 9).unwrap();
        let row = &study.rows[0];
        assert!(row.gap.abs() <= 2.0 * row.std_error + 1e-12, "{row:?}");
        assert!((row.exact_decentralized - row.exact_centralized).abs() < 1e-6, "{row:?}");
        assert!(study.warnings.is_empty());
    }

    #[test]
    fn gap_study_is_reproducible() {
        let mut p = single_agent_scalar();
        p.mean_drift = scalar(0.4);
        let a = gap_study(&p, &[2], 300, 4).unwrap();
        let b = gap_study(&p, &[2], 300, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.oracle_dominates(2.0));
    }

    #[test]
    fn unverified_convexity_is_a_warning() {
        let mut p = single_agent_scalar();
        p.mean_drift = scalar(0.4);
        p.state_weight = scalar(-1.0);
        let study = gap_study(&p, &[1], 50, 1).unwrap();
        assert_eq!(study.warnings.len(), 1);
    }
}
