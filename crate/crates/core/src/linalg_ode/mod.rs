//! Numerical kernel: time grids, sampled trajectories, RK4 integration,
//! trapezoid quadrature and symmetric eigenvalues.

mod eigen;
mod grid;
mod integrate;

pub use eigen::{asymmetry, eig_sym, is_psd, lambda_max, lambda_min, symmetrize, symmetry_tolerance};
pub use grid::TimeGrid;
pub use integrate::{
    integrate_ode, integrate_ode_projected, quadrature, trapezoid, Direction, OdeState, Trajectory, BLOW_UP,
};

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(m: usize) -> TimeGrid {
        TimeGrid::new(1.0, m).unwrap()
    }

    #[test]
    fn grid_last_node_is_horizon() {
        let g = TimeGrid::new(0.7, 3).unwrap();
        assert_eq!(g.node(3), 0.7);
        assert!(TimeGrid::new(1.0, 1).is_err());
        assert!(TimeGrid::new(0.0, 10).is_err());
    }

    #[test]
    fn zero_rhs_is_constant() {
        let x0 = nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let traj = integrate_ode(
            |_, x: &nalgebra::DMatrix<f64>| Ok(x * 0.0),
            x0.clone(),
            &grid(10),
            Direction::Forward,
        )
        .unwrap();
        assert!(traj.values().iter().all(|v| v == &x0));
    }

    #[test]
    fn exponential() {
        let traj = integrate_ode(|_, x: &f64| Ok(*x), 1.0, &grid(1000), Direction::Forward).unwrap();
        assert!((traj.last() - std::f64::consts::E).abs() < 1e-9);
    }

    #[test]
    fn backward_linear() {
        let traj = integrate_ode(|_, p: &f64| Ok(-(2.0 * p + 1.0)), 0.0, &grid(1000), Direction::Backward).unwrap();
        let exact = (std::f64::consts::E.powi(2) - 1.0) / 2.0;
        assert!((traj.first() - exact).abs() < 1e-8);
        assert_eq!(*traj.last(), 0.0);
    }

    #[test]
    fn rk4_order() {
        let err = |m| {
            let t = integrate_ode(|_, x: &f64| Ok(*x), 1.0, &grid(m), Direction::Forward).unwrap();
            (t.last() - std::f64::consts::E).abs()
        };
        assert!(err(10) / err(20) >= 12.0);
    }

    #[test]
    fn round_trip() {
        let a = nalgebra::DMatrix::from_row_slice(2, 2, &[0.3, -1.0, 0.8, -0.2]);
        let rhs = |_, x: &nalgebra::DVector<f64>| Ok(&a * x);
        let terminal = nalgebra::dvector![1.0, -2.0];
        let back = integrate_ode(rhs, terminal.clone(), &grid(1000), Direction::Backward).unwrap();
        let fwd = integrate_ode(rhs, back.first().clone(), &grid(1000), Direction::Forward).unwrap();
        assert!((fwd.last() - terminal).amax() < 1e-8);
    }

    #[test]
    fn blow_up_detected() {
        let res = integrate_ode(|_, x: &f64| Ok(x * x), 1.0, &TimeGrid::new(2.0, 1000).unwrap(), Direction::Forward);
        assert!(matches!(res, Err(crate::Error::NonFinite { .. })));
    }

    #[test]
    fn quadrature_examples() {
        let g = grid(1000);
        let ones = Trajectory::from_fn(g, |_| 1.0);
        assert!((quadrature(&ones).unwrap() - 1.0).abs() < 1e-14);
        let lin = Trajectory::from_fn(g, |k| g.node(k));
        assert!((quadrature(&lin).unwrap() - 0.5).abs() < 1e-14);
        let sq = Trajectory::from_fn(g, |k| g.node(k).powi(2));
        assert!((quadrature(&sq).unwrap() - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn interpolation_is_exact_on_cubics() {
        let g = grid(20);
        let f = |t: f64| 1.0 - 2.0 * t + 0.5 * t * t - 3.0 * t * t * t;
        let traj = Trajectory::from_fn(g, |k| f(g.node(k)));
        for &t in &[0.0, 0.013, 0.5, 0.52, 0.977, 1.0] {
            assert!((traj.interpolate(t) - f(t)).abs() < 1e-12, "t = {t}");
        }
    }
}
