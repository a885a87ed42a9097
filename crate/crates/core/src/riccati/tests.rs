use nalgebra::{DMatrix, DVector};

use super::*;
use crate::linalg_ode::{asymmetry, lambda_min, TimeGrid, Trajectory};
use crate::model::{demo_params, AugmentedModel, Coef, ModelParams};

fn scalar(value: f64) -> Coef<DMatrix<f64>> {
    Coef::Constant(DMatrix::from_element(1, 1, value))
}

fn max_gap(a: &Trajectory<DMatrix<f64>>, b: &Trajectory<DMatrix<f64>>) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}

/// `ṗ = −(2ap + q)`, `p(T) = g`.
fn linear_scalar(a: f64, q: f64, g: f64) -> ModelParams {
    let mut p = ModelParams::zeros(1, 1, TimeGrid::new(1.0, 1000).unwrap());
    p.state_drift = scalar(a);
    p.state_weight = scalar(q);
    p.terminal_weight = DMatrix::from_element(1, 1, g);
    p
}

#[test]
fn zero_weights_give_zero_solution() {
    let mut params = demo_params();
    params.state_weight = Coef::Constant(DMatrix::zeros(2, 2));
    let sol = solve_p(&params, &params.grid).unwrap();
    assert_eq!(sol.p.sup_norm(), 0.0);
    assert_eq!(theta1(&sol.p, &params).unwrap().sup_norm(), 0.0);
}

#[test]
fn linear_scalar_matches_closed_form() {
    let (a, q, g) = (0.7, 1.3, 0.5);
    let params = linear_scalar(a, q, g);
    let sol = solve_p(&params, &params.grid).unwrap();
    for (k, p) in sol.p.values().iter().enumerate() {
        let s = params.grid.horizon() - params.grid.node(k);
        let e = (2.0 * a * s).exp();
        let exact = e * g + q * (e - 1.0) / (2.0 * a);
        assert!((p[(0, 0)] - exact).abs() < 1e-7, "node {k}: {} vs {exact}", p[(0, 0)]);
    }
}

#[test]
fn pure_exponential_matches_closed_form() {
    let params = linear_scalar(-0.4, 0.0, 2.0);
    let sol = solve_p(&params, &params.grid).unwrap();
    let exact = 2.0 * (-0.8_f64).exp();
    assert!((sol.p.first()[(0, 0)] - exact).abs() < 1e-9);
}

#[test]
fn demo_solution_is_regular_and_ends_at_g() {
    let params = demo_params();
    let sol = solve_p(&params, &params.grid).unwrap();
    assert!(sol.margin > 0.0);
    assert_eq!(sol.p.last(), &params.terminal_weight);
    let worst = sol.p.values().iter().map(asymmetry).fold(0.0, f64::max);
    assert!(worst <= 1e-9);
}

#[test]
fn negative_control_weight_loses_regularity() {
    let mut params = demo_params();
    params.control_weight = Coef::Constant(-DMatrix::identity(2, 2));
    params.control_diffusion = Coef::Constant(DMatrix::zeros(2, 2));
    assert!(matches!(solve_p(&params, &params.grid), Err(crate::Error::RegularityLost { .. })));
}

#[test]
fn larger_terminal_weight_never_lowers_p() {
    let mut params = demo_params();
    params.terminal_weight = DMatrix::identity(2, 2) * 0.2;
    let base = solve_p(&params, &params.grid).unwrap();
    params.terminal_weight += DMatrix::identity(2, 2) * 0.5;
    let raised = solve_p(&params, &params.grid).unwrap();
    for (lo, hi) in base.p.values().iter().zip(raised.p.values()) {
        assert!(lambda_min(hi).unwrap() >= lambda_min(lo).unwrap() - 1e-12);
    }
}

#[test]
fn theta1_by_hand() {
    let mut params = ModelParams::zeros(1, 1, TimeGrid::new(1.0, 4).unwrap());
    params.control_drift = scalar(1.0);
    params.control_diffusion = scalar(1.0);
    let ones = Trajectory::from_fn(params.grid, |_| DMatrix::from_element(1, 1, 1.0));
    let theta = theta1(&ones, &params).unwrap();
    assert!(theta.values().iter().all(|t| (t[(0, 0)] + 0.5).abs() < 1e-15));

    let mut silent = demo_params();
    silent.control_drift = Coef::Constant(DMatrix::zeros(2, 2));
    silent.control_diffusion = Coef::Constant(DMatrix::zeros(2, 2));
    let p = Trajectory::from_fn(silent.grid, |k| DMatrix::identity(2, 2) * (1.0 + k as f64));
    assert_eq!(theta1(&p, &silent).unwrap().sup_norm(), 0.0);
}

#[test]
fn homogeneous_adjoint_vanishes() {
    let mut params = demo_params();
    params.tracking_offset = Coef::Constant(DVector::zeros(2));
    let sol = solve_p(&params, &params.grid).unwrap();
    let phi = solve_phi(&sol.p, &params, &MeanFields::zeros(params.grid, 2)).unwrap();
    assert_eq!(phi.sup_norm(), 0.0);
}

#[test]
fn theta2_by_hand() {
    let mut params = ModelParams::zeros(1, 1, TimeGrid::new(1.0, 4).unwrap());
    params.control_drift = scalar(1.0);
    let grid = params.grid;
    let p = Trajectory::from_fn(grid, |_| DMatrix::from_element(1, 1, 0.3));
    let xhat = Trajectory::from_fn(grid, |_| DVector::from_element(1, 5.0));
    let phi = Trajectory::from_fn(grid, |_| DVector::from_element(1, 2.0));
    let t2 = theta2(&p, &phi, &xhat, &params).unwrap();
    assert!(t2.values().iter().all(|v| (v[0] + 2.0).abs() < 1e-15));

    let zero = Trajectory::from_fn(grid, |_| DVector::zeros(1));
    assert_eq!(theta2(&p, &zero, &zero, &params).unwrap().sup_norm(), 0.0);
}

/// `N = 1` without coupling or tracking is the single-agent problem.
#[test]
fn oracle_collapses_to_single_agent_law() {
    let mut params = demo_params();
    params.mean_drift = Coef::Constant(DMatrix::zeros(2, 2));
    params.mean_diffusion = Coef::Constant(DMatrix::zeros(2, 2));
    params.tracking_gain = Coef::Constant(DMatrix::zeros(2, 2));
    params.tracking_offset = Coef::Constant(DVector::zeros(2));
    params.terminal_weight = DMatrix::identity(2, 2) * 0.3;
    let single = solve_p(&params, &params.grid).unwrap();
    let gains = theta1(&single.p, &params).unwrap();
    let oracle = solve_oracle_unchecked(&AugmentedModel::new(&params, 1).unwrap()).unwrap();
    assert!(max_gap(&oracle.p, &single.p) < 1e-10);
    assert!(max_gap(&oracle.law.gain, &gains) < 1e-8);
    assert_eq!(oracle.law.offset.sup_norm(), 0.0);
}

#[test]
fn oracle_with_zero_weights_is_zero() {
    let mut params = linear_scalar(0.3, 0.0, 0.0);
    params.control_drift = scalar(1.0);
    params.initial_state = DVector::from_element(1, 1.0);
    let oracle = solve_oracle_unchecked(&AugmentedModel::new(&params, 3).unwrap()).unwrap();
    assert_eq!(oracle.p.sup_norm(), 0.0);
    assert_eq!(oracle.law.gain.sup_norm(), 0.0);
    assert_eq!(oracle.law.offset.sup_norm(), 0.0);
}

fn random_pair_instance(seed: u64) -> ModelParams {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    let mut p = ModelParams::zeros(1, 1, TimeGrid::new(1.0, 200).unwrap());
    p.state_drift = scalar(u(-0.5, 0.5));
    p.control_drift = scalar(u(0.5, 1.5));
    p.state_diffusion = scalar(u(-0.3, 0.3));
    p.control_diffusion = scalar(u(-0.3, 0.3));
    p.mean_drift = scalar(u(-0.5, 0.5));
    p.mean_diffusion = scalar(u(-0.3, 0.3));
    p.state_weight = scalar(u(0.5, 1.5));
    p.control_weight = scalar(u(0.5, 1.5));
    p.tracking_gain = scalar(u(-0.8, 0.8));
    p.tracking_offset = Coef::Constant(DVector::from_element(1, u(-1.0, 1.0)));
    p.terminal_weight = DMatrix::from_element(1, 1, u(0.0, 1.0));
    p.terminal_tracking_gain = DMatrix::from_element(1, 1, u(-0.5, 0.5));
    p.terminal_offset = DVector::from_element(1, u(-0.5, 0.5));
    p.initial_state = DVector::from_element(1, u(-1.0, 1.0));
    p
}

/// Exact moment costs: the oracle beats random linear laws.
#[test]
fn oracle_beats_random_laws() {
    use rand::{Rng, SeedableRng};
    let params = random_pair_instance(17);
    let model = AugmentedModel::new(&params, 2).unwrap();
    let oracle = solve_oracle_unchecked(&model).unwrap();
    let best = oracle.law.expected_cost(&model, None).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let gain_shift = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-0.5..0.5));
        let offset_shift = DVector::from_fn(2, |_, _| rng.gen_range(-0.5..0.5));
        let law = LinearLaw {
            gain: oracle.law.gain.map(|g| g + &gain_shift),
            offset: oracle.law.offset.map(|o| o + &offset_shift),
        };
        let cost = law.expected_cost(&model, None).unwrap();
        assert!(cost >= best - 1e-9 * best.abs(), "{cost} < {best}");
    }
}

/// Common-noise Monte Carlo: the oracle's cost is below that of perturbed
/// laws on the same paths, within two standard errors of the paired
/// difference.
#[test]
fn oracle_dominates_under_common_noise() {
    use rand::{Rng, SeedableRng};
    use crate::simulator::{mean_and_se, simulate_stacked, NoiseBank, SimOptions};
    let params = random_pair_instance(5);
    let model = AugmentedModel::new(&params, 2).unwrap();
    let oracle = solve_oracle_unchecked(&model).unwrap();
    let run = |law: &LinearLaw| {
        simulate_stacked(&model, law, NoiseBank::new(4), 2000, SimOptions::default())
            .unwrap()
            .social_costs()
    };
    let base = run(&oracle.law);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    for _ in 0..5 {
        let shift = DVector::from_fn(2, |_, _| rng.gen_range(-0.5..0.5));
        let other = LinearLaw {
            gain: oracle.law.gain.clone(),
            offset: oracle.law.offset.map(|o| o + &shift),
        };
        let diffs: Vec<f64> = run(&other).iter().zip(&base).map(|(a, b)| a - b).collect();
        let (gap, se) = mean_and_se(&diffs);
        assert!(gap >= -2.0 * se, "gap {gap} se {se}");
    }
}

#[test]
fn oracle_passes_stationarity() {
    let params = random_pair_instance(23);
    let model = AugmentedModel::new(&params, 2).unwrap();
    let options = StationarityOptions {
        paths: 2000,
        ..Default::default()
    };
    let (_, report) = solve_oracle_checked(&model, &options).unwrap();
    assert_eq!(report.directions.len(), options.perturbations);
    for d in &report.directions {
        assert!(d.exact_derivative.abs() < 1e-6 * d.norm * (1.0 + report.cost.abs()), "{d:?}");
    }
}

/// Dropping the affine term breaks stationarity; the test must notice.
#[test]
fn stationarity_rejects_wrong_offset() {
    let params = random_pair_instance(23);
    let model = AugmentedModel::new(&params, 2).unwrap();
    let mut oracle = solve_oracle_unchecked(&model).unwrap();
    oracle.law.offset = oracle.law.offset.map(|o| o * 0.0);
    let result = check_stationarity(&model, &oracle, &StationarityOptions::default());
    assert!(matches!(result, Err(crate::Error::StationarityFailed { .. })));
}

#[test]
fn residual_shrinks_at_second_order() {
    let mut params = demo_params();
    params.terminal_weight = DMatrix::identity(2, 2);
    let residual = |steps: usize| {
        let mut p = params.clone();
        p.grid = TimeGrid::new(1.0, steps).unwrap();
        let sol = solve_p(&p, &p.grid).unwrap();
        riccati_residual(&p, &sol.p).unwrap()
    };
    let (coarse, fine) = (residual(100), residual(200));
    let slope = (coarse / fine).log2();
    assert!((slope - 2.0).abs() < 0.3, "slope {slope}");
}
