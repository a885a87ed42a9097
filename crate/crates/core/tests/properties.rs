//! Randomized invariants.

use mflqg::convexity::{check_coupled_indefinite, default_delta_q, growth_constant, ConvexityStatus, Criterion, assess};
use mflqg::linalg_ode::{eig_sym, lambda_max, lambda_min, symmetrize, trapezoid, TimeGrid, Trajectory};
use mflqg::model::{build_augmented, AugmentedModel, Coef, ModelParams};
use mflqg::riccati::{solve_p, LinearLaw};
use mflqg::simulator::NoiseBank;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn matrix(n: usize, m: usize, range: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-range..range, n * m).prop_map(move |v| DMatrix::from_vec(n, m, v))
}

fn symmetric(n: usize, range: f64) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(n, n, range).prop_map(|m| symmetrize(&m))
}

fn psd(n: usize, range: f64) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(n, n, range).prop_map(|m| &m * m.transpose())
}

fn orthogonal(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(n, n, 1.0).prop_filter_map("singular draw", |m| {
        let qr = m.qr();
        let r = qr.r();
        (0..r.nrows()).all(|i| r[(i, i)].abs() > 1e-3).then(|| qr.q())
    })
}

/// Two-dimensional model with random dynamics and weights.
fn random_params(steps: usize) -> impl Strategy<Value = ModelParams> {
    (
        (matrix(2, 2, 1.0), matrix(2, 2, 1.0), matrix(2, 2, 0.5), matrix(2, 2, 0.5)),
        (matrix(2, 2, 0.5), matrix(2, 2, 0.5), psd(2, 1.0), psd(2, 1.0)),
        (matrix(2, 2, 1.0), matrix(2, 2, 0.5), psd(2, 0.7)),
        (prop::collection::vec(-1.0..1.0, 2), prop::collection::vec(-1.0..1.0, 2)),
    )
        .prop_map(move |((a, b, c, d), (f, ft, q, r), (gamma, gbar, g), (eta, xi0))| {
            let mut p = ModelParams::zeros(2, 2, TimeGrid::new(1.0, steps).unwrap());
            p.state_drift = Coef::Constant(a);
            p.control_drift = Coef::Constant(b);
            p.state_diffusion = Coef::Constant(c);
            p.control_diffusion = Coef::Constant(d);
            p.mean_drift = Coef::Constant(f);
            p.mean_diffusion = Coef::Constant(ft);
            p.state_weight = Coef::Constant(q);
            p.control_weight = Coef::Constant(r + DMatrix::identity(2, 2) * 0.1);
            p.tracking_gain = Coef::Constant(gamma);
            p.tracking_offset = Coef::Constant(DVector::from_vec(eta));
            p.terminal_weight = g;
            p.terminal_tracking_gain = gbar;
            p.initial_state = DVector::from_vec(xi0);
            p
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rayleigh_quotient_is_bracketed(s in symmetric(4, 3.0), v in prop::collection::vec(-1.0..1.0f64, 4)) {
        let v = DVector::from_vec(v);
        prop_assume!(v.norm() > 1e-3);
        let quotient = v.dot(&(&s * &v)) / v.dot(&v);
        let tol = 1e-10 * (1.0 + s.amax());
        prop_assert!(lambda_min(&s).unwrap() <= quotient + tol);
        prop_assert!(quotient <= lambda_max(&s).unwrap() + tol);
    }

    #[test]
    fn eigenvalues_agree_with_library(s in symmetric(5, 2.0)) {
        let mut reference: Vec<f64> = nalgebra::SymmetricEigen::new(s.clone()).eigenvalues.iter().copied().collect();
        reference.sort_by(f64::total_cmp);
        for (a, b) in eig_sym(&s).unwrap().iter().zip(&reference) {
            prop_assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn trapezoid_is_linear(
        f in prop::collection::vec(-5.0..5.0f64, 11),
        g in prop::collection::vec(-5.0..5.0f64, 11),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
    ) {
        let combined: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
        let lhs = trapezoid(&combined, 0.1);
        let rhs = a * trapezoid(&f, 0.1) + b * trapezoid(&g, 0.1);
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    /// Congruence keeps `Q̂ = (Γ − I)ᵀQ(Γ − I)` semidefinite.
    #[test]
    fn tracking_weight_is_psd(q in psd(3, 1.0), gamma in matrix(3, 3, 2.0)) {
        let shifted = &gamma - DMatrix::identity(3, 3);
        let qhat = shifted.transpose() * &q * &shifted;
        prop_assert!(lambda_min(&symmetrize(&qhat)).unwrap() >= -1e-10 * (1.0 + qhat.amax()));
    }

    /// The stacked weights are symmetric, and semidefinite whenever `Q` and
    /// `G` are.
    #[test]
    fn stacked_weights_are_symmetric_and_psd(params in random_params(4), population in 1usize..5) {
        let sys = build_augmented(&params, population, 0).unwrap();
        for w in [&sys.state_weight, &sys.terminal_weight] {
            prop_assert!((w - w.transpose()).amax() < 1e-14);
            prop_assert!(lambda_min(w).unwrap() >= -1e-10 * (1.0 + w.amax()));
        }
    }

    #[test]
    fn growth_constant_is_orthogonally_invariant(params in random_params(4), u in orthogonal(2)) {
        let conj = |c: &Coef<DMatrix<f64>>| Coef::Constant(u.transpose() * c.at_node(0) * &u);
        let mut rotated = params.clone();
        rotated.state_drift = conj(&params.state_drift);
        rotated.control_drift = conj(&params.control_drift);
        rotated.state_diffusion = conj(&params.state_diffusion);
        rotated.control_diffusion = conj(&params.control_diffusion);
        rotated.mean_drift = conj(&params.mean_drift);
        rotated.mean_diffusion = conj(&params.mean_diffusion);
        let (k0, k1) = (growth_constant(&params).unwrap(), growth_constant(&rotated).unwrap());
        prop_assert!((k0 - k1).abs() < 1e-9 * (1.0 + k0), "{k0} vs {k1}");
    }

    /// A larger `R` never turns a convex verdict into an unverified one.
    #[test]
    fn larger_control_weight_keeps_convexity(
        params in random_params(4),
        q in symmetric(2, 0.5),
        extra in psd(2, 0.5),
        delta in 0.0..3.0f64,
    ) {
        // Mild dynamics so that the growth factor leaves room for a verdict.
        let mut params = params;
        for c in [&mut params.state_drift, &mut params.control_drift, &mut params.state_diffusion,
                  &mut params.control_diffusion, &mut params.mean_drift, &mut params.mean_diffusion] {
            *c = Coef::Constant(c.at_node(0) * 0.2);
        }
        params.state_weight = Coef::Constant(q.clone());
        params.tracking_gain = Coef::Constant(DMatrix::zeros(2, 2));
        let dq = Coef::Constant(q + extra);
        let before = check_coupled_indefinite(&params, &dq).unwrap();
        prop_assume!(before.status.is_convex());
        params.control_weight = Coef::Constant(params.control_weight.at_node(0) + DMatrix::identity(2, 2) * delta);
        let after = check_coupled_indefinite(&params, &dq).unwrap();
        prop_assert!(after.status >= before.status);
    }

    /// With `Q ⪯ 0` every admissible `ΔQ` leaves `Q − ΔQ ⪯ Q̂ ⪯ 0`.
    #[test]
    fn nonpositive_q_satisfies_hypothesis(params in random_params(4), q in psd(2, 1.0), extra in psd(2, 1.0)) {
        let mut params = params;
        params.state_weight = Coef::Constant(-q);
        let tight = default_delta_q(&params);
        let dq = Coef::Constant(tight.at_node(0) + extra);
        let q_minus_dq = params.state_weight.at_node(0) - dq.at_node(0);
        prop_assert!(lambda_min(&symmetrize(&q_minus_dq)).unwrap() <= 1e-12);
        let verdict = check_coupled_indefinite(&params, &dq).unwrap();
        let failure = verdict.failure.unwrap_or_default();
        prop_assert!(!failure.starts_with("lambda_min(Q - dQ) <= 0"), "{failure}");
    }

    #[test]
    fn noise_is_regenerated_exactly(seed in any::<u64>(), path in 0u64..1000, agent in 0u64..1000, step in 0u64..100_000) {
        let bank = NoiseBank::new(seed);
        prop_assert_eq!(bank.normal(path, agent, step).to_bits(), bank.normal(path, agent, step).to_bits());
        let mut stream = bank.agent_stream(path, agent, step);
        prop_assert_eq!(stream.next_normal().to_bits(), bank.normal(path, agent, step).to_bits());
        prop_assert_eq!(stream.next_normal().to_bits(), bank.normal(path, agent, step + 1).to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn riccati_solution_stays_symmetric(params in random_params(100)) {
        if let Ok(sol) = solve_p(&params, &params.grid) {
            let worst = sol.p.values().iter().map(|p| (p - p.transpose()).amax()).fold(0.0, f64::max);
            prop_assert!(worst <= 1e-9);
        }
    }

    /// A uniformly convex verdict makes the exact social cost strictly
    /// convex along deterministic control directions; under the
    /// semidefinite-weight criterion the curvature is at least `λ_min(R)`.
    #[test]
    fn convex_verdict_matches_cost_curvature(
        a in -0.5..0.5f64, b in 0.5..1.5f64, c in -0.3..0.3f64, d in -0.3..0.3f64,
        f in -0.5..0.5f64, ft in -0.3..0.3f64, q in -0.3..1.0f64, r in 0.2..1.5f64,
        gamma in -0.8..0.8f64, g in 0.0..1.0f64,
        coeffs in prop::collection::vec(-1.0..1.0f64, 6),
    ) {
        let scalar = |v: f64| Coef::Constant(DMatrix::from_element(1, 1, v));
        let mut params = ModelParams::zeros(1, 1, TimeGrid::new(1.0, 100).unwrap());
        params.state_drift = scalar(a);
        params.control_drift = scalar(b);
        params.state_diffusion = scalar(c);
        params.control_diffusion = scalar(d);
        params.mean_drift = scalar(f);
        params.mean_diffusion = scalar(ft);
        params.state_weight = scalar(q);
        params.control_weight = scalar(r);
        params.tracking_gain = scalar(gamma);
        params.terminal_weight = DMatrix::from_element(1, 1, g);
        params.initial_state = DVector::from_element(1, 0.5);

        let verdicts = assess(&params).unwrap();
        let uniform: Vec<_> = verdicts.iter().filter(|v| v.status == ConvexityStatus::UniformlyConvex).collect();
        prop_assume!(!uniform.is_empty());

        let model = AugmentedModel::new(&params, 2).unwrap();
        let grid = params.grid;
        let omega = std::f64::consts::TAU;
        let direction = |t: f64| {
            DVector::from_fn(2, |i, _| coeffs[3 * i] + coeffs[3 * i + 1] * (omega * t).sin() + coeffs[3 * i + 2] * (omega * t).cos())
        };
        let zero = LinearLaw::zero(grid, 2, 2);
        let base = zero.expected_cost(&model, None).unwrap();
        let plus = zero.expected_cost(&model, Some(&|t| direction(t))).unwrap();
        let minus = zero.expected_cost(&model, Some(&|t| -direction(t))).unwrap();
        let curvature = plus + minus - 2.0 * base;
        let norm_sq = {
            let u = Trajectory::from_fn(grid, |k| direction(grid.node(k)).norm_squared());
            trapezoid(u.values(), grid.dt())
        };
        prop_assume!(norm_sq > 1e-3);
        prop_assert!(curvature > 0.0, "curvature {curvature}");
        if uniform.iter().any(|v| v.criterion == Criterion::PsdWeights) {
            prop_assert!(curvature >= r * norm_sq * (1.0 - 1e-6), "{curvature} < {}", r * norm_sq);
        }
    }
}
