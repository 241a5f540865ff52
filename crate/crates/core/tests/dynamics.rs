use proptest::prelude::*;
use smallmass::coeffs::gallery::{MagneticTwoD, OuConst, ScalarSin};
use smallmass::coeffs::ModelSpec;
use smallmass::dynamics::{
    decay_excess, simulate_homogenized, simulate_underdamped, step_underdamped, LevelScheme, PhaseState,
    Trajectory, UnderdampedScheme,
};
use smallmass::noise::{coarsen, generate_path};
use smallvec::smallvec;

fn sup_diff(a: &Trajectory, b: &Trajectory) -> f64 {
    a.q.iter().zip(&b.q).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn ou_stationary_momentum_variance() {
    // F = 0, γ = σ = m = 1: the exponential step is an exact AR(1) up to the
    // midpoint noise kernel, with stationary variance e^{−h}·dt/(1 − e^{−2h}).
    let model = ModelSpec::new(OuConst { n: 1, gamma: 1.0, kappa: 0.0, sigma: 1.0 });
    let dt = 0.01;
    let steps = 100_000;
    let burn = 2_000;
    let path = generate_path(3, 0, steps + burn, 1, dt);
    let tr = simulate_underdamped(&model, 1.0, &path, &[0.0], &[0.0], UnderdampedScheme::Exponential).unwrap();
    let u = &tr.aux.unwrap()[burn + 1..];
    let want = (-dt).exp() * dt / (1.0 - (-2.0 * dt).exp());
    // batch means: 100 batches, each many correlation times long
    let batch = u.len() / 100;
    let means: Vec<f64> =
        (0..100).map(|b| u[b * batch..(b + 1) * batch].iter().map(|x| x * x).sum::<f64>() / batch as f64).collect();
    let est = means.iter().sum::<f64>() / 100.0;
    let sd = (means.iter().map(|m| (m - est).powi(2)).sum::<f64>() / 99.0).sqrt() / 10.0;
    assert!((est - want).abs() < 3.0 * sd, "Var(u) = {est}, expected {want} ± {sd}");
}

#[test]
fn exponential_and_euler_agree_to_first_order() {
    let model = ModelSpec::new(ScalarSin::default());
    let m: f64 = 0.1;
    let dt = 0.02 * m;
    let steps = (1.0 / dt).round() as usize;
    let (mut coarse_total, mut fine_total) = (0.0, 0.0);
    for p in 0..20 {
        let fine = generate_path(17, p, 2 * steps, 1, dt / 2.0);
        let coarse = coarsen(&fine, 2).unwrap();
        let run = |g, s| simulate_underdamped(&model, m, g, &[0.3], &[0.0], s).unwrap();
        coarse_total += sup_diff(
            &run(&coarse, UnderdampedScheme::Exponential),
            &run(&coarse, UnderdampedScheme::EulerMaruyama),
        );
        fine_total +=
            sup_diff(&run(&fine, UnderdampedScheme::Exponential), &run(&fine, UnderdampedScheme::EulerMaruyama));
    }
    let ratio = coarse_total / fine_total;
    assert!((1.7..=2.3).contains(&ratio), "halving dt shrank the gap by {ratio}");
}

#[test]
fn midpoint_variant_matches_left_point_for_constant_coefficients() {
    let model = ModelSpec::new(OuConst { n: 2, gamma: 1.5, kappa: 0.0, sigma: 0.7 });
    let path = generate_path(1, 1, 500, 2, 0.001);
    let a = simulate_underdamped(&model, 0.1, &path, &[0.1, 0.2], &[0.0, 0.3], UnderdampedScheme::Exponential).unwrap();
    let b = simulate_underdamped(&model, 0.1, &path, &[0.1, 0.2], &[0.0, 0.3], UnderdampedScheme::ExponentialMidpoint)
        .unwrap();
    assert_eq!(a.q, b.q);
    assert_eq!(a.aux, b.aux);
}

#[test]
fn midpoint_variant_is_consistent() {
    let model = ModelSpec::new(ScalarSin::default());
    let m: f64 = 0.1;
    let dt = 0.02 * m;
    let steps = (1.0 / dt).round() as usize;
    let (mut coarse_total, mut fine_total) = (0.0, 0.0);
    for p in 0..20 {
        let fine = generate_path(23, p, 2 * steps, 1, dt / 2.0);
        let coarse = coarsen(&fine, 2).unwrap();
        let run = |g, s| simulate_underdamped(&model, m, g, &[0.3], &[0.0], s).unwrap();
        coarse_total += sup_diff(
            &run(&coarse, UnderdampedScheme::Exponential),
            &run(&coarse, UnderdampedScheme::ExponentialMidpoint),
        );
        fine_total += sup_diff(
            &run(&fine, UnderdampedScheme::Exponential),
            &run(&fine, UnderdampedScheme::ExponentialMidpoint),
        );
    }
    assert!(coarse_total / fine_total > 1.6, "ratio {}", coarse_total / fine_total);
}

#[test]
fn homogenized_deterministic_euler_bound() {
    let model = ModelSpec::new(OuConst { n: 1, gamma: 1.0, kappa: 1.0, sigma: 0.0 });
    let path = generate_path(0, 0, 10_000, 1, 1e-4);
    let tr = simulate_homogenized(&model, &path, &[2.0], LevelScheme::EulerMaruyama).unwrap();
    let last = tr.last()[0];
    assert!((last - 2.0 * (1.0 - 1e-4f64).powi(10_000)).abs() < 1e-12);
    assert!((last - 2.0 * (-1f64).exp()).abs() <= 1e-3 * 2.0);
}

#[test]
fn propagator_products_decay_on_magnetic_paths() {
    let model = ModelSpec::new(MagneticTwoD::default());
    let m = 0.05;
    let dt = 0.01 * m;
    let mut worst = f64::NEG_INFINITY;
    for p in 0..100 {
        let path = generate_path(8, p, 200, 2, dt);
        let tr =
            simulate_underdamped(&model, m, &path, &[0.5, -0.2], &[0.1, 0.0], UnderdampedScheme::Exponential).unwrap();
        worst = worst.max(decay_excess(&model, m, &tr, &[0, 70, 150]).unwrap());
    }
    assert!(worst <= 1e-9, "excess {worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_step_leaves_the_state(q in -3.0f64..3.0, u in -3.0f64..3.0, em: bool) {
        let model = ModelSpec::new(ScalarSin::default());
        let s = PhaseState { t: 0.5, q: smallvec![q], u: smallvec![u] };
        let scheme = if em { UnderdampedScheme::EulerMaruyama } else { UnderdampedScheme::Exponential };
        let out = step_underdamped(&model, 0.2, &s, &[0.0], 0.0, scheme).unwrap();
        prop_assert_eq!(out.q, s.q);
        prop_assert_eq!(out.u, s.u);
    }

    #[test]
    fn additive_noise_homogenized_telescopes(seed: u64, g in 0.5f64..3.0, s in 0.1f64..2.0) {
        let model = ModelSpec::new(OuConst { n: 1, gamma: g, kappa: 0.0, sigma: s });
        let path = generate_path(seed, 0, 300, 1, 0.01);
        let tr = simulate_homogenized(&model, &path, &[0.4], LevelScheme::EulerMaruyama).unwrap();
        let want = 0.4 + s / g * path.endpoint()[0];
        prop_assert!((tr.last()[0] - want).abs() < 1e-12);
    }
}
