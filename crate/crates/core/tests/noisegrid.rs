use proptest::prelude::*;
use smallmass::noise::{coarsen, generate_path, standard_normal_at, WienerGrid};

#[test]
fn sample_variance_over_a_million_draws() {
    let dt = 0.01;
    let (mut s1, mut s2, mut n) = (0.0f64, 0.0f64, 0usize);
    for path in 0..100 {
        let g = generate_path(2024, path, 10_000, 1, dt);
        for &x in g.increments() {
            s1 += x;
            s2 += x * x;
            n += 1;
        }
    }
    let mean = s1 / n as f64;
    let var = s2 / n as f64 - mean * mean;
    assert!((0.995 * dt..=1.005 * dt).contains(&var), "variance {var}");
    assert!(mean.abs() < 4.0 * (dt / n as f64).sqrt(), "mean {mean}");
}

#[test]
fn regeneration_does_not_depend_on_generation_order() {
    let forward: Vec<WienerGrid> = (0..8).map(|p| generate_path(5, p, 50, 2, 0.1)).collect();
    let backward: Vec<WienerGrid> = (0..8).rev().map(|p| generate_path(5, p, 50, 2, 0.1)).collect();
    for (a, b) in forward.iter().zip(backward.iter().rev()) {
        assert_eq!(a, b);
    }
    let g = &forward[3];
    assert_eq!(g.increment(10)[1], 0.1f64.sqrt() * standard_normal_at(5, 3, 21));
}

#[test]
fn coarsening_to_one_step_gives_the_endpoint() {
    let g = generate_path(9, 1, 96, 1, 0.25);
    let one = coarsen(&g, 96).unwrap();
    assert_eq!(one.steps, 1);
    assert!((one.increment(0)[0] - g.endpoint()[0]).abs() < 1e-12);
    assert_eq!(one.horizon(), g.horizon());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nested_coarsening_is_exact(seed: u64, path in 0u64..1000, a in 0u32..4, b in 0u32..4, k in 1usize..3) {
        let steps = 1usize << 7;
        let g = generate_path(seed, path, steps, k, 1.0 / steps as f64);
        let (fa, fb) = (1usize << a, 1usize << b);
        let two = coarsen(&coarsen(&g, fa).unwrap(), fb).unwrap();
        let once = coarsen(&g, fa * fb).unwrap();
        prop_assert_eq!(two.increments(), once.increments());
        prop_assert_eq!(two.dt, once.dt);
    }

    #[test]
    fn partial_sums_survive_coarsening(seed: u64, f in 1u32..6) {
        let steps = 96usize;
        let factor = [1usize, 2, 3, 4, 6, 8][f as usize];
        let g = generate_path(seed, 0, steps, 2, 0.5);
        let c = coarsen(&g, factor).unwrap();
        for j in 0..=c.steps {
            let fine = g.partial_sum(j * factor);
            let coarse = c.partial_sum(j);
            for (x, y) in fine.iter().zip(&coarse) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
    }
}
