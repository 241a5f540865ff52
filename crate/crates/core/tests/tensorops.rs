use approx::assert_relative_eq;
use proptest::prelude::*;
use smallmass::linalg::{inv_derivative, lyap_derivative, mat_exp, solve_lyapunov, Matrix};
use smallmass::Error;

/// `Γ = AAᵀ + shift·I + (B − Bᵀ)`, so the symmetric part is at least `shift·I`.
fn stable(n: usize, a: &[f64], b: &[f64], shift: f64) -> Matrix {
    Matrix::from_fn(n, n, |i, j| {
        let aat: f64 = (0..n).map(|k| a[i * n + k] * a[j * n + k]).sum();
        aat + if i == j { shift } else { 0.0 } + b[i * n + j] - b[j * n + i]
    })
}

fn symmetric(n: usize, c: &[f64]) -> Matrix {
    Matrix::from_fn(n, n, |i, j| c[i * n + j] + c[j * n + i])
}

fn stable_case(max_n: usize) -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1..=max_n).prop_flat_map(|n| {
        let v = || prop::collection::vec(-1.0f64..1.0, n * n);
        (Just(n), v(), v(), v())
    })
}

/// Trapezoidal quadrature of `∫₀^∞ e^{−ζΓ} S e^{−ζΓᵀ} dζ`, truncated once
/// `e^{−λζ} < 1e-12`.
fn lyapunov_by_quadrature(gamma: &Matrix, sym: &Matrix, lambda: f64, h: f64) -> Matrix {
    let n = gamma.order();
    let step = mat_exp(gamma, -h).unwrap();
    let end = (1e12f64).ln() / lambda;
    let count = (end / h).ceil() as usize;
    let mut e = Matrix::identity(n);
    let mut acc = sym.scale(0.5);
    for k in 1..=count {
        e = &step * &e;
        let term = &(&e * sym) * &e.transpose();
        acc = &acc + &term.scale(if k == count { 0.5 } else { 1.0 });
    }
    acc.scale(h)
}

#[test]
fn lyapunov_scalar_and_identity() {
    let m = solve_lyapunov(&Matrix::scalar(1, 1.0), &Matrix::scalar(1, 2.0)).unwrap();
    assert_relative_eq!(m[(0, 0)], 1.0, epsilon = 1e-15);
    let m = solve_lyapunov(&Matrix::identity(2), &Matrix::identity(2)).unwrap();
    assert!((&m - &Matrix::scalar(2, 0.5)).max_abs() < 1e-15);
}

#[test]
fn lyapunov_hand_example_and_quadrature() {
    let gamma = Matrix::from_rows(&[&[2.0, 1.0], &[-1.0, 1.0]]);
    let want = Matrix::from_rows(&[&[5.0 / 18.0, -1.0 / 18.0], &[-1.0 / 18.0, 4.0 / 9.0]]);
    let m = solve_lyapunov(&gamma, &Matrix::identity(2)).unwrap();
    assert!((&m - &want).max_abs() < 1e-12);
    let quad = lyapunov_by_quadrature(&gamma, &Matrix::identity(2), 1.0, 2e-4);
    assert!((&quad - &want).max_abs() < 1e-6, "{quad:?}");
}

#[test]
fn lyapunov_rejects_indefinite_drag() {
    let gamma = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, -0.5]]);
    assert!(matches!(solve_lyapunov(&gamma, &Matrix::identity(2)), Err(Error::NoUniqueSolution(_))));
}

#[test]
fn lyap_derivative_scalar() {
    let dm = lyap_derivative(
        &Matrix::scalar(1, 1.0),
        &Matrix::scalar(1, 1.0),
        &Matrix::scalar(1, 2.0),
        &Matrix::scalar(1, 0.0),
        &Matrix::scalar(1, 1.0),
    )
    .unwrap();
    assert_relative_eq!(dm[(0, 0)], -1.0, epsilon = 1e-15);
    let g = Matrix::from_rows(&[&[2.0, 1.0], &[-1.0, 1.0]]);
    let m = solve_lyapunov(&g, &Matrix::identity(2)).unwrap();
    let z = Matrix::zeros(2, 2);
    assert_eq!(lyap_derivative(&g, &z, &Matrix::identity(2), &z, &m).unwrap().max_abs(), 0.0);
}

#[test]
fn inv_derivative_examples() {
    let d = inv_derivative(&Matrix::scalar(1, 2.0), &Matrix::scalar(1, 1.0)).unwrap();
    assert_relative_eq!(d[(0, 0)], -0.25);
    let a = Matrix::from_rows(&[&[2.0, 1.0], &[-1.0, 1.0]]);
    assert_eq!(inv_derivative(&a, &Matrix::zeros(2, 2)).unwrap().max_abs(), 0.0);
    let singular = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
    assert!(matches!(inv_derivative(&singular, &Matrix::identity(2)), Err(Error::SingularMatrix(_))));
}

#[test]
fn mat_exp_examples() {
    let e = mat_exp(&Matrix::diag(&[-1.0, -2.0]), 1.0).unwrap();
    assert_relative_eq!(e[(0, 0)], (-1f64).exp(), max_relative = 1e-14);
    assert_relative_eq!(e[(1, 1)], (-2f64).exp(), max_relative = 1e-14);
    assert_eq!(e[(0, 1)], 0.0);
    let a = Matrix::from_rows(&[&[0.3, -1.2, 0.5], &[0.7, 0.1, -0.4], &[-0.2, 0.9, 0.6]]);
    assert_eq!(mat_exp(&a, 0.0).unwrap(), Matrix::identity(3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn lyapunov_residual_and_symmetry((n, a, b, c) in stable_case(6)) {
        let gamma = stable(n, &a, &b, 0.1);
        let sym = symmetric(n, &c);
        let m = solve_lyapunov(&gamma, &sym).unwrap();
        let resid = &(&(&gamma * &m) + &(&m * &gamma.transpose())) - &sym;
        prop_assert!(resid.frobenius() <= 1e-10 * sym.frobenius().max(1e-300), "residual {}", resid.frobenius());
        prop_assert!(m.asymmetry() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mat_exp_inverse_and_semigroup((n, a, _b, _c) in stable_case(4), s in -1.5f64..1.5, t in -1.5f64..1.5) {
        let a = Matrix::from_row_major(n, n, &a);
        let id = Matrix::identity(n);
        let prod = &mat_exp(&a, 1.0).unwrap() * &mat_exp(&a, -1.0).unwrap();
        prop_assert!((&prod - &id).max_abs() < 1e-10);
        let lhs = &mat_exp(&a, s).unwrap() * &mat_exp(&a, t).unwrap();
        let rhs = mat_exp(&a, s + t).unwrap();
        prop_assert!((&lhs - &rhs).max_abs() < 1e-10 * rhs.max_abs().max(1.0));
    }

    #[test]
    fn mat_exp_matches_independent_eigensolver(n in 1usize..5, c in prop::collection::vec(-2.0f64..2.0, 16), s in 0.1f64..3.0) {
        // symmetric input: e^{sA} = V e^{sΛ} Vᵀ from nalgebra's eigendecomposition
        let a = Matrix::from_fn(n, n, |i, j| c[i * 4 + j] + c[j * 4 + i]);
        let na = nalgebra::DMatrix::from_row_slice(n, n, a.as_slice());
        let eig = na.symmetric_eigen();
        let d = nalgebra::DMatrix::from_diagonal(&eig.eigenvalues.map(|l| (s * l).exp()));
        let want = &eig.eigenvectors * d * eig.eigenvectors.transpose();
        let got = mat_exp(&a, s).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((got[(i, j)] - want[(i, j)]).abs() <= 1e-12 * want.abs().max().max(1.0) * 10.0);
            }
        }
    }

    #[test]
    fn inv_derivative_matches_differences(a in prop::collection::vec(-1.0f64..1.0, 4), d in prop::collection::vec(-1.0f64..1.0, 4)) {
        let base = &Matrix::from_row_major(2, 2, &a) + &Matrix::scalar(2, 3.0);
        let da = Matrix::from_row_major(2, 2, &d);
        let h = 1e-6;
        let fd = (&(&base + &da.scale(h)).inverse().unwrap() - &(&base - &da.scale(h)).inverse().unwrap()).scale(0.5 / h);
        prop_assert!((&inv_derivative(&base, &da).unwrap() - &fd).max_abs() < 1e-6);
    }

    #[test]
    fn lyap_derivative_matches_differences((_, a, b, c) in stable_case(2).prop_filter("2x2", |x| x.0 == 2),
                                           dg in prop::collection::vec(-1.0f64..1.0, 4),
                                           ds in prop::collection::vec(-1.0f64..1.0, 4)) {
        let gamma = stable(2, &a, &b, 0.5);
        let sym = symmetric(2, &c);
        let dgamma = Matrix::from_row_major(2, 2, &dg);
        let dsym = symmetric(2, &ds);
        let m = solve_lyapunov(&gamma, &sym).unwrap();
        let h = 1e-6;
        let plus = solve_lyapunov(&(&gamma + &dgamma.scale(h)), &(&sym + &dsym.scale(h))).unwrap();
        let minus = solve_lyapunov(&(&gamma - &dgamma.scale(h)), &(&sym - &dsym.scale(h))).unwrap();
        let fd = (&plus - &minus).scale(0.5 / h);
        let dm = lyap_derivative(&gamma, &dgamma, &sym, &dsym, &m).unwrap();
        prop_assert!((&dm - &fd).max_abs() < 1e-5 * fd.max_abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn lyapunov_matches_quadrature((n, a, b, c) in stable_case(3)) {
        let a: Vec<f64> = a.iter().map(|x| 0.5 * x).collect();
        let gamma = stable(n, &a, &b, 0.5);
        let sym = symmetric(n, &c);
        let m = solve_lyapunov(&gamma, &sym).unwrap();
        let quad = lyapunov_by_quadrature(&gamma, &sym, 0.5, 5e-4);
        prop_assert!((&m - &quad).max_abs() <= 1e-6 * sym.max_abs().max(1.0), "{:?} vs {:?}", m, quad);
    }
}
