//! Smooth truncation of a model outside a ball of radius `r`.
//!
//! With `χ_r(q) = h(‖q‖²/r²)` and a bump `h` equal to one on `[0,1]` and zero
//! on `[4,∞)`, the cutoff model uses `χ_r V`, `χ_r F̃`, `χ_r ψ` and
//! `χ_r γ + (1 − χ_r) λ I`. Inside radius `r` every field is forwarded to the
//! wrapped model unchanged; beyond `2r` the fields are constants.

use std::ops::{Add, Mul, Neg, Sub};

use smallvec::smallvec;

use super::{Coefficients, ModelSpec, Slices, Structure, Supplier};
use crate::linalg::{vec_ops, Matrix, Vector};

/// Value and first three derivatives of a scalar function of one variable.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Jet3([f64; 4]);

impl Jet3 {
    fn var(x: f64) -> Self {
        Jet3([x, 1.0, 0.0, 0.0])
    }

    fn constant(x: f64) -> Self {
        Jet3([x, 0.0, 0.0, 0.0])
    }

    /// Composes an outer function with derivatives `g = [g, g', g'', g''']`.
    fn compose(self, g: [f64; 4]) -> Self {
        let [_, a1, a2, a3] = self.0;
        Jet3([
            g[0],
            g[1] * a1,
            g[2] * a1 * a1 + g[1] * a2,
            g[3] * a1 * a1 * a1 + 3.0 * g[2] * a1 * a2 + g[1] * a3,
        ])
    }

    fn exp(self) -> Self {
        let e = self.0[0].exp();
        self.compose([e; 4])
    }

    fn recip(self) -> Self {
        let x = self.0[0];
        let r = 1.0 / x;
        self.compose([r, -r * r, 2.0 * r * r * r, -6.0 * r * r * r * r])
    }
}

impl Add for Jet3 {
    type Output = Jet3;
    fn add(self, o: Jet3) -> Jet3 {
        Jet3(std::array::from_fn(|i| self.0[i] + o.0[i]))
    }
}

impl Sub for Jet3 {
    type Output = Jet3;
    fn sub(self, o: Jet3) -> Jet3 {
        Jet3(std::array::from_fn(|i| self.0[i] - o.0[i]))
    }
}

impl Neg for Jet3 {
    type Output = Jet3;
    fn neg(self) -> Jet3 {
        Jet3(self.0.map(|v| -v))
    }
}

impl Mul for Jet3 {
    type Output = Jet3;
    fn mul(self, o: Jet3) -> Jet3 {
        let [a0, a1, a2, a3] = self.0;
        let [b0, b1, b2, b3] = o.0;
        Jet3([
            a0 * b0,
            a1 * b0 + a0 * b1,
            a2 * b0 + 2.0 * a1 * b1 + a0 * b2,
            a3 * b0 + 3.0 * a2 * b1 + 3.0 * a1 * b2 + a0 * b3,
        ])
    }
}

/// `e^{−1/x}` for `x > 0`.
fn flat(x: Jet3) -> Jet3 {
    (-x.recip()).exp()
}

/// The transition `h(s)` and its first three derivatives.
pub fn bump(s: f64) -> [f64; 4] {
    if s <= 1.0 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    if s >= 4.0 {
        return [0.0; 4];
    }
    let x = Jet3::var(s);
    let a = flat(Jet3::constant(4.0) - x);
    let b = flat(x - Jet3::constant(1.0));
    (a * (a + b).recip()).0
}

/// `χ_r` with its gradient, Hessian and third derivatives at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct CutoffWeight {
    pub value: f64,
    pub grad: Vector,
    pub hess: Matrix,
    /// `third[(i·n + j)·n + k] = ∂_i∂_j∂_k χ_r`
    pub third: Vec<f64>,
}

impl CutoffWeight {
    pub fn at(q: &[f64], r: f64) -> Self {
        let n = q.len();
        let r2 = r * r;
        let s = vec_ops::dot(q, q) / r2;
        let [h0, h1, h2, h3] = bump(s);
        let si: Vector = q.iter().map(|x| 2.0 * x / r2).collect();
        let sd = 2.0 / r2;
        let delta = |i: usize, j: usize| if i == j { sd } else { 0.0 };
        let grad = si.iter().map(|v| h1 * v).collect();
        let hess = Matrix::from_fn(n, n, |i, j| h2 * si[i] * si[j] + h1 * delta(i, j));
        let mut third = vec![0.0; n * n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    third[(i * n + j) * n + k] = h3 * si[i] * si[j] * si[k]
                        + h2 * (delta(i, j) * si[k] + delta(i, k) * si[j] + delta(j, k) * si[i]);
                }
            }
        }
        CutoffWeight { value: h0, grad, hess, third }
    }

    fn d3(&self, i: usize, j: usize, k: usize) -> f64 {
        let n = self.grad.len();
        self.third[(i * n + j) * n + k]
    }
}

enum Zone {
    Inside,
    Outside,
    Between(CutoffWeight),
}

/// The truncated model; see the module docs.
#[derive(Clone)]
pub struct CutoffModel {
    inner: ModelSpec,
    r: f64,
    name: String,
}

/// Wraps `model` so its forces vanish and its drag becomes `λI` far from the origin.
pub fn cutoff_model(model: &ModelSpec, r: f64) -> ModelSpec {
    assert!(r > 0.0, "cutoff radius must be positive");
    ModelSpec::new(CutoffModel { inner: model.clone(), r, name: format!("{}+cutoff", model.name()) })
}

impl CutoffModel {
    fn zone(&self, q: &[f64]) -> Zone {
        let s = vec_ops::dot(q, q) / (self.r * self.r);
        if s <= 1.0 {
            Zone::Inside
        } else if s >= 4.0 {
            Zone::Outside
        } else {
            Zone::Between(CutoffWeight::at(q, self.r))
        }
    }

    fn n(&self) -> usize {
        self.inner.dim()
    }

    fn zeros(&self) -> Matrix {
        Matrix::zeros(self.n(), self.n())
    }

    fn zero_slices(&self, count: usize) -> Slices {
        smallvec![self.zeros(); count]
    }

    fn analytic(&self, which: &[Supplier]) -> bool {
        which.iter().all(|&s| self.inner.is_analytic(s))
    }
}

fn axpy_m(acc: &mut Matrix, s: f64, m: &Matrix) {
    if s != 0.0 {
        *acc = &*acc + &m.scale(s);
    }
}

impl Coefficients for CutoffModel {
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn noise_dim(&self) -> usize {
        self.inner.noise_dim()
    }
    fn lambda(&self) -> f64 {
        self.inner.lambda()
    }

    fn structure(&self) -> Structure {
        let s = self.inner.structure();
        // Blending with λI keeps the drag constant only if it already was λI.
        let origin = vec_ops::zeros(self.n());
        let flat = s.gamma_q_independent
            && s.time_independent
            && (&self.inner.gamma(0.0, &origin) - &Matrix::scalar(self.n(), self.lambda())).max_abs() == 0.0;
        Structure { gamma_q_independent: flat, ..s }
    }

    fn gamma(&self, t: f64, q: &[f64]) -> Matrix {
        let lam = Matrix::scalar(self.n(), self.lambda());
        match self.zone(q) {
            Zone::Inside => self.inner.gamma(t, q),
            Zone::Outside => lam,
            Zone::Between(w) => &lam + &(&self.inner.gamma(t, q) - &lam).scale(w.value),
        }
    }

    fn sigma(&self, t: f64, q: &[f64]) -> Matrix {
        self.inner.sigma(t, q)
    }

    fn potential(&self, t: f64, q: &[f64]) -> f64 {
        match self.zone(q) {
            Zone::Inside => self.inner.potential(t, q),
            Zone::Outside => 0.0,
            Zone::Between(w) => w.value * self.inner.potential(t, q),
        }
    }

    fn grad_potential(&self, t: f64, q: &[f64]) -> Vector {
        match self.zone(q) {
            Zone::Inside => self.inner.grad_potential(t, q),
            Zone::Outside => vec_ops::zeros(self.n()),
            Zone::Between(w) => {
                let v = self.inner.potential(t, q);
                let g = self.inner.grad_potential(t, q);
                g.iter().zip(&w.grad).map(|(gi, ci)| w.value * gi + v * ci).collect()
            }
        }
    }

    fn external_force(&self, t: f64, q: &[f64]) -> Vector {
        match self.zone(q) {
            Zone::Inside => self.inner.external_force(t, q),
            Zone::Outside => vec_ops::zeros(self.n()),
            Zone::Between(w) => vec_ops::scale(&self.inner.external_force(t, q), w.value),
        }
    }

    fn psi(&self, t: f64, q: &[f64]) -> Vector {
        match self.zone(q) {
            Zone::Inside => self.inner.psi(t, q),
            Zone::Outside => vec_ops::zeros(self.n()),
            Zone::Between(w) => vec_ops::scale(&self.inner.psi(t, q), w.value),
        }
    }

    fn gamma_dt(&self, t: f64, q: &[f64]) -> Option<Matrix> {
        if !self.analytic(&[Supplier::GammaDt]) {
            return None;
        }
        Some(match self.zone(q) {
            Zone::Inside => self.inner.gamma_dt(t, q),
            Zone::Outside => self.zeros(),
            Zone::Between(w) => self.inner.gamma_dt(t, q).scale(w.value),
        })
    }

    fn gamma_dq(&self, t: f64, q: &[f64]) -> Option<Slices> {
        if !self.analytic(&[Supplier::GammaDq]) {
            return None;
        }
        Some(match self.zone(q) {
            Zone::Inside => self.inner.gamma_dq(t, q),
            Zone::Outside => self.zero_slices(self.n()),
            Zone::Between(w) => {
                let d = &self.inner.gamma(t, q) - &Matrix::scalar(self.n(), self.lambda());
                let dg = self.inner.gamma_dq(t, q);
                (0..self.n()).map(|l| &d.scale(w.grad[l]) + &dg[l].scale(w.value)).collect()
            }
        })
    }

    fn gamma_dqdq(&self, t: f64, q: &[f64]) -> Option<Slices> {
        if !self.analytic(&[Supplier::GammaDq, Supplier::GammaDqDq]) {
            return None;
        }
        let n = self.n();
        Some(match self.zone(q) {
            Zone::Inside => self.inner.gamma_dqdq(t, q),
            Zone::Outside => self.zero_slices(n * n),
            Zone::Between(w) => {
                let d = &self.inner.gamma(t, q) - &Matrix::scalar(n, self.lambda());
                let dg = self.inner.gamma_dq(t, q);
                let d2 = self.inner.gamma_dqdq(t, q);
                let mut out = Slices::with_capacity(n * n);
                for l in 0..n {
                    for c in 0..n {
                        let mut m = d2[l * n + c].scale(w.value);
                        axpy_m(&mut m, w.hess[(l, c)], &d);
                        axpy_m(&mut m, w.grad[l], &dg[c]);
                        axpy_m(&mut m, w.grad[c], &dg[l]);
                        out.push(m);
                    }
                }
                out
            }
        })
    }

    fn gamma_dtdq(&self, t: f64, q: &[f64]) -> Option<Slices> {
        if !self.analytic(&[Supplier::GammaDt, Supplier::GammaDtDq]) {
            return None;
        }
        Some(match self.zone(q) {
            Zone::Inside => self.inner.gamma_dtdq(t, q),
            Zone::Outside => self.zero_slices(self.n()),
            Zone::Between(w) => {
                let gt = self.inner.gamma_dt(t, q);
                let gtq = self.inner.gamma_dtdq(t, q);
                (0..self.n()).map(|l| &gt.scale(w.grad[l]) + &gtq[l].scale(w.value)).collect()
            }
        })
    }

    fn psi_dt(&self, t: f64, q: &[f64]) -> Option<Vector> {
        if !self.analytic(&[Supplier::PsiDt]) {
            return None;
        }
        Some(match self.zone(q) {
            Zone::Inside => self.inner.psi_dt(t, q),
            Zone::Outside => vec_ops::zeros(self.n()),
            Zone::Between(w) => vec_ops::scale(&self.inner.psi_dt(t, q), w.value),
        })
    }

    fn psi_dq(&self, t: f64, q: &[f64]) -> Option<Matrix> {
        if !self.analytic(&[Supplier::PsiDq]) {
            return None;
        }
        let n = self.n();
        Some(match self.zone(q) {
            Zone::Inside => self.inner.psi_dq(t, q),
            Zone::Outside => self.zeros(),
            Zone::Between(w) => {
                let psi = self.inner.psi(t, q);
                let j = self.inner.psi_dq(t, q);
                Matrix::from_fn(n, n, |i, k| w.grad[k] * psi[i] + w.value * j[(i, k)])
            }
        })
    }

    fn psi_dqdq(&self, t: f64, q: &[f64]) -> Option<Slices> {
        if !self.analytic(&[Supplier::PsiDq, Supplier::PsiDqDq]) {
            return None;
        }
        let n = self.n();
        Some(match self.zone(q) {
            Zone::Inside => self.inner.psi_dqdq(t, q),
            Zone::Outside => self.zero_slices(n),
            Zone::Between(w) => {
                let psi = self.inner.psi(t, q);
                let j = self.inner.psi_dq(t, q);
                let dj = self.inner.psi_dqdq(t, q);
                (0..n)
                    .map(|l| {
                        Matrix::from_fn(n, n, |i, k| {
                            w.hess[(k, l)] * psi[i]
                                + w.grad[k] * j[(i, l)]
                                + w.grad[l] * j[(i, k)]
                                + w.value * dj[l][(i, k)]
                        })
                    })
                    .collect()
            }
        })
    }

    fn psi_dqdqdq(&self, t: f64, q: &[f64]) -> Option<Slices> {
        if !self.analytic(&[Supplier::PsiDq, Supplier::PsiDqDq, Supplier::PsiDqDqDq]) {
            return None;
        }
        let n = self.n();
        Some(match self.zone(q) {
            Zone::Inside => self.inner.psi_dqdqdq(t, q),
            Zone::Outside => self.zero_slices(n * n),
            Zone::Between(w) => {
                let psi = self.inner.psi(t, q);
                let j = self.inner.psi_dq(t, q);
                let dj = self.inner.psi_dqdq(t, q);
                let d2j = self.inner.psi_dqdqdq(t, q);
                let mut out = Slices::with_capacity(n * n);
                for l in 0..n {
                    for c in 0..n {
                        out.push(Matrix::from_fn(n, n, |i, k| {
                            w.d3(k, l, c) * psi[i]
                                + w.hess[(k, l)] * j[(i, c)]
                                + w.hess[(k, c)] * j[(i, l)]
                                + w.grad[k] * dj[c][(i, l)]
                                + w.hess[(l, c)] * j[(i, k)]
                                + w.grad[l] * dj[c][(i, k)]
                                + w.grad[c] * dj[l][(i, k)]
                                + w.value * d2j[l * n + c][(i, k)]
                        }));
                    }
                }
                out
            }
        })
    }

    fn psi_dtdq(&self, t: f64, q: &[f64]) -> Option<Matrix> {
        if !self.analytic(&[Supplier::PsiDt, Supplier::PsiDtDq]) {
            return None;
        }
        let n = self.n();
        Some(match self.zone(q) {
            Zone::Inside => self.inner.psi_dtdq(t, q),
            Zone::Outside => self.zeros(),
            Zone::Between(w) => {
                let pt = self.inner.psi_dt(t, q);
                let jt = self.inner.psi_dtdq(t, q);
                Matrix::from_fn(n, n, |i, k| w.grad[k] * pt[i] + w.value * jt[(i, k)])
            }
        })
    }

    fn psi_dtdqdq(&self, t: f64, q: &[f64]) -> Option<Slices> {
        if !self.analytic(&[Supplier::PsiDt, Supplier::PsiDtDq, Supplier::PsiDtDqDq]) {
            return None;
        }
        let n = self.n();
        Some(match self.zone(q) {
            Zone::Inside => self.inner.psi_dtdqdq(t, q),
            Zone::Outside => self.zero_slices(n),
            Zone::Between(w) => {
                let pt = self.inner.psi_dt(t, q);
                let jt = self.inner.psi_dtdq(t, q);
                let djt = self.inner.psi_dtdqdq(t, q);
                (0..n)
                    .map(|l| {
                        Matrix::from_fn(n, n, |i, k| {
                            w.hess[(k, l)] * pt[i]
                                + w.grad[k] * jt[(i, l)]
                                + w.grad[l] * jt[(i, k)]
                                + w.value * djt[l][(i, k)]
                        })
                    })
                    .collect()
            }
        })
    }

    fn sigma_dq(&self, t: f64, q: &[f64]) -> Option<Slices> {
        if !self.analytic(&[Supplier::SigmaDq]) {
            return None;
        }
        Some(self.inner.sigma_dq(t, q))
    }
}

#[cfg(test)]
mod tests {
    use super::super::gallery::{DoubleWell, MagneticTwoD};
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bump_endpoints_and_monotone() {
        assert_eq!(bump(0.5), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(bump(4.0), [0.0; 4]);
        let mut prev = 1.0;
        for i in 1..300 {
            let s = 1.0 + 3.0 * i as f64 / 300.0;
            let h = bump(s)[0];
            assert!(h <= prev && (0.0..=1.0).contains(&h));
            prev = h;
        }
        assert!(bump(1.0 + 1e-3)[0] > 0.999_999);
        assert!(bump(4.0 - 1e-3)[0] < 1e-6);
    }

    #[test]
    fn bump_derivatives_match_differences() {
        for &s in &[1.3, 2.0, 2.5, 3.1, 3.7] {
            let h = 1e-5;
            let [_, d1, d2, d3] = bump(s);
            let fd1 = (bump(s + h)[0] - bump(s - h)[0]) / (2.0 * h);
            let fd2 = (bump(s + h)[1] - bump(s - h)[1]) / (2.0 * h);
            let fd3 = (bump(s + h)[2] - bump(s - h)[2]) / (2.0 * h);
            assert_relative_eq!(d1, fd1, max_relative = 1e-6, epsilon = 1e-9);
            assert_relative_eq!(d2, fd2, max_relative = 1e-6, epsilon = 1e-9);
            assert_relative_eq!(d3, fd3, max_relative = 1e-6, epsilon = 1e-8);
        }
    }

    #[test]
    fn identity_inside_and_constant_outside() {
        let base = ModelSpec::new(DoubleWell::default());
        let cut = cutoff_model(&base, 2.0);
        for &x in &[-2.0, -0.3, 0.0, 1.9, 2.0] {
            let q = [x];
            assert_eq!(cut.gamma(0.0, &q), base.gamma(0.0, &q));
            assert_eq!(cut.potential(0.0, &q).to_bits(), base.potential(0.0, &q).to_bits());
            assert_eq!(cut.grad_potential(0.0, &q), base.grad_potential(0.0, &q));
        }
        for &x in &[4.0, -5.0, 100.0] {
            let q = [x];
            assert_eq!(cut.gamma(0.0, &q), Matrix::scalar(1, base.lambda()));
            assert_eq!(cut.potential(0.0, &q), 0.0);
            assert_eq!(cut.grad_potential(0.0, &q)[0], 0.0);
        }
    }

    #[test]
    fn transition_derivatives_match_differences() {
        let base = ModelSpec::new(MagneticTwoD { g0: 2.0, g1: 0.7, b: 0.9, kappa: 1.0, sigma: 1.0 });
        let cut = cutoff_model(&base, 1.0);
        let q = [1.1, 0.9];
        let h = 1e-6;
        let an_g = cut.gamma_dq(0.0, &q);
        let an_j = cut.psi_dq(0.0, &q);
        let an_j2 = cut.psi_dqdq(0.0, &q);
        let an_j3 = cut.psi_dqdqdq(0.0, &q);
        let an_g2 = cut.gamma_dqdq(0.0, &q);
        let gv = cut.grad_potential(0.0, &q);
        for c in 0..2 {
            let mut qp = q;
            qp[c] += h;
            let mut qm = q;
            qm[c] -= h;
            let s = 0.5 / h;
            let fd_g = (&cut.gamma(0.0, &qp) - &cut.gamma(0.0, &qm)).scale(s);
            assert!((&fd_g - &an_g[c]).max_abs() < 1e-7);
            let fd_v = (cut.potential(0.0, &qp) - cut.potential(0.0, &qm)) * s;
            assert_relative_eq!(fd_v, gv[c], max_relative = 1e-7);
            let fd_psi = vec_ops::scale(&vec_ops::sub(&cut.psi(0.0, &qp), &cut.psi(0.0, &qm)), s);
            for i in 0..2 {
                assert!((fd_psi[i] - an_j[(i, c)]).abs() < 1e-7);
            }
            let fd_j = (&cut.psi_dq(0.0, &qp) - &cut.psi_dq(0.0, &qm)).scale(s);
            assert!((&fd_j - &an_j2[c]).max_abs() < 1e-6);
            for l in 0..2 {
                let fd_j2 = (&cut.psi_dqdq(0.0, &qp)[l] - &cut.psi_dqdq(0.0, &qm)[l]).scale(s);
                assert!((&fd_j2 - &an_j3[l * 2 + c]).max_abs() < 1e-5);
                let fd_g2 = (&cut.gamma_dq(0.0, &qp)[l] - &cut.gamma_dq(0.0, &qm)[l]).scale(s);
                assert!((&fd_g2 - &an_g2[l * 2 + c]).max_abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cutoff_drag_respects_floor() {
        let base = ModelSpec::new(MagneticTwoD::default());
        let cut = cutoff_model(&base, 1.0);
        for i in 0..200 {
            let a = i as f64 * 0.1;
            let q = [2.5 * a.cos() * (a * 0.37).sin(), 2.5 * a.sin()];
            let ev = cut.gamma(0.0, &q).sym_eigenvalues();
            assert!(ev[0] >= base.lambda() - 1e-12);
        }
    }
}
