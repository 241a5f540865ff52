//! Coefficient fields of the Langevin system and the derived quantities the
//! integrators need: the drag-plus-magnetic matrix `γ̃`, the total force, the
//! noise-induced drift `S` and the contracted tensor `T = Q·G`.
//!
//! Models implement [`Coefficients`]. Any derivative a model does not supply
//! is replaced by central finite differences inside [`ModelSpec`].

use std::fmt;
use std::sync::Arc;

use smallvec::{smallvec, SmallVec};

use crate::error::{Error, Result};
use crate::linalg::{inv_derivative_with, inv_second_derivative_with, vec_ops, LyapunovOperator, Matrix, Vector};

mod cutoff;
pub mod gallery;
mod validate;

pub use cutoff::{bump, cutoff_model, CutoffWeight};
pub use validate::{validate_model, CheckResult, ValidationReport};

/// A list of matrices indexed by coordinate (or coordinate pair, `l·n + c`).
pub type Slices = SmallVec<[Matrix; 2]>;

/// Structural facts a model can declare. They enable the specialized
/// hierarchy paths and skip work for fields that vanish identically.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Structure {
    /// `ψ ≡ 0`.
    pub psi_zero: bool,
    /// `γ = g(t,q)·I`.
    pub scalar_gamma: bool,
    /// `σ = s(t,q)·I` with `k = n`.
    pub scalar_sigma: bool,
    /// `γ` does not depend on `q`.
    pub gamma_q_independent: bool,
    /// No field depends on `t`.
    pub time_independent: bool,
}

/// Coefficient supplier for the underdamped Langevin system
///
/// ```text
/// dq = u/m dt
/// du = (−γ̃(t,q) u/m + F(t,q)) dt + σ(t,q) dW
/// ```
///
/// Derivative suppliers return `None` when the model does not provide them;
/// [`ModelSpec`] then falls back to central differences. Index conventions:
/// `gamma_dq()[l] = ∂_l γ`, `gamma_dqdq()[l·n + c] = ∂_c∂_l γ`,
/// `psi_dq()[(i, k)] = ∂_k ψ_i`, `psi_dqdq()[l] = ∂_l psi_dq`,
/// `psi_dqdqdq()[l·n + c] = ∂_c∂_l psi_dq`, `sigma_dq()[l] = ∂_l σ`.
pub trait Coefficients: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    /// Uniform lower bound on the eigenvalues of `γ`.
    fn lambda(&self) -> f64;

    fn gamma(&self, t: f64, q: &[f64]) -> Matrix;
    fn sigma(&self, t: f64, q: &[f64]) -> Matrix;
    fn potential(&self, t: f64, q: &[f64]) -> f64;
    fn grad_potential(&self, t: f64, q: &[f64]) -> Vector;

    fn external_force(&self, _t: f64, _q: &[f64]) -> Vector {
        vec_ops::zeros(self.dim())
    }

    fn psi(&self, _t: f64, _q: &[f64]) -> Vector {
        vec_ops::zeros(self.dim())
    }

    fn structure(&self) -> Structure {
        Structure::default()
    }

    /// `k_B T(t,q)` when the model knows it satisfies `Σ = 2 k_B T γ`.
    fn temperature(&self, _t: f64, _q: &[f64]) -> Option<f64> {
        None
    }

    fn gamma_dt(&self, _t: f64, _q: &[f64]) -> Option<Matrix> {
        None
    }
    fn gamma_dq(&self, _t: f64, _q: &[f64]) -> Option<Slices> {
        None
    }
    fn gamma_dqdq(&self, _t: f64, _q: &[f64]) -> Option<Slices> {
        None
    }
    fn gamma_dtdq(&self, _t: f64, _q: &[f64]) -> Option<Slices> {
        None
    }
    fn psi_dt(&self, _t: f64, _q: &[f64]) -> Option<Vector> {
        None
    }
    fn psi_dq(&self, _t: f64, _q: &[f64]) -> Option<Matrix> {
        None
    }
    fn psi_dqdq(&self, _t: f64, _q: &[f64]) -> Option<Slices> {
        None
    }
    fn psi_dqdqdq(&self, _t: f64, _q: &[f64]) -> Option<Slices> {
        None
    }
    fn psi_dtdq(&self, _t: f64, _q: &[f64]) -> Option<Matrix> {
        None
    }
    fn psi_dtdqdq(&self, _t: f64, _q: &[f64]) -> Option<Slices> {
        None
    }
    fn sigma_dq(&self, _t: f64, _q: &[f64]) -> Option<Slices> {
        None
    }
}

/// Where a derivative came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Analytic,
    FiniteDifference,
}

/// Derivative suppliers a model may or may not provide analytically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Supplier {
    GammaDt,
    GammaDq,
    GammaDqDq,
    GammaDtDq,
    PsiDt,
    PsiDq,
    PsiDqDq,
    PsiDqDqDq,
    PsiDtDq,
    PsiDtDqDq,
    SigmaDq,
}

impl Supplier {
    pub const ALL: [Supplier; 11] = [
        Supplier::GammaDt,
        Supplier::GammaDq,
        Supplier::GammaDqDq,
        Supplier::GammaDtDq,
        Supplier::PsiDt,
        Supplier::PsiDq,
        Supplier::PsiDqDq,
        Supplier::PsiDqDqDq,
        Supplier::PsiDtDq,
        Supplier::PsiDtDqDq,
        Supplier::SigmaDq,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Supplier::GammaDt => "d_t gamma",
            Supplier::GammaDq => "d_q gamma",
            Supplier::GammaDqDq => "d_qq gamma",
            Supplier::GammaDtDq => "d_tq gamma",
            Supplier::PsiDt => "d_t psi",
            Supplier::PsiDq => "d_q psi",
            Supplier::PsiDqDq => "d_qq psi",
            Supplier::PsiDqDqDq => "d_qqq psi",
            Supplier::PsiDtDq => "d_tq psi",
            Supplier::PsiDtDqDq => "d_tqq psi",
            Supplier::SigmaDq => "d_q sigma",
        }
    }
}

/// A model together with its derivative capability table.
#[derive(Clone)]
pub struct ModelSpec {
    inner: Arc<dyn Coefficients>,
    analytic: [bool; 11],
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.inner.name())
            .field("n", &self.dim())
            .field("k", &self.noise_dim())
            .field("lambda", &self.lambda())
            .finish()
    }
}

trait Difference: Sized {
    /// `(plus − minus)·scale`
    fn difference(plus: &Self, minus: &Self, scale: f64) -> Self;
}

impl Difference for f64 {
    fn difference(plus: &f64, minus: &f64, scale: f64) -> f64 {
        (plus - minus) * scale
    }
}

impl Difference for Vector {
    fn difference(plus: &Vector, minus: &Vector, scale: f64) -> Vector {
        plus.iter().zip(minus).map(|(a, b)| (a - b) * scale).collect()
    }
}

impl Difference for Matrix {
    fn difference(plus: &Matrix, minus: &Matrix, scale: f64) -> Matrix {
        (plus - minus).scale(scale)
    }
}

impl Difference for Slices {
    fn difference(plus: &Slices, minus: &Slices, scale: f64) -> Slices {
        plus.iter().zip(minus).map(|(a, b)| (a - b).scale(scale)).collect()
    }
}

/// Base spatial step for central differences; multiplied by `scale` when a
/// difference is taken of something that is itself a difference.
pub fn fd_step_q(q: &[f64]) -> f64 {
    1e-5f64.max(1e-5 * vec_ops::norm(q))
}

pub fn fd_step_t(t: f64) -> f64 {
    1e-5f64.max(1e-5 * t.abs())
}

fn central_q<T: Difference>(q: &[f64], l: usize, scale: f64, f: impl Fn(&[f64]) -> T) -> T {
    let h = scale * fd_step_q(q);
    let mut x: Vector = q.iter().copied().collect();
    x[l] = q[l] + h;
    let plus = f(&x);
    let hp = x[l] - q[l];
    x[l] = q[l] - h;
    let minus = f(&x);
    let hm = q[l] - x[l];
    T::difference(&plus, &minus, 1.0 / (hp + hm))
}

fn central_t<T: Difference>(t: f64, scale: f64, f: impl Fn(f64) -> T) -> T {
    let h = scale * fd_step_t(t);
    let (tp, tm) = (t + h, t - h);
    T::difference(&f(tp), &f(tm), 1.0 / (tp - tm))
}

/// `out[l·n + c] = d[c][l]` for the per-coordinate derivatives `d[c]` of a
/// slice-valued field.
fn interleave(n: usize, per_c: &[Slices]) -> Slices {
    let mut out = Slices::with_capacity(n * n);
    for l in 0..n {
        for c in 0..n {
            out.push(per_c[c][l].clone());
        }
    }
    out
}

const NEST: f64 = 10.0;

impl ModelSpec {
    pub fn new(model: impl Coefficients + 'static) -> Self {
        Self::from_arc(Arc::new(model))
    }

    pub fn from_arc(inner: Arc<dyn Coefficients>) -> Self {
        let n = inner.dim();
        let q0 = vec_ops::zeros(n);
        let (t, q) = (0.0, q0.as_slice());
        let analytic = [
            inner.gamma_dt(t, q).is_some(),
            inner.gamma_dq(t, q).is_some(),
            inner.gamma_dqdq(t, q).is_some(),
            inner.gamma_dtdq(t, q).is_some(),
            inner.psi_dt(t, q).is_some(),
            inner.psi_dq(t, q).is_some(),
            inner.psi_dqdq(t, q).is_some(),
            inner.psi_dqdqdq(t, q).is_some(),
            inner.psi_dtdq(t, q).is_some(),
            inner.psi_dtdqdq(t, q).is_some(),
            inner.sigma_dq(t, q).is_some(),
        ];
        ModelSpec { inner, analytic }
    }

    pub fn coefficients(&self) -> &Arc<dyn Coefficients> {
        &self.inner
    }

    pub fn name(&self) -> &str {
        self.inner.name()
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.inner.noise_dim()
    }

    pub fn lambda(&self) -> f64 {
        self.inner.lambda()
    }

    pub fn structure(&self) -> Structure {
        self.inner.structure()
    }

    pub fn temperature(&self, t: f64, q: &[f64]) -> Option<f64> {
        self.inner.temperature(t, q)
    }

    /// Whether `which` is supplied analytically. Structurally vanishing
    /// fields count as analytic.
    pub fn is_analytic(&self, which: Supplier) -> bool {
        let s = self.structure();
        let vanishes = match which {
            Supplier::GammaDt | Supplier::GammaDtDq => s.time_independent,
            Supplier::GammaDq | Supplier::GammaDqDq => s.gamma_q_independent,
            Supplier::PsiDt | Supplier::PsiDtDq | Supplier::PsiDtDqDq => s.psi_zero || s.time_independent,
            Supplier::PsiDq | Supplier::PsiDqDq | Supplier::PsiDqDqDq => s.psi_zero,
            Supplier::SigmaDq => false,
        };
        vanishes || self.analytic[Supplier::ALL.iter().position(|&x| x == which).unwrap()]
    }

    fn provenance_of(&self, which: &[Supplier]) -> Provenance {
        if which.iter().all(|&s| self.is_analytic(s)) {
            Provenance::Analytic
        } else {
            Provenance::FiniteDifference
        }
    }

    fn zero_slices(&self, count: usize) -> Slices {
        let n = self.dim();
        smallvec![Matrix::zeros(n, n); count]
    }

    pub fn gamma(&self, t: f64, q: &[f64]) -> Matrix {
        self.inner.gamma(t, q)
    }

    pub fn sigma(&self, t: f64, q: &[f64]) -> Matrix {
        self.inner.sigma(t, q)
    }

    pub fn potential(&self, t: f64, q: &[f64]) -> f64 {
        self.inner.potential(t, q)
    }

    pub fn grad_potential(&self, t: f64, q: &[f64]) -> Vector {
        self.inner.grad_potential(t, q)
    }

    pub fn external_force(&self, t: f64, q: &[f64]) -> Vector {
        self.inner.external_force(t, q)
    }

    pub fn psi(&self, t: f64, q: &[f64]) -> Vector {
        if self.structure().psi_zero {
            return vec_ops::zeros(self.dim());
        }
        self.inner.psi(t, q)
    }

    pub fn gamma_dt(&self, t: f64, q: &[f64]) -> Matrix {
        if self.structure().time_independent {
            let n = self.dim();
            return Matrix::zeros(n, n);
        }
        self.inner.gamma_dt(t, q).unwrap_or_else(|| central_t(t, 1.0, |s| self.gamma(s, q)))
    }

    pub fn gamma_dq(&self, t: f64, q: &[f64]) -> Slices {
        if self.structure().gamma_q_independent {
            return self.zero_slices(self.dim());
        }
        self.inner.gamma_dq(t, q).unwrap_or_else(|| {
            (0..self.dim()).map(|l| central_q(q, l, 1.0, |x| self.gamma(t, x))).collect()
        })
    }

    pub fn gamma_dqdq(&self, t: f64, q: &[f64]) -> Slices {
        let n = self.dim();
        if self.structure().gamma_q_independent {
            return self.zero_slices(n * n);
        }
        self.inner.gamma_dqdq(t, q).unwrap_or_else(|| {
            let per_c: Vec<Slices> = (0..n).map(|c| central_q(q, c, NEST, |x| self.gamma_dq(t, x))).collect();
            interleave(n, &per_c)
        })
    }

    pub fn gamma_dtdq(&self, t: f64, q: &[f64]) -> Slices {
        let s = self.structure();
        if s.time_independent || s.gamma_q_independent {
            return self.zero_slices(self.dim());
        }
        self.inner.gamma_dtdq(t, q).unwrap_or_else(|| central_t(t, NEST, |s| self.gamma_dq(s, q)))
    }

    pub fn psi_dt(&self, t: f64, q: &[f64]) -> Vector {
        let s = self.structure();
        if s.psi_zero || s.time_independent {
            return vec_ops::zeros(self.dim());
        }
        self.inner.psi_dt(t, q).unwrap_or_else(|| central_t(t, 1.0, |s| self.psi(s, q)))
    }

    pub fn psi_dq(&self, t: f64, q: &[f64]) -> Matrix {
        let n = self.dim();
        if self.structure().psi_zero {
            return Matrix::zeros(n, n);
        }
        self.inner.psi_dq(t, q).unwrap_or_else(|| {
            let cols: Vec<Vector> = (0..n).map(|k| central_q(q, k, 1.0, |x| self.psi(t, x))).collect();
            Matrix::from_fn(n, n, |i, k| cols[k][i])
        })
    }

    pub fn psi_dqdq(&self, t: f64, q: &[f64]) -> Slices {
        let n = self.dim();
        if self.structure().psi_zero {
            return self.zero_slices(n);
        }
        self.inner
            .psi_dqdq(t, q)
            .unwrap_or_else(|| (0..n).map(|l| central_q(q, l, NEST, |x| self.psi_dq(t, x))).collect())
    }

    pub fn psi_dqdqdq(&self, t: f64, q: &[f64]) -> Slices {
        let n = self.dim();
        if self.structure().psi_zero {
            return self.zero_slices(n * n);
        }
        self.inner.psi_dqdqdq(t, q).unwrap_or_else(|| {
            let per_c: Vec<Slices> =
                (0..n).map(|c| central_q(q, c, NEST * NEST, |x| self.psi_dqdq(t, x))).collect();
            interleave(n, &per_c)
        })
    }

    pub fn psi_dtdq(&self, t: f64, q: &[f64]) -> Matrix {
        let n = self.dim();
        let s = self.structure();
        if s.psi_zero || s.time_independent {
            return Matrix::zeros(n, n);
        }
        self.inner.psi_dtdq(t, q).unwrap_or_else(|| central_t(t, NEST, |s| self.psi_dq(s, q)))
    }

    pub fn psi_dtdqdq(&self, t: f64, q: &[f64]) -> Slices {
        let n = self.dim();
        let s = self.structure();
        if s.psi_zero || s.time_independent {
            return self.zero_slices(n);
        }
        self.inner.psi_dtdqdq(t, q).unwrap_or_else(|| central_t(t, NEST * NEST, |s| self.psi_dqdq(s, q)))
    }

    pub fn sigma_dq(&self, t: f64, q: &[f64]) -> Slices {
        self.inner.sigma_dq(t, q).unwrap_or_else(|| {
            (0..self.dim()).map(|l| central_q(q, l, 1.0, |x| self.sigma(t, x))).collect()
        })
    }

    /// Gradient of the potential by Richardson-extrapolated central
    /// differences (fourth order), for validation.
    pub fn grad_potential_fd(&self, t: f64, q: &[f64]) -> Vector {
        (0..self.dim())
            .map(|l| {
                let near: f64 = central_q(q, l, 1.0, |x| self.potential(t, x));
                let far: f64 = central_q(q, l, 2.0, |x| self.potential(t, x));
                (4.0 * near - far) / 3.0
            })
            .collect()
    }

    /// The spectral-floor check every evaluation of `γ̃` goes through.
    fn check_floor(&self, t: f64, gamma: &Matrix) -> Result<()> {
        let floor = 0.5 * self.lambda();
        let ok = if gamma.order() == 1 { gamma[(0, 0)] >= floor } else { gamma.is_positive_definite_shifted(floor) };
        if ok {
            Ok(())
        } else {
            Err(Error::DegenerateDrag { t, floor })
        }
    }
}

fn ensure_finite_matrix(m: &Matrix, what: &'static str, t: f64) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::Evaluation { what, t })
    }
}

fn ensure_finite_vec(v: &[f64], what: &'static str, t: f64) -> Result<()> {
    if vec_ops::is_finite(v) {
        Ok(())
    } else {
        Err(Error::Evaluation { what, t })
    }
}

/// How many derivatives a bundle carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    First,
    Second,
}

/// `γ̃`, its inverse and their partial derivatives at one point.
///
/// First-order fields are always present. The second-order fields
/// (`dqdq`, `dtdq`, `inv_dqdq`, `inv_dtdq`) are empty unless the bundle was
/// built with [`Order::Second`].
#[derive(Clone, Debug)]
pub struct DerivativeBundle {
    pub value: Matrix,
    pub inv: Matrix,
    /// `dq[l] = ∂_l γ̃`
    pub dq: Slices,
    /// `inv_dq[l] = ∂_l γ̃⁻¹`, so that `Q^{ikl} = inv_dq[l][(i,k)]`.
    pub inv_dq: Slices,
    pub dt: Matrix,
    pub inv_dt: Matrix,
    /// `dqdq[l·n + c] = ∂_c∂_l γ̃`
    pub dqdq: Slices,
    pub inv_dqdq: Slices,
    /// `dtdq[l] = ∂_t∂_l γ̃`
    pub dtdq: Slices,
    pub inv_dtdq: Slices,
    pub provenance: Provenance,
}

fn antisym_add(gamma: &Matrix, j: &Matrix) -> Matrix {
    let n = gamma.order();
    Matrix::from_fn(n, n, |i, k| gamma[(i, k)] + j[(i, k)] - j[(k, i)])
}

/// Builds `γ̃` and its derivatives at `(t, q)` to the requested order.
pub fn tilde_gamma_bundle(model: &ModelSpec, t: f64, q: &[f64], order: Order) -> Result<DerivativeBundle> {
    let n = model.dim();
    let psi_zero = model.structure().psi_zero;
    let gamma = model.gamma(t, q);
    ensure_finite_matrix(&gamma, "gamma", t)?;
    model.check_floor(t, &gamma)?;

    let value = if psi_zero { gamma.clone() } else { antisym_add(&gamma, &model.psi_dq(t, q)) };
    ensure_finite_matrix(&value, "tilde gamma", t)?;
    let inv = value.inverse()?;

    let g_dq = model.gamma_dq(t, q);
    let dq: Slices = if psi_zero {
        g_dq
    } else {
        let p = model.psi_dqdq(t, q);
        g_dq.iter().zip(&p).map(|(g, j)| antisym_add(g, j)).collect()
    };
    let dt = if psi_zero {
        model.gamma_dt(t, q)
    } else {
        antisym_add(&model.gamma_dt(t, q), &model.psi_dtdq(t, q))
    };
    for m in dq.iter().chain(std::iter::once(&dt)) {
        ensure_finite_matrix(m, "tilde gamma derivative", t)?;
    }
    let inv_dq: Slices = dq.iter().map(|d| inv_derivative_with(&inv, d)).collect();
    let inv_dt = inv_derivative_with(&inv, &dt);

    let mut suppliers: SmallVec<[Supplier; 8]> =
        smallvec![Supplier::GammaDq, Supplier::GammaDt, Supplier::PsiDq, Supplier::PsiDqDq, Supplier::PsiDtDq];

    let (mut dqdq, mut inv_dqdq, mut dtdq, mut inv_dtdq) = (Slices::new(), Slices::new(), Slices::new(), Slices::new());
    if order == Order::Second {
        suppliers.extend([Supplier::GammaDqDq, Supplier::GammaDtDq, Supplier::PsiDqDqDq, Supplier::PsiDtDqDq]);
        let g2 = model.gamma_dqdq(t, q);
        dqdq = if psi_zero {
            g2
        } else {
            let p3 = model.psi_dqdqdq(t, q);
            g2.iter().zip(&p3).map(|(g, j)| antisym_add(g, j)).collect()
        };
        let gtq = model.gamma_dtdq(t, q);
        dtdq = if psi_zero {
            gtq
        } else {
            let ptq = model.psi_dtdqdq(t, q);
            gtq.iter().zip(&ptq).map(|(g, j)| antisym_add(g, j)).collect()
        };
        for m in dqdq.iter().chain(dtdq.iter()) {
            ensure_finite_matrix(m, "tilde gamma second derivative", t)?;
        }
        for l in 0..n {
            for c in 0..n {
                inv_dqdq.push(inv_second_derivative_with(&inv, &dq[l], &dq[c], &dqdq[l * n + c]));
            }
        }
        for l in 0..n {
            inv_dtdq.push(inv_second_derivative_with(&inv, &dq[l], &dt, &dtdq[l]));
        }
    }
    Ok(DerivativeBundle {
        value,
        inv,
        dq,
        inv_dq,
        dt,
        inv_dt,
        dqdq,
        inv_dqdq,
        dtdq,
        inv_dtdq,
        provenance: model.provenance_of(&suppliers),
    })
}

/// `γ̃(t,q)` alone, with the same floor and finiteness checks as the bundle.
pub fn tilde_gamma_value(model: &ModelSpec, t: f64, q: &[f64]) -> Result<Matrix> {
    let gamma = model.gamma(t, q);
    ensure_finite_matrix(&gamma, "gamma", t)?;
    model.check_floor(t, &gamma)?;
    if model.structure().psi_zero {
        return Ok(gamma);
    }
    let value = antisym_add(&gamma, &model.psi_dq(t, q));
    ensure_finite_matrix(&value, "tilde gamma", t)?;
    Ok(value)
}

/// `γ̃(t,q) = γ + ∂_k ψ_i − ∂_i ψ_k` with every partial the hierarchy uses.
pub fn eval_tilde_gamma(model: &ModelSpec, t: f64, q: &[f64]) -> Result<DerivativeBundle> {
    tilde_gamma_bundle(model, t, q, Order::Second)
}

/// `F = −∂_t ψ − ∇V + F̃`.
pub fn total_force(model: &ModelSpec, t: f64, q: &[f64]) -> Result<Vector> {
    let mut f = model.external_force(t, q);
    vec_ops::axpy(&mut f, -1.0, &model.grad_potential(t, q));
    if !model.structure().psi_zero {
        vec_ops::axpy(&mut f, -1.0, &model.psi_dt(t, q));
    }
    ensure_finite_vec(&f, "total force", t)?;
    Ok(f)
}

/// `v_i = Σ_{k,l} Q^{ikl} M_{kl}` for `Q^{ikl} = d[l][(i,k)]`.
pub(crate) fn q_contract(d: &[Matrix], m: &Matrix) -> Vector {
    let n = m.order();
    (0..n)
        .map(|i| {
            let mut s = 0.0;
            for (l, dl) in d.iter().enumerate() {
                for k in 0..n {
                    s += dl[(i, k)] * m[(k, l)];
                }
            }
            s
        })
        .collect()
}

/// Selects how the noise-induced drift is computed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DriftRoute {
    /// `S = Q : Lyap(γ̃, Σ)`.
    General,
    /// `S^i = k_B T Σ_j ∂_j (γ⁻¹)^{ij}`; requires `ψ = 0` and `Σ = 2 k_B T γ`.
    FluctuationDissipation,
}

/// Temperature for the fluctuation–dissipation route: the model's own value
/// if it declares one, otherwise `tr Σ / (2 tr γ)` after checking that
/// `Σ = 2 k_B T γ` actually holds.
pub fn fd_temperature(model: &ModelSpec, t: f64, q: &[f64], gamma: &Matrix, sigma_sq: &Matrix) -> Result<f64> {
    if !model.structure().psi_zero {
        return Err(Error::WrongSpecialization { kind: "fluct-diss", reason: "psi is not identically zero".into() });
    }
    if let Some(kt) = model.temperature(t, q) {
        return Ok(kt);
    }
    let kt = sigma_sq.trace() / (2.0 * gamma.trace());
    let resid = (sigma_sq - &gamma.scale(2.0 * kt)).frobenius();
    if resid > 1e-12 * sigma_sq.frobenius().max(f64::MIN_POSITIVE) {
        return Err(Error::WrongSpecialization {
            kind: "fluct-diss",
            reason: format!("sigma sigma^T is not proportional to gamma (residual {resid:.3e})"),
        });
    }
    Ok(kt)
}

/// Noise-induced drift `S^i = Q^{ikl} J_{kl}` with `γ̃J + Jγ̃ᵀ = Σ`.
pub fn noise_induced_drift(model: &ModelSpec, t: f64, q: &[f64]) -> Result<Vector> {
    noise_induced_drift_via(model, t, q, DriftRoute::General)
}

pub fn noise_induced_drift_via(model: &ModelSpec, t: f64, q: &[f64], route: DriftRoute) -> Result<Vector> {
    let b = tilde_gamma_bundle(model, t, q, Order::First)?;
    let sigma = model.sigma(t, q);
    ensure_finite_matrix(&sigma, "sigma", t)?;
    let sigma_sq = sigma.mul_transpose(&sigma);
    match route {
        DriftRoute::General => {
            let op = LyapunovOperator::new(&b.value)?;
            Ok(q_contract(&b.inv_dq, &op.solve(&sigma_sq)))
        }
        DriftRoute::FluctuationDissipation => {
            let kt = fd_temperature(model, t, q, &b.value, &sigma_sq)?;
            Ok(fluct_diss_drift(&b.inv_dq, kt))
        }
    }
}

/// `k_B T Σ_j ∂_j (γ⁻¹)^{ij}`.
pub(crate) fn fluct_diss_drift(inv_dq: &[Matrix], kt: f64) -> Vector {
    let n = inv_dq.len();
    (0..n).map(|i| kt * (0..n).map(|j| inv_dq[j][(i, j)]).sum::<f64>()).collect()
}

/// Three-index tensor stored as `n` symmetric slices: `slices[i][(a,b)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    pub slices: Slices,
}

impl Tensor3 {
    pub fn zeros(n: usize) -> Self {
        Tensor3 { slices: smallvec![Matrix::zeros(n, n); n] }
    }

    pub fn dim(&self) -> usize {
        self.slices.len()
    }

    /// `v_i = T^{iab} A_{ab}`.
    pub fn contract(&self, a: &Matrix) -> Vector {
        self.slices.iter().map(|s| s.contract(a)).collect()
    }

    /// `v_i = T^{iab} u_a u_b`.
    pub fn quadratic(&self, u: &[f64]) -> Vector {
        self.slices.iter().map(|s| vec_ops::dot(u, &s.mul_vec(u))).collect()
    }

    /// `v_i = T^{iab}(u_a w_b + w_a u_b)`.
    pub fn symmetric_pair(&self, u: &[f64], w: &[f64]) -> Vector {
        self.slices.iter().map(|s| 2.0 * vec_ops::dot(u, &s.mul_vec(w))).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.slices.iter().map(Matrix::max_abs).fold(0.0, f64::max)
    }

    pub fn sub(&self, other: &Tensor3) -> Tensor3 {
        Tensor3 { slices: self.slices.iter().zip(&other.slices).map(|(a, b)| a - b).collect() }
    }
}

/// The contracted tensor `T^{iab} = Q^{ikl} G_{kl}^{ab}` (symmetric in
/// `a,b`), its spatial derivatives `dq[c] = ∂_c T` and `dt = ∂_t T`.
#[derive(Clone, Debug)]
pub struct QgTensor {
    pub value: Tensor3,
    pub dq: SmallVec<[Tensor3; 2]>,
    pub dt: Tensor3,
    pub provenance: Provenance,
}

fn sym_basis(n: usize, a: usize, b: usize) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    if a == b {
        m[(a, a)] = 1.0;
    } else {
        m[(a, b)] = 0.5;
        m[(b, a)] = 0.5;
    }
    m
}

/// Assembles `T`, `∂_q T` and `∂_t T` from a second-order bundle.
pub(crate) fn qg_from_bundle(b: &DerivativeBundle, op: &LyapunovOperator) -> QgTensor {
    let n = b.value.order();
    let mut value = Tensor3::zeros(n);
    let mut dq: SmallVec<[Tensor3; 2]> = smallvec![Tensor3::zeros(n); n];
    let mut dt = Tensor3::zeros(n);
    let d2_by_c: SmallVec<[Slices; 2]> =
        (0..n).map(|c| (0..n).map(|l| b.inv_dqdq[l * n + c].clone()).collect()).collect();
    for a in 0..n {
        for bb in a..n {
            let m = op.solve(&sym_basis(n, a, bb));
            let put = |t: &mut Tensor3, v: &[f64]| {
                for (i, vi) in v.iter().enumerate() {
                    t.slices[i][(a, bb)] = *vi;
                    t.slices[i][(bb, a)] = *vi;
                }
            };
            put(&mut value, &q_contract(&b.inv_dq, &m));
            for c in 0..n {
                let dm = op.solve_derivative(&b.dq[c], None, &m);
                let v = vec_ops::add(&q_contract(&d2_by_c[c], &m), &q_contract(&b.inv_dq, &dm));
                put(&mut dq[c], &v);
            }
            let dm = op.solve_derivative(&b.dt, None, &m);
            put(&mut dt, &vec_ops::add(&q_contract(&b.inv_dtdq, &m), &q_contract(&b.inv_dq, &dm)));
        }
    }
    QgTensor { value, dq, dt, provenance: b.provenance }
}

/// `T = Q·G` and its derivatives via differentiated Lyapunov solves.
pub fn qg_tensor(model: &ModelSpec, t: f64, q: &[f64]) -> Result<QgTensor> {
    let b = tilde_gamma_bundle(model, t, q, Order::Second)?;
    let op = LyapunovOperator::new(&b.value)?;
    Ok(qg_from_bundle(&b, &op))
}

/// Everything the integrators read at one `(t, q)`.
#[derive(Clone, Debug)]
pub struct PointData {
    pub t: f64,
    pub q: Vector,
    pub bundle: DerivativeBundle,
    pub force: Vector,
    pub sigma: Matrix,
    /// `S`
    pub noise_drift: Vector,
    /// `γ̃⁻¹F + S`
    pub drift: Vector,
    /// `γ̃⁻¹σ`
    pub diffusion: Matrix,
    /// Present when evaluated with [`Order::Second`].
    pub qg: Option<QgTensor>,
}

/// Evaluates the slow-equation coefficients at `(t, q)`; with
/// [`Order::Second`] also the tensor data the remainder needs.
pub fn eval_point(model: &ModelSpec, t: f64, q: &[f64], order: Order, route: DriftRoute) -> Result<PointData> {
    let bundle = tilde_gamma_bundle(model, t, q, order)?;
    let force = total_force(model, t, q)?;
    let sigma = model.sigma(t, q);
    ensure_finite_matrix(&sigma, "sigma", t)?;
    let sigma_sq = sigma.mul_transpose(&sigma);
    let needs_op = route == DriftRoute::General || order == Order::Second;
    let op = if needs_op { Some(LyapunovOperator::new(&bundle.value)?) } else { None };
    let noise_drift = match route {
        DriftRoute::General => q_contract(&bundle.inv_dq, &op.as_ref().unwrap().solve(&sigma_sq)),
        DriftRoute::FluctuationDissipation => {
            fluct_diss_drift(&bundle.inv_dq, fd_temperature(model, t, q, &bundle.value, &sigma_sq)?)
        }
    };
    let drift = vec_ops::add(&bundle.inv.mul_vec(&force), &noise_drift);
    ensure_finite_vec(&drift, "drift", t)?;
    let diffusion = &bundle.inv * &sigma;
    let qg = if order == Order::Second { Some(qg_from_bundle(&bundle, op.as_ref().unwrap())) } else { None };
    Ok(PointData { t, q: q.iter().copied().collect(), bundle, force, sigma, noise_drift, drift, diffusion, qg })
}

#[cfg(test)]
mod tests {
    use super::gallery::{MagneticTwoD, OuConst, ScalarExp, ScalarSin};
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_sin() -> ModelSpec {
        ModelSpec::new(ScalarSin::default())
    }

    #[test]
    fn psi_zero_gives_plain_gamma() {
        let m = scalar_sin();
        let b = eval_tilde_gamma(&m, 0.0, &[0.7]).unwrap();
        assert_eq!(b.value, m.gamma(0.0, &[0.7]));
    }

    #[test]
    fn magnetic_antisymmetric_part() {
        let model = MagneticTwoD { g0: 1.0, g1: 0.0, b: 0.8, kappa: 1.0, sigma: 1.0 };
        let m = ModelSpec::new(model);
        let b = eval_tilde_gamma(&m, 0.0, &[0.3, -0.4]).unwrap();
        let want = Matrix::from_rows(&[&[1.0, -0.8], &[0.8, 1.0]]);
        assert!((&b.value - &want).max_abs() < 1e-15, "{:?}", b.value);
        let anti = b.value.antisym_part();
        assert!((&anti + &anti.transpose()).max_abs() < 1e-14);
        assert!((&b.value.sym_part() - &m.gamma(0.0, &[0.3, -0.4])).max_abs() < 1e-12);
    }

    #[test]
    fn inverse_identity_holds() {
        let m = ModelSpec::new(MagneticTwoD::default());
        let b = eval_tilde_gamma(&m, 0.0, &[1.1, 0.2]).unwrap();
        assert!((&(&b.inv * &b.value) - &Matrix::identity(2)).max_abs() < 1e-10);
    }

    #[test]
    fn force_of_quadratic_potential() {
        let m = ModelSpec::new(OuConst { n: 1, gamma: 1.0, kappa: 1.0, sigma: 1.0 });
        assert_eq!(total_force(&m, 0.0, &[3.0]).unwrap().as_slice(), &[-3.0]);
        let z = ModelSpec::new(OuConst { n: 2, gamma: 1.0, kappa: 0.0, sigma: 0.0 });
        assert_eq!(total_force(&z, 0.0, &[3.0, 1.0]).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn drift_scalar_sin_at_origin() {
        let s = noise_induced_drift(&scalar_sin(), 0.0, &[0.0]).unwrap();
        assert_relative_eq!(s[0], -0.125, max_relative = 1e-12);
        let s2 = noise_induced_drift_via(&scalar_sin(), 0.0, &[0.0], DriftRoute::FluctuationDissipation).unwrap();
        assert_relative_eq!(s2[0], -0.125, max_relative = 1e-12);
    }

    #[test]
    fn drift_scalar_exp_at_origin() {
        let m = ModelSpec::new(ScalarExp { gamma0: 1.0, beta: 1.0, sigma: 2f64.sqrt(), kappa: 1.0, lambda: 0.05 });
        let s = noise_induced_drift(&m, 0.0, &[0.0]).unwrap();
        assert_relative_eq!(s[0], -1.0, max_relative = 1e-12);
    }

    #[test]
    fn constant_gamma_has_no_drift_or_tensor() {
        let m = ModelSpec::new(OuConst { n: 2, gamma: 1.5, kappa: 1.0, sigma: 0.7 });
        assert_eq!(vec_ops::norm(&noise_induced_drift(&m, 0.0, &[0.2, 0.1]).unwrap()), 0.0);
        let t = qg_tensor(&m, 0.0, &[0.2, 0.1]).unwrap();
        assert_eq!(t.value.max_abs(), 0.0);
        assert!(t.dq.iter().all(|d| d.max_abs() == 0.0));
    }

    #[test]
    fn scalar_tensor_value() {
        let t = qg_tensor(&scalar_sin(), 0.0, &[0.0]).unwrap();
        assert_relative_eq!(t.value.slices[0][(0, 0)], -0.0625, max_relative = 1e-12);
    }

    #[test]
    fn tensor_derivative_matches_differences() {
        let m = ModelSpec::new(MagneticTwoD::default());
        let q = [0.4, -0.9];
        let t = qg_tensor(&m, 0.0, &q).unwrap();
        let h = 1e-5;
        for c in 0..2 {
            let mut qp = q;
            qp[c] += h;
            let mut qm = q;
            qm[c] -= h;
            let fd = qg_tensor(&m, 0.0, &qp).unwrap().value.sub(&qg_tensor(&m, 0.0, &qm).unwrap().value);
            for i in 0..2 {
                let want = fd.slices[i].scale(0.5 / h);
                let got = &t.dq[c].slices[i];
                let err = (&want - got).frobenius() / want.frobenius().max(got.frobenius()).max(1.0);
                assert!(err < 1e-4, "c={c} i={i}: {err}");
            }
        }
    }

    #[test]
    fn finite_difference_fallback_agrees_with_analytic() {
        struct Bare(ScalarSin);
        impl Coefficients for Bare {
            fn name(&self) -> &str {
                "bare"
            }
            fn dim(&self) -> usize {
                1
            }
            fn noise_dim(&self) -> usize {
                1
            }
            fn lambda(&self) -> f64 {
                self.0.lambda()
            }
            fn gamma(&self, t: f64, q: &[f64]) -> Matrix {
                self.0.gamma(t, q)
            }
            fn sigma(&self, t: f64, q: &[f64]) -> Matrix {
                self.0.sigma(t, q)
            }
            fn potential(&self, t: f64, q: &[f64]) -> f64 {
                self.0.potential(t, q)
            }
            fn grad_potential(&self, t: f64, q: &[f64]) -> Vector {
                self.0.grad_potential(t, q)
            }
        }
        let fd = ModelSpec::new(Bare(ScalarSin::default()));
        assert!(!fd.is_analytic(Supplier::GammaDq));
        let an = scalar_sin();
        let q = [0.37];
        let a = qg_tensor(&an, 0.0, &q).unwrap();
        let b = qg_tensor(&fd, 0.0, &q).unwrap();
        assert_eq!(b.provenance, Provenance::FiniteDifference);
        assert_relative_eq!(a.value.slices[0][(0, 0)], b.value.slices[0][(0, 0)], max_relative = 1e-8);
        assert_relative_eq!(a.dq[0].slices[0][(0, 0)], b.dq[0].slices[0][(0, 0)], max_relative = 1e-5);
    }
}
