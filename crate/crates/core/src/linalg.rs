//! Small dense linear algebra: the matrix type shared across the crate, LU
//! solves, matrix exponentials and the Lyapunov solves that stand in for the
//! four-index `G` tensor.
//!
//! Everything here targets tiny systems (order ≤ 16) evaluated millions of
//! times inside Monte Carlo loops, so storage is inline for order ≤ 4 and
//! nothing allocates on the hot path for the low-dimensional models.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use smallvec::{smallvec, SmallVec};

use crate::error::{Error, Result};

/// Largest matrix order the kernels accept.
pub const MAX_ORDER: usize = 16;

/// Dense real vector with inline storage for up to four entries.
pub type Vector = SmallVec<[f64; 4]>;

/// Row-major dense matrix. Most uses are square; `sigma` is `n × k`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Storage,
}

/// Square matrices are plain `Matrix` values; the alias documents intent.
pub type SquareMatrix = Matrix;

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// Matrix entries; orders up to 2 stay inline.
type Storage = SmallVec<[f64; 4]>;

/// Zeroed storage without going through the element-wise extend path.
#[inline]
fn zeroed(len: usize) -> Storage {
    if len <= 4 {
        Storage::from_buf_and_len([0.0; 4], len)
    } else {
        smallvec![0.0; len]
    }
}

#[inline]
fn map_data(src: &[f64], f: impl Fn(f64) -> f64) -> Storage {
    let mut d = zeroed(src.len());
    for (o, &v) in d.iter_mut().zip(src) {
        *o = f(v);
    }
    d
}

#[inline]
fn zip_data(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Storage {
    let mut d = zeroed(a.len());
    for ((o, &x), &y) in d.iter_mut().zip(a).zip(b) {
        *o = f(x, y);
    }
    d
}

impl Matrix {
    #[inline]
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: zeroed(rows * cols) }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn scalar(n: usize, value: f64) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = value;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from row slices; all rows must have equal length.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = SmallVec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, values: &[f64]) -> Self {
        assert_eq!(values.len(), rows * cols);
        Matrix { rows, cols, data: SmallVec::from_slice(values) }
    }

    #[inline]
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = zeroed(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data[i * cols + j] = f(i, j);
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Order of a square matrix.
    #[inline]
    pub fn order(&self) -> usize {
        debug_assert!(self.is_square());
        self.rows
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: map_data(&self.data, |v| v * s) }
    }

    pub fn sym_part(&self) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }

    pub fn antisym_part(&self) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| 0.5 * (self[(i, j)] - self[(j, i)]))
    }

    /// Largest entrywise deviation from symmetry.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    #[inline]
    pub fn mul_vec(&self, v: &[f64]) -> Vector {
        debug_assert_eq!(self.cols, v.len());
        let mut out = vec_ops::zeros(self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            *o = vec_ops::dot(self.row(i), v);
        }
        out
    }

    /// `self · otherᵀ`, used for `σσᵀ` without materializing the transpose.
    pub fn mul_transpose(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, other.cols);
        Matrix::from_fn(self.rows, other.rows, |i, j| {
            self.row(i).iter().zip(other.row(j)).map(|(a, b)| a * b).sum()
        })
    }

    /// `u vᵀ + v uᵀ`.
    pub fn sym_outer(u: &[f64], v: &[f64]) -> Matrix {
        let n = u.len();
        Matrix::from_fn(n, n, |i, j| u[i] * v[j] + v[i] * u[j])
    }

    pub fn outer(u: &[f64], v: &[f64]) -> Matrix {
        Matrix::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
    }

    /// Frobenius inner product `Σ_ij a_ij b_ij`.
    pub fn contract(&self, other: &Matrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// True when the symmetric matrix `self - shift·I` admits a Cholesky factor.
    pub fn is_positive_definite_shifted(&self, shift: f64) -> bool {
        let n = self.order();
        let mut l = [0.0f64; MAX_ORDER * MAX_ORDER];
        for j in 0..n {
            let mut d = self[(j, j)] - shift;
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) {
                return false;
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = 0.5 * (self[(i, j)] + self[(j, i)]);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        true
    }

    pub fn inverse(&self) -> Result<Matrix> {
        let n = self.order();
        if n == 1 {
            let a = self.data[0];
            if a == 0.0 || !a.is_finite() {
                return Err(Error::SingularMatrix("inverse"));
            }
            return Ok(Matrix::scalar(1, 1.0 / a));
        }
        let lu = Lu::factor(n, self.data.iter().copied().collect()).ok_or(Error::SingularMatrix("inverse"))?;
        let mut out = Matrix::zeros(n, n);
        let mut col: SmallVec<[f64; 16]> = smallvec![0.0; n];
        for j in 0..n {
            col.iter_mut().for_each(|c| *c = 0.0);
            col[j] = 1.0;
            lu.solve_in_place(&mut col);
            for i in 0..n {
                out[(i, j)] = col[i];
            }
        }
        Ok(out)
    }

    /// Spectral (ℓ²) operator norm.
    pub fn norm_two(&self) -> f64 {
        if self.rows == 1 && self.cols == 1 {
            return self.data[0].abs();
        }
        let m = nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data);
        m.singular_values().max()
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn sym_eigenvalues(&self) -> Vec<f64> {
        let s = self.sym_part();
        let m = nalgebra::DMatrix::from_row_slice(s.rows, s.cols, &s.data);
        let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, rhs.rows);
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.data[k * rhs.cols + j];
                }
            }
        }
        out
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        debug_assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: zip_data(&self.data, &rhs.data, |a, b| a + b),
        }
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        debug_assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: zip_data(&self.data, &rhs.data, |a, b| a - b),
        }
    }
}

impl Neg for &Matrix {
    type Output = Matrix;
    fn neg(self) -> Matrix {
        self.scale(-1.0)
    }
}

/// Vector helpers on plain slices.
pub mod vec_ops {
    use super::Vector;

    #[inline]
    pub fn add(a: &[f64], b: &[f64]) -> Vector {
        let mut out = zeros(a.len());
        for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
            *o = x + y;
        }
        out
    }

    #[inline]
    pub fn sub(a: &[f64], b: &[f64]) -> Vector {
        let mut out = zeros(a.len());
        for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
            *o = x - y;
        }
        out
    }

    #[inline]
    pub fn scale(a: &[f64], s: f64) -> Vector {
        let mut out = zeros(a.len());
        for (o, x) in out.iter_mut().zip(a) {
            *o = x * s;
        }
        out
    }

    /// `a += s·b`
    #[inline]
    pub fn axpy(a: &mut [f64], s: f64, b: &[f64]) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += s * y;
        }
    }

    #[inline]
    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    pub fn norm(a: &[f64]) -> f64 {
        dot(a, a).sqrt()
    }

    #[inline]
    pub fn zeros(n: usize) -> Vector {
        if n <= 4 {
            Vector::from_buf_and_len([0.0; 4], n)
        } else {
            smallvec::smallvec![0.0; n]
        }
    }

    pub fn is_finite(a: &[f64]) -> bool {
        a.iter().all(|v| v.is_finite())
    }
}

/// LU factorization with partial pivoting of a dense row-major system.
#[derive(Clone, Debug)]
pub(crate) struct Lu {
    n: usize,
    lu: SmallVec<[f64; 16]>,
    piv: SmallVec<[usize; 4]>,
}

impl Lu {
    pub(crate) fn factor(n: usize, mut a: SmallVec<[f64; 16]>) -> Option<Lu> {
        let mut piv: SmallVec<[usize; 4]> = (0..n).collect();
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(scale > 0.0) || !scale.is_finite() {
            return None;
        }
        for k in 0..n {
            let mut p = k;
            let mut best = a[k * n + k].abs();
            for i in (k + 1)..n {
                let v = a[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= scale * 1e-14 {
                return None;
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                piv.swap(k, p);
            }
            let d = a[k * n + k];
            for i in (k + 1)..n {
                let f = a[i * n + k] / d;
                a[i * n + k] = f;
                if f != 0.0 {
                    for j in (k + 1)..n {
                        a[i * n + j] -= f * a[k * n + j];
                    }
                }
            }
        }
        Some(Lu { n, lu: a, piv })
    }

    pub(crate) fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let mut x: SmallVec<[f64; 16]> = self.piv.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        b.copy_from_slice(&x);
    }
}

// Padé coefficients for orders 3, 5, 7, 9 and 13 (Higham 2005).
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [f64; 5] = [
    1.495585217958292e-2,
    2.539398330063230e-1,
    9.504178996162932e-1,
    2.097847961257068e0,
    5.371920351148152e0,
];

/// `e^{sA}` by scaling and squaring with a Padé kernel.
pub fn mat_exp(a: &Matrix, s: f64) -> Result<Matrix> {
    let n = a.order();
    if n > MAX_ORDER {
        return Err(Error::Config(format!("matrix order {n} exceeds {MAX_ORDER}")));
    }
    if n == 1 {
        let v = (s * a.data[0]).exp();
        return if v.is_finite() { Ok(Matrix::scalar(1, v)) } else { Err(Error::Range((s * a.data[0]).abs())) };
    }
    let sa = a.scale(s);
    let norm = sa.norm_one();
    if !norm.is_finite() {
        return Err(Error::Range(norm));
    }
    if norm == 0.0 {
        return Ok(Matrix::identity(n));
    }
    let out = if norm <= THETA[0] {
        pade_low(&sa, &PADE3)
    } else if norm <= THETA[1] {
        pade_low(&sa, &PADE5)
    } else if norm <= THETA[2] {
        pade_low(&sa, &PADE7)
    } else if norm <= THETA[3] {
        pade_low(&sa, &PADE9)
    } else {
        let squarings = (norm / THETA[4]).log2().ceil().max(0.0) as i32;
        let scaled = sa.scale(2f64.powi(-squarings));
        let mut x = pade13(&scaled)?;
        for _ in 0..squarings {
            x = &x * &x;
        }
        x
    };
    if out.is_finite() {
        Ok(out)
    } else {
        Err(Error::Range(norm))
    }
}

fn pade_low(a: &Matrix, b: &[f64]) -> Matrix {
    let n = a.order();
    let a2 = a * a;
    let mut u_inner = Matrix::scalar(n, b[1]);
    let mut v = Matrix::scalar(n, b[0]);
    let mut pow = Matrix::identity(n);
    let mut j = 2;
    while j < b.len() {
        pow = &pow * &a2;
        v = &v + &pow.scale(b[j]);
        u_inner = &u_inner + &pow.scale(b[j + 1]);
        j += 2;
    }
    let u = a * &u_inner;
    pade_solve(&u, &v).expect("Padé denominator is well conditioned below theta")
}

fn pade13(a: &Matrix) -> Result<Matrix> {
    let b = &PADE13;
    let n = a.order();
    let id = Matrix::identity(n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_hi = &(&a6.scale(b[13]) + &a4.scale(b[11])) + &a2.scale(b[9]);
    let u_lo = &(&(&a6.scale(b[7]) + &a4.scale(b[5])) + &a2.scale(b[3])) + &id.scale(b[1]);
    let u = a * &(&(&a6 * &u_hi) + &u_lo);
    let v_hi = &(&a6.scale(b[12]) + &a4.scale(b[10])) + &a2.scale(b[8]);
    let v_lo = &(&(&a6.scale(b[6]) + &a4.scale(b[4])) + &a2.scale(b[2])) + &id.scale(b[0]);
    let v = &(&a6 * &v_hi) + &v_lo;
    pade_solve(&u, &v)
}

/// Solves `(V - U) X = (V + U)`.
fn pade_solve(u: &Matrix, v: &Matrix) -> Result<Matrix> {
    let n = u.order();
    let p = v - u;
    let q = v + u;
    let lu = Lu::factor(n, SmallVec::from_slice(&p.data)).ok_or(Error::SingularMatrix("Padé denominator"))?;
    let mut out = Matrix::zeros(n, n);
    let mut col: SmallVec<[f64; 16]> = smallvec![0.0; n];
    for j in 0..n {
        for i in 0..n {
            col[i] = q[(i, j)];
        }
        lu.solve_in_place(&mut col);
        for i in 0..n {
            out[(i, j)] = col[i];
        }
    }
    Ok(out)
}

/// `d(A⁻¹) = −A⁻¹ dA A⁻¹`.
pub fn inv_derivative(a: &Matrix, da: &Matrix) -> Result<Matrix> {
    let inv = a.inverse()?;
    Ok(inv_derivative_with(&inv, da))
}

pub(crate) fn inv_derivative_with(inv: &Matrix, da: &Matrix) -> Matrix {
    -&(&(inv * da) * inv)
}

/// Mixed second derivative of `A⁻¹` from the first partials `da_i`, `da_j`
/// and the mixed partial `d2a`.
pub(crate) fn inv_second_derivative_with(inv: &Matrix, da_i: &Matrix, da_j: &Matrix, d2a: &Matrix) -> Matrix {
    let ai = &(inv * da_i) * inv;
    let aj = &(inv * da_j) * inv;
    let t1 = &ai * &(da_j * inv);
    let t2 = &aj * &(da_i * inv);
    let t3 = &(inv * d2a) * inv;
    &(&t1 + &t2) - &t3
}

/// Pre-factored operator `M ↦ ΓM + MΓᵀ` restricted to symmetric `M`.
///
/// The symmetric unknowns `M_ij, i ≤ j` are packed row by row; the system is
/// `n(n+1)/2` square and factored once per `Γ`, so one evaluation point can
/// serve every right-hand side it needs.
#[derive(Clone, Debug)]
pub struct LyapunovOperator {
    n: usize,
    lu: Lu,
}

#[inline]
fn packed(n: usize, i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    a * n - a * (a + 1) / 2 + b
}

impl LyapunovOperator {
    pub fn new(gamma: &Matrix) -> Result<Self> {
        let n = gamma.order();
        if n > MAX_ORDER {
            return Err(Error::Config(format!("matrix order {n} exceeds {MAX_ORDER}")));
        }
        if !gamma.is_finite() {
            return Err(Error::NoUniqueSolution("non-finite coefficient matrix"));
        }
        if !gamma.sym_part().is_positive_definite_shifted(0.0) {
            return Err(Error::NoUniqueSolution("symmetric part is not positive definite"));
        }
        let p = n * (n + 1) / 2;
        let mut sys: SmallVec<[f64; 16]> = smallvec![0.0; p * p];
        for i in 0..n {
            for j in i..n {
                let row = packed(n, i, j);
                for k in 0..n {
                    sys[row * p + packed(n, k, j)] += gamma[(i, k)];
                    sys[row * p + packed(n, i, k)] += gamma[(j, k)];
                }
            }
        }
        let lu = Lu::factor(p, sys).ok_or(Error::NoUniqueSolution("singular Lyapunov operator"))?;
        Ok(LyapunovOperator { n, lu })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// Symmetric `M` with `ΓM + MΓᵀ = sym`; only the symmetric part of `sym` is used.
    pub fn solve(&self, sym: &Matrix) -> Matrix {
        let n = self.n;
        let p = n * (n + 1) / 2;
        let mut rhs: SmallVec<[f64; 16]> = smallvec![0.0; p];
        for i in 0..n {
            for j in i..n {
                rhs[packed(n, i, j)] = 0.5 * (sym[(i, j)] + sym[(j, i)]);
            }
        }
        self.lu.solve_in_place(&mut rhs);
        Matrix::from_fn(n, n, |i, j| rhs[packed(n, i, j)])
    }

    /// Derivative of the solution when `Γ` and the right-hand side move along
    /// `dgamma`, `dsym`, given the base solution `m`.
    pub fn solve_derivative(&self, dgamma: &Matrix, dsym: Option<&Matrix>, m: &Matrix) -> Matrix {
        let gm = dgamma * m;
        let mut rhs = -&(&gm + &gm.transpose());
        if let Some(ds) = dsym {
            rhs = &rhs + ds;
        }
        self.solve(&rhs)
    }
}

/// Unique symmetric `M` with `ΓM + MΓᵀ = sym`.
pub fn solve_lyapunov(gamma: &Matrix, sym: &Matrix) -> Result<Matrix> {
    Ok(LyapunovOperator::new(gamma)?.solve(sym))
}

/// `dM` solving `Γ dM + dM Γᵀ = dSym − dΓ M − M dΓᵀ`.
pub fn lyap_derivative(gamma: &Matrix, dgamma: &Matrix, sym: &Matrix, dsym: &Matrix, m: &Matrix) -> Result<Matrix> {
    let _ = sym;
    Ok(LyapunovOperator::new(gamma)?.solve_derivative(dgamma, Some(dsym), m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
        (a - b).max_abs() <= tol
    }

    #[test]
    fn exp_zero_is_identity() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(mat_exp(&a, 0.0).unwrap(), Matrix::identity(2));
    }

    #[test]
    fn exp_diagonal() {
        let a = Matrix::diag(&[-1.0, -2.0]);
        let e = mat_exp(&a, 1.0).unwrap();
        assert_relative_eq!(e[(0, 0)], (-1.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(e[(1, 1)], (-2.0f64).exp(), max_relative = 1e-14);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn exp_rotation_generator() {
        // e^{θJ} for the rotation generator J is a rotation by θ.
        let j = Matrix::from_rows(&[&[0.0, -1.0], &[1.0, 0.0]]);
        for &theta in &[0.001, 0.3, 2.0, 7.5, 40.0] {
            let e = mat_exp(&j, theta).unwrap();
            let want = Matrix::from_rows(&[&[theta.cos(), -theta.sin()], &[theta.sin(), theta.cos()]]);
            assert!(close(&e, &want, 1e-12 * theta.max(1.0)), "theta={theta}: {e:?}");
        }
    }

    #[test]
    fn exp_overflow_is_range_error() {
        let a = Matrix::diag(&[1.0, 2.0]);
        assert!(matches!(mat_exp(&a, 1e4), Err(Error::Range(_))));
        assert!(matches!(mat_exp(&Matrix::scalar(1, 1.0), 1e4), Err(Error::Range(_))));
    }

    #[test]
    fn lyapunov_small_cases() {
        let m = solve_lyapunov(&Matrix::scalar(1, 1.0), &Matrix::scalar(1, 2.0)).unwrap();
        assert_relative_eq!(m[(0, 0)], 1.0);
        let m = solve_lyapunov(&Matrix::identity(2), &Matrix::identity(2)).unwrap();
        assert!(close(&m, &Matrix::scalar(2, 0.5), 1e-15));
    }

    #[test]
    fn lyapunov_hand_derived_2x2() {
        let g = Matrix::from_rows(&[&[2.0, 1.0], &[-1.0, 1.0]]);
        let m = solve_lyapunov(&g, &Matrix::identity(2)).unwrap();
        let want = Matrix::from_rows(&[&[5.0 / 18.0, -1.0 / 18.0], &[-1.0 / 18.0, 4.0 / 9.0]]);
        assert!(close(&m, &want, 1e-12), "{m:?}");
    }

    #[test]
    fn lyapunov_rejects_indefinite() {
        let g = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, -0.5]]);
        assert!(matches!(solve_lyapunov(&g, &Matrix::identity(2)), Err(Error::NoUniqueSolution(_))));
    }

    #[test]
    fn inverse_derivative_scalar() {
        let d = inv_derivative(&Matrix::scalar(1, 2.0), &Matrix::scalar(1, 1.0)).unwrap();
        assert_relative_eq!(d[(0, 0)], -0.25);
        let d = inv_derivative(&Matrix::identity(3), &Matrix::zeros(3, 3)).unwrap();
        assert_eq!(d.max_abs(), 0.0);
    }

    #[test]
    fn singular_inverse() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(matches!(a.inverse(), Err(Error::SingularMatrix(_))));
        assert!(inv_derivative(&a, &Matrix::identity(2)).is_err());
    }

    #[test]
    fn lyap_derivative_scalar() {
        let g = Matrix::scalar(1, 1.0);
        let sym = Matrix::scalar(1, 2.0);
        let m = solve_lyapunov(&g, &sym).unwrap();
        let dm = lyap_derivative(&g, &Matrix::scalar(1, 1.0), &sym, &Matrix::zeros(1, 1), &m).unwrap();
        assert_relative_eq!(dm[(0, 0)], -1.0);
        let dm = lyap_derivative(&g, &Matrix::zeros(1, 1), &sym, &Matrix::zeros(1, 1), &m).unwrap();
        assert_eq!(dm[(0, 0)], 0.0);
    }

    #[test]
    fn packed_index_covers_upper_triangle() {
        let n = 5;
        let mut seen = vec![false; n * (n + 1) / 2];
        for i in 0..n {
            for j in i..n {
                let k = packed(n, i, j);
                assert!(!seen[k]);
                seen[k] = true;
                assert_eq!(k, packed(n, j, i));
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }
}
