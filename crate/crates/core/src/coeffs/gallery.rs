//! Builtin models, selectable by name with a flat parameter map.

use std::collections::{BTreeMap, BTreeSet};

use smallvec::smallvec;

use super::{Coefficients, ModelSpec, Slices, Structure};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

pub const BUILTIN_NAMES: [&str; 5] = ["scalar-sin", "scalar-exp", "ou-const", "magnetic-2d", "double-well"];

/// `γ = γ₀ + γ₁ sin q`, constant `σ`, `V = κq²/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarSin {
    pub gamma0: f64,
    pub gamma1: f64,
    pub sigma: f64,
    pub kappa: f64,
}

impl Default for ScalarSin {
    fn default() -> Self {
        ScalarSin { gamma0: 2.0, gamma1: 1.0, sigma: 2f64.sqrt(), kappa: 1.0 }
    }
}

fn scalar(v: f64) -> Matrix {
    Matrix::scalar(1, v)
}

fn one(v: f64) -> Slices {
    smallvec![scalar(v)]
}

impl Coefficients for ScalarSin {
    fn name(&self) -> &str {
        "scalar-sin"
    }
    fn dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn lambda(&self) -> f64 {
        self.gamma0 - self.gamma1.abs()
    }
    fn gamma(&self, _t: f64, q: &[f64]) -> Matrix {
        scalar(self.gamma0 + self.gamma1 * q[0].sin())
    }
    fn sigma(&self, _t: f64, _q: &[f64]) -> Matrix {
        scalar(self.sigma)
    }
    fn potential(&self, _t: f64, q: &[f64]) -> f64 {
        0.5 * self.kappa * q[0] * q[0]
    }
    fn grad_potential(&self, _t: f64, q: &[f64]) -> Vector {
        smallvec![self.kappa * q[0]]
    }
    fn structure(&self) -> Structure {
        Structure { psi_zero: true, scalar_gamma: true, scalar_sigma: true, gamma_q_independent: false, time_independent: true }
    }
    fn temperature(&self, t: f64, q: &[f64]) -> Option<f64> {
        Some(self.sigma * self.sigma / (2.0 * self.gamma(t, q)[(0, 0)]))
    }
    fn gamma_dq(&self, _t: f64, q: &[f64]) -> Option<Slices> {
        Some(one(self.gamma1 * q[0].cos()))
    }
    fn gamma_dqdq(&self, _t: f64, q: &[f64]) -> Option<Slices> {
        Some(one(-self.gamma1 * q[0].sin()))
    }
    fn sigma_dq(&self, _t: f64, _q: &[f64]) -> Option<Slices> {
        Some(one(0.0))
    }
}

/// `γ = γ₀ e^{βq}`, constant `σ`, `V = κq²/2`. The drag is not bounded
/// below, so `lambda` is a user-chosen floor for the probed region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarExp {
    pub gamma0: f64,
    pub beta: f64,
    pub sigma: f64,
    pub kappa: f64,
    pub lambda: f64,
}

impl Default for ScalarExp {
    fn default() -> Self {
        ScalarExp { gamma0: 1.0, beta: 1.0, sigma: 2f64.sqrt(), kappa: 1.0, lambda: 0.05 }
    }
}

impl Coefficients for ScalarExp {
    fn name(&self) -> &str {
        "scalar-exp"
    }
    fn dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn lambda(&self) -> f64 {
        self.lambda
    }
    fn gamma(&self, _t: f64, q: &[f64]) -> Matrix {
        scalar(self.gamma0 * (self.beta * q[0]).exp())
    }
    fn sigma(&self, _t: f64, _q: &[f64]) -> Matrix {
        scalar(self.sigma)
    }
    fn potential(&self, _t: f64, q: &[f64]) -> f64 {
        0.5 * self.kappa * q[0] * q[0]
    }
    fn grad_potential(&self, _t: f64, q: &[f64]) -> Vector {
        smallvec![self.kappa * q[0]]
    }
    fn structure(&self) -> Structure {
        Structure { psi_zero: true, scalar_gamma: true, scalar_sigma: true, gamma_q_independent: false, time_independent: true }
    }
    fn temperature(&self, t: f64, q: &[f64]) -> Option<f64> {
        Some(self.sigma * self.sigma / (2.0 * self.gamma(t, q)[(0, 0)]))
    }
    fn gamma_dq(&self, _t: f64, q: &[f64]) -> Option<Slices> {
        Some(one(self.beta * self.gamma0 * (self.beta * q[0]).exp()))
    }
    fn gamma_dqdq(&self, _t: f64, q: &[f64]) -> Option<Slices> {
        Some(one(self.beta * self.beta * self.gamma0 * (self.beta * q[0]).exp()))
    }
    fn sigma_dq(&self, _t: f64, _q: &[f64]) -> Option<Slices> {
        Some(one(0.0))
    }
}

/// Constant `γ = γ₀ I`, `σ = s I` and `V = κ‖q‖²/2` in `n` dimensions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OuConst {
    pub n: usize,
    pub gamma: f64,
    pub kappa: f64,
    pub sigma: f64,
}

impl Default for OuConst {
    fn default() -> Self {
        OuConst { n: 1, gamma: 1.0, kappa: 1.0, sigma: 1.0 }
    }
}

impl Coefficients for OuConst {
    fn name(&self) -> &str {
        "ou-const"
    }
    fn dim(&self) -> usize {
        self.n
    }
    fn noise_dim(&self) -> usize {
        self.n
    }
    fn lambda(&self) -> f64 {
        self.gamma
    }
    fn gamma(&self, _t: f64, _q: &[f64]) -> Matrix {
        Matrix::scalar(self.n, self.gamma)
    }
    fn sigma(&self, _t: f64, _q: &[f64]) -> Matrix {
        Matrix::scalar(self.n, self.sigma)
    }
    fn potential(&self, _t: f64, q: &[f64]) -> f64 {
        0.5 * self.kappa * q.iter().map(|x| x * x).sum::<f64>()
    }
    fn grad_potential(&self, _t: f64, q: &[f64]) -> Vector {
        q.iter().map(|x| self.kappa * x).collect()
    }
    fn structure(&self) -> Structure {
        Structure { psi_zero: true, scalar_gamma: true, scalar_sigma: true, gamma_q_independent: true, time_independent: true }
    }
    fn temperature(&self, _t: f64, _q: &[f64]) -> Option<f64> {
        Some(self.sigma * self.sigma / (2.0 * self.gamma))
    }
    fn sigma_dq(&self, _t: f64, _q: &[f64]) -> Option<Slices> {
        Some(smallvec![Matrix::zeros(self.n, self.n); self.n])
    }
}

/// Two-dimensional model with `γ = diag(g₀ + g₁ sin q¹, g₀ + g₁ sin q²)`,
/// a uniform magnetic field through `ψ = (−Bq²/2, Bq¹/2)`, `V = κ‖q‖²/2`
/// and `σ = s I`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MagneticTwoD {
    pub g0: f64,
    pub g1: f64,
    pub b: f64,
    pub kappa: f64,
    pub sigma: f64,
}

impl Default for MagneticTwoD {
    fn default() -> Self {
        MagneticTwoD { g0: 1.0, g1: 0.5, b: 1.0, kappa: 1.0, sigma: 1.0 }
    }
}

impl Coefficients for MagneticTwoD {
    fn name(&self) -> &str {
        "magnetic-2d"
    }
    fn dim(&self) -> usize {
        2
    }
    fn noise_dim(&self) -> usize {
        2
    }
    fn lambda(&self) -> f64 {
        self.g0 - self.g1.abs()
    }
    fn gamma(&self, _t: f64, q: &[f64]) -> Matrix {
        Matrix::diag(&[self.g0 + self.g1 * q[0].sin(), self.g0 + self.g1 * q[1].sin()])
    }
    fn sigma(&self, _t: f64, _q: &[f64]) -> Matrix {
        Matrix::scalar(2, self.sigma)
    }
    fn potential(&self, _t: f64, q: &[f64]) -> f64 {
        0.5 * self.kappa * (q[0] * q[0] + q[1] * q[1])
    }
    fn grad_potential(&self, _t: f64, q: &[f64]) -> Vector {
        smallvec![self.kappa * q[0], self.kappa * q[1]]
    }
    fn psi(&self, _t: f64, q: &[f64]) -> Vector {
        smallvec![-0.5 * self.b * q[1], 0.5 * self.b * q[0]]
    }
    fn structure(&self) -> Structure {
        Structure { psi_zero: false, scalar_gamma: false, scalar_sigma: true, gamma_q_independent: false, time_independent: true }
    }
    fn gamma_dq(&self, _t: f64, q: &[f64]) -> Option<Slices> {
        Some(smallvec![Matrix::diag(&[self.g1 * q[0].cos(), 0.0]), Matrix::diag(&[0.0, self.g1 * q[1].cos()])])
    }
    fn gamma_dqdq(&self, _t: f64, q: &[f64]) -> Option<Slices> {
        let z = Matrix::zeros(2, 2);
        Some(smallvec![
            Matrix::diag(&[-self.g1 * q[0].sin(), 0.0]),
            z.clone(),
            z,
            Matrix::diag(&[0.0, -self.g1 * q[1].sin()]),
        ])
    }
    fn psi_dq(&self, _t: f64, _q: &[f64]) -> Option<Matrix> {
        Some(Matrix::from_rows(&[&[0.0, -0.5 * self.b], &[0.5 * self.b, 0.0]]))
    }
    fn psi_dqdq(&self, _t: f64, _q: &[f64]) -> Option<Slices> {
        Some(smallvec![Matrix::zeros(2, 2); 2])
    }
    fn psi_dqdqdq(&self, _t: f64, _q: &[f64]) -> Option<Slices> {
        Some(smallvec![Matrix::zeros(2, 2); 4])
    }
    fn sigma_dq(&self, _t: f64, _q: &[f64]) -> Option<Slices> {
        Some(smallvec![Matrix::zeros(2, 2); 2])
    }
}

/// `V = q⁴/4 − q²/2` with `γ = γ₀ + γ₁ sin q` and constant `σ`; the force is
/// unbounded, so studies run it through a cutoff.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DoubleWell {
    pub gamma0: f64,
    pub gamma1: f64,
    pub sigma: f64,
}

impl Default for DoubleWell {
    fn default() -> Self {
        DoubleWell { gamma0: 1.0, gamma1: 0.0, sigma: 2f64.sqrt() }
    }
}

impl Coefficients for DoubleWell {
    fn name(&self) -> &str {
        "double-well"
    }
    fn dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn lambda(&self) -> f64 {
        self.gamma0 - self.gamma1.abs()
    }
    fn gamma(&self, _t: f64, q: &[f64]) -> Matrix {
        scalar(self.gamma0 + self.gamma1 * q[0].sin())
    }
    fn sigma(&self, _t: f64, _q: &[f64]) -> Matrix {
        scalar(self.sigma)
    }
    fn potential(&self, _t: f64, q: &[f64]) -> f64 {
        let x2 = q[0] * q[0];
        0.25 * x2 * x2 - 0.5 * x2
    }
    fn grad_potential(&self, _t: f64, q: &[f64]) -> Vector {
        smallvec![q[0] * q[0] * q[0] - q[0]]
    }
    fn structure(&self) -> Structure {
        Structure {
            psi_zero: true,
            scalar_gamma: true,
            scalar_sigma: true,
            gamma_q_independent: self.gamma1 == 0.0,
            time_independent: true,
        }
    }
    fn temperature(&self, t: f64, q: &[f64]) -> Option<f64> {
        Some(self.sigma * self.sigma / (2.0 * self.gamma(t, q)[(0, 0)]))
    }
    fn gamma_dq(&self, _t: f64, q: &[f64]) -> Option<Slices> {
        Some(one(self.gamma1 * q[0].cos()))
    }
    fn gamma_dqdq(&self, _t: f64, q: &[f64]) -> Option<Slices> {
        Some(one(-self.gamma1 * q[0].sin()))
    }
    fn sigma_dq(&self, _t: f64, _q: &[f64]) -> Option<Slices> {
        Some(one(0.0))
    }
}

/// Reads named parameters and rejects any that were not consumed.
struct Params<'a> {
    model: &'a str,
    map: &'a BTreeMap<String, f64>,
    used: BTreeSet<&'static str>,
}

impl<'a> Params<'a> {
    fn get(&mut self, key: &'static str, default: f64) -> f64 {
        self.used.insert(key);
        self.map.get(key).copied().unwrap_or(default)
    }

    fn finish(self) -> Result<()> {
        for key in self.map.keys() {
            if !self.used.contains(key.as_str()) {
                return Err(Error::Config(format!(
                    "unknown parameter `model.params.{key}` for model `{}`; accepted: {}",
                    self.model,
                    self.used.iter().copied().collect::<Vec<_>>().join(", ")
                )));
            }
        }
        Ok(())
    }
}

/// Instantiates a builtin model.
pub fn builtin(name: &str, params: &BTreeMap<String, f64>) -> Result<ModelSpec> {
    let mut p = Params { model: name, map: params, used: BTreeSet::new() };
    let spec = match name {
        "scalar-sin" => {
            let d = ScalarSin::default();
            let m = ScalarSin {
                gamma0: p.get("gamma0", d.gamma0),
                gamma1: p.get("gamma1", d.gamma1),
                sigma: p.get("sigma", d.sigma),
                kappa: p.get("kappa", d.kappa),
            };
            if m.lambda() <= 0.0 {
                return Err(Error::Config("scalar-sin needs gamma0 > |gamma1|".into()));
            }
            ModelSpec::new(m)
        }
        "scalar-exp" => {
            let d = ScalarExp::default();
            let m = ScalarExp {
                gamma0: p.get("gamma0", d.gamma0),
                beta: p.get("beta", d.beta),
                sigma: p.get("sigma", d.sigma),
                kappa: p.get("kappa", d.kappa),
                lambda: p.get("lambda", d.lambda),
            };
            if m.gamma0 <= 0.0 || m.lambda <= 0.0 {
                return Err(Error::Config("scalar-exp needs gamma0 > 0 and lambda > 0".into()));
            }
            ModelSpec::new(m)
        }
        "ou-const" => {
            let d = OuConst::default();
            let n = p.get("n", d.n as f64);
            if n < 1.0 || n.fract() != 0.0 || n > crate::linalg::MAX_ORDER as f64 {
                return Err(Error::Config(format!("ou-const: n must be an integer in 1..=16, got {n}")));
            }
            let m = OuConst {
                n: n as usize,
                gamma: p.get("gamma", d.gamma),
                kappa: p.get("kappa", d.kappa),
                sigma: p.get("sigma", d.sigma),
            };
            if m.gamma <= 0.0 {
                return Err(Error::Config("ou-const needs gamma > 0".into()));
            }
            ModelSpec::new(m)
        }
        "magnetic-2d" => {
            let d = MagneticTwoD::default();
            let m = MagneticTwoD {
                g0: p.get("g0", d.g0),
                g1: p.get("g1", d.g1),
                b: p.get("b", d.b),
                kappa: p.get("kappa", d.kappa),
                sigma: p.get("sigma", d.sigma),
            };
            if m.lambda() <= 0.0 {
                return Err(Error::Config("magnetic-2d needs g0 > |g1|".into()));
            }
            ModelSpec::new(m)
        }
        "double-well" => {
            let d = DoubleWell::default();
            let m = DoubleWell {
                gamma0: p.get("gamma0", d.gamma0),
                gamma1: p.get("gamma1", d.gamma1),
                sigma: p.get("sigma", d.sigma),
            };
            if m.lambda() <= 0.0 {
                return Err(Error::Config("double-well needs gamma0 > |gamma1|".into()));
            }
            ModelSpec::new(m)
        }
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    p.finish()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_model_and_parameter() {
        let empty = BTreeMap::new();
        assert!(matches!(builtin("nope", &empty), Err(Error::UnknownModel(_))));
        let mut bad = BTreeMap::new();
        bad.insert("gama0".to_string(), 1.0);
        let err = builtin("scalar-sin", &bad).unwrap_err();
        assert!(err.to_string().contains("gama0"), "{err}");
    }

    #[test]
    fn every_builtin_constructs_with_defaults() {
        for name in BUILTIN_NAMES {
            let m = builtin(name, &BTreeMap::new()).unwrap();
            assert_eq!(m.name(), name);
            assert!(m.lambda() > 0.0);
        }
    }
}
