//! Probe-based checks of a model's coefficient suppliers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{central_q, central_t, tilde_gamma_bundle, total_force, Difference, ModelSpec, Order, Slices, Supplier};
use crate::linalg::{vec_ops, Matrix, Vector};

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const FLOOR_TOL: f64 = 1e-10;
pub const INVERSE_TOL: f64 = 1e-10;
pub const DERIVATIVE_TOL: f64 = 1e-5;
pub const GRADIENT_TOL: f64 = 1e-8;

/// Outcome of one check, aggregated over all probes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst residual seen.
    pub worst: f64,
    pub tolerance: f64,
    /// Probe index of the worst residual, if any probe was evaluated.
    pub worst_probe: Option<usize>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub model: String,
    pub probes: usize,
    pub checks: Vec<CheckResult>,
    /// Largest observed norms of the fields, for eyeballing boundedness.
    pub bounds: BTreeMap<String, f64>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Tally {
    name: String,
    tol: f64,
    worst: f64,
    worst_probe: Option<usize>,
    error: Option<String>,
}

impl Tally {
    fn new(name: impl Into<String>, tol: f64) -> Self {
        Tally { name: name.into(), tol, worst: 0.0, worst_probe: None, error: None }
    }

    fn record(&mut self, probe: usize, residual: f64) {
        if !self.worst.is_finite() {
            return;
        }
        if !residual.is_finite() || residual > self.worst || self.worst_probe.is_none() {
            self.worst = residual;
            self.worst_probe = Some(probe);
        }
    }

    fn fail(&mut self, probe: usize, msg: String) {
        if self.error.is_none() {
            self.error = Some(format!("probe {probe}: {msg}"));
            self.worst_probe = Some(probe);
        }
    }

    fn finish(self) -> CheckResult {
        let passed = self.error.is_none() && self.worst.is_finite() && self.worst <= self.tol;
        CheckResult {
            name: self.name,
            passed,
            worst: self.worst,
            tolerance: self.tol,
            worst_probe: self.worst_probe,
            detail: self.error.unwrap_or_default(),
        }
    }
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1)`
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = vec_ops::norm(a);
    let nb = vec_ops::norm(b);
    d / na.max(nb).max(1.0)
}

fn flat_slices(s: &Slices) -> Vec<f64> {
    s.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
}

fn flat_matrix(m: &Matrix) -> Vec<f64> {
    m.as_slice().to_vec()
}

fn fd_q_all<T: Difference>(n: usize, q: &[f64], f: impl Fn(&[f64]) -> T) -> Vec<T> {
    (0..n).map(|l| central_q(q, l, 1.0, &f)).collect()
}

fn panic_message(e: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = e.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = e.downcast_ref::<String>() {
        s.clone()
    } else {
        "evaluation panicked".to_string()
    }
}

/// Runs every coefficient check at the given probes. Failures are recorded
/// in the report; this function does not return errors.
pub fn validate_model(model: &ModelSpec, probes: &[(f64, Vector)]) -> ValidationReport {
    let n = model.dim();
    let lam = model.lambda();
    let structure = model.structure();

    let mut sym = Tally::new("gamma symmetry", SYMMETRY_TOL);
    let mut floor = Tally::new("spectral floor", FLOOR_TOL);
    let mut inverse = Tally::new("tilde-gamma inverse", INVERSE_TOL);
    let mut sym_part = Tally::new("tilde-gamma symmetric part", SYMMETRY_TOL);
    let mut grad = Tally::new("gradient of V", GRADIENT_TOL);
    let mut finite = Tally::new("finite fields", 0.0);
    let mut derivs: Vec<(Supplier, Tally)> = Supplier::ALL
        .iter()
        .filter(|&&s| model.is_analytic(s))
        .filter(|&&s| !matches!(s, Supplier::PsiDt | Supplier::PsiDtDq | Supplier::PsiDtDqDq) || !structure.psi_zero)
        .map(|&s| (s, Tally::new(format!("derivative {}", s.label()), DERIVATIVE_TOL)))
        .collect();
    let mut structural: Vec<(&'static str, Tally)> = Vec::new();
    if structure.scalar_gamma {
        structural.push(("scalar gamma", Tally::new("structure: scalar gamma", SYMMETRY_TOL)));
    }
    if structure.scalar_sigma {
        structural.push(("scalar sigma", Tally::new("structure: scalar sigma", SYMMETRY_TOL)));
    }
    if structure.gamma_q_independent {
        structural.push(("q-independent gamma", Tally::new("structure: q-independent gamma", DERIVATIVE_TOL)));
    }
    if structure.time_independent {
        structural.push(("time-independent", Tally::new("structure: time-independent", DERIVATIVE_TOL)));
    }
    let mut bounds: BTreeMap<String, f64> = BTreeMap::new();
    let mut bump = |key: &str, v: f64| {
        let e = bounds.entry(key.to_string()).or_insert(0.0);
        if v > *e || !v.is_finite() {
            *e = v;
        }
    };

    for (p, (t, q)) in probes.iter().enumerate() {
        let (t, q) = (*t, q.as_slice());
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            let gamma = model.gamma(t, q);
            let sigma = model.sigma(t, q);
            (gamma, sigma)
        }));
        let (gamma, sigma) = match result {
            Ok(v) => v,
            Err(e) => {
                finite.fail(p, panic_message(e));
                continue;
            }
        };
        if !gamma.is_finite() || !sigma.is_finite() {
            finite.fail(p, "non-finite gamma or sigma".into());
            continue;
        }
        sym.record(p, gamma.asymmetry());
        floor.record(p, (lam - gamma.sym_eigenvalues()[0]).max(0.0));
        bump("gamma", gamma.norm_two());
        bump("sigma", sigma.norm_two());

        match tilde_gamma_bundle(model, t, q, Order::First) {
            Ok(b) => {
                inverse.record(p, (&(&b.inv * &b.value) - &Matrix::identity(n)).max_abs());
                sym_part.record(p, (&b.value.sym_part() - &gamma.sym_part()).max_abs());
            }
            Err(e) => {
                inverse.fail(p, e.to_string());
            }
        }
        match total_force(model, t, q) {
            Ok(f) => bump("force", vec_ops::norm(&f)),
            Err(e) => finite.fail(p, e.to_string()),
        }

        let g = model.grad_potential(t, q);
        let g_fd = model.grad_potential_fd(t, q);
        grad.record(p, rel_err(&g, &g_fd));

        for (which, tally) in derivs.iter_mut() {
            let (a, b) = derivative_pair(model, *which, t, q);
            tally.record(p, rel_err(&a, &b));
        }
        for (kind, tally) in structural.iter_mut() {
            let resid = match *kind {
                "scalar gamma" => (&gamma - &Matrix::scalar(n, gamma.trace() / n as f64)).max_abs(),
                "scalar sigma" => {
                    if sigma.rows() != sigma.cols() {
                        f64::INFINITY
                    } else {
                        (&sigma - &Matrix::scalar(n, sigma.trace() / n as f64)).max_abs()
                    }
                }
                "q-independent gamma" => {
                    let d = fd_q_all(n, q, |x| model.gamma(t, x));
                    d.iter().map(|m| m.max_abs()).fold(0.0, f64::max) / gamma.max_abs().max(1.0)
                }
                _ => {
                    let dg = central_t(t, 1.0, |s| model.gamma(s, q));
                    let dv = central_t(t, 1.0, |s| model.potential(s, q));
                    let ds = central_t(t, 1.0, |s| model.sigma(s, q));
                    dg.max_abs().max(dv.abs()).max(ds.max_abs())
                }
            };
            tally.record(p, resid);
        }
    }

    let mut checks = Vec::new();
    if probes.is_empty() {
        checks.push(CheckResult {
            name: "probes".into(),
            passed: false,
            worst: f64::NAN,
            tolerance: 0.0,
            worst_probe: None,
            detail: "probe list is empty".into(),
        });
    }
    for t in [sym, floor, inverse, sym_part, grad, finite] {
        checks.push(t.finish());
    }
    checks.extend(derivs.into_iter().map(|(_, t)| t.finish()));
    checks.extend(structural.into_iter().map(|(_, t)| t.finish()));
    ValidationReport { model: model.name().to_string(), probes: probes.len(), checks, bounds }
}

/// Analytic value of a supplier and an independent central difference of
/// the next-lower field.
fn derivative_pair(model: &ModelSpec, which: Supplier, t: f64, q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = model.dim();
    let by_c = |per_c: Vec<Slices>| -> Vec<f64> {
        let mut out = Vec::new();
        for l in 0..n {
            for c in 0..n {
                out.extend_from_slice(per_c[c][l].as_slice());
            }
        }
        out
    };
    match which {
        Supplier::GammaDt => (flat_matrix(&model.gamma_dt(t, q)), flat_matrix(&central_t(t, 1.0, |s| model.gamma(s, q)))),
        Supplier::GammaDq => (
            flat_slices(&model.gamma_dq(t, q)),
            fd_q_all(n, q, |x| model.gamma(t, x)).iter().flat_map(|m| m.as_slice().to_vec()).collect(),
        ),
        Supplier::GammaDqDq => {
            (flat_slices(&model.gamma_dqdq(t, q)), by_c(fd_q_all(n, q, |x| model.gamma_dq(t, x))))
        }
        Supplier::GammaDtDq => {
            (flat_slices(&model.gamma_dtdq(t, q)), flat_slices(&central_t(t, 1.0, |s| model.gamma_dq(s, q))))
        }
        Supplier::PsiDt => (model.psi_dt(t, q).to_vec(), central_t(t, 1.0, |s| model.psi(s, q)).to_vec()),
        Supplier::PsiDq => {
            let cols = fd_q_all(n, q, |x| model.psi(t, x));
            let fd = Matrix::from_fn(n, n, |i, k| cols[k][i]);
            (flat_matrix(&model.psi_dq(t, q)), flat_matrix(&fd))
        }
        Supplier::PsiDqDq => (
            flat_slices(&model.psi_dqdq(t, q)),
            fd_q_all(n, q, |x| model.psi_dq(t, x)).iter().flat_map(|m| m.as_slice().to_vec()).collect(),
        ),
        Supplier::PsiDqDqDq => {
            (flat_slices(&model.psi_dqdqdq(t, q)), by_c(fd_q_all(n, q, |x| model.psi_dqdq(t, x))))
        }
        Supplier::PsiDtDq => {
            (flat_matrix(&model.psi_dtdq(t, q)), flat_matrix(&central_t(t, 1.0, |s| model.psi_dq(s, q))))
        }
        Supplier::PsiDtDqDq => {
            (flat_slices(&model.psi_dtdqdq(t, q)), flat_slices(&central_t(t, 1.0, |s| model.psi_dqdq(s, q))))
        }
        Supplier::SigmaDq => (
            flat_slices(&model.sigma_dq(t, q)),
            fd_q_all(n, q, |x| model.sigma(t, x)).iter().flat_map(|m| m.as_slice().to_vec()).collect(),
        ),
    }
}
