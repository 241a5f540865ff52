//! Integrators for the underdamped system (the reference `q^m`) and for the
//! homogenized equation (hierarchy level 1).

use serde::{Deserialize, Serialize};

use crate::coeffs::{eval_point, tilde_gamma_value, total_force, DriftRoute, ModelSpec, Order, PointData};
use crate::error::{Error, Result};
use crate::linalg::{mat_exp, vec_ops, Matrix, Vector};
use crate::noise::WienerGrid;

/// Paths whose position leaves this ball are marked and dropped from statistics.
pub const R_GUARD: f64 = 1e6;

/// Integrator for the underdamped reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnderdampedScheme {
    /// Frozen-coefficient exponential step with midpoint noise convolution.
    #[serde(alias = "exp")]
    Exponential,
    /// As [`Exponential`](Self::Exponential), with the coefficients frozen at
    /// the half-step predictor `(t + dt/2, q + u·dt/(2m))`. Removes the
    /// first-order bias in the noise-induced drift at the same cost.
    #[serde(alias = "exp-mid")]
    ExponentialMidpoint,
    #[serde(alias = "em")]
    EulerMaruyama,
}

/// Integrator for first-order equations (the hierarchy levels).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LevelScheme {
    #[serde(alias = "em")]
    EulerMaruyama,
    /// Adds the Itô–Taylor correction; only for `n = k = 1`.
    Milstein,
}

/// Position and kinematic momentum `u = m·v` at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState {
    pub t: f64,
    pub q: Vector,
    pub u: Vector,
}

/// True when `q` is non-finite or outside the guard ball.
#[inline]
pub fn outside_guard(q: &[f64]) -> bool {
    let r2: f64 = q.iter().map(|x| x * x).sum();
    !(r2 <= R_GUARD * R_GUARD)
}

/// Propagators of one frozen-coefficient step: `e^{−γ̃dt/m}` and `e^{−γ̃dt/(2m)}`.
#[derive(Clone, Debug)]
pub struct Propagators {
    pub full: Matrix,
    pub half: Matrix,
}

impl Propagators {
    pub fn new(tilde_gamma: &Matrix, dt_over_m: f64) -> Result<Self> {
        let half = mat_exp(tilde_gamma, -0.5 * dt_over_m)?;
        let full = &half * &half;
        Ok(Propagators { full, half })
    }
}

/// One step of the underdamped system.
pub fn step_underdamped(
    model: &ModelSpec,
    m: f64,
    s: &PhaseState,
    dw: &[f64],
    dt: f64,
    scheme: UnderdampedScheme,
) -> Result<PhaseState> {
    let mid;
    let (te, qe): (f64, &[f64]) = if scheme == UnderdampedScheme::ExponentialMidpoint {
        let mut q = s.q.clone();
        vec_ops::axpy(&mut q, 0.5 * dt / m, &s.u);
        mid = q;
        (s.t + 0.5 * dt, &mid)
    } else {
        (s.t, &s.q)
    };
    let gt = tilde_gamma_value(model, te, qe)?;
    let force = total_force(model, te, qe)?;
    let sigma = model.sigma(te, qe);
    if !sigma.is_finite() {
        return Err(Error::Evaluation { what: "sigma", t: te });
    }
    let noise = sigma.mul_vec(dw);
    let n = s.q.len();
    let (q, u) = match scheme {
        UnderdampedScheme::EulerMaruyama => {
            let mut q = s.q.clone();
            vec_ops::axpy(&mut q, dt / m, &s.u);
            let mut u = s.u.clone();
            let gu = gt.mul_vec(&s.u);
            vec_ops::axpy(&mut u, -dt / m, &gu);
            vec_ops::axpy(&mut u, dt, &force);
            vec_ops::axpy(&mut u, 1.0, &noise);
            (q, u)
        }
        UnderdampedScheme::Exponential | UnderdampedScheme::ExponentialMidpoint => {
            let p = Propagators::new(&gt, dt / m)?;
            let h = gt.inverse()?;
            let id = Matrix::identity(n);
            let one_minus = &id - &p.full;
            let hf = h.mul_vec(&force);
            let mut u = p.full.mul_vec(&s.u);
            vec_ops::axpy(&mut u, m, &one_minus.mul_vec(&hf));
            vec_ops::axpy(&mut u, 1.0, &p.half.mul_vec(&noise));

            let h_one_minus = &h * &one_minus;
            let mut q = s.q.clone();
            vec_ops::axpy(&mut q, 1.0, &h_one_minus.mul_vec(&s.u));
            let drift_map = &id.scale(dt) - &h_one_minus.scale(m);
            vec_ops::axpy(&mut q, 1.0, &drift_map.mul_vec(&hf));
            let noise_map = &h * &(&id - &p.half);
            vec_ops::axpy(&mut q, 1.0, &noise_map.mul_vec(&noise));
            (q, u)
        }
    };
    Ok(PhaseState { t: s.t + dt, q, u })
}

/// Uniform-grid path of positions, optionally with momenta (or `z`) and the
/// accumulated remainder.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub n: usize,
    /// Row-major `(steps + 1) × n`.
    pub q: Vec<f64>,
    pub aux: Option<Vec<f64>>,
    pub remainder: Option<Vec<f64>>,
    /// Step at which the guard tripped; the arrays stop there.
    pub sentinel: Option<usize>,
}

impl Trajectory {
    pub fn new(t0: f64, dt: f64, q0: &[f64]) -> Self {
        Trajectory { t0, dt, n: q0.len(), q: q0.to_vec(), aux: None, remainder: None, sentinel: None }
    }

    /// Number of stored grid points.
    pub fn len(&self) -> usize {
        self.q.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn q_at(&self, i: usize) -> &[f64] {
        &self.q[i * self.n..(i + 1) * self.n]
    }

    pub fn aux_at(&self, i: usize) -> Option<&[f64]> {
        self.aux.as_ref().map(|a| &a[i * self.n..(i + 1) * self.n])
    }

    pub fn remainder_at(&self, i: usize) -> Option<&[f64]> {
        self.remainder.as_ref().map(|a| &a[i * self.n..(i + 1) * self.n])
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn last(&self) -> &[f64] {
        self.q_at(self.len() - 1)
    }
}

/// Underdamped path on the grid of `path`, recording `u` in `aux`.
pub fn simulate_underdamped(
    model: &ModelSpec,
    m: f64,
    path: &WienerGrid,
    q0: &[f64],
    u0: &[f64],
    scheme: UnderdampedScheme,
) -> Result<Trajectory> {
    let mut traj = Trajectory::new(0.0, path.dt, q0);
    let mut aux = u0.to_vec();
    let mut s = PhaseState { t: 0.0, q: q0.iter().copied().collect(), u: u0.iter().copied().collect() };
    for i in 0..path.steps {
        s = step_underdamped(model, m, &s, path.increment(i), path.dt, scheme)?;
        s.t = path.dt * (i + 1) as f64;
        if outside_guard(&s.q) {
            traj.sentinel = Some(i + 1);
            break;
        }
        traj.q.extend_from_slice(&s.q);
        aux.extend_from_slice(&s.u);
    }
    traj.aux = Some(aux);
    Ok(traj)
}

/// `b' = ∂_q(γ̃⁻¹σ)` for `n = k = 1`, the Milstein slope of the level equations.
pub(crate) fn diffusion_slope(model: &ModelSpec, pd: &PointData) -> f64 {
    let sigma_dq = model.sigma_dq(pd.t, &pd.q);
    pd.bundle.inv_dq[0][(0, 0)] * pd.sigma[(0, 0)] + pd.bundle.inv[(0, 0)] * sigma_dq[0][(0, 0)]
}

/// Drift-plus-diffusion increment `(γ̃⁻¹F + S)dt + γ̃⁻¹σ dW`.
#[inline]
pub(crate) fn slow_increment(pd: &PointData, dw: &[f64], dt: f64) -> Vector {
    let mut d = vec_ops::scale(&pd.drift, dt);
    vec_ops::axpy(&mut d, 1.0, &pd.diffusion.mul_vec(dw));
    d
}

pub(crate) fn check_milstein(model: &ModelSpec) -> Result<()> {
    if model.dim() != 1 || model.noise_dim() != 1 {
        return Err(Error::Config(format!(
            "the Milstein scheme needs n = k = 1, model `{}` has n = {}, k = {}",
            model.name(),
            model.dim(),
            model.noise_dim()
        )));
    }
    Ok(())
}

/// Homogenized equation `dq = γ̃⁻¹F dt + S dt + γ̃⁻¹σ dW` on the grid of `path`.
pub fn simulate_homogenized(model: &ModelSpec, path: &WienerGrid, q0: &[f64], scheme: LevelScheme) -> Result<Trajectory> {
    simulate_homogenized_via(model, path, q0, scheme, DriftRoute::General)
}

pub fn simulate_homogenized_via(
    model: &ModelSpec,
    path: &WienerGrid,
    q0: &[f64],
    scheme: LevelScheme,
    route: DriftRoute,
) -> Result<Trajectory> {
    if scheme == LevelScheme::Milstein {
        check_milstein(model)?;
    }
    let mut traj = Trajectory::new(0.0, path.dt, q0);
    let mut q: Vector = q0.iter().copied().collect();
    for i in 0..path.steps {
        let t = path.dt * i as f64;
        let dw = path.increment(i);
        let pd = eval_point(model, t, &q, Order::First, route)?;
        let mut dq = slow_increment(&pd, dw, path.dt);
        if scheme == LevelScheme::Milstein {
            let b = pd.diffusion[(0, 0)];
            dq[0] += 0.5 * diffusion_slope(model, &pd) * b * (dw[0] * dw[0] - path.dt);
        }
        vec_ops::axpy(&mut q, 1.0, &dq);
        if outside_guard(&q) {
            traj.sentinel = Some(i + 1);
            break;
        }
        traj.q.extend_from_slice(&q);
    }
    Ok(traj)
}

/// Largest excess of `‖Φ(t,s)‖₂` over `e^{−λ(t−s)/m}` along a stored path,
/// where `Φ(t,s)` is the product of the step propagators `e^{−γ̃dt/m}`
/// evaluated on the path, for each start index in `starts`.
pub fn decay_excess(model: &ModelSpec, m: f64, traj: &Trajectory, starts: &[usize]) -> Result<f64> {
    let lam = model.lambda();
    let steps = traj.len() - 1;
    let props: Vec<Matrix> = (0..steps)
        .map(|i| Ok(mat_exp(&tilde_gamma_value(model, traj.time(i), traj.q_at(i))?, -traj.dt / m)?))
        .collect::<Result<_>>()?;
    let mut worst = f64::NEG_INFINITY;
    for &s in starts.iter().filter(|&&s| s < steps) {
        let mut phi = Matrix::identity(traj.n);
        for (j, e) in props.iter().enumerate().skip(s) {
            phi = e * &phi;
            let elapsed = (j + 1 - s) as f64 * traj.dt;
            worst = worst.max(phi.norm_two() - (-lam * elapsed / m).exp());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::gallery::{OuConst, ScalarSin};
    use crate::noise::generate_path;
    use smallvec::smallvec;

    fn free_particle() -> ModelSpec {
        ModelSpec::new(OuConst { n: 1, gamma: 1.0, kappa: 0.0, sigma: 0.0 })
    }

    #[test]
    fn free_relaxation_is_exact() {
        let s = PhaseState { t: 0.0, q: smallvec![0.3], u: smallvec![2.0] };
        let dt = 0.37;
        let out = step_underdamped(&free_particle(), 1.0, &s, &[0.0], dt, UnderdampedScheme::Exponential).unwrap();
        assert!((out.u[0] - 2.0 * (-dt).exp()).abs() < 1e-15);
        assert!((out.q[0] - (0.3 + (1.0 - (-dt).exp()) * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_step_is_identity() {
        let model = ModelSpec::new(ScalarSin::default());
        let s = PhaseState { t: 0.0, q: smallvec![0.3], u: smallvec![-0.2] };
        for scheme in [UnderdampedScheme::Exponential, UnderdampedScheme::EulerMaruyama] {
            let out = step_underdamped(&model, 0.1, &s, &[0.0], 0.0, scheme).unwrap();
            assert_eq!(out.q, s.q);
            assert_eq!(out.u, s.u);
        }
    }

    #[test]
    fn homogenized_deterministic_decay() {
        let model = ModelSpec::new(OuConst { n: 1, gamma: 1.0, kappa: 1.0, sigma: 0.0 });
        let path = WienerGrid::silent(10_000, 1, 1e-4);
        let tr = simulate_homogenized(&model, &path, &[2.0], LevelScheme::EulerMaruyama).unwrap();
        assert!((tr.last()[0] - 2.0 * (-1.0f64).exp()).abs() <= 1e-3 * 2.0);
    }

    #[test]
    fn homogenized_additive_noise_telescopes() {
        let model = ModelSpec::new(OuConst { n: 2, gamma: 2.0, kappa: 0.0, sigma: 0.5 });
        let path = generate_path(3, 1, 500, 2, 1e-3);
        let tr = simulate_homogenized(&model, &path, &[0.1, -0.1], LevelScheme::EulerMaruyama).unwrap();
        let w = path.endpoint();
        for i in 0..2 {
            let want = [0.1, -0.1][i] + 0.25 * w[i];
            assert!((tr.last()[i] - want).abs() < 1e-13);
        }
        let empty = simulate_homogenized(&model, &WienerGrid::silent(0, 2, 1e-3), &[1.0, 2.0], LevelScheme::EulerMaruyama)
            .unwrap();
        assert_eq!(empty.q, vec![1.0, 2.0]);
    }

    #[test]
    fn guard_marks_sentinel() {
        let model = ModelSpec::new(OuConst { n: 1, gamma: 1.0, kappa: -50.0, sigma: 0.0 });
        let path = WienerGrid::silent(100_000, 1, 0.01);
        let tr = simulate_homogenized(&model, &path, &[1.0], LevelScheme::EulerMaruyama).unwrap();
        assert!(tr.sentinel.is_some());
        assert!(tr.len() < 100_001);
    }
}
