//! The approximation hierarchy: level 1 is the homogenized equation and
//! level `ℓ > 1` adds `√m·dR[q^{ℓ−1}]`, the remainder driven by the level
//! below through its fast process `z`.
//!
//! All levels of one path advance in lockstep on the same grid and noise.
//! Each level's coefficients are evaluated once per step; the evaluation at
//! the right endpoint of a step doubles as the left endpoint of the next,
//! which is also what the exact-differential terms of the remainder need.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::coeffs::{
    eval_point, fd_temperature, tilde_gamma_value, total_force, DriftRoute, ModelSpec, Order, PointData, QgTensor,
};
use crate::dynamics::{check_milstein, outside_guard, LevelScheme, Propagators, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::{vec_ops, Matrix, Vector};
use crate::noise::WienerGrid;

/// User-facing specialization switch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FastPath {
    #[default]
    Auto,
    Off,
    Scalar,
    ConstGamma,
}

/// Specializations with simplified formulas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpecialKind {
    /// `ψ = 0`, `γ = gI`, `σ = sI`: the `Y` tensor replaces the Lyapunov route.
    Scalar,
    /// `ψ = 0` and `γ` independent of `q`: all tensor terms vanish.
    ConstGamma,
    /// `ψ = 0` and `Σ = 2k_BT γ`: the drift uses `k_BT ∂_j(γ⁻¹)^{ij}`.
    FluctDiss,
}

/// How coefficients are assembled for a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    Generic,
    Special(SpecialKind),
}

fn mismatch(kind: &'static str, reason: &str) -> Error {
    Error::WrongSpecialization { kind, reason: reason.to_string() }
}

/// Checks the structural requirement of a specialization at `(t0, q0)`.
pub fn check_special(model: &ModelSpec, kind: SpecialKind, q0: &[f64]) -> Result<()> {
    let s = model.structure();
    let n = model.dim();
    match kind {
        SpecialKind::Scalar => {
            let label = "scalar";
            if !s.psi_zero {
                return Err(mismatch(label, "psi is not identically zero"));
            }
            if !s.scalar_gamma || !s.scalar_sigma || model.noise_dim() != n {
                return Err(mismatch(label, "gamma and sigma must be scalar multiples of the identity"));
            }
            let g = model.gamma(0.0, q0);
            let sg = model.sigma(0.0, q0);
            if (&g - &Matrix::scalar(n, g[(0, 0)])).max_abs() > 0.0 || (&sg - &Matrix::scalar(n, sg[(0, 0)])).max_abs() > 0.0
            {
                return Err(mismatch(label, "gamma or sigma is not a multiple of the identity at q0"));
            }
        }
        SpecialKind::ConstGamma => {
            let label = "const-gamma";
            if !s.psi_zero {
                return Err(mismatch(label, "psi is not identically zero"));
            }
            if !s.gamma_q_independent {
                return Err(mismatch(label, "gamma depends on q"));
            }
        }
        SpecialKind::FluctDiss => {
            if !s.psi_zero {
                return Err(mismatch("fluct-diss", "psi is not identically zero"));
            }
            let g = model.gamma(0.0, q0);
            let sg = model.sigma(0.0, q0);
            fd_temperature(model, 0.0, q0, &g, &sg.mul_transpose(&sg))?;
        }
    }
    Ok(())
}

/// Picks the route for a fast-path setting, verifying explicit requests.
pub fn resolve_route(model: &ModelSpec, fast_path: FastPath, q0: &[f64]) -> Result<Route> {
    match fast_path {
        FastPath::Off => Ok(Route::Generic),
        FastPath::Scalar => check_special(model, SpecialKind::Scalar, q0).map(|_| Route::Special(SpecialKind::Scalar)),
        FastPath::ConstGamma => {
            check_special(model, SpecialKind::ConstGamma, q0).map(|_| Route::Special(SpecialKind::ConstGamma))
        }
        FastPath::Auto => {
            if check_special(model, SpecialKind::ConstGamma, q0).is_ok() {
                Ok(Route::Special(SpecialKind::ConstGamma))
            } else if check_special(model, SpecialKind::Scalar, q0).is_ok() {
                Ok(Route::Special(SpecialKind::Scalar))
            } else {
                Ok(Route::Generic)
            }
        }
    }
}

/// Tensor data entering the remainder, in whichever form the route provides.
#[derive(Clone, Debug)]
enum TensorTerms {
    Generic(Box<QgTensor>),
    /// `Y^{ikl} = ½ h δ^{ik} ∂_l h` for `h = 1/g`.
    Scalar { h: f64, grad: Vector, hess: Matrix, h_t: f64, grad_t: Vector },
    Zero,
}

impl TensorTerms {
    /// `T^{iab} z_a z_b`
    fn quadratic(&self, z: &[f64]) -> Vector {
        match self {
            TensorTerms::Generic(qg) => qg.value.quadratic(z),
            TensorTerms::Scalar { h, grad, .. } => vec_ops::scale(z, 0.5 * h * vec_ops::dot(grad, z)),
            TensorTerms::Zero => vec_ops::zeros(z.len()),
        }
    }

    /// `T^{iab}(u_a w_b + w_a u_b)`
    fn pair(&self, u: &[f64], w: &[f64]) -> Vector {
        match self {
            TensorTerms::Generic(qg) => qg.value.symmetric_pair(u, w),
            TensorTerms::Scalar { h, grad, .. } => {
                let mut v = vec_ops::scale(u, 0.5 * h * vec_ops::dot(grad, w));
                vec_ops::axpy(&mut v, 0.5 * h * vec_ops::dot(grad, u), w);
                v
            }
            TensorTerms::Zero => vec_ops::zeros(u.len()),
        }
    }

    /// `z_a z_b z_c ∂_c T^{iab}`
    fn cubic(&self, z: &[f64]) -> Vector {
        match self {
            TensorTerms::Generic(qg) => {
                let mut v = vec_ops::zeros(z.len());
                for (c, dc) in qg.dq.iter().enumerate() {
                    if z[c] != 0.0 {
                        vec_ops::axpy(&mut v, z[c], &dc.quadratic(z));
                    }
                }
                v
            }
            TensorTerms::Scalar { h, grad, hess, .. } => {
                let gz = vec_ops::dot(grad, z);
                let zhz = vec_ops::dot(z, &hess.mul_vec(z));
                vec_ops::scale(z, 0.5 * (gz * gz + h * zhz))
            }
            TensorTerms::Zero => vec_ops::zeros(z.len()),
        }
    }

    /// `z_a z_b ∂_t T^{iab}`
    fn dt_quadratic(&self, z: &[f64]) -> Vector {
        match self {
            TensorTerms::Generic(qg) => qg.dt.quadratic(z),
            TensorTerms::Scalar { h, grad, h_t, grad_t, .. } => {
                vec_ops::scale(z, 0.5 * (h_t * vec_ops::dot(grad, z) + h * vec_ops::dot(grad_t, z)))
            }
            TensorTerms::Zero => vec_ops::zeros(z.len()),
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, TensorTerms::Zero)
    }

    /// `(T, ∂_q T)` for `n = 1`.
    fn scalar_slope(&self) -> (f64, f64) {
        match self {
            TensorTerms::Generic(qg) => (qg.value.slices[0][(0, 0)], qg.dq[0].slices[0][(0, 0)]),
            TensorTerms::Scalar { h, grad, hess, .. } => {
                (0.5 * h * grad[0], 0.5 * (grad[0] * grad[0] + h * hess[(0, 0)]))
            }
            TensorTerms::Zero => (0.0, 0.0),
        }
    }
}

/// Derivatives the Milstein corrections read (`n = k = 1`).
#[derive(Clone, Copy, Debug, Default)]
struct Slopes {
    /// `∂_q γ̃⁻¹`
    inv: f64,
    /// `∂_q σ`
    sigma: f64,
}

/// Coefficients of one level at one grid point.
#[derive(Clone, Debug)]
pub struct LevelPoint {
    pub t: f64,
    pub q: Vector,
    pub tilde_gamma: Matrix,
    pub inv: Matrix,
    pub force: Vector,
    pub sigma: Matrix,
    pub drift: Vector,
    pub diffusion: Matrix,
    inv_dt: Matrix,
    tensor: TensorTerms,
    props: Option<Propagators>,
    slopes: Slopes,
}

impl LevelPoint {
    fn from_point(pd: PointData) -> Self {
        let tensor = match pd.qg {
            Some(qg) => TensorTerms::Generic(Box::new(qg)),
            None => TensorTerms::Zero,
        };
        let slopes = Slopes { inv: pd.bundle.inv_dq[0][(0, 0)], sigma: 0.0 };
        LevelPoint {
            t: pd.t,
            q: pd.q,
            tilde_gamma: pd.bundle.value,
            inv: pd.bundle.inv,
            force: pd.force,
            sigma: pd.sigma,
            drift: pd.drift,
            diffusion: pd.diffusion,
            inv_dt: pd.bundle.inv_dt,
            tensor,
            props: None,
            slopes,
        }
    }

    /// `b' = ∂_q(γ̃⁻¹σ)` for `n = k = 1`.
    fn diffusion_slope(&self) -> f64 {
        self.slopes.inv * self.sigma[(0, 0)] + self.inv[(0, 0)] * self.slopes.sigma
    }
}

/// Evaluation settings shared by every point of a run.
#[derive(Clone, Debug)]
pub struct PointRecipe {
    pub route: Route,
    pub milstein: bool,
    /// `dt/m` for the propagators of driving levels.
    pub dt_over_m: f64,
}

/// Evaluates a level's coefficients; `driving` adds the data the remainder
/// and the fast process need.
pub fn eval_level_point(model: &ModelSpec, recipe: &PointRecipe, t: f64, q: &[f64], driving: bool) -> Result<LevelPoint> {
    let order = if driving { Order::Second } else { Order::First };
    let mut lp = match recipe.route {
        Route::Generic => LevelPoint::from_point(eval_point(model, t, q, order, DriftRoute::General)?),
        Route::Special(SpecialKind::FluctDiss) => {
            LevelPoint::from_point(eval_point(model, t, q, order, DriftRoute::FluctuationDissipation)?)
        }
        Route::Special(SpecialKind::Scalar) => scalar_point(model, t, q, driving)?,
        Route::Special(SpecialKind::ConstGamma) => const_gamma_point(model, t, q, driving)?,
    };
    if driving {
        lp.props = Some(Propagators::new(&lp.tilde_gamma, recipe.dt_over_m)?);
    }
    if recipe.milstein {
        lp.slopes.sigma = model.sigma_dq(t, q)[0][(0, 0)];
    }
    Ok(lp)
}

fn finite_or(v: &[f64], what: &'static str, t: f64) -> Result<()> {
    if vec_ops::is_finite(v) {
        Ok(())
    } else {
        Err(Error::Evaluation { what, t })
    }
}

/// Scalar route: `γ = gI`, `σ = sI`, `ψ = 0`, everything in closed form.
fn scalar_point(model: &ModelSpec, t: f64, q: &[f64], driving: bool) -> Result<LevelPoint> {
    let n = q.len();
    let gamma = tilde_gamma_value(model, t, q)?;
    let g = gamma[(0, 0)];
    let h = 1.0 / g;
    let sigma = model.sigma(t, q);
    let s = sigma[(0, 0)];
    let force = total_force(model, t, q)?;
    let dg: Vector = model.gamma_dq(t, q).iter().map(|m| m[(0, 0)]).collect();
    let grad: Vector = dg.iter().map(|d| -d * h * h).collect();
    let kt = 0.5 * s * s * h;
    let mut drift = vec_ops::scale(&force, h);
    vec_ops::axpy(&mut drift, kt, &grad);
    finite_or(&drift, "drift", t)?;
    let g_t = model.gamma_dt(t, q)[(0, 0)];
    let h_t = -g_t * h * h;
    let tensor = if driving {
        let d2 = model.gamma_dqdq(t, q);
        let hess = Matrix::from_fn(n, n, |l, c| -d2[l * n + c][(0, 0)] * h * h + 2.0 * dg[l] * dg[c] * h * h * h);
        let dtq = model.gamma_dtdq(t, q);
        let grad_t: Vector = (0..n).map(|l| -dtq[l][(0, 0)] * h * h + 2.0 * g_t * dg[l] * h * h * h).collect();
        TensorTerms::Scalar { h, grad: grad.clone(), hess, h_t, grad_t }
    } else {
        TensorTerms::Zero
    };
    Ok(LevelPoint {
        t,
        q: q.iter().copied().collect(),
        tilde_gamma: gamma,
        inv: Matrix::scalar(n, h),
        force,
        diffusion: Matrix::scalar(n, h * s),
        sigma,
        drift,
        inv_dt: Matrix::scalar(n, h_t),
        tensor,
        props: None,
        slopes: Slopes { inv: grad[0], sigma: 0.0 },
    })
}

/// Constant-drag route: `S = 0` and the remainder has no tensor terms.
fn const_gamma_point(model: &ModelSpec, t: f64, q: &[f64], driving: bool) -> Result<LevelPoint> {
    let n = q.len();
    let gamma = tilde_gamma_value(model, t, q)?;
    let inv = gamma.inverse()?;
    let sigma = model.sigma(t, q);
    let force = total_force(model, t, q)?;
    let drift = inv.mul_vec(&force);
    finite_or(&drift, "drift", t)?;
    let inv_dt = if driving { -&(&(&inv * &model.gamma_dt(t, q)) * &inv) } else { Matrix::zeros(n, n) };
    Ok(LevelPoint {
        t,
        q: q.iter().copied().collect(),
        diffusion: &inv * &sigma,
        tilde_gamma: gamma,
        inv,
        force,
        sigma,
        drift,
        inv_dt,
        tensor: TensorTerms::Zero,
        props: None,
        slopes: Slopes::default(),
    })
}

/// One exponential step of the fast process
/// `dz = −γ̃z/m dt + F/√m dt + σ/√m dW` with coefficients frozen at `left`.
fn advance_z(left: &LevelPoint, z: &[f64], dw: &[f64], m: f64) -> Vector {
    let props = left.props.as_ref().expect("driving point carries propagators");
    let n = z.len();
    let sqm = m.sqrt();
    let mut out = props.full.mul_vec(z);
    let hf = left.inv.mul_vec(&left.force);
    let relax = &Matrix::identity(n) - &props.full;
    vec_ops::axpy(&mut out, sqm, &relax.mul_vec(&hf));
    vec_ops::axpy(&mut out, 1.0 / sqm, &props.half.mul_vec(&left.sigma.mul_vec(dw)));
    out
}

/// Remainder tracker for one driving level: `z`, the accumulated `R` and the
/// cached endpoint brackets `γ̃⁻¹z` and `√m T·zz` at the current point.
#[derive(Clone, Debug)]
pub struct RemainderState {
    pub t: f64,
    pub z: Vector,
    pub r_accum: Vector,
    pub inv_z: Vector,
    pub tzz: Vector,
    /// Martingale coefficient of the driving level (Milstein only).
    drive_coeff: f64,
    pub max_z: f64,
}

impl RemainderState {
    fn new(point: &LevelPoint, z0: &[f64], m: f64) -> Self {
        let (inv_z, tzz) = brackets(point, z0, m);
        RemainderState {
            t: point.t,
            z: z0.iter().copied().collect(),
            r_accum: vec_ops::zeros(z0.len()),
            inv_z,
            tzz,
            drive_coeff: 0.0,
            max_z: vec_ops::norm(z0),
        }
    }
}

fn brackets(point: &LevelPoint, z: &[f64], m: f64) -> (Vector, Vector) {
    let inv_z = point.inv.mul_vec(z);
    let tzz = if point.tensor.is_zero() { vec_ops::zeros(z.len()) } else { vec_ops::scale(&point.tensor.quadratic(z), m.sqrt()) };
    (inv_z, tzz)
}

/// Increment data produced by one remainder step.
struct RemainderStep {
    dr: Vector,
    z_next: Vector,
    inv_z_next: Vector,
    tzz_next: Vector,
}

/// Euler part of `ΔR` from the left point data and the cached brackets
/// `(γ̃⁻¹z, √m T·zz)` at both endpoints.
fn assemble_dr(
    left: &LevelPoint,
    z: &[f64],
    (inv_z, tzz): (&Vector, &Vector),
    (inv_z_next, tzz_next): (&Vector, &Vector),
    dw: &[f64],
    dt: f64,
    m: f64,
) -> Vector {
    // −Δ(γ̃⁻¹z) + ∂_t γ̃⁻¹ z dt
    let mut dr = vec_ops::sub(inv_z, inv_z_next);
    vec_ops::axpy(&mut dr, dt, &left.inv_dt.mul_vec(z));
    if !left.tensor.is_zero() {
        let tens = &left.tensor;
        vec_ops::axpy(&mut dr, dt, &tens.pair(z, &left.force));
        vec_ops::axpy(&mut dr, dt, &tens.cubic(z));
        vec_ops::axpy(&mut dr, 1.0, &tens.pair(z, &left.sigma.mul_vec(dw)));
        vec_ops::axpy(&mut dr, -1.0, &vec_ops::sub(tzz_next, tzz));
        vec_ops::axpy(&mut dr, m.sqrt() * dt, &tens.dt_quadratic(z));
    }
    dr
}

/// Assembles `ΔR` over one step given the driving level at both endpoints.
///
/// `drive_coeff` is the martingale coefficient of the driving level; it is
/// only read by the Milstein corrections.
fn remainder_step(
    left: &LevelPoint,
    right: &LevelPoint,
    state: &RemainderState,
    dw: &[f64],
    dt: f64,
    m: f64,
    milstein: bool,
) -> RemainderStep {
    let sqm = m.sqrt();
    let z = &state.z;
    let mut z_next = advance_z(left, z, dw, m);
    let ito = if milstein { 0.5 * (dw[0] * dw[0] - dt) } else { 0.0 };
    if milstein {
        z_next[0] += left.slopes.sigma * state.drive_coeff * ito / sqm;
    }
    let (inv_z_next, tzz_next) = brackets(right, &z_next, m);
    let mut dr = assemble_dr(left, z, (&state.inv_z, &state.tzz), (&inv_z_next, &tzz_next), dw, dt, m);
    if milstein && !left.tensor.is_zero() {
        // Itô–Taylor term of ∫ 2 T z σ dW, whose integrand moves with both
        // the driving level and z.
        let (tv, t1) = left.tensor.scalar_slope();
        let s = left.sigma[(0, 0)];
        let ts_slope = t1 * s + tv * left.slopes.sigma;
        dr[0] += (2.0 * ts_slope * z[0] * state.drive_coeff + 2.0 * tv * s * s / sqm) * ito;
    }
    RemainderStep { dr, z_next, inv_z_next, tzz_next }
}

/// Options of a hierarchy run.
#[derive(Clone, Debug)]
pub struct HierarchyOptions {
    pub levels: usize,
    pub scheme: LevelScheme,
    pub route: Route,
    /// Initial fast-process value, shared by every driving level.
    pub z0: Vector,
    pub path_id: u64,
}

impl HierarchyOptions {
    pub fn new(levels: usize, n: usize) -> Self {
        HierarchyOptions {
            levels,
            scheme: LevelScheme::EulerMaruyama,
            route: Route::Generic,
            z0: vec_ops::zeros(n),
            path_id: 0,
        }
    }
}

struct LevelState {
    point: LevelPoint,
    /// Martingale coefficient `c_ℓ` at the current point (Milstein only).
    coeff: f64,
}

/// Lockstep integrator for levels `1..=L` of one path at one mass.
pub struct LevelEngine<'a> {
    model: &'a ModelSpec,
    m: f64,
    dt: f64,
    recipe: PointRecipe,
    levels: Vec<LevelState>,
    trackers: Vec<RemainderState>,
    step: usize,
    t0: f64,
    path_id: u64,
    sentinel: Option<usize>,
}

impl<'a> LevelEngine<'a> {
    pub fn new(model: &'a ModelSpec, m: f64, dt: f64, q0: &[f64], opts: &HierarchyOptions) -> Result<Self> {
        if opts.levels == 0 {
            return Err(Error::Config("levels must be at least 1".into()));
        }
        if q0.len() != model.dim() || opts.z0.len() != model.dim() {
            return Err(Error::Config(format!("initial state must have dimension {}", model.dim())));
        }
        let milstein = opts.scheme == LevelScheme::Milstein;
        if milstein {
            check_milstein(model)?;
        }
        if let Route::Special(kind) = opts.route {
            check_special(model, kind, q0)?;
        }
        let recipe = PointRecipe { route: opts.route, milstein, dt_over_m: dt / m };
        let mut engine = LevelEngine {
            model,
            m,
            dt,
            recipe,
            levels: Vec::with_capacity(opts.levels),
            trackers: Vec::with_capacity(opts.levels - 1),
            step: 0,
            t0: 0.0,
            path_id: opts.path_id,
            sentinel: None,
        };
        for l in 0..opts.levels {
            let driving = l + 1 < opts.levels;
            let point = eval_level_point(model, &engine.recipe, 0.0, q0, driving)?;
            if driving {
                engine.trackers.push(RemainderState::new(&point, &opts.z0, m));
            }
            engine.levels.push(LevelState { point, coeff: 0.0 });
        }
        engine.refresh_coeffs();
        Ok(engine)
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    pub fn time(&self) -> f64 {
        self.t0 + self.step as f64 * self.dt
    }

    /// Position of level `l` (1-based).
    pub fn q(&self, l: usize) -> &[f64] {
        &self.levels[l - 1].point.q
    }

    /// Fast process driven by level `l` (1-based, `l < L`).
    pub fn z(&self, l: usize) -> &[f64] {
        &self.trackers[l - 1].z
    }

    /// Accumulated remainder driven by level `l`.
    pub fn remainder(&self, l: usize) -> &[f64] {
        &self.trackers[l - 1].r_accum
    }

    pub fn tracker(&self, l: usize) -> &RemainderState {
        &self.trackers[l - 1]
    }

    pub fn sentinel(&self) -> Option<usize> {
        self.sentinel
    }

    /// Martingale coefficients `c_ℓ`, needed by the Milstein corrections.
    fn refresh_coeffs(&mut self) {
        if !self.recipe.milstein {
            return;
        }
        let sqm = self.m.sqrt();
        for l in 0..self.levels.len() {
            let b = self.levels[l].point.diffusion[(0, 0)];
            let c = if l == 0 {
                b
            } else {
                let y = &self.levels[l - 1];
                let z = self.trackers[l - 1].z[0];
                let (_, t1) = y.point.tensor.scalar_slope();
                b - y.point.diffusion[(0, 0)] - sqm * z * y.point.slopes.inv * y.coeff - self.m * z * z * t1 * y.coeff
            };
            self.levels[l].coeff = c;
            if l + 1 < self.levels.len() {
                self.trackers[l].drive_coeff = c;
            }
        }
    }

    /// Advances every level by one step with increment `dw`. Returns `false`
    /// once a level has left the guard ball; the engine then stays put.
    pub fn advance(&mut self, dw: &[f64]) -> Result<bool> {
        if self.sentinel.is_some() {
            return Ok(false);
        }
        let (dt, m) = (self.dt, self.m);
        let sqm = m.sqrt();
        let t_next = self.t0 + (self.step + 1) as f64 * dt;
        let nlev = self.levels.len();
        let ito = if self.recipe.milstein { 0.5 * (dw[0] * dw[0] - dt) } else { 0.0 };
        let mut pending_dr: Option<Vector> = None;
        for l in 0..nlev {
            let state = &self.levels[l];
            let mut q_next = state.point.q.clone();
            vec_ops::axpy(&mut q_next, 1.0, &slow_increment_lp(&state.point, dw, dt));
            if let Some(dr) = pending_dr.take() {
                vec_ops::axpy(&mut q_next, sqm, &dr);
            }
            if self.recipe.milstein {
                q_next[0] += state.point.diffusion_slope() * state.coeff * ito;
            }
            if outside_guard(&q_next) {
                self.sentinel = Some(self.step + 1);
                return Ok(false);
            }
            let driving = l + 1 < nlev;
            let next = eval_level_point(self.model, &self.recipe, t_next, &q_next, driving)?;
            if driving {
                let tracker = &self.trackers[l];
                let rs = remainder_step(&state.point, &next, tracker, dw, dt, m, self.recipe.milstein);
                if !vec_ops::is_finite(&rs.z_next) || !vec_ops::is_finite(&rs.dr) {
                    return Err(Error::FastProcessDivergence { path_id: self.path_id, step: self.step + 1 });
                }
                let tracker = &mut self.trackers[l];
                vec_ops::axpy(&mut tracker.r_accum, 1.0, &rs.dr);
                tracker.max_z = tracker.max_z.max(vec_ops::norm(&rs.z_next));
                tracker.z = rs.z_next;
                tracker.inv_z = rs.inv_z_next;
                tracker.tzz = rs.tzz_next;
                tracker.t = t_next;
                pending_dr = Some(rs.dr);
            }
            self.levels[l].point = next;
        }
        self.step += 1;
        self.refresh_coeffs();
        Ok(true)
    }
}

#[inline]
fn slow_increment_lp(p: &LevelPoint, dw: &[f64], dt: f64) -> Vector {
    let mut d = vec_ops::scale(&p.drift, dt);
    vec_ops::axpy(&mut d, 1.0, &p.diffusion.mul_vec(dw));
    d
}

/// Output of one `(m, ℓ)` simulation.
#[derive(Clone, Debug)]
pub struct HierarchyRun {
    pub m: f64,
    pub level: usize,
    /// Level `ℓ` positions; `aux` holds the `z` driven by this level when
    /// it drives a higher one, `remainder` holds the `R` it consumed.
    pub output: Trajectory,
    pub max_z: f64,
    pub sentinel: Option<usize>,
}

impl HierarchyRun {
    /// The remainder path this level consumed (identically zero for `ℓ = 1`).
    pub fn remainder_path(&self) -> &[f64] {
        self.output.remainder.as_deref().unwrap_or(&[])
    }
}

/// Runs levels `1..=opts.levels` on `path`, returning every level.
pub fn run_levels(model: &ModelSpec, m: f64, path: &WienerGrid, q0: &[f64], opts: &HierarchyOptions) -> Result<Vec<HierarchyRun>> {
    let mut engine = LevelEngine::new(model, m, path.dt, q0, opts)?;
    let nlev = opts.levels;
    let n = q0.len();
    let mut outs: Vec<Trajectory> = (0..nlev)
        .map(|l| {
            let mut t = Trajectory::new(0.0, path.dt, q0);
            t.remainder = Some(vec_ops::zeros(n).to_vec());
            if l + 1 < nlev {
                t.aux = Some(opts.z0.to_vec());
            }
            t
        })
        .collect();
    for i in 0..path.steps {
        if !engine.advance(path.increment(i))? {
            break;
        }
        for (l, out) in outs.iter_mut().enumerate() {
            out.q.extend_from_slice(engine.q(l + 1));
            let r: SmallVec<[f64; 4]> = if l == 0 { vec_ops::zeros(n) } else { engine.remainder(l).iter().copied().collect() };
            out.remainder.as_mut().unwrap().extend_from_slice(&r);
            if l + 1 < nlev {
                out.aux.as_mut().unwrap().extend_from_slice(engine.z(l + 1));
            }
        }
    }
    let sentinel = engine.sentinel();
    Ok(outs
        .into_iter()
        .enumerate()
        .map(|(l, mut output)| {
            output.sentinel = sentinel;
            let max_z = if l + 1 < nlev { engine.tracker(l + 1).max_z } else { 0.0 };
            HierarchyRun { m, level: l + 1, output, max_z, sentinel }
        })
        .collect())
}

/// Level `ℓ` on `path` (computing the levels below it along the way).
pub fn run_level(model: &ModelSpec, m: f64, level: usize, path: &WienerGrid, q0: &[f64], opts: &HierarchyOptions) -> Result<HierarchyRun> {
    let opts = HierarchyOptions { levels: level, ..opts.clone() };
    Ok(run_levels(model, m, path, q0, &opts)?.pop().expect("at least one level"))
}

/// [`run_level`] through one of the specialized formula sets.
pub fn run_level_special(
    kind: SpecialKind,
    model: &ModelSpec,
    m: f64,
    level: usize,
    path: &WienerGrid,
    q0: &[f64],
    opts: &HierarchyOptions,
) -> Result<HierarchyRun> {
    check_special(model, kind, q0)?;
    let opts = HierarchyOptions { route: Route::Special(kind), ..opts.clone() };
    run_level(model, m, level, path, q0, &opts)
}

fn euler_recipe(route: Route, m: f64, dt: f64) -> PointRecipe {
    PointRecipe { route, milstein: false, dt_over_m: dt / m }
}

/// One exponential step of the fast process driven by `y_t`.
pub fn step_z(model: &ModelSpec, m: f64, z: &[f64], y_t: &[f64], t: f64, dw: &[f64], dt: f64) -> Result<Vector> {
    let left = eval_level_point(model, &euler_recipe(Route::Generic, m, dt), t, y_t, true)?;
    let out = advance_z(&left, z, dw, m);
    if !vec_ops::is_finite(&out) {
        return Err(Error::FastProcessDivergence { path_id: 0, step: 0 });
    }
    Ok(out)
}

/// `ΔR` for one step of a driving path from `(t, y_t)` to `(t + dt, y_next)`.
#[allow(clippy::too_many_arguments)]
pub fn remainder_increment(
    model: &ModelSpec,
    m: f64,
    t: f64,
    y_t: &[f64],
    y_next: &[f64],
    z_t: &[f64],
    z_next: &[f64],
    dw: &[f64],
    dt: f64,
) -> Result<Vector> {
    remainder_increment_via(model, Route::Generic, m, t, y_t, y_next, z_t, z_next, dw, dt)
}

/// [`remainder_increment`] through an explicit coefficient route.
#[allow(clippy::too_many_arguments)]
pub fn remainder_increment_via(
    model: &ModelSpec,
    route: Route,
    m: f64,
    t: f64,
    y_t: &[f64],
    y_next: &[f64],
    z_t: &[f64],
    z_next: &[f64],
    dw: &[f64],
    dt: f64,
) -> Result<Vector> {
    let recipe = euler_recipe(route, m, dt);
    let left = eval_level_point(model, &recipe, t, y_t, true)?;
    let right = eval_level_point(model, &recipe, t + dt, y_next, true)?;
    let (inv_z, tzz) = brackets(&left, z_t, m);
    let (inv_z_next, tzz_next) = brackets(&right, z_next, m);
    Ok(assemble_dr(&left, z_t, (&inv_z, &tzz), (&inv_z_next, &tzz_next), dw, dt, m))
}
