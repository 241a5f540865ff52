//! Monte Carlo experiments over coupled mass families.
//!
//! Every path draws one Brownian path on the finest grid; the grid for each
//! mass is a block-sum coarsening of it, so all masses, the reference and
//! every hierarchy level see the same noise. Paths are simulated in parallel
//! batches and folded into the accumulators strictly in path order, which
//! makes every report independent of the worker count.

pub mod stats;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeffs::cutoff_model;
use crate::coeffs::ModelSpec;
use crate::dynamics::{
    outside_guard, simulate_underdamped, step_underdamped, LevelScheme, PhaseState, Trajectory, UnderdampedScheme,
};
use crate::error::{Error, Result};
use crate::hierarchy::{resolve_route, run_levels, FastPath, HierarchyOptions, HierarchyRun, LevelEngine, Route};
use crate::linalg::{vec_ops, Vector};
use crate::noise::{coarsen, generate_path, steps_for, WienerGrid};

pub use stats::{fit_slope, wilson_interval, Compensated, ErrorAccumulator, ErrorEstimate, SlopeFit};

/// Paths simulated per parallel batch.
const BATCH: usize = 64;
/// Sentinel share above which a study is flagged unreliable.
const UNRELIABLE_SHARE: f64 = 0.01;
/// Relative change under dt-halving above which an error is floor-limited.
const CONTROL_SHIFT: f64 = 0.2;
/// Share of reference paths leaving the cutoff ball that marks a study as
/// cutoff-dominated.
const CUTOFF_SHARE: f64 = 0.05;

/// Geometric mass family `m₀, m₀/ratio, …`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassFamily {
    pub m0: f64,
    pub count: usize,
    pub ratio: u32,
}

impl MassFamily {
    pub fn masses(&self) -> Vec<f64> {
        (0..self.count).map(|j| self.m0 / (self.ratio as f64).powi(j as i32)).collect()
    }
}

/// Which masses are re-run with `h̄/2`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlMode {
    None,
    #[default]
    Smallest,
    All,
}

/// Everything a study needs besides the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub horizon: f64,
    pub hbar: f64,
    pub masses: MassFamily,
    pub levels: usize,
    pub reference: UnderdampedScheme,
    pub level_scheme: LevelScheme,
    pub fast_path: FastPath,
    pub q0: Vec<f64>,
    /// Initial fast variable; the reference starts from `u₀ = √m·z₀`.
    pub z0: Vec<f64>,
    pub paths: usize,
    pub seed: u64,
    pub p: f64,
    pub control: ControlMode,
}

impl StudyConfig {
    pub fn new(n: usize) -> Self {
        StudyConfig {
            horizon: 1.0,
            hbar: 0.01,
            masses: MassFamily { m0: 0.125, count: 6, ratio: 2 },
            levels: 2,
            reference: UnderdampedScheme::Exponential,
            level_scheme: LevelScheme::EulerMaruyama,
            fast_path: FastPath::Auto,
            q0: vec![0.0; n],
            z0: vec![0.0; n],
            paths: 100,
            seed: 1,
            p: 2.0,
            control: ControlMode::Smallest,
        }
    }

    fn check(&self, model: &ModelSpec) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.hbar > 0.0) {
            return bad(format!("hbar must be positive, got {}", self.hbar));
        }
        if !(self.masses.m0 > 0.0) || self.masses.count == 0 || self.masses.ratio < 2 {
            return bad("mass family needs m0 > 0, count ≥ 1 and an integer ratio ≥ 2".into());
        }
        if self.levels == 0 || self.paths == 0 {
            return bad("levels and paths must be at least 1".into());
        }
        if !(self.p >= 1.0) {
            return bad(format!("error exponent p must be ≥ 1, got {}", self.p));
        }
        if self.q0.len() != model.dim() || self.z0.len() != model.dim() {
            return bad(format!("q0 and z0 must have length {}", model.dim()));
        }
        Ok(())
    }
}

/// Grids of one study: the finest grid plus, per mass, its coarsening factor.
struct GridPlan {
    masses: Vec<f64>,
    base_dt: f64,
    base_steps: usize,
    factors: Vec<usize>,
    /// `(mass index, factor)` of the `h̄/2` control runs.
    control: Vec<(usize, usize)>,
}

impl GridPlan {
    fn new(cfg: &StudyConfig) -> Result<Self> {
        let masses = cfg.masses.masses();
        let refine = if cfg.control == ControlMode::None { 1 } else { 2 };
        let m_min = *masses.last().unwrap();
        let base_dt = cfg.hbar * m_min / refine as f64;
        let base_steps = steps_for(cfg.horizon, base_dt)?;
        let ratio = cfg.masses.ratio as usize;
        let count = masses.len();
        let factors: Vec<usize> = (0..count).map(|j| ratio.pow((count - 1 - j) as u32) * refine).collect();
        for &f in &factors {
            if base_steps % f != 0 {
                return Err(Error::GridMismatch(format!("{base_steps} fine steps do not split into blocks of {f}")));
            }
        }
        let control = match cfg.control {
            ControlMode::None => vec![],
            ControlMode::Smallest => vec![(count - 1, factors[count - 1] / 2)],
            ControlMode::All => factors.iter().enumerate().map(|(j, f)| (j, f / 2)).collect(),
        };
        Ok(GridPlan { masses, base_dt, base_steps, factors, control })
    }
}

impl GridPlan {
    /// Grid of every mass, coarsened from the finest mass upwards so each is
    /// a coarsening of the next finer one.
    fn mass_grids(&self, fine: &WienerGrid) -> Result<Vec<WienerGrid>> {
        let mut grids: Vec<WienerGrid> = Vec::with_capacity(self.masses.len());
        let mut prev: (usize, WienerGrid) = (1, fine.clone());
        for &f in self.factors.iter().rev() {
            let g = coarsen(&prev.1, f / prev.0)?;
            prev = (f, g.clone());
            grids.push(g);
        }
        grids.reverse();
        Ok(grids)
    }
}

/// Per-mass output of one path.
struct MassSample {
    /// `‖q^m − q^ℓ‖^p` per level and grid time (empty when not requested).
    powers: Vec<Vec<f64>>,
    /// `‖u‖²` per grid time.
    momentum: Vec<f64>,
    /// `sup_t ‖q^m − q^ℓ‖` per level.
    sup_dev: Vec<f64>,
    /// `sup_t ‖q^m‖`
    sup_ref: f64,
    sentinel: bool,
}

struct PathSample {
    masses: Vec<MassSample>,
    control: Vec<MassSample>,
}

impl PathSample {
    fn sentinel(&self) -> bool {
        self.masses.iter().chain(&self.control).any(|s| s.sentinel)
    }
}

struct Runner<'a> {
    model: &'a ModelSpec,
    cfg: &'a StudyConfig,
    route: Route,
    plan: GridPlan,
    series: bool,
}

impl Runner<'_> {
    fn sample_mass(&self, m: f64, grid: &WienerGrid, path_id: u64) -> Result<MassSample> {
        let cfg = self.cfg;
        let nlev = cfg.levels;
        let p = cfg.p;
        let opts = HierarchyOptions {
            levels: nlev,
            scheme: cfg.level_scheme,
            route: self.route,
            z0: cfg.z0.iter().copied().collect(),
            path_id,
        };
        let mut engine = LevelEngine::new(self.model, m, grid.dt, &cfg.q0, &opts)?;
        let mut state = PhaseState {
            t: 0.0,
            q: cfg.q0.iter().copied().collect(),
            u: cfg.z0.iter().map(|z| z * m.sqrt()).collect(),
        };
        let cap = if self.series { grid.steps + 1 } else { 0 };
        let mut sample = MassSample {
            powers: vec![Vec::with_capacity(cap); nlev],
            momentum: Vec::with_capacity(cap),
            sup_dev: vec![0.0; nlev],
            sup_ref: vec_ops::norm(&state.q),
            sentinel: false,
        };
        let record = |sample: &mut MassSample, state: &PhaseState, engine: &LevelEngine| {
            for l in 0..nlev {
                let d = vec_ops::norm(&vec_ops::sub(&state.q, engine.q(l + 1)));
                sample.sup_dev[l] = sample.sup_dev[l].max(d);
                if self.series {
                    sample.powers[l].push(if p == 2.0 { d * d } else { d.powf(p) });
                }
            }
            if self.series {
                sample.momentum.push(vec_ops::dot(&state.u, &state.u));
            }
            sample.sup_ref = sample.sup_ref.max(vec_ops::norm(&state.q));
        };
        record(&mut sample, &state, &engine);
        for i in 0..grid.steps {
            let dw = grid.increment(i);
            state = step_underdamped(self.model, m, &state, dw, grid.dt, cfg.reference)?;
            if outside_guard(&state.q) || !vec_ops::is_finite(&state.u) || !engine.advance(dw)? {
                sample.sentinel = true;
                break;
            }
            record(&mut sample, &state, &engine);
        }
        Ok(sample)
    }

    fn sample_path(&self, path_id: u64) -> Result<PathSample> {
        let plan = &self.plan;
        let k = self.model.noise_dim();
        let fine = generate_path(self.cfg.seed, path_id, plan.base_steps, k, plan.base_dt);
        let grids = plan.mass_grids(&fine)?;
        let mut masses = Vec::with_capacity(plan.masses.len());
        for (j, g) in grids.iter().enumerate() {
            masses.push(self.sample_mass(plan.masses[j], g, path_id)?);
        }
        let mut control = Vec::with_capacity(plan.control.len());
        for &(j, f) in &plan.control {
            let g = coarsen(&fine, f)?;
            control.push(self.sample_mass(plan.masses[j], &g, path_id)?);
        }
        Ok(PathSample { masses, control })
    }

    /// Simulates every path and hands them to `fold` in path order.
    fn run(&self, mut fold: impl FnMut(PathSample) -> Result<()>) -> Result<()> {
        let paths = self.cfg.paths as u64;
        let mut start = 0u64;
        while start < paths {
            let end = (start + BATCH as u64).min(paths);
            let batch: Vec<Result<PathSample>> = (start..end).into_par_iter().map(|id| self.sample_path(id)).collect();
            for s in batch {
                fold(s?)?;
            }
            start = end;
        }
        Ok(())
    }
}

fn runner<'a>(model: &'a ModelSpec, cfg: &'a StudyConfig, series: bool) -> Result<Runner<'a>> {
    cfg.check(model)?;
    let route = resolve_route(model, cfg.fast_path, &cfg.q0)?;
    let plan = GridPlan::new(cfg)?;
    Ok(Runner { model, cfg, route, plan, series })
}

/// Reference and hierarchy trajectories of one path at one mass.
#[derive(Clone, Debug)]
pub struct CoupledPath {
    pub m: f64,
    /// Underdamped positions, with the momenta `u` in `aux`.
    pub reference: Trajectory,
    pub levels: Vec<HierarchyRun>,
}

/// Full trajectories of path `path_id` for every mass of the study, on the
/// same coupled grids the studies use.
pub fn coupled_trajectories(model: &ModelSpec, cfg: &StudyConfig, path_id: u64) -> Result<Vec<CoupledPath>> {
    let run = runner(model, cfg, false)?;
    let plan = &run.plan;
    let fine = generate_path(cfg.seed, path_id, plan.base_steps, model.noise_dim(), plan.base_dt);
    let opts = HierarchyOptions {
        levels: cfg.levels,
        scheme: cfg.level_scheme,
        route: run.route,
        z0: z0_vector(cfg),
        path_id,
    };
    plan.mass_grids(&fine)?
        .iter()
        .zip(&plan.masses)
        .map(|(g, &m)| {
            let u0: Vec<f64> = cfg.z0.iter().map(|z| z * m.sqrt()).collect();
            let reference = simulate_underdamped(model, m, g, &cfg.q0, &u0, cfg.reference)?;
            let levels = run_levels(model, m, g, &cfg.q0, &opts)?;
            Ok(CoupledPath { m, reference, levels })
        })
        .collect()
}

/// Error of one level at one mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ErrorPoint {
    pub m: f64,
    pub err_supE: f64,
    pub stderr_supE: f64,
    pub err_Esup: f64,
    pub stderr_Esup: f64,
    /// Paths whose run at this mass tripped the guard.
    pub sentinels: usize,
    /// The `h̄/2` control moved this error by more than 20%.
    pub floor_limited: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct LevelReport {
    pub level: usize,
    pub slope_supE: Option<f64>,
    pub ci95: Option<f64>,
    pub slope_Esup: Option<f64>,
    pub ci95_Esup: Option<f64>,
    /// Why a slope is missing, if it is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_note: Option<String>,
    pub points: Vec<ErrorPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentumPoint {
    pub m: f64,
    /// `sup_t E[‖u_t‖²]^{1/2}`
    pub value: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentumReport {
    pub slope: Option<f64>,
    pub ci95: Option<f64>,
    pub points: Vec<MomentumPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlEntry {
    pub level: usize,
    pub m: f64,
    /// `sup_t E` error at `h̄`.
    pub err: f64,
    /// The same error at `h̄/2`.
    pub err_control: f64,
    /// `|err_control − err| / err`
    pub shift: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    pub hbar: f64,
    pub entries: Vec<ControlEntry>,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub study: StudyConfig,
    pub model: String,
    pub route: Route,
    pub per_level: Vec<LevelReport>,
    pub momentum: MomentumReport,
    pub control: Option<ControlReport>,
    pub paths_used: usize,
    pub paths_excluded: usize,
    pub unreliable: bool,
}

impl ConvergenceReport {
    pub fn level(&self, level: usize) -> Option<&LevelReport> {
        self.per_level.iter().find(|l| l.level == level)
    }
}

fn split_fit(fit: Result<SlopeFit>) -> (Option<f64>, Option<f64>, Option<String>) {
    match fit {
        Ok(f) => (Some(f.slope), Some(f.ci95), None),
        Err(e) => (None, None, Some(e.to_string())),
    }
}

/// Strong errors of every level against the underdamped reference over a
/// coupled mass family.
pub fn convergence_study(model: &ModelSpec, cfg: &StudyConfig) -> Result<ConvergenceReport> {
    let run = runner(model, cfg, true)?;
    let plan = &run.plan;
    let nlev = cfg.levels;
    let steps: Vec<usize> = plan.factors.iter().map(|f| plan.base_steps / f + 1).collect();
    let mut acc: Vec<Vec<ErrorAccumulator>> =
        steps.iter().map(|&s| (0..nlev).map(|_| ErrorAccumulator::new(s, cfg.p)).collect()).collect();
    let mut mom: Vec<ErrorAccumulator> = steps.iter().map(|&s| ErrorAccumulator::new(s, 2.0)).collect();
    let mut ctl: Vec<Vec<ErrorAccumulator>> = plan
        .control
        .iter()
        .map(|&(_, f)| (0..nlev).map(|_| ErrorAccumulator::new(plan.base_steps / f + 1, cfg.p)).collect())
        .collect();
    let mut sentinels = vec![0usize; plan.masses.len()];
    let mut excluded = 0usize;
    run.run(|s| {
        if s.sentinel() {
            excluded += 1;
            for (j, ms) in s.masses.iter().enumerate() {
                sentinels[j] += ms.sentinel as usize;
            }
            for (c, ms) in s.control.iter().enumerate() {
                sentinels[plan.control[c].0] += ms.sentinel as usize;
            }
            return Ok(());
        }
        for (j, ms) in s.masses.iter().enumerate() {
            for l in 0..nlev {
                acc[j][l].add_powers(&ms.powers[l])?;
            }
            mom[j].add_powers(&ms.momentum)?;
        }
        for (c, ms) in s.control.iter().enumerate() {
            for l in 0..nlev {
                ctl[c][l].add_powers(&ms.powers[l])?;
            }
        }
        Ok(())
    })?;

    let estimates: Vec<Vec<ErrorEstimate>> = acc.iter().map(|a| a.iter().map(|x| x.finish()).collect()).collect();
    let mut flagged = vec![vec![false; nlev]; plan.masses.len()];
    let control = if plan.control.is_empty() {
        None
    } else {
        let mut entries = Vec::new();
        for (c, &(j, _)) in plan.control.iter().enumerate() {
            for l in 0..nlev {
                let err = estimates[j][l].err_supE;
                let err_control = ctl[c][l].finish().err_supE;
                let shift = (err_control - err).abs() / err;
                let hit = !(shift <= CONTROL_SHIFT);
                flagged[j][l] = hit;
                entries.push(ControlEntry { level: l + 1, m: plan.masses[j], err, err_control, shift, flagged: hit });
            }
        }
        let any = entries.iter().any(|e| e.flagged);
        Some(ControlReport { hbar: cfg.hbar / 2.0, entries, flagged: any })
    };

    let per_level = (0..nlev)
        .map(|l| {
            let points: Vec<ErrorPoint> = plan
                .masses
                .iter()
                .enumerate()
                .map(|(j, &m)| {
                    let e = &estimates[j][l];
                    ErrorPoint {
                        m,
                        err_supE: e.err_supE,
                        stderr_supE: e.stderr_supE,
                        err_Esup: e.err_Esup,
                        stderr_Esup: e.stderr_Esup,
                        sentinels: sentinels[j],
                        floor_limited: flagged[j][l],
                    }
                })
                .collect();
            let ms: Vec<f64> = points.iter().map(|p| p.m).collect();
            let sup_e: Vec<f64> = points.iter().map(|p| p.err_supE).collect();
            let e_sup: Vec<f64> = points.iter().map(|p| p.err_Esup).collect();
            let (slope_sup_e, ci95, note) = split_fit(fit_slope(&ms, &sup_e));
            let (slope_e_sup, ci95_e_sup, _) = split_fit(fit_slope(&ms, &e_sup));
            LevelReport {
                level: l + 1,
                slope_supE: slope_sup_e,
                ci95,
                slope_Esup: slope_e_sup,
                ci95_Esup: ci95_e_sup,
                slope_note: note,
                points,
            }
        })
        .collect();

    let mpoints: Vec<MomentumPoint> = mom
        .iter()
        .zip(&plan.masses)
        .map(|(a, &m)| {
            let e = a.finish();
            MomentumPoint { m, value: e.err_supE, stderr: e.stderr_supE }
        })
        .collect();
    let (mslope, mci, _) = split_fit(fit_slope(
        &plan.masses,
        &mpoints.iter().map(|p| p.value).collect::<Vec<_>>(),
    ));

    let used = cfg.paths - excluded;
    Ok(ConvergenceReport {
        study: cfg.clone(),
        model: model.name().to_string(),
        route: run.route,
        per_level,
        momentum: MomentumReport { slope: mslope, ci95: mci, points: mpoints },
        control,
        paths_used: used,
        paths_excluded: excluded,
        unreliable: excluded as f64 > UNRELIABLE_SHARE * cfg.paths as f64,
    })
}

/// Strong error between two coupled ensembles; pairs with a sentinel on
/// either side are skipped and counted.
pub fn strong_error(
    reference: &[Trajectory],
    approx: &[Trajectory],
    p: f64,
) -> Result<(ErrorEstimate, usize)> {
    if reference.len() != approx.len() || reference.is_empty() {
        return Err(Error::GridMismatch(format!(
            "ensembles hold {} and {} paths",
            reference.len(),
            approx.len()
        )));
    }
    let len = reference[0].len();
    let mut acc = ErrorAccumulator::new(len, p);
    let mut skipped = 0;
    for (a, b) in reference.iter().zip(approx) {
        if a.len() != len || b.len() != len || a.dt != b.dt || a.n != b.n {
            return Err(Error::GridMismatch("trajectories live on different grids".into()));
        }
        if a.sentinel.is_some() || b.sentinel.is_some() {
            skipped += 1;
            continue;
        }
        let powers: Vec<f64> =
            (0..len).map(|i| vec_ops::norm(&vec_ops::sub(a.q_at(i), b.q_at(i))).powf(p)).collect();
        acc.add_powers(&powers)?;
    }
    Ok((acc.finish(), skipped))
}

/// Thresholds of the convergence-in-probability study.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbSettings {
    pub r: f64,
    pub delta: f64,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceRow {
    pub level: usize,
    pub m: f64,
    pub exceed: usize,
    pub paths: usize,
    pub fraction: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceTable {
    pub study: StudyConfig,
    pub settings: ProbSettings,
    pub rows: Vec<ExceedanceRow>,
    /// Per level: fractions never rise beyond the confidence bands as `m` falls.
    pub monotone: Vec<bool>,
    /// Share of reference paths that left the ball of radius `r`.
    pub cutoff_share: f64,
    pub cutoff_dominated: bool,
    pub paths_excluded: usize,
    pub unreliable: bool,
}

impl ExceedanceTable {
    pub fn rows_for(&self, level: usize) -> Vec<&ExceedanceRow> {
        self.rows.iter().filter(|r| r.level == level).collect()
    }
}

/// Fraction of paths whose scaled sup deviation `sup_t‖q^m − q^ℓ‖ / m^{ℓ/2−ε}`
/// exceeds `δ`, computed on the cutoff version of `model`.
pub fn prob_convergence_study(model: &ModelSpec, cfg: &StudyConfig, settings: ProbSettings) -> Result<ExceedanceTable> {
    if !(settings.r > 0.0) || !(settings.delta > 0.0) || !(settings.epsilon >= 0.0) {
        return Err(Error::Config("cutoff needs r > 0, delta > 0 and epsilon ≥ 0".into()));
    }
    let cut = cutoff_model(model, settings.r);
    let cfg = StudyConfig { control: ControlMode::None, ..cfg.clone() };
    let run = runner(&cut, &cfg, false)?;
    let masses = run.plan.masses.clone();
    let nlev = cfg.levels;
    let mut exceed = vec![vec![0usize; masses.len()]; nlev];
    let mut escaped = 0usize;
    let mut used = 0usize;
    let mut excluded = 0usize;
    run.run(|s| {
        if s.sentinel() {
            excluded += 1;
            return Ok(());
        }
        used += 1;
        escaped += s.masses.iter().any(|ms| ms.sup_ref > settings.r) as usize;
        for (j, ms) in s.masses.iter().enumerate() {
            for l in 0..nlev {
                let scale = masses[j].powf((l + 1) as f64 / 2.0 - settings.epsilon);
                if ms.sup_dev[l] / scale > settings.delta {
                    exceed[l][j] += 1;
                }
            }
        }
        Ok(())
    })?;
    let mut rows = Vec::new();
    let mut monotone = Vec::new();
    for (l, counts) in exceed.iter().enumerate() {
        let mut ok = true;
        let mut prev_high = f64::INFINITY;
        for (j, &k) in counts.iter().enumerate() {
            let (lo, hi) = wilson_interval(k, used);
            if lo > prev_high {
                ok = false;
            }
            prev_high = hi;
            rows.push(ExceedanceRow {
                level: l + 1,
                m: masses[j],
                exceed: k,
                paths: used,
                fraction: if used == 0 { f64::NAN } else { k as f64 / used as f64 },
                ci_low: lo,
                ci_high: hi,
            });
        }
        monotone.push(ok);
    }
    let share = if used == 0 { 0.0 } else { escaped as f64 / used as f64 };
    Ok(ExceedanceTable {
        study: cfg.clone(),
        settings,
        rows,
        monotone,
        cutoff_share: share,
        cutoff_dominated: share > CUTOFF_SHARE,
        paths_excluded: excluded,
        unreliable: excluded as f64 > UNRELIABLE_SHARE * cfg.paths as f64,
    })
}

/// `z₀` as a vector, for callers holding a slice.
pub fn z0_vector(cfg: &StudyConfig) -> Vector {
    cfg.z0.iter().copied().collect()
}
