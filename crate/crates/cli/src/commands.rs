//! Subcommand implementations. Each returns the text to print and whether
//! the run counts as a success.

use std::path::{Path, PathBuf};

use smallmass::coeffs::validate_model;
use smallmass::harness::{convergence_study, coupled_trajectories, prob_convergence_study};
use smallmass::linalg::Vector;
use smallmass::noise::standard_normal_at;

use crate::config::{OutputFormat, RunConfig};
use crate::error::Result;
use crate::output::{self, ReportFile, ValidationFile};

/// Probes used by `validate`.
pub const PROBES: usize = 256;
/// Probe radius when no cutoff is configured.
const PROBE_RADIUS: f64 = 2.0;
/// Stream id of the probe draws, far from any path id.
const PROBE_STREAM: u64 = u64::MAX;

#[derive(Debug)]
pub struct Outcome {
    pub text: String,
    pub success: bool,
    pub files: Vec<PathBuf>,
}

pub fn converge(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let model = cfg.model()?;
    let study = cfg.study(model.dim());
    let report = convergence_study(&model, &study)?;
    let file = ReportFile { config: cfg.clone(), seed: cfg.mc.seed, report };
    let files = vec![
        output::write_file(&out.join("errors.csv"), &output::errors_csv(cfg, &file.report))?,
        output::write_file(&out.join("report.json"), &output::report_json(&file))?,
        output::write_file(&out.join("plot_errors.py"), &output::plot_script(cfg))?,
    ];
    Ok(Outcome { text: output::summary(&file), success: true, files })
}

pub fn summary(report: &Path) -> Result<Outcome> {
    let file = output::read_report(report)?;
    Ok(Outcome { text: output::summary(&file), success: true, files: vec![] })
}

pub fn probconverge(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let settings = cfg.prob_settings()?;
    let model = cfg.model()?;
    let study = cfg.study(model.dim());
    let table = prob_convergence_study(&model, &study, settings)?;
    let files = vec![output::write_file(&out.join("exceedance.csv"), &output::exceedance_csv(cfg, &table))?];
    Ok(Outcome { text: output::exceedance_summary(&table), success: true, files })
}

/// Writes path `path_id` at every mass of the family.
pub fn simulate(cfg: &RunConfig, out: &Path, path_id: u64) -> Result<Outcome> {
    let model = cfg.cut_model()?;
    let study = cfg.study(model.dim());
    let paths = coupled_trajectories(&model, &study, path_id)?;
    let mut files = Vec::with_capacity(paths.len());
    let mut text = String::new();
    for (j, cp) in paths.iter().enumerate() {
        let (name, body) = match cfg.output.format {
            OutputFormat::Csv => (format!("trajectory_p{path_id}_m{j}.csv"), output::trajectory_csv(cfg, path_id, cp)),
            OutputFormat::Json => (format!("trajectory_p{path_id}_m{j}.json"), output::trajectory_json(cfg, path_id, cp)),
        };
        files.push(output::write_file(&out.join(&name), &body)?);
        let end = cp.reference.last();
        text.push_str(&format!("m {:.4e}: {} steps, q(T) = {:?}\n", cp.m, cp.reference.len() - 1, end));
    }
    Ok(Outcome { text, success: true, files })
}

/// Probes: times evenly spread over `[0, T]`, positions Gaussian with
/// standard deviation `radius/2` per coordinate.
pub fn probes(cfg: &RunConfig, n: usize) -> Vec<(f64, Vector)> {
    let radius = cfg.cutoff.map_or(PROBE_RADIUS, |c| c.r);
    let seed = cfg.mc.seed;
    let n64 = n as u64;
    (0..PROBES as u64)
        .map(|i| {
            let t = cfg.sim.horizon * (i as f64 + 0.5) / PROBES as f64;
            let q: Vector = (0..n64).map(|c| 0.5 * radius * standard_normal_at(seed, PROBE_STREAM, i * n64 + c)).collect();
            (t, q)
        })
        .collect()
}

pub fn validate(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let model = cfg.cut_model()?;
    let report = validate_model(&model, &probes(cfg, model.dim()));
    let passed = report.passed();
    let mut text = String::new();
    for c in &report.checks {
        text.push_str(&format!(
            "{:<32} {}  worst {:.3e} (tol {:.1e}){}\n",
            c.name,
            if c.passed { "ok  " } else { "FAIL" },
            c.worst,
            c.tolerance,
            if c.detail.is_empty() { String::new() } else { format!("  {}", c.detail) }
        ));
    }
    let file = ValidationFile { config: cfg.clone(), seed: cfg.mc.seed, passed, report };
    let files = vec![output::write_file(&out.join("validation.json"), &output::validation_json(&file))?];
    Ok(Outcome { text, success: passed, files })
}
