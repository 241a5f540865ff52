//! Artifact writers. Every file starts with the configuration echo and the
//! seed, so any artifact is enough to regenerate the run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smallmass::coeffs::ValidationReport;
use smallmass::harness::{ConvergenceReport, CoupledPath, ExceedanceTable};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// Contents of `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub config: RunConfig,
    pub seed: u64,
    #[serde(flatten)]
    pub report: ConvergenceReport,
}

/// Contents of `validation.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationFile {
    pub config: RunConfig,
    pub seed: u64,
    pub passed: bool,
    #[serde(flatten)]
    pub report: ValidationReport,
}

pub fn write_file(path: &Path, contents: &str) -> Result<PathBuf> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Io { path: dir.to_path_buf(), source: e })?;
    }
    fs::write(path, contents).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    Ok(path.to_path_buf())
}

fn header(cfg: &RunConfig, prefix: &str) -> String {
    format!("{prefix} config: {}\n{prefix} seed: {}\n", cfg.echo_line(), cfg.mc.seed)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"))
}

pub fn errors_csv(cfg: &RunConfig, rep: &ConvergenceReport) -> String {
    let mut s = header(cfg, "#");
    s.push_str("level,m,err_supE,stderr_supE,err_Esup,stderr_Esup,sentinels\n");
    for lvl in &rep.per_level {
        for p in &lvl.points {
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                lvl.level, p.m, p.err_supE, p.stderr_supE, p.err_Esup, p.stderr_Esup, p.sentinels
            )
            .unwrap();
        }
    }
    s
}

pub fn report_json(file: &ReportFile) -> String {
    let mut s = serde_json::to_string_pretty(file).expect("report serializes");
    s.push('\n');
    s
}

pub fn read_report(path: &Path) -> Result<ReportFile> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    serde_json::from_str(&text).map_err(|e| CliError::Report { path: path.to_path_buf(), msg: e.to_string() })
}

/// Human-readable summary; `converge` prints it and `summary` rebuilds it
/// from `report.json`.
pub fn summary(file: &ReportFile) -> String {
    let r = &file.report;
    let mut s = String::new();
    writeln!(
        s,
        "model {} ({:?}), seed {}, {} paths used, {} excluded{}",
        r.model,
        r.route,
        file.seed,
        r.paths_used,
        r.paths_excluded,
        if r.unreliable { " [UNRELIABLE]" } else { "" }
    )
    .unwrap();
    for lvl in &r.per_level {
        let ci = |c: Option<f64>| c.map_or_else(String::new, |c| format!(" ± {c:.3}"));
        writeln!(
            s,
            "level {}: slope supE {}{}, slope Esup {}{}",
            lvl.level,
            opt(lvl.slope_supE),
            ci(lvl.ci95),
            opt(lvl.slope_Esup),
            ci(lvl.ci95_Esup)
        )
        .unwrap();
        if let Some(note) = &lvl.slope_note {
            writeln!(s, "  ({note})").unwrap();
        }
        for p in &lvl.points {
            writeln!(
                s,
                "  m {:.4e}  supE {:.4e} ± {:.2e}  Esup {:.4e} ± {:.2e}{}{}",
                p.m,
                p.err_supE,
                p.stderr_supE,
                p.err_Esup,
                p.stderr_Esup,
                if p.sentinels > 0 { format!("  sentinels {}", p.sentinels) } else { String::new() },
                if p.floor_limited { "  [floor-limited]" } else { "" }
            )
            .unwrap();
        }
    }
    writeln!(s, "momentum slope {}", opt(r.momentum.slope)).unwrap();
    if let Some(c) = &r.control {
        let worst = c.entries.iter().map(|e| e.shift).fold(0.0, f64::max);
        writeln!(s, "control at hbar {}: largest shift {:.1}%{}", c.hbar, 100.0 * worst, if c.flagged { " [FLAGGED]" } else { "" })
            .unwrap();
    }
    s
}

pub fn plot_script(cfg: &RunConfig) -> String {
    let mut s = String::from("#!/usr/bin/env python3\n");
    s.push_str(&header(cfg, "#"));
    s.push_str(
        r##""""Log-log plot of errors.csv: strong error against mass per level, with
reference lines of slope level/2."""
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "errors.csv"
rows = defaultdict(list)
with open(path) as fh:
    lines = [l for l in fh if not l.startswith("#")]
cols = lines[0].strip().split(",")
for line in lines[1:]:
    rec = dict(zip(cols, line.strip().split(",")))
    rows[int(rec["level"])].append((float(rec["m"]), float(rec["err_supE"]), float(rec["stderr_supE"])))

fig, ax = plt.subplots(figsize=(6, 4.5))
for level, pts in sorted(rows.items()):
    pts.sort()
    m = [p[0] for p in pts]
    e = [p[1] for p in pts]
    se = [p[2] for p in pts]
    line = ax.errorbar(m, e, yerr=se, marker="o", capsize=3, label=f"level {level}")
    ref = [e[-1] * (x / m[-1]) ** (level / 2) for x in m]
    ax.plot(m, ref, "--", color=line[0].get_color(), alpha=0.5, label=f"slope {level / 2:g}")
ax.set_xscale("log")
ax.set_yscale("log")
ax.set_xlabel("mass m")
ax.set_ylabel("sup_t E|q - q_level|^p ^(1/p)")
ax.legend()
fig.tight_layout()
out = path.rsplit(".", 1)[0] + ".png"
fig.savefig(out, dpi=150)
print(out)
"##,
    );
    s
}

pub fn exceedance_csv(cfg: &RunConfig, table: &ExceedanceTable) -> String {
    let mut s = header(cfg, "#");
    let levels: Vec<String> = table.monotone.iter().enumerate().map(|(l, b)| format!("level {}={}", l + 1, b)).collect();
    writeln!(s, "# monotone: {}", levels.join(" ")).unwrap();
    writeln!(
        s,
        "# cutoff_share: {} cutoff_dominated: {} paths_excluded: {} unreliable: {}",
        table.cutoff_share, table.cutoff_dominated, table.paths_excluded, table.unreliable
    )
    .unwrap();
    s.push_str("level,m,exceed,paths,fraction,ci_low,ci_high\n");
    for r in &table.rows {
        writeln!(s, "{},{},{},{},{},{},{}", r.level, r.m, r.exceed, r.paths, r.fraction, r.ci_low, r.ci_high).unwrap();
    }
    s
}

pub fn exceedance_summary(table: &ExceedanceTable) -> String {
    let mut s = String::new();
    for (l, mono) in table.monotone.iter().enumerate() {
        writeln!(s, "level {}: {}", l + 1, if *mono { "non-increasing" } else { "NOT monotone" }).unwrap();
        for r in table.rows_for(l + 1) {
            writeln!(s, "  m {:.4e}  {}/{} = {:.4} [{:.4}, {:.4}]", r.m, r.exceed, r.paths, r.fraction, r.ci_low, r.ci_high)
                .unwrap();
        }
    }
    if table.cutoff_dominated {
        writeln!(s, "cutoff-dominated: {:.1}% of reference paths left the ball", 100.0 * table.cutoff_share).unwrap();
    }
    s
}

/// One path at one mass: time, reference `q` and `u`, then `q` of every level.
pub fn trajectory_csv(cfg: &RunConfig, path_id: u64, cp: &CoupledPath) -> String {
    let n = cp.reference.n;
    let mut s = header(cfg, "#");
    writeln!(s, "# path: {path_id} m: {}", cp.m).unwrap();
    let mut cols = vec!["t".to_string()];
    cols.extend((0..n).map(|i| format!("q{i}")));
    cols.extend((0..n).map(|i| format!("u{i}")));
    for run in &cp.levels {
        cols.extend((0..n).map(|i| format!("level{}_q{i}", run.level)));
    }
    writeln!(s, "{}", cols.join(",")).unwrap();
    let aux = cp.reference.aux.as_deref().unwrap_or(&[]);
    let len = cp.levels.iter().map(|r| r.output.len()).chain([cp.reference.len()]).min().unwrap_or(0);
    for i in 0..len {
        let mut row = vec![format!("{}", cp.reference.time(i))];
        row.extend(cp.reference.q_at(i).iter().map(|x| x.to_string()));
        row.extend(aux[i * n..(i + 1) * n].iter().map(|x| x.to_string()));
        for run in &cp.levels {
            row.extend(run.output.q_at(i).iter().map(|x| x.to_string()));
        }
        writeln!(s, "{}", row.join(",")).unwrap();
    }
    s
}

#[derive(Serialize)]
struct TrajectoryJson<'a> {
    config: &'a RunConfig,
    seed: u64,
    path: u64,
    m: f64,
    dt: f64,
    q: &'a [f64],
    u: &'a [f64],
    levels: Vec<&'a [f64]>,
}

pub fn trajectory_json(cfg: &RunConfig, path_id: u64, cp: &CoupledPath) -> String {
    let doc = TrajectoryJson {
        config: cfg,
        seed: cfg.mc.seed,
        path: path_id,
        m: cp.m,
        dt: cp.reference.dt,
        q: &cp.reference.q,
        u: cp.reference.aux.as_deref().unwrap_or(&[]),
        levels: cp.levels.iter().map(|r| r.output.q.as_slice()).collect(),
    };
    serde_json::to_string(&doc).expect("trajectory serializes")
}

pub fn validation_json(file: &ValidationFile) -> String {
    let mut s = serde_json::to_string_pretty(file).expect("validation report serializes");
    s.push('\n');
    s
}
