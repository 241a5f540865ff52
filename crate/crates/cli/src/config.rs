//! Run configuration: a TOML file plus `key=value` overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smallmass::coeffs::cutoff_model;
use smallmass::coeffs::gallery::builtin;
use smallmass::coeffs::ModelSpec;
use smallmass::dynamics::{LevelScheme, UnderdampedScheme};
use smallmass::harness::{ControlMode, MassFamily, ProbSettings, StudyConfig};
use smallmass::hierarchy::FastPath;

use crate::error::{CliError, Result};

/// Keys without a default.
const REQUIRED: [&str; 7] = ["model.name", "sim.T", "sim.hbar", "sim.masses.m0", "sim.masses.count", "mc.paths", "mc.seed"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub sim: SimSection,
    pub mc: McSection,
    #[serde(default)]
    pub error: ErrorSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<CutoffSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub hbar: f64,
    pub masses: MassSpec,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_scheme")]
    pub scheme: LevelScheme,
    #[serde(default = "default_reference")]
    pub reference: UnderdampedScheme,
    #[serde(default)]
    pub fast_path: FastPath,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z0: Option<Vec<f64>>,
    #[serde(default)]
    pub control: ControlMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassSpec {
    pub m0: f64,
    pub count: usize,
    #[serde(default = "default_ratio")]
    pub ratio: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub paths: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorSection {
    #[serde(default = "default_p")]
    pub p: f64,
}

impl Default for ErrorSection {
    fn default() -> Self {
        ErrorSection { p: default_p() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffSection {
    pub r: f64,
    pub delta: f64,
    pub epsilon: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// Where artifacts go. The directory is not part of the echo: it does not
/// affect results, and leaving it out keeps reports byte-identical across
/// output locations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir", skip_serializing)]
    pub dir: PathBuf,
    #[serde(default)]
    pub format: OutputFormat,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_dir(), format: OutputFormat::default() }
    }
}

fn default_levels() -> usize {
    2
}
fn default_scheme() -> LevelScheme {
    LevelScheme::EulerMaruyama
}
fn default_reference() -> UnderdampedScheme {
    UnderdampedScheme::Exponential
}
fn default_ratio() -> u32 {
    2
}
fn default_p() -> f64 {
    2.0
}
fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn lookup<'a>(table: &'a toml::Table, key: &str) -> Option<&'a toml::Value> {
    let mut parts = key.split('.');
    let mut cur = table.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn override_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Override(format!("`{spec}` is not of the form key=value")))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Override(format!("malformed key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Override(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), override_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Parses TOML text, applies overrides in order and checks the result.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        for key in REQUIRED {
            if lookup(&table, key).is_none() {
                return Err(CliError::MissingKey(key.to_string()));
            }
        }
        let cfg: RunConfig = if overrides.is_empty() {
            // straight from the text so type errors carry line numbers
            toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?
        } else {
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Parse(e.to_string()))?
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
        Self::parse(&text, overrides)
    }

    fn check(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(CliError::Invalid { key: key.to_string(), msg: msg.to_string() });
        if self.sim.levels == 0 {
            return bad("sim.levels", "must be at least 1");
        }
        if self.mc.paths == 0 {
            return bad("mc.paths", "must be at least 1");
        }
        if self.sim.masses.ratio < 2 {
            return bad("sim.masses.ratio", "must be an integer of at least 2 so the mass grids nest");
        }
        if self.sim.masses.count == 0 {
            return bad("sim.masses.count", "must be at least 1");
        }
        if !(self.sim.masses.m0 > 0.0) {
            return bad("sim.masses.m0", "must be positive");
        }
        if let Some(c) = &self.cutoff {
            if !(c.r > 0.0 && c.delta > 0.0 && c.epsilon >= 0.0) {
                return bad("cutoff", "needs r > 0, delta > 0 and epsilon ≥ 0");
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ModelSpec> {
        Ok(builtin(&self.model.name, &self.model.params)?)
    }

    /// The model with the cutoff applied when a `[cutoff]` section exists.
    pub fn cut_model(&self) -> Result<ModelSpec> {
        let model = self.model()?;
        Ok(match &self.cutoff {
            Some(c) => cutoff_model(&model, c.r),
            None => model,
        })
    }

    pub fn study(&self, n: usize) -> StudyConfig {
        let s = &self.sim;
        StudyConfig {
            horizon: s.horizon,
            hbar: s.hbar,
            masses: MassFamily { m0: s.masses.m0, count: s.masses.count, ratio: s.masses.ratio },
            levels: s.levels,
            reference: s.reference,
            level_scheme: s.scheme,
            fast_path: s.fast_path,
            q0: s.q0.clone().unwrap_or_else(|| vec![0.0; n]),
            z0: s.z0.clone().unwrap_or_else(|| vec![0.0; n]),
            paths: self.mc.paths,
            seed: self.mc.seed,
            p: self.error.p,
            control: s.control,
        }
    }

    pub fn prob_settings(&self) -> Result<ProbSettings> {
        let c = self.cutoff.ok_or_else(|| CliError::MissingKey("cutoff.r".into()))?;
        Ok(ProbSettings { r: c.r, delta: c.delta, epsilon: c.epsilon })
    }

    /// The configuration as JSON, for embedding in artifacts.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("configuration serializes")
    }

    /// One-line echo for comment headers.
    pub fn echo_line(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }
}
