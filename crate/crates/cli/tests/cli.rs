use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[model]
name = "scalar-sin"

[sim]
T = 0.5
hbar = 0.02
levels = 2
masses = { m0 = 0.125, count = 3, ratio = 2 }

[mc]
paths = 30
seed = 5

[cutoff]
r = 10.0
delta = 1.0
epsilon = 0.1
"#;

fn smallmass(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smallmass")).current_dir(dir).args(args).output().expect("binary runs")
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

fn carries_echo(text: &str) {
    assert!(text.contains("\"seed\":5") || text.contains("seed: 5") || text.contains("\"seed\": 5"), "no seed in {text:.200}");
    assert!(text.contains("scalar-sin"), "no config echo in {text:.200}");
}

#[test]
fn missing_seed_names_the_key() {
    let dir = setup(&SMALL.replace("seed = 5", ""));
    let out = smallmass(dir.path(), &["--config", "run.toml", "converge"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("mc.seed"), "{err}");
}

#[test]
fn malformed_toml_reports_a_line() {
    let dir = setup(&SMALL.replace("T = 0.5", "T = = 0.5"));
    let out = smallmass(dir.path(), &["--config", "run.toml", "converge"]);
    assert_eq!(out.status.code(), Some(smallmass_cli::EXIT_USAGE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
}

#[test]
fn validate_builtin_model_exits_zero() {
    let dir = setup(SMALL);
    let out = smallmass(dir.path(), &["--config", "run.toml", "--out", "res", "validate"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("res/validation.json")).unwrap()).unwrap();
    assert_eq!(json["passed"], true);
    assert_eq!(json["seed"], 5);
    assert_eq!(json["config"]["model"]["name"], "scalar-sin");
}

#[test]
fn converge_writes_artifacts_and_summary_round_trips() {
    let dir = setup(SMALL);
    let out = smallmass(dir.path(), &["--config", "run.toml", "--out", "res", "--threads", "1", "converge"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let printed = String::from_utf8(out.stdout).unwrap();

    let csv = fs::read_to_string(dir.path().join("res/errors.csv")).unwrap();
    carries_echo(&csv);
    let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "level,m,err_supE,stderr_supE,err_Esup,stderr_Esup,sentinels");
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2 * 3);

    let report = fs::read_to_string(dir.path().join("res/report.json")).unwrap();
    carries_echo(&report);
    let json: serde_json::Value = serde_json::from_str(&report).unwrap();
    for (i, lvl) in json["per_level"].as_array().unwrap().iter().enumerate() {
        assert_eq!(lvl["level"], i + 1);
        assert!(lvl["slope_supE"].is_number());
        assert!(lvl["ci95"].is_number());
        assert!(lvl["slope_Esup"].is_number());
        assert_eq!(lvl["points"].as_array().unwrap().len(), 3);
    }
    carries_echo(&fs::read_to_string(dir.path().join("res/plot_errors.py")).unwrap());

    let again = smallmass(dir.path(), &["--out", "res", "summary"]);
    assert!(again.status.success());
    assert_eq!(String::from_utf8(again.stdout).unwrap(), printed);
}

#[test]
fn overrides_reach_the_run() {
    let dir = setup(SMALL);
    let out = smallmass(
        dir.path(),
        &["--config", "run.toml", "--out", "res", "--override", "mc.seed=9", "--override", "sim.levels=1", "converge"],
    );
    assert!(out.status.success());
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("res/report.json")).unwrap()).unwrap();
    assert_eq!(json["seed"], 9);
    assert_eq!(json["per_level"].as_array().unwrap().len(), 1);
}

#[test]
fn probconverge_writes_exceedance_table() {
    let dir = setup(&SMALL.replace("scalar-sin", "double-well"));
    let out = smallmass(dir.path(), &["--config", "run.toml", "--out", "res", "probconverge"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("res/exceedance.csv")).unwrap();
    assert!(csv.contains("double-well") && csv.contains("# seed: 5"));
    assert!(csv.contains("level,m,exceed,paths,fraction,ci_low,ci_high"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2 * 3);
}

#[test]
fn probconverge_without_cutoff_is_a_config_error() {
    let cut = SMALL.split("[cutoff]").next().unwrap().to_string();
    let dir = setup(&cut);
    let out = smallmass(dir.path(), &["--config", "run.toml", "probconverge"]);
    assert_eq!(out.status.code(), Some(smallmass_cli::EXIT_USAGE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cutoff"));
}

#[test]
fn simulate_writes_one_trajectory_per_mass() {
    let dir = setup(SMALL);
    let out = smallmass(dir.path(), &["--config", "run.toml", "--out", "res", "simulate", "--path", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for (j, steps) in [(0usize, 200usize), (1, 400), (2, 800)] {
        let csv = fs::read_to_string(dir.path().join(format!("res/trajectory_p3_m{j}.csv"))).unwrap();
        carries_echo(&csv);
        let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows[0], "t,q0,u0,level1_q0,level2_q0");
        assert_eq!(rows.len(), 1 + steps + 1);
        assert!(rows[1].starts_with("0,0,0,0,0"), "{}", rows[1]);
    }
}

#[test]
fn numerical_errors_have_their_own_status() {
    // the Milstein scheme is one-dimensional only
    let dir = setup(&SMALL.replace("scalar-sin", "magnetic-2d").replace("levels = 2", "levels = 2\nscheme = \"milstein\""));
    let out = smallmass(dir.path(), &["--config", "run.toml", "converge"]);
    assert_eq!(out.status.code(), Some(smallmass_cli::EXIT_NUMERICAL));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Milstein"));
}
