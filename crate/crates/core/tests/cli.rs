use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn snse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snse")).args(args).output().unwrap()
}

fn snse_env(args: &[&str], key: &str, val: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snse"))
        .args(args)
        .env(key, val)
        .output()
        .unwrap()
}

fn torus() -> String {
    configs().join("torus_small.toml").to_string_lossy().into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn check_on_torus_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = snse(&["check", "--config", &torus(), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("check.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert!(rows.iter().any(|r| r.starts_with("skew_pairing,")));
    assert!(rows.iter().any(|r| r.starts_with("gradient_pairing,")));
    assert!(rows.iter().any(|r| r.starts_with("ito_isometry,")));
    assert!(rows.iter().any(|r| r.starts_with("bdg_p2,")));
    assert!(rows.iter().all(|r| r.ends_with(",true")));
}

#[test]
fn simulate_twice_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(snse(&["simulate", "--config", &torus(), "--out", s(&a), "--seed", "5"]).status.code(), Some(0));
    assert_eq!(snse(&["simulate", "--config", &torus(), "--out", s(&b), "--seed", "5"]).status.code(), Some(0));
    let x = fs::read(a.join("trajectory.csv")).unwrap();
    assert_eq!(x, fs::read(b.join("trajectory.csv")).unwrap());
    assert!(String::from_utf8(x).unwrap().starts_with("time,h_sq,v_sq,a_sq,dissipation,level,seed,stream\n"));
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    snse(&["simulate", "--config", &torus(), "--out", s(&a), "--seed", "5"]);
    snse(&["simulate", "--config", &torus(), "--out", s(&b), "--seed", "6"]);
    assert_ne!(fs::read(a.join("trajectory.csv")).unwrap(), fs::read(b.join("trajectory.csv")).unwrap());
    let m: serde_json::Value = serde_json::from_slice(&fs::read(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 6);
    assert_eq!(m["config"]["seed"], 6);
}

#[test]
fn study_v_self_difference_row_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = snse(&["study-v", "--config", &torus(), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(tmp.path().join("study_v.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "study,scenario,level,T,param,n_samples,mean,ci,min,max,excluded");
    let reference: Vec<&str> = lines.map(|l| l.split(',').collect::<Vec<_>>()).filter(|f| f[2] == "32").map(|f| f[6]).collect();
    assert_eq!(reference, vec!["0"]);
}

#[test]
fn outputs_stay_in_out_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    assert_eq!(snse(&["study-breckner", "--config", &torus(), "--out", s(&out)]).status.code(), Some(0));
    let mut names: Vec<String> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    assert_eq!(names, vec!["run".to_string()]);
    names = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert_eq!(names, vec!["manifest.json", "study_breckner.csv"]);
}

#[test]
fn json_format_and_manifest_contents() {
    let tmp = tempfile::tempdir().unwrap();
    let out = snse(&["study-h", "--config", &torus(), "--out", s(tmp.path()), "--format", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let t: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("study_h.json")).unwrap()).unwrap();
    assert_eq!(t["rows"].as_array().unwrap().len(), 6);
    let m: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "study-h");
    assert_eq!(m["format"], "json");
    assert_eq!(m["scenario_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["basis_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["outputs"][0]["file"], "study_h.json");
    let text = String::from_utf8(fs::read(tmp.path().join("manifest.json")).unwrap()).unwrap();
    assert!(!text.contains("jobs") && !text.contains("time\""));
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(configs().join("torus_small.toml")).unwrap();

    let bad = tmp.path().join("alpha.toml");
    fs::write(&bad, base.replace("kind = \"diagonal_linear\"", "kind = \"alpha_growth\"\nalpha = 1.0")).unwrap();
    let out = snse(&["check", "--config", s(&bad), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha must lie in [0,1)"));

    let typo = tmp.path().join("typo.toml");
    fs::write(&typo, base.replace("viscosity", "viscocity")).unwrap();
    let out = snse(&["check", "--config", s(&typo)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("did you mean `viscosity`") && err.contains("physics.viscocity"), "{err}");

    assert_eq!(snse(&["check"]).status.code(), Some(2));
    assert_eq!(snse(&["check", "--config", "/nonexistent.toml"]).status.code(), Some(2));
    assert_eq!(snse(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(snse(&["check", "--config", &torus(), "--jobs", "0"]).status.code(), Some(2));
}

#[test]
fn failed_assertion_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(configs().join("torus_small.toml")).unwrap();
    // Two paths cannot pin the isometry down to 5%.
    let cfg = tmp.path().join("few.toml");
    fs::write(&cfg, format!("{base}\n[check]\nisometry_paths = 2\n")).unwrap();
    let out = snse(&["check", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL ito_isometry"));
}

#[test]
fn basis_cache_is_written_and_reused() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let cfg = tmp.path().join("sq.toml");
    fs::write(
        &cfg,
        r#"
[domain]
kind = "dirichlet_square"
side_length = 1.0
grid_points = 16

[basis]
n_modes = 8

[physics]
viscosity = 0.1

[integrator]
dt = 0.001
horizon = 0.01
"#,
    )
    .unwrap();
    let run = |dir: &str| {
        let out = snse_env(&["basis-info", "--config", s(&cfg), "--out", s(&tmp.path().join(dir))], "SNSE_BASIS_CACHE", &cache);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(tmp.path().join(dir).join("basis.csv")).unwrap()
    };
    let first = run("a");
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 1);
    assert_eq!(first, run("b"));
}
