use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use mixreg_cli::{load_config, parse_config, resolve_output_dir, run, Command, OUTPUT_DIR_ENV};
use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn mixreg() -> Process {
    Process::new(env!("CARGO_BIN_EXE_mixreg"))
}

#[test]
fn shipped_configs_parse_and_round_trip() {
    for entry in fs::read_dir(config("")).unwrap() {
        let path = entry.unwrap().path();
        let c = load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(parse_config(&c.render()).unwrap(), c);
    }
}

#[test]
fn torsion_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = load_config(&config("torsion.toml")).unwrap();
    let s = run(&cfg, Command::Solve, tmp.path()).unwrap();
    assert!((s.metric_value("u0").unwrap() - 0.25).abs() <= 5e-3);
    assert!(s.metric_value("normal_dev").unwrap() <= 0.02);
    let summary = read_json(&tmp.path().join("summary.json"));
    assert_eq!(summary["schema_version"], 1);
    assert_eq!(summary["flags"]["max_principle"], "pass");
    let manifest = read_json(&tmp.path().join("MANIFEST.json"));
    assert_eq!(manifest["status"], "complete");
    let files: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(files, ["config.toml", "solution.csv", "solve.json", "summary.json"]);
    let csv = fs::read_to_string(tmp.path().join("solution.csv")).unwrap();
    assert!(csv.starts_with("x,y,value,interior\n"));
}

#[test]
fn ellipse_fails_constancy() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = load_config(&config("serrin_ellipse.toml")).unwrap();
    let s = run(&cfg, Command::Serrin, tmp.path()).unwrap();
    assert_eq!(s.flag_passed("serrin_constancy"), Some(false));
    assert!(!s.passed);
    let scan = fs::read_to_string(tmp.path().join("scan_0.csv")).unwrap();
    assert!(scan.starts_with("lambda,min_v,max_abs_v,nodes,situation_a,situation_b\n"));
}

#[test]
fn ball_passes_serrin_checks() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = load_config(&config("serrin_ball.toml")).unwrap();
    let s = run(&cfg, Command::Serrin, tmp.path()).unwrap();
    for flag in ["serrin_constancy", "moving_plane_0", "moving_plane_1", "radial_monotone"] {
        assert_eq!(s.flag_passed(flag), Some(true), "{flag}");
    }
}

#[test]
fn regularity_writes_scale_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = load_config(&config("mixed_regularity.toml")).unwrap();
    cfg.grid.h = 1.0 / 64.0;
    let s = run(&cfg, Command::Regularity, tmp.path()).unwrap();
    assert!(s.metric_value("tau_fit").unwrap() > 0.0);
    for name in ["oscillation.csv", "harnack.csv"] {
        let t = fs::read_to_string(tmp.path().join(name)).unwrap();
        assert!(t.starts_with("scale,sup,inf,osc,ratio,nodes\n"), "{name}");
        assert!(t.lines().count() >= 3, "{name}");
    }
}

#[test]
fn kernel_check_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = load_config(&config("subordinate_kernel.toml")).unwrap();
    let s = run(&cfg, Command::CheckKernel, tmp.path()).unwrap();
    assert_eq!(s.flag_passed("assumption"), Some(true));
    assert_eq!(s.flag_passed("theta_agreement"), Some(true));
}

#[test]
fn failed_run_records_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "[domain]\nshape = \"ball\"\ndim = 1\n[kernel]\nfamily = \"fractional\"\nalpha = 1.5\n";
    let cfg = parse_config(text).unwrap();
    assert!(run(&cfg, Command::Serrin, tmp.path()).is_err());
    let manifest = read_json(&tmp.path().join("MANIFEST.json"));
    assert_eq!(manifest["status"], "failed");
    assert!(manifest["error"].as_str().unwrap().contains("planar"));
}

#[test]
fn output_dir_precedence() {
    let mut cfg = load_config(&config("torsion.toml")).unwrap();
    cfg.output_dir = Some("from_config".into());
    let flag = Path::new("from_flag");
    assert_eq!(resolve_output_dir(Some(flag), Some("from_env".into()), &cfg), flag);
    assert_eq!(resolve_output_dir(None, Some("from_env".into()), &cfg), Path::new("from_env"));
    assert_eq!(resolve_output_dir(None, None, &cfg), Path::new("from_config"));
    cfg.output_dir = None;
    assert_eq!(resolve_output_dir(None, Some(String::new()), &cfg), Path::new("output"));
}

#[test]
fn binary_reports_every_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "[domain]\nshape = \"ball\"\nradios = 1\n[kernel]\nfamily = \"fractional\"\nalpha = 3\n").unwrap();
    let out = mixreg().args(["solve", "--config"]).arg(&path).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown key `domain.radios`"), "{err}");
    assert!(err.contains("alpha must lie in (0,2)"), "{err}");
}

#[test]
fn binary_honours_flags_and_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let env_dir = tmp.path().join("env");
    let status = mixreg()
        .args(["solve", "--workers", "2", "--grid-h", "0.03125", "--config"])
        .arg(config("torsion.toml"))
        .env(OUTPUT_DIR_ENV, &env_dir)
        .status()
        .unwrap();
    assert!(status.success());
    let cfg = fs::read_to_string(env_dir.join("config.toml")).unwrap();
    assert!(cfg.contains("h = 0.03125"), "{cfg}");
    let flag_dir = tmp.path().join("flag");
    let status = mixreg()
        .args(["check-kernel", "--config"])
        .arg(config("subordinate_kernel.toml"))
        .arg("--out")
        .arg(&flag_dir)
        .env(OUTPUT_DIR_ENV, &env_dir)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(flag_dir.join("kernel.json").exists());
    assert!(!mixreg().arg("solve").status().unwrap().success());
}
