use std::path::Path;
use std::process::{Command, Output};

fn fer_er(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fer-er"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

#[test]
fn ground_state_writes_entropy_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fer_er(&["ground-state", "--model.sites_per_dim=64", "--dump-geometry"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let entropy = lines(&tmp.path().join("entropy.csv"));
    assert_eq!(entropy[0], "L,S_L");
    assert_eq!(entropy.len(), 6);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("ground_state.json")).unwrap()).unwrap();
    assert_eq!(summary["modes"], 64);
    assert!(tmp.path().join("geometry.json").exists());
    assert!(tmp.path().join("config.json").exists());
}

#[test]
fn rg_run_reports_every_level() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fer_er(
        &["rg-run", "--model.sites_per_dim=128", "--flow.levels=2", "--compare", "model.lambda=1.1"],
        tmp.path(),
    );
    assert!(matches!(out.status.code(), Some(0) | Some(3)));
    let levels = lines(&tmp.path().join("levels.csv"));
    assert!(levels[0].starts_with("level,sites_per_axis,modes_per_site,eps_max"));
    assert_eq!(levels.len(), 4);
    assert_eq!(lines(&tmp.path().join("compare.csv")).len(), 3);
    for f in ["entropy.csv", "trajectory.json", "summary.json", "compare_levels.csv"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
}

#[test]
fn correlators_and_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fer_er(
        &["correlators", "--model.sites_per_dim=64", "--flow.levels=1", "--outputs.max_separation=8"],
        tmp.path(),
    );
    assert!(matches!(out.status.code(), Some(0) | Some(3)));
    let rows = lines(&tmp.path().join("correlators.csv"));
    assert_eq!(rows[0], "r,s,exact,reconstructed,rel_err");
    assert_eq!(rows.len(), 9);

    let sweep = tmp.path().join("sweep");
    let out = fer_er(
        &["sweep", "--param", "model.lambda", "--values", "0.5,1.5", "--jobs", "2", "--model.sites_per_dim=64", "--flow.levels=1"],
        &sweep,
    );
    assert!(matches!(out.status.code(), Some(0) | Some(3)));
    assert!(sweep.join("000_model.lambda=0.5/levels.csv").exists());
    assert!(sweep.join("001_model.lambda=1.5/levels.csv").exists());
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = [
        vec!["rg-run", "--model.sites_per_dim=12"],
        vec!["rg-run", "--flow.unknown=1"],
        vec!["correlators", "--model.sites_per_dim=4096"],
        vec!["ground-state", "--config", "/nonexistent/config.json"],
    ];
    for args in bad {
        let out = fer_er(&args, tmp.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn config_file_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let out = fer_er(&["ground-state", "--model.sites_per_dim=32", "--model.lambda=0.5"], &first);
    assert!(out.status.success());
    let config = first.join("config.json");
    let second = tmp.path().join("second");
    let out = fer_er(&["ground-state", "--config", config.to_str().unwrap()], &second);
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(first.join("entropy.csv")).unwrap(),
        std::fs::read(second.join("entropy.csv")).unwrap()
    );
}
