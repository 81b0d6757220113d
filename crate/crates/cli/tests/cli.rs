use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_richards-sdre"))
}

#[test]
fn config_export_prints_the_preset() {
    let out = bin().args(["config", "export", "test2"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text, richards_sdre::runner::preset_text("test2").unwrap());
}

#[test]
fn config_errors_exit_with_2() {
    let out = bin().args(["config", "export", "test9"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = richards_sdre::runner::preset_text("test1").unwrap().replace("n_nodes = 31", "n_nodes = 1");
    std::fs::write(&path, text).unwrap();
    let out = bin().arg("run").arg("--config").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("line "), "{stderr}");
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.toml");
    let text = richards_sdre::runner::preset_text("test3").unwrap().replace("t_end = 1000.0", "t_end = 10.0");
    std::fs::write(&path, text).unwrap();
    let out_dir = dir.path().join("out");
    let out = bin()
        .arg("run")
        .arg("--config")
        .arg(&path)
        .args(["--mode", "uncontrolled", "--seed", "3", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("uncontrolled.csv").exists());
    let summary = std::fs::read_to_string(out_dir.join("summary.json")).unwrap();
    assert!(summary.contains("\"seed\": 3"));
}

#[test]
fn simulation_failures_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wet.toml");
    // A surface head this close to saturation leaves the admissible region at once.
    let text = richards_sdre::runner::preset_text("test3")
        .unwrap()
        .replace("h_top = -20.73", "h_top = -1e-6")
        .replace("t_end = 1000.0", "t_end = 10.0");
    std::fs::write(&path, text).unwrap();
    let out = bin()
        .arg("run")
        .arg("--config")
        .arg(&path)
        .args(["--mode", "uncontrolled", "--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn verify_filter_runs_selected_checks() {
    let out = bin().args(["verify", "--filter", "scalar"]).output().unwrap();
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let checks = report.as_array().unwrap();
    assert_eq!(checks.len(), 1);
    assert_eq!(checks[0]["name"], "scalar_riccati");
    assert_eq!(checks[0]["passed"], true);

    let out = bin().args(["verify", "--filter", "no-such-check"]).output().unwrap();
    assert!(!out.status.success());
}
