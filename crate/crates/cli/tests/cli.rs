//! End-to-end tests of the regge-curv binary: exit codes, report schema,
//! CSV emission.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_regge-curv"))
}

#[test]
fn bad_config_exits_2() {
    let dir = std::env::temp_dir().join("regge_curv_cli_bad");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("bad.json");
    std::fs::write(&cfg, r#"{"metric":{"id":"nope"},"degrees":[1],"levels":[2,4]}"#).unwrap();
    let out = bin().args(["verify", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin()
        .args(["converge", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(dir.join("x.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    // missing file is also a config error
    let out = bin().args(["verify", "--config"]).arg(dir.join("missing.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_passes_and_writes_report() {
    let dir = std::env::temp_dir().join("regge_curv_cli_verify");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("verify.json");
    std::fs::write(
        &cfg,
        r#"{"metric":{"id":"conformal","params":{"amp":0.2}},
            "degrees":[1],"levels":[2,4],"seed":3}"#,
    )
    .unwrap();
    let report = dir.join("report.json");
    let out = bin()
        .args(["verify", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&report)
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "stdout:\n{stdout}");
    assert!(stdout.contains("PASS"));
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed["passed"], serde_json::Value::Bool(true));
    assert_eq!(parsed["seed"], serde_json::json!(3));
}

#[test]
fn converge_writes_csv_and_plot_recipe() {
    let dir = std::env::temp_dir().join("regge_curv_cli_converge");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("conv.json");
    std::fs::write(
        &cfg,
        r#"{"metric":{"id":"conformal","params":{"amp":0.2}},
            "degrees":[1],"levels":[2,4],"seed":1}"#,
    )
    .unwrap();
    let csv = dir.join("results.csv");
    let out = bin()
        .args(["converge", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&csv)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("r,n,h,E_kappa_dual,rate_kappa,E_conn_dual,rate_conn,E_kappa_L2"));
    assert_eq!(text.lines().count(), 3);
    assert!(dir.join("results.plot.txt").exists());
}
