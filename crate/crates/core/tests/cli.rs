use std::path::Path;
use std::process::{Command, Output};

fn qla(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qla"))
        .args(args)
        .env("QLA_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn info_reports_analytic_information() {
    let out = qla(&["info", "--model", "OU"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert!((v["gamma1"][0].as_f64().unwrap() - 2.0).abs() < 1e-6);
    assert!((v["gamma2"][0].as_f64().unwrap() - 0.5).abs() < 1e-6);
    let cov: Vec<f64> = v["covariance"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!((cov[0] - 0.5).abs() < 1e-6 && cov[1] == 0.0 && cov[2] == 0.0 && (cov[3] - 2.0).abs() < 1e-6);
}

#[test]
fn exit_code_contract() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = qla(&["estimate", "--model", "OU", "--data", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));

    let out = qla(&["validate-loss", "--loss", "power:2", "--eta", "0.5", "--r0", "4"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["all_passed"], serde_json::json!(true));

    let out = qla(&["validate-loss", "--loss", "indicator:1", "--eta", "0.5", "--r0", "4"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["all_passed"], serde_json::json!(true));
    let out = qla(&["validate-loss", "--loss", "custom:asymmetric"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["all_passed"], serde_json::json!(false));

    for args in [
        vec!["frobnicate"],
        vec!["mc", "--gamma", "0.4"],
        vec!["simulate", "--n", "abc"],
        vec!["info", "--model", "NOPE"],
        vec!["estimate"],
        vec!["validate-loss", "--loss", "cubic:3"],
    ] {
        let out = qla(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = qla(&["mc", "--gamma", "0.4"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma must be in (0.5, 1)"));

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "modle = \"OU\"\n").unwrap();
    let out = qla(&["--config", cfg.to_str().unwrap(), "info"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("modle"));
}

#[test]
fn simulate_then_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = qla(&["simulate", "--model", "OU", "--n", "2000", "--seed", "7", "--output-dir", d.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(d.join("metadata.json").exists());
    }
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&a.join("observations.csv")), read(&b.join("observations.csv")));
    let data = a.join("observations.csv");
    let out = qla(&[
        "estimate",
        "--model",
        "OU",
        "--data",
        data.to_str().unwrap(),
        "--loss1",
        "power:1",
        "--oracle-pilot",
        "--output-dir",
        a.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let t1 = v["theta_tilde"]["theta1"][0].as_f64().unwrap();
    let q1 = v["theta_hat"]["theta1"][0].as_f64().unwrap();
    assert!((t1 - 1.0).abs() < 0.2 && (q1 - 1.0).abs() < 0.2, "{v}");
    assert!(v["diagnostics"]["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn mc_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("mc.toml");
    std::fs::write(
        &cfg,
        "[mc]\nmodel = \"OU\"\nn_list = [300, 600]\nreplicates = 50\nseed = 11\n\
         [[mc.losses]]\nid = \"quad\"\nloss1 = \"power:2\"\nloss2 = \"power:2\"\n\
         [[mc.losses]]\nid = \"abs\"\nloss1 = \"power:1\"\nloss2 = \"power:1\"\n",
    )
    .unwrap();
    let mut outputs = Vec::new();
    for run in ["r1", "r2"] {
        let d = dir.path().join(run);
        let out = qla(&["--config", cfg.to_str().unwrap(), "mc", "--output-dir", d.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let stdout = String::from_utf8_lossy(&out.stdout).to_string();
        assert!(stdout.contains("theorem1") && stdout.contains("moments"), "{stdout}");
        outputs.push((std::fs::read(d.join("report.json")).unwrap(), std::fs::read(d.join("summary.csv")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let csv = String::from_utf8(outputs[0].1.clone()).unwrap();
    assert!(csv.starts_with("n,loss_id,coord,mean,var,ks,discrepancy_vs_qmle\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 3 * 2);
}
