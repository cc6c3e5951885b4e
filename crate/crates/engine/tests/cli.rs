use std::process::Command;

use myo_core::kinematics::Catalog;
use myo_simdev::{scripted_session, SessionScript, SyntheticModel};
use serde_json::Value;

fn myo() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_myo"));
    c.env_remove("MYO_CONFIG");
    c
}

#[test]
fn unknown_flag_exits_nonzero_with_usage() {
    let out = myo().args(["replay-eval", "--no-such-flag"]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn failures_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = myo()
        .args(["replay-eval", "--session"])
        .arg(dir.path().join("missing.mgr"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(v["error"]["kind"].is_string());
    assert!(v["error"]["message"].as_str().unwrap().contains("missing.mgr"));
}

#[test]
fn train_then_replay_eval_report_on_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = Catalog::standard();
    let model = SyntheticModel::standard(&catalog, 11).unwrap();
    let session = dir.path().join("s.mgr");
    scripted_session(&model, &catalog, &SessionScript::new(&["thumb", "index"], 10.0))
        .unwrap()
        .save(&session)
        .unwrap();

    let out = myo()
        .args(["replay-eval", "--rounds", "80", "--session"])
        .arg(&session)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["naive", "conformal"] {
        let movements = v[key]["movements"].as_array().unwrap();
        assert_eq!(movements.len(), 2);
        assert!(v[key]["naive_mean"].as_f64().unwrap() > 0.8);
    }
    assert_eq!(v["conformal"]["conformal_enabled"], true);

    let model_path = dir.path().join("m.mgd");
    let out = myo()
        .args(["train", "--rounds", "40", "--depth", "4", "--recording"])
        .arg(&session)
        .arg("--out")
        .arg(&model_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["classes"], serde_json::json!(["rest", "thumb", "index"]));
    assert!(model_path.exists());

    // Scoring the recording itself with the saved model.
    let out = myo()
        .args(["replay-eval", "--session"])
        .arg(&session)
        .arg("--validation")
        .arg(&session)
        .arg("--model")
        .arg(&model_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["naive"]["naive_mean"].as_f64().unwrap() > 0.8);
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[plot]\nmax_rate_hz = -1.0\n").unwrap();
    let out = myo().arg("--config").arg(&cfg).args(["bench", "--seconds", "1"]).output().unwrap();
    assert!(!out.status.success());
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(v["error"]["message"].as_str().unwrap().contains("max_rate_hz"), "{v}");
}
