use std::process::Command;

mod common;
use common::{tiny_toml, write};

fn sve() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sve"))
}

#[test]
fn finetune_writes_results_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &tiny_toml("finetune", ""));
    let out = dir.path().join("out");
    let st = sve().args(["finetune", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    for f in ["results.json", "per_seed.csv", "plot_data.csv", "runtime.json", "checkpoints/sve_seed1.sve"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let rec: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("results.json")).unwrap()).unwrap();
    assert_eq!(rec["seeds"], serde_json::json!([0, 1]));
    assert_eq!(rec["algorithm_id"], "chacha20-sha256split-v1");
    assert_eq!(rec["code_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(rec["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn seed_override_runs_one_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &tiny_toml("members_ablation", "[ablation]\nmembers = [1, 2]"));
    let out = dir.path().join("out");
    let st = sve()
        .args(["members-ablation", "--seed-override", "7", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    let rows = std::fs::read_to_string(out.join("per_seed.csv")).unwrap();
    assert_eq!(rows.lines().count(), 3);
    assert!(rows.lines().skip(1).all(|l| l.starts_with("7,")));
}

#[test]
fn invalid_field_is_usage_error_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let text = tiny_toml("finetune", "").replace("lr = 0.01\nmethod = \"sve\"", "lr = \"fast\"\nmethod = \"sve\"");
    let cfg = write(dir.path(), "c.toml", &text);
    let st = sve().args(["finetune", "--out", "/tmp/unused", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).contains("train.lr"));
}

#[test]
fn subcommand_must_match_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &tiny_toml("finetune", ""));
    let st = sve().args(["ood", "--out", "/tmp/unused", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_is_dependency_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &tiny_toml("eval", "checkpoint = \"/nonexistent/m.sve\""));
    let st = sve()
        .args(["eval", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&st.stderr).contains("does not exist"));
}

#[test]
fn diversity_on_dense_checkpoint_is_capability_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &tiny_toml("finetune", ""));
    let ft = dir.path().join("ft");
    assert!(sve().args(["finetune", "--config"]).arg(&cfg).arg("--out").arg(&ft).status().unwrap().success());
    let ck = ft.join("checkpoints/single_seed0.sve");
    let cfg = write(
        dir.path(),
        "d.toml",
        &tiny_toml("diversity", &format!("checkpoint = {:?}", ck.to_str().unwrap())),
    );
    let st = sve()
        .args(["diversity", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("d"))
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&st.stderr).contains("unsupported"));
}

#[test]
fn missing_out_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &tiny_toml("finetune", ""));
    let st = sve().args(["finetune", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
}
