use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn deepstat(args: &[&str], stdin: Option<&str>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_deepstat"))
        .args(args)
        .env("RUST_LOG", "warn")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut pipe = child.stdin.take().unwrap();
    pipe.write_all(stdin.unwrap_or("").as_bytes()).unwrap();
    drop(pipe);
    child.wait_with_output().unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    std::fs::write(
        &path,
        r#"seed = 3
[corpus]
path = "baseline.tsv"
novel_path = "novel.txt"
max_len = 20
[gan]
d_z = 4
d_e = 8
d_h = 8
n_filters = 4
d_recon_hidden = 4
epochs = 1
[ae]
d_ae = 4
epochs = 2
"#,
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(deepstat(&["no-such-command"], None).status.code(), Some(1));
    assert_eq!(deepstat(&["train-gan"], None).status.code(), Some(1));
    assert_eq!(deepstat(&["--help"], None).status.code(), Some(0));
}

#[test]
fn bad_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[corpus]\npath = \"a.tsv\"\nratios = [0.9, 0.9, 0.9]\n").unwrap();
    let out = deepstat(&["train-gan", "--config", cfg.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ratios"));
}

#[test]
fn missing_upstream_artifact_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = deepstat(&["synth", "--out", dir.path().to_str().unwrap()], None);
    assert!(out.status.success());
    let cfg = tiny_config(dir.path());
    let out = deepstat(&["extract-stats", "--config", &cfg], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}

#[test]
fn full_chain_then_detect() {
    let dir = tempfile::tempdir().unwrap();
    let out = deepstat(&["synth", "--out", dir.path().to_str().unwrap()], None);
    assert!(out.status.success());
    assert!(dir.path().join("config.toml").exists());
    let cfg = tiny_config(dir.path());

    let out = deepstat(&["all", "--config", &cfg], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["auc"].as_f64().is_some());

    let out = deepstat(&["detect", "--config", &cfg], Some("a1 a2 a3 a4\n\nb7 b8 b9\n"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<serde_json::Value> =
        String::from_utf8_lossy(&out.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    for v in &lines {
        assert!(v["score"].as_f64().unwrap() >= 0.0);
        match v["kind"].as_str().unwrap() {
            "in-distribution" => {
                let probs: Vec<f64> = v["class_probs"].as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).collect();
                assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            "anomalous" => assert!(v.get("class_id").is_none()),
            other => panic!("unexpected verdict {other}"),
        }
    }

    let out = deepstat(&["detect", "--config", &cfg], Some("\u{7}\n"));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("\"error\""));
}
