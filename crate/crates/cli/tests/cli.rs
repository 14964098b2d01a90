use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const HEADER: &str = "schema_version,algo,instance,d,p,K,eps,delta,seed,risk_raw,risk_projected,baseline,excess,draws_used,wall_ms,status";

fn wgdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wgdp")).args(args).output().expect("spawn wgdp")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

const TWO_POINT: &str = r#"{
  "algorithm": "phased-erm",
  "instance": {"type": "two_point"},
  "K": 512,
  "epsilon": 1.0,
  "seeds": [0, 1]
}"#;

#[test]
fn run_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TWO_POINT);
    let out = dir.path().join("out.csv");
    let result = wgdp(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));

    let csv = fs::read_to_string(&out).unwrap();
    assert!(!csv.contains('\r'));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], HEADER);
    // two seeds plus the summary row
    assert_eq!(lines.len(), 4);
    assert!(lines[3].contains(",summary,"));
    assert!(dir.path().join("out.csv.config.json").exists());
}

#[test]
fn seed_override_replays_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TWO_POINT);
    let a = wgdp(&["run", "--config", &config, "--seed", "7"]);
    let b = wgdp(&["run", "--config", &config, "--seed", "7"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains(",7,")).count(), 1);
}

#[test]
fn infinite_epsilon_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TWO_POINT);
    let result = wgdp(&["run", "--config", &config, "--eps", "inf", "--seed", "0"]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let text = String::from_utf8(result.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().contains(",inf,"));
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &TWO_POINT.replace("\"K\"", "\"learning_rate\": 0.1, \"K\""));
    let result = wgdp(&["run", "--config", &config]);
    assert_eq!(result.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&result.stderr).contains("learning_rate"));
}

#[test]
fn sweep_emits_one_block_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TWO_POINT);
    let result = wgdp(&["sweep", "--config", &config, "--param", "K", "--values", "256,512", "--seed", "3"]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let text = String::from_utf8(result.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| *l == HEADER).count(), 1);
    assert_eq!(text.lines().filter(|l| l.contains(",summary,")).count(), 2);
    assert!(text.contains(",256,") && text.contains(",512,"));
}

#[test]
fn audit_reports_pass_lines() {
    let result = wgdp(&["audit", "--kind", "reduction", "--trials", "2"]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stdout));
    let text = String::from_utf8(result.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("PASS")));
    assert!(!text.contains("FAIL"));
}

#[test]
fn bad_epsilon_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TWO_POINT);
    let result = wgdp(&["run", "--config", &config, "--eps", "-1"]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn shipped_configs_run() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let result = wgdp(&["run", "--config", path.to_str().unwrap(), "--seed", "0"]);
        assert!(result.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&result.stderr));
        assert!(String::from_utf8(result.stdout).unwrap().lines().nth(1).unwrap().ends_with(",ok"));
    }
}
