use std::path::Path;
use std::process::{Command, Output};

fn fedshield(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedshield"))
        .args(args)
        .current_dir(cwd)
        .env_remove("FEDSHIELD_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_reports_under_name_and_mode() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.cfg"), "# small run\nname = smoke\nrounds = 3\n").unwrap();
    let o = fedshield(&["run", "--config", "exp.cfg", "--set", "mode=Plain"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("smoke Plain: final accuracy"));
    let base = dir.path().join("out/smoke/Plain");
    let reports = std::fs::read_to_string(base.join("reports.jsonl")).unwrap();
    assert_eq!(reports.lines().count(), 3);
    let first: serde_json::Value = serde_json::from_str(reports.lines().next().unwrap()).unwrap();
    assert_eq!(first["status"], "completed");
    assert_eq!(first["mode"], "Plain");
    assert!(base.join("audit.log").exists() && base.join("config.cfg").exists());
}

#[test]
fn missing_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = fedshield(&["run", "--config", "nope.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope.cfg"), "{}", stderr(&o));
}

#[test]
fn invalid_privacy_budget_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = fedshield(&["run", "--set", "privacy.epsilon=-1"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("epsilon must be positive"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn malformed_config_line_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "rounds = 2\nthis line has no equals\n").unwrap();
    let o = fedshield(&["run", "--config", "bad.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.cfg:2"), "{}", stderr(&o));
}

#[test]
fn table_prints_six_cells_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["table", "--set", "rounds=1", "--set", "name=t", "--out", "o"];
    let a = fedshield(&args, dir.path());
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let text = stdout(&a);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        let cells: Vec<f64> = row.split_whitespace().skip(1).map(|c| c.parse().unwrap()).collect();
        assert_eq!(cells.len(), 3);
        assert!(cells.iter().all(|c| (0.0..=100.0).contains(c)));
    }
    assert!(dir.path().join("o/t-n10/DpSecAgg/reports.jsonl").exists());
    assert!(dir.path().join("o/t-n20/Plain/reports.jsonl").exists());
    assert_eq!(std::fs::read_to_string(dir.path().join("o/t/table.txt")).unwrap(), text);
    let b = fedshield(&args, dir.path());
    assert_eq!(stdout(&b), text);
}

#[test]
fn audit_of_empty_log_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.log"), b"").unwrap();
    let o = fedshield(&["audit", "empty.log"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = fedshield(&["audit", "missing.log"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn summarize_counts_messages_per_phase() {
    let dir = tempfile::tempdir().unwrap();
    let o = fedshield(&["run", "--set", "rounds=2", "--set", "num_clients=5", "--set", "name=s"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = fedshield(&["summarize", "out/s/DpSecAgg/audit.log"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("MaskedInput"), "{text}");
}

#[test]
fn output_root_comes_from_environment_when_unset() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fedshield"))
        .args(["run", "--set", "rounds=1", "--set", "mode=Plain", "--set", "name=e"])
        .current_dir(dir.path())
        .env("FEDSHIELD_OUT", "envroot")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("envroot/e/Plain/reports.jsonl").exists());
}
