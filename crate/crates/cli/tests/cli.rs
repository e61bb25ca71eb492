use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hemibranch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hemibranch")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, extra: &str) -> String {
    let base = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../presets/paper-dual.conf")).unwrap();
    let path = dir.join(name);
    fs::write(&path, format!("{base}\n{extra}")).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn presets_validate() {
    for p in ["paper-single", "paper-dual"] {
        let o = hemibranch(&["validate-config", p]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).contains("valid"));
    }
}

#[test]
fn window_above_period_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.conf", "[timing]\nwindow = 2000 ns\n");
    let o = hemibranch(&["validate-config", &cfg]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("T_w ≪ 1/f"), "{}", stderr(&o));
}

#[test]
fn unknown_key_reports_its_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "typo.conf", "[geometry]\nsensor = 10\n");
    let o = hemibranch(&["validate-config", &cfg]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
}

#[test]
fn missing_file_is_an_io_error() {
    let o = hemibranch(&["validate-config", "/nonexistent/run.conf"]);
    assert_eq!(code(&o), 3);
    let o = hemibranch(&["report", "/nonexistent/rundir"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn simulate_report_analyze_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let out_s = out.to_string_lossy().into_owned();
    let o = hemibranch(&["simulate", "paper-dual", "--electrons", "5000", "--workers", "2", "--out", &out_s]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("result: PASS"));
    for f in ["config.conf", "refmap.csv", "events.csv", "ledger.csv", "records.csv", "summary.txt", "summary.kv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let kv = fs::read_to_string(out.join("summary.kv")).unwrap();
    assert!(kv.contains("electrons=5000\n"));

    let o = hemibranch(&["report", &out_s]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o), fs::read_to_string(out.join("summary.txt")).unwrap());

    let ev = out.join("events.csv");
    let map = out.join("refmap.csv");
    let rec = tmp.path().join("records.csv");
    let o = hemibranch(&["analyze", ev.to_str().unwrap(), map.to_str().unwrap(), "--records", rec.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("Aligned"));
    assert_eq!(fs::read(rec).unwrap(), fs::read(out.join("records.csv")).unwrap());
}

#[test]
fn injected_faults_fail_the_audit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "faulty.conf", "[run]\nelectrons = 5000\n[faults]\nduplicate_outer = 0.01\n");
    let out = tmp.path().join("run");
    let o = hemibranch(&["simulate", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(out.join("injected_faults.csv").exists());
    assert_eq!(code(&hemibranch(&["report", out.to_str().unwrap()])), 2);
    let o = hemibranch(&["analyze", out.join("events.csv").to_str().unwrap(), out.join("refmap.csv").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn calibrate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    assert_eq!(code(&hemibranch(&["calibrate", "paper-single", "--out", a.to_str().unwrap()])), 0);
    assert_eq!(code(&hemibranch(&["calibrate", "paper-single", "--out", b.to_str().unwrap()])), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let o = hemibranch(&["calibrate", "paper-single"]);
    assert_eq!(o.stdout, fs::read(&a).unwrap());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("sensor_id,theta_rad,phi_rad,weight\n"));
    assert!(text.lines().last().unwrap().starts_with("gap,,,"));
}
