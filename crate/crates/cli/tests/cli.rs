use std::fs;
use std::process::{Command, Output};

fn uwbed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uwbed")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn analytic_sweep_writes_versioned_csv() {
    let o = uwbed(&["analytic", "--formula", "pevade", "--alpha", "5", "--beta", "5", "--r", "1", "--k", "0:3"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# schema=1");
    assert_eq!(lines[1], "alpha,beta,r,zeta,k,p");
    assert_eq!(lines.len(), 6);
    assert!(lines[2].starts_with("5,5,1,,0,"));
}

#[test]
fn output_is_byte_stable() {
    let args = ["simulate", "--estimand", "rcv", "--alpha", "6", "--beta", "9", "--r", "2", "--k", "0:15:5", "--trials", "500", "--seed", "3"];
    let a = uwbed(&args);
    let b = uwbed(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).starts_with("# schema=1\n"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    fs::write(&cfg, "formula = \"psa\"\nalpha = 5\nbeta = 5\nr = 1\nzeta = 3.0\nk = \"2\"\n").unwrap();
    let out = dir.path().join("out.csv");
    let cfg_s = cfg.to_str().unwrap();
    let o = uwbed(&["analytic", "--config", cfg_s, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let from_file = fs::read_to_string(&out).unwrap();
    assert!(from_file.lines().nth(2).unwrap().starts_with("5,5,1,3,2,"), "{from_file}");

    let o = uwbed(&["analytic", "--config", cfg_s, "--beta", "7"]);
    assert!(stdout(&o).lines().nth(2).unwrap().starts_with("5,7,1,3,2,"));
}

#[test]
fn bad_input_exits_with_usage_error() {
    let missing = uwbed(&["analytic", "--formula", "psa", "--alpha", "5", "--beta", "5", "--r", "1", "--k", "2"]);
    assert_eq!(missing.status.code(), Some(2));
    let err = String::from_utf8(missing.stderr).unwrap();
    assert!(err.starts_with("error:") && err.trim_end().lines().count() == 1, "{err}");

    assert_eq!(uwbed(&["nonsense"]).status.code(), Some(2));
    assert_eq!(uwbed(&["analytic", "--formula", "pevade", "--alpha", "2", "--beta", "2", "--r", "3", "--k", "1"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[nested]\nalpha = 1\n").unwrap();
    assert_eq!(uwbed(&["example", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn example_reports_the_attack() {
    let o = uwbed(&["example"]);
    assert!(o.status.success());
    assert!(stdout(&o).trim_end().ends_with("AttackDetected: aggregate 17 > Γ 12"));
}

#[test]
fn sessions_write_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.txt");
    let o = uwbed(&[
        "simulate", "--estimand", "session", "--alpha", "32", "--beta", "32", "--r", "1", "--d1", "50", "--e", "-8",
        "--snr-db", "20", "--cut", "0.95", "--attack", "replay", "--trials", "3", "--seed", "1",
        "--trace", trace.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("# schema=1\n"));
    let t = fs::read_to_string(&trace).unwrap();
    assert!(t.contains("ToFMismatch"), "{t}");
}
