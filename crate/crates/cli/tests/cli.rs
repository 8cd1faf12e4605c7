use std::fs;
use std::process::{Command, Output};

fn sbnrg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbnrg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn point_prints_header_and_one_row() {
    let o = sbnrg(&["point", "--alpha", "0.3"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(
        lines[0],
        "alpha,eps_over_delta,delta_ratio,lambda,n_keep,n_m,converged,sx,sz,entropy,p_plus,p_minus,delta_r"
    );
    assert!(lines[1].starts_with("0.3,0,0.04,2,300,"));
}

#[test]
fn domain_error_exits_one() {
    let o = sbnrg(&["point", "--alpha", "1.2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpha"));
}

#[test]
fn usage_error_exits_one() {
    assert_eq!(sbnrg(&["point"]).status.code(), Some(1));
    assert_eq!(sbnrg(&["preset", "fig9"]).status.code(), Some(1));
    assert_eq!(
        sbnrg(&["point", "--alpha", "0.3", "--format", "xml"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn help_exits_zero() {
    let o = sbnrg(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("alpha-max"));
}

#[test]
fn unwritable_output_exits_three() {
    let o = sbnrg(&[
        "point",
        "--alpha",
        "0.3",
        "--output",
        "/nonexistent-dir/out.csv",
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn missing_config_file_exits_three() {
    let o = sbnrg(&[
        "point",
        "--alpha",
        "0.3",
        "--config",
        "/nonexistent-dir/cfg.txt",
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("solver.conf");
    fs::write(&cfg, "# test settings\nlambda = 2.5\nn_keep = 100\n").unwrap();
    let out = dir.path().join("out.json");
    let o = sbnrg(&[
        "point",
        "--alpha",
        "0.3",
        "--config",
        cfg.to_str().unwrap(),
        "--n-keep",
        "120",
        "--format",
        "json",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["metadata"]["config"]["lambda"], 2.5);
    assert_eq!(v["metadata"]["config"]["n_keep"], 120);
    assert_eq!(v["records"][0]["n_keep"], 120);
    assert!(v["metadata"]["sign_convention"]
        .as_str()
        .unwrap()
        .contains("sx"));
}

#[test]
fn bad_config_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("solver.conf");
    fs::write(&cfg, "lamda = 2.5\n").unwrap();
    let o = sbnrg(&["point", "--alpha", "0.3", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_rows_are_sorted() {
    let o = sbnrg(&[
        "sweep",
        "--alpha",
        "0.4,0.2",
        "--eps-over-delta",
        "0.1,0",
        "--jobs",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let keys: Vec<(f64, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].parse().unwrap(), f[0].parse().unwrap())
        })
        .collect();
    assert_eq!(keys, vec![(0.0, 0.2), (0.0, 0.4), (0.1, 0.2), (0.1, 0.4)]);
}

#[test]
fn empty_axis_exits_one() {
    let o = sbnrg(&["sweep", "--alpha", ""]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn alpha_max_rejects_symmetric_point() {
    let o = sbnrg(&["alpha-max", "--eps-over-delta", "0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verify_passes() {
    let o = sbnrg(&["verify", "--lambda", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_eq!(
        stdout(&o)
            .lines()
            .filter(|l| l.starts_with("[PASS]"))
            .count(),
        3
    );
}

#[test]
fn sabotaged_verify_exits_two() {
    let o = sbnrg(&["verify", "--lambda", "2", "--sabotage-sign-rule"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("[FAIL] oracle-equivalence"));
}
