use std::path::Path;
use std::process::{Command, Output};

fn wnlw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wnlw")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn sigma_oracle_on_unit_disc() {
    let o = wnlw(&["oracle", "--op", "sigma", "--d", "2", "--N", "1"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "3");
}

#[test]
fn tree_count_for_four_nodes() {
    let o = wnlw(&["trees", "--count", "--j", "4"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "55");
}

#[test]
fn other_oracles() {
    let o = wnlw(&["oracle", "--op", "fuss-catalan", "--j", "5"]);
    assert_eq!(stdout(&o).trim(), "273");
    let o = wnlw(&["oracle", "--op", "hermite", "--k", "2", "--x", "3", "--sigma", "2"]);
    assert_eq!(stdout(&o).trim(), "7");
    let o = wnlw(&["oracle", "--op", "multiplier", "--xi", "0", "--t", "1"]);
    let v: f64 = stdout(&o).trim().parse().unwrap();
    // <0> = 1, so the integral is 1 - cos 1.
    assert!((v - (1.0 - 1f64.cos())).abs() < 1e-15);
    // l = 1 at the zero mode: E|<z_N, e_0>|^2 = 1.
    let o = wnlw(&["oracle", "--op", "gamma", "--l", "1", "--N", "2", "--n", "0:0"]);
    assert_eq!(stdout(&o).trim(), "1");
}

#[test]
fn unknown_flag_prints_usage_and_exits_2() {
    let o = wnlw(&["oracle", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = wnlw(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[oracle]\nopp = \"sigma\"\n").unwrap();
    let o = wnlw(&["--config", cfg.to_str().unwrap(), "oracle"]);
    assert_eq!(o.status.code(), Some(2));
    let o = wnlw(&["oracle", "--op", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    let o = wnlw(&["converge", "--kernel", "boxcar"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oversized_plan_exits_4() {
    let o = wnlw(&["inflate", "--ladder", "1024", "--plan-only"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("3N + 2A"));
}

#[test]
fn stopped_trajectory_with_require_complete_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("guard.toml");
    std::fs::write(&cfg, "[solve.stepper]\nnodes = 3\ncorrections = 16\ntol = 1e-14\nblowup_guard = 1.0\n").unwrap();
    let base = ["--config", cfg.to_str().unwrap(), "solve", "--scale", "10", "--M", "4", "--t-end", "0.2", "--records", "2"];
    let o = wnlw(&base);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stopped"));
    let mut strict = base.to_vec();
    strict.push("--require-complete");
    let o = wnlw(&strict);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn flags_override_file_and_manifest_echoes_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 5\n[oracle]\nop = \"sigma\"\nd = 1\nN = 3\n").unwrap();
    let out = dir.path().join("out");
    let o = wnlw(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "oracle", "--N", "1"]);
    assert!(o.status.success());
    // d = 1 from the file, N = 1 from the flag: 1 + 2 * 1/2.
    assert_eq!(stdout(&o).trim(), "2");
    let m: serde_json::Value = serde_json::from_slice(&read(&out, "manifest.json")).unwrap();
    assert_eq!(m["schema"], "wnlw.manifest.v1");
    assert_eq!(m["command"], "oracle");
    assert_eq!(m["seed"], 5);
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m["config"]["d"], 1);
    assert_eq!(m["config"]["N"], 1.0);
    assert_eq!(m["outputs"][0], "oracle.json");
}

#[test]
fn replay_is_byte_identical_across_thread_budgets() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let common = ["--seed", "11", "wick", "--M", "6", "--l", "3", "--N", "2,4", "--modes", "0:0,1:1", "--samples", "400"];
    let mut args_a = vec!["--threads", "1", "--out", a.to_str().unwrap()];
    args_a.extend(common);
    let mut args_b = vec!["--threads", "3", "--out", b.to_str().unwrap()];
    args_b.extend(common);
    assert!(wnlw(&args_a).status.success());
    assert!(wnlw(&args_b).status.success());
    assert_eq!(read(&a, "wick.json"), read(&b, "wick.json"));
    assert_eq!(read(&a, "wick.csv"), read(&b, "wick.csv"));
}

#[test]
fn sample_then_solve_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    let o = wnlw(&["--seed", "3", "--out", s.to_str().unwrap(), "sample", "--M", "8"]);
    assert!(o.status.success());
    let snap = s.join("sample.json");
    let run = |dir: &Path| {
        let o = wnlw(&[
            "--out",
            dir.to_str().unwrap(),
            "solve",
            "--variant",
            "truncated-wick",
            "--N",
            "4",
            "--data",
            snap.to_str().unwrap(),
            "--scale",
            "0.1",
            "--t-end",
            "0.2",
            "--records",
            "4",
            "--observe",
            "0,-0.5",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(read(dir, "trajectory.csv")).unwrap()
    };
    let first = run(&dir.path().join("r1"));
    let second = run(&dir.path().join("r2"));
    assert_eq!(first, second);
    assert_eq!(first.lines().next().unwrap(), "t,energy,hs_0,hs_-0.5");
    assert_eq!(first.lines().count(), 6);
    let summary: serde_json::Value = serde_json::from_slice(&read(&dir.path().join("r1"), "summary.json")).unwrap();
    assert_eq!(summary["M"], 8);
    assert!(summary["terminated"].is_null());
}

#[test]
fn deterministic_inflation_ladder_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = wnlw(&["--out", dir.path().to_str().unwrap(), "inflate", "--d", "2", "--s", "-1.2", "--ladder", "8,16"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = stdout(&o);
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("N,A,R,T,phi_hs,u_T_hs,xi1_hs"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1][4] < rows[0][4]);
    assert!(rows[1][5] > rows[0][5]);
    assert_eq!(read(dir.path(), "ladder.csv"), csv.as_bytes());
    let report: serde_json::Value = serde_json::from_slice(&read(dir.path(), "inflate_N16.json")).unwrap();
    assert_eq!(report["schema"], "wnlw.inflation.v1");
}

#[test]
fn convergence_csv_shape() {
    let o = wnlw(&["converge", "--M", "8", "--seeds", "2", "--kernel", "tent", "--delta-ladder", "0.4,0.2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = stdout(&o);
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("seed,kernel,delta,T,sup_distance,d_1"));
    // Two seeds times two scales.
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn trees_term_norm_table() {
    let o = wnlw(&["trees", "--j", "2", "--t", "0.05,0.1"]);
    assert!(o.status.success());
    let csv = stdout(&o);
    assert_eq!(csv.lines().next().unwrap(), "j,t,fl1,normalized");
    assert_eq!(csv.lines().count(), 7);
}
