use std::path::Path;
use std::process::{Command, Output};

use rpslab::report::strip_header;
use rpslab::trainer::{corollary1_lr, mixing_constants, run_training, LearningRate, Strategy, TrainConfig};

fn rpslab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rpslab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) {
    let o = rpslab(args, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

/// Data rows as maps from column name to cell.
fn rows(csv: &str) -> Vec<std::collections::HashMap<String, String>> {
    let mut lines = strip_header(csv).lines();
    let cols: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    lines.map(|l| cols.iter().cloned().zip(l.split(',').map(String::from)).collect()).collect()
}

fn f(row: &std::collections::HashMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap()
}

#[test]
fn mixing_without_drops_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["mixing", "--n", "4", "--p", "0", "--mode", "exact"], dir.path());
    let r = rows(&read(&dir.path().join("mixing.csv")));
    assert_eq!(r.len(), 1);
    for key in ["alpha_ew", "alpha1", "alpha2", "beta"] {
        assert_eq!(f(&r[0], key), 0.0, "{key}");
    }
}

#[test]
fn mixing_alpha2_decreases_with_workers() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["mixing", "--n", "2..8", "--p", "0.1", "--mode", "exact"], dir.path());
    let r = rows(&read(&dir.path().join("mixing.csv")));
    assert_eq!(r.len(), 7);
    for w in r.windows(2) {
        assert!(f(&w[1], "alpha2") < f(&w[0], "alpha2"));
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rpslab(&["mixing", "--p", "1.0", "--mode", "exact"], dir.path()).status.code(), Some(3));
    assert_eq!(rpslab(&["mixing", "--mode", "fancy"], dir.path()).status.code(), Some(2));
    assert_eq!(rpslab(&["mixing", "--bogus", "1"], dir.path()).status.code(), Some(2));
    assert_eq!(rpslab(&["train", "--gamma", "-1"], dir.path()).status.code(), Some(2));
    assert_eq!(rpslab(&["bounds", "--gamma", "5"], dir.path()).status.code(), Some(3));
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "n = 4\nfoo = 1\n").unwrap();
    let o = rpslab(&["train", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key 'foo'"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("m.conf");
    std::fs::write(&cfg, "# sweep\nn = 2..4\np = 0.3\n").unwrap();
    ok(&["mixing", "--config", cfg.to_str().unwrap(), "--p", "0.5"], dir.path());
    let text = read(&dir.path().join("mixing.csv"));
    assert!(text.contains("# config p = 0.5\n"));
    let r = rows(&text);
    assert_eq!(r.len(), 3);
    assert!(r.iter().all(|row| row["p"] == "0.5"));
}

#[test]
fn single_worker_trace_matches_library_run() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["train", "--strategy", "rps", "--p", "0", "--n", "1", "--d", "4", "--iterations", "100", "--gamma", "0.1"], dir.path());
    let r = rows(&read(&dir.path().join("trace.csv")));
    let cfg = TrainConfig { n: 1, d: 4, iterations: 100, gamma: LearningRate::Explicit(0.1), ..Default::default() };
    let trace = run_training(&cfg).unwrap();
    assert_eq!(r.len(), trace.records.len());
    for (row, rec) in r.iter().zip(&trace.records) {
        assert_eq!(f(row, "loss"), rec.loss);
        assert_eq!(f(row, "consensus"), 0.0);
    }
}

#[test]
fn header_records_corollary_rate() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["train", "--n", "4", "--p", "0.1", "--iterations", "300", "--gamma", "corollary1"], dir.path());
    let text = read(&dir.path().join("trace.csv"));
    let line = text.lines().find(|l| l.starts_with("# gamma ")).unwrap();
    let gamma: f64 = line["# gamma ".len()..].parse().unwrap();
    let cfg = TrainConfig { n: 4, p: 0.1, iterations: 300, strategy: Strategy::Rps, ..Default::default() };
    let task = cfg.build_task().unwrap();
    let (a2, beta) = mixing_constants(4, 0.1).unwrap();
    let expected = corollary1_lr(task.lipschitz(), task.sigma(), task.zeta(), a2, beta, 4, 300).unwrap();
    assert_eq!(gamma, expected);
}

#[test]
fn gradient_averaging_worse_under_loss() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["train", "--strategy", "both", "--p", "0.05", "--seeds", "4", "--iterations", "1000"], dir.path());
    let r = rows(&read(&dir.path().join("summary.csv")));
    let rps = r.iter().find(|row| row["strategy"] == "rps").unwrap();
    let ga = r.iter().find(|row| row["strategy"] == "gradient-averaging").unwrap();
    assert!(f(ga, "mean_final_loss") > f(rps, "mean_final_loss"));
}

#[test]
fn bounds_examples() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "bounds", "--n", "8", "--p", "0.1", "--gamma", "0.02", "--iterations", "2000", "--f0", "3", "--fstar", "0.5",
        "--alpha2", "0.02", "--beta", "0.08",
    ];
    ok(&args, dir.path());
    let r = rows(&read(&dir.path().join("bounds.csv")));
    let get = |k: &str| f(r.iter().find(|row| row["quantity"] == k).unwrap(), "value");
    assert!((get("alpha1_bound") - 0.1602488463265306122).abs() < 1e-14);
    assert!((get("alpha2_bound") - 0.2213213546763392857).abs() < 1e-14);
    assert!((get("theorem1_rhs") - 0.1432915669416587044).abs() < 1e-15);
    ok(&["bounds", "--n", "4", "--p", "0.5", "--gamma", "0.01"], dir.path());
    let r = rows(&read(&dir.path().join("bounds.csv")));
    let t2 = f(r.iter().find(|row| row["quantity"] == "t2").unwrap(), "value");
    assert!((t2 - 5.0 / 12.0).abs() < 1e-15);
}

#[test]
fn netsim_zero_drop_row_has_unit_speedup() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["netsim", "--lambda", "5000", "--buffers", "inf,15000", "--duration", "0.2", "--seeds", "2"], dir.path());
    let r = rows(&read(&dir.path().join("netsim.csv")));
    assert_eq!(r.len(), 2);
    assert_eq!(f(&r[0], "speedup"), 1.0);
    assert_eq!(f(&r[0], "drop_rate"), 0.0);
    assert!(f(&r[1], "drop_rate") > 0.0 && f(&r[1], "speedup") > 1.0);
}

#[test]
fn rerun_from_header_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&["mixing", "--n", "3,5", "--p", "0.2,0.4", "--mode", "mc", "--samples", "5000", "--seed", "11"], a.path());
    let first = a.path().join("mixing.csv");
    ok(&["mixing", "--config", first.to_str().unwrap()], b.path());
    assert_eq!(read(&first), read(&b.path().join("mixing.csv")));

    ok(&["train", "--n", "4", "--p", "0.2", "--iterations", "200", "--seeds", "3"], a.path());
    let first = a.path().join("trace.csv");
    ok(&["train", "--config", first.to_str().unwrap()], b.path());
    assert_eq!(read(&first), read(&b.path().join("trace.csv")));
}
