use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qfm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qfm"))
        .args(args)
        .env_remove("QFM_CONFIG")
        .output()
        .expect("run qfm")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Value of `key=` in a `key=value` record.
fn field(record: &str, key: &str) -> f64 {
    let prefix = format!("{key}=");
    record
        .split_whitespace()
        .find_map(|t| t.strip_prefix(&prefix))
        .unwrap_or_else(|| panic!("no {key} in {record}"))
        .trim_end_matches('%')
        .parse()
        .unwrap()
}

fn shipped_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("config/calibrated.conf")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `(key, |rel_error|)` rows of a one-key sweep CSV.
fn errors_by_key(csv: &str) -> Vec<(f64, f64)> {
    csv.lines()
        .skip(1)
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            (
                cols[0].parse().unwrap(),
                cols[3].parse::<f64>().unwrap().abs(),
            )
        })
        .collect()
}

#[test]
fn simulate_defaults() {
    let o = qfm(&["simulate"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 1);
    assert_eq!(field(&out, "n"), 171.0);
    assert!((field(&out, "q") - 299.8).abs() <= 0.1);
    assert!(stderr(&o).is_empty());
}

#[test]
fn simulate_rejects_bad_k() {
    let o = qfm(&["simulate", "--k", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("> 1"), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
}

#[test]
fn simulate_plus_corner() {
    let o = qfm(&[
        "simulate", "--offset", "10e-3", "--dk", "0.01", "--sign", "plus",
    ]);
    assert!(o.status.success());
    assert!((field(&stdout(&o), "error") + 4.15).abs() < 0.01);
}

#[test]
fn simulate_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let o = qfm(&["simulate", "--trace", path_str(&trace)]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(trace).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("cycle,peak_time,true_peak,captured_peak,threshold,count_enable")
    );
    let enabled = lines.filter(|l| l.ends_with(",1")).count();
    assert!(enabled >= 171);
}

#[test]
fn simulation_failure_exits_3() {
    let o = qfm(&["simulate", "--offset", "0.5", "--sign", "minus"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn theoretical_sweep_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    let o = qfm(&[
        "sweep",
        "theoretical",
        "--k",
        "2,4,6,8,16",
        "--q",
        "10:1000:1",
        "--out",
        path_str(&out),
    ]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(out).unwrap();
    assert_eq!(text.lines().next(), Some("k,q_true,n,q_measured,rel_error"));
    assert_eq!(text.lines().count(), 1 + 5 * 991);
    assert_eq!(field(&stdout(&o), "rows"), 4955.0);
}

#[test]
fn sweep_table_goes_to_stdout_without_out() {
    let o = qfm(&["sweep", "theoretical", "--k", "6", "--q", "100:110:1"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 12);
    assert!(stderr(&o).contains("rows=11"));
}

#[test]
fn worstcase_sweep_stays_below_ten_percent() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w.csv");
    let svg = dir.path().join("w.svg");
    let o = qfm(&[
        "sweep",
        "worstcase",
        "--config",
        path_str(&shipped_config()),
        "--k",
        "4,5,6,7,8",
        "--q",
        "100:1000:5",
        "--out",
        path_str(&out),
        "--svg",
        path_str(&svg),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(out).unwrap();
    assert_eq!(
        text.lines().next(),
        Some("k,q_true,n,q_measured,rel_error,corner")
    );
    for line in text.lines().skip(1) {
        let e: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
        assert!(e.abs() < 0.10, "{line}");
    }
    let k = field(&stdout(&o), "optimal_k");
    assert!((4.0..=8.0).contains(&k), "optimal k {k}");
    assert!(std::fs::read_to_string(svg).unwrap().starts_with("<svg"));
}

#[test]
fn frequency_sweep_regimes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f.csv");
    let o = qfm(&[
        "sweep",
        "frequency",
        "--f0",
        "1e2:2e6:log",
        "--q",
        "300",
        "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = errors_by_key(&std::fs::read_to_string(out).unwrap());
    assert_eq!(rows.len(), 45);
    let at = |f: f64| rows.iter().find(|r| (r.0 - f).abs() < 1e-6 * f).unwrap().1;
    assert!(at(1e3) > at(1e4));
    assert!(at(2e6) > at(5.011872336272725e5));
    let band = rows.iter().filter(|r| r.0 >= 2e3 && r.0 <= 1e6);
    assert!(band.clone().all(|r| r.1 <= 0.05));
}

#[test]
fn frequency_sweep_rejects_independent_signs() {
    let o = qfm(&["sweep", "frequency", "--f0", "1e4", "--sign", "independent"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_then_measure() {
    let dir = tempfile::tempdir().unwrap();
    let wave = dir.path().join("w.csv");
    assert!(qfm(&["synth", "--out", path_str(&wave)]).status.success());
    let text = std::fs::read_to_string(&wave).unwrap();
    assert_eq!(text.lines().nth(1), Some("0,1"));
    assert_eq!(text.lines().count(), 1 + 25_000);
    let o = qfm(&["measure", path_str(&wave)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!((field(&out, "q") - 299.8).abs() < 0.1);
    assert!((field(&out, "q_fit") - 300.0).abs() < 0.05);
    assert!(field(&out, "disagreement") < 0.2);
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let p = dir.path().join(name);
        let o = qfm(&[
            "synth",
            "--noise",
            "1e-4",
            "--seed",
            seed,
            "--out",
            path_str(&p),
        ]);
        assert!(o.status.success());
        std::fs::read(p).unwrap()
    };
    assert_eq!(run("a.csv", "7"), run("b.csv", "7"));
    assert_ne!(run("a.csv", "7"), run("c.csv", "8"));
}

#[test]
fn noisy_record_measures_within_one_percent() {
    let dir = tempfile::tempdir().unwrap();
    let wave = dir.path().join("n.csv");
    assert!(qfm(&[
        "synth",
        "--noise",
        "1e-4",
        "--seed",
        "7",
        "--out",
        path_str(&wave)
    ])
    .status
    .success());
    let o = qfm(&["measure", path_str(&wave)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!((field(&stdout(&o), "q") - 300.0).abs() / 300.0 < 0.01);
}

#[test]
fn truncated_record_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let wave = dir.path().join("short.csv");
    assert!(
        qfm(&["synth", "--duration", "1ms", "--out", path_str(&wave)])
            .status
            .success()
    );
    let o = qfm(&["measure", path_str(&wave)]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).contains("more record needed"), "{}", stderr(&o));
}

#[test]
fn garbage_file_exits_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let wave = dir.path().join("g.csv");
    std::fs::write(&wave, "t,v\n0,1\n1e-7,0.99\nnot,a number\n").unwrap();
    let o = qfm(&["measure", path_str(&wave)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn io_errors_exit_4() {
    assert_eq!(
        qfm(&["measure", "/nonexistent/in.csv"]).status.code(),
        Some(4)
    );
    let o = qfm(&["synth", "--out", "/nonexistent/dir/out.csv"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn dump_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.conf");
    let o = qfm(&[
        "dump-config",
        "--config",
        path_str(&shipped_config()),
        "--q",
        "100:1000:10",
        "--f0",
        "1e2:4e6:log5",
        "--seed",
        "3",
        "--out",
        path_str(&first),
    ]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&first).unwrap();
    assert!(text.contains("q = 100:1000:10"));
    assert!(text.contains("leak = 60"));
    let again = qfm(&["dump-config", "--config", path_str(&first)]);
    assert_eq!(stdout(&again), text);
}

#[test]
fn config_file_and_env_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("c.conf");
    std::fs::write(&conf, "q = 150\nk = 8 # comment\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_qfm"))
        .args(["dump-config", "--k", "4"])
        .env("QFM_CONFIG", &conf)
        .output()
        .unwrap();
    let text = stdout(&o);
    assert!(
        text.contains("q = 150\n") && text.contains("k = 4\n"),
        "{text}"
    );
}

#[test]
fn bad_config_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "f0 = 50kHz\nf0 = 10mV\n").unwrap();
    let o = qfm(&["simulate", "--config", path_str(&conf)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"));
    assert_eq!(
        qfm(&["simulate", "--config", "/nonexistent.conf"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn help_lists_every_flag() {
    let help = stdout(&qfm(&["simulate", "--help"]));
    for flag in [
        "--f0",
        "--q",
        "--v0",
        "--k",
        "--convention",
        "--shortcut",
        "--offset",
        "--dk",
        "--leak",
        "--diode",
        "--fbw",
        "--ffail",
        "--noise",
        "--sign",
        "--spp",
        "--seed",
        "--out",
        "--svg",
        "--trace",
        "--config",
    ] {
        assert!(help.contains(flag), "missing {flag}");
    }
}
