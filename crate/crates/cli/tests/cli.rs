use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wingfit::table::Table;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn model(name: &str) -> String {
    root()
        .join(format!("crates/core/models/{name}.mdl"))
        .display()
        .to_string()
}

fn experiment(name: &str) -> String {
    root()
        .join(format!("experiments/{name}.toml"))
        .display()
        .to_string()
}

fn wingfit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wingfit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_model_is_an_input_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.mdl");
    let out = wingfit(&["simulate", "--model", s(&missing), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(code(&wingfit(&["simulate", "--bogus"])), 2);
    assert_eq!(code(&wingfit(&[])), 2);
    let dir = tempfile::tempdir().unwrap();
    // No model anywhere.
    assert_eq!(code(&wingfit(&["validate", "--out", s(dir.path())])), 2);
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "format = 1\nnot_a_key = 3\n").unwrap();
    assert_eq!(code(&wingfit(&["simulate", "--config", s(&cfg)])), 2);
    fs::write(&cfg, "format = 2\n").unwrap();
    assert_eq!(code(&wingfit(&["simulate", "--config", s(&cfg)])), 2);
    fs::write(&cfg, "format = 1\n[sim]\ndt = -1.0\n").unwrap();
    let out = wingfit(&[
        "simulate",
        "--config",
        s(&cfg),
        "--model",
        &model("pendulum1"),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn zero_duration_writes_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = wingfit(&[
        "simulate",
        "--config",
        &experiment("aerobat-lite"),
        "--duration",
        "0",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["trajectory.csv", "samples.csv"] {
        let text = fs::read_to_string(dir.path().join(f)).unwrap();
        assert_eq!(text.lines().count(), 1, "{f}");
        assert!(text.starts_with("t,"));
    }
}

#[test]
fn simulate_writes_the_sampled_window_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = wingfit(&[
        "simulate",
        "--config",
        &experiment("aerobat-lite"),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let traj = Table::load(dir.path().join("trajectory.csv")).unwrap();
    let samples = Table::load(dir.path().join("samples.csv")).unwrap();
    assert_eq!(traj.rows.len(), 2000);
    assert_eq!(samples.rows.len(), 20);
    assert_eq!(traj.n_cols(), 1 + 3 * 10);
    assert_eq!(samples.n_cols(), 1 + 2 * 10 + 10);
    for f in ["trajectory.csv", "samples.csv"] {
        let path = dir.path().join(f);
        let bytes = fs::read(&path).unwrap();
        let again = dir.path().join(format!("copy-{f}"));
        Table::load(&path).unwrap().save(&again).unwrap();
        assert_eq!(fs::read(&again).unwrap(), bytes, "{f}");
    }
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = wingfit(&[
        "simulate",
        "--config",
        &experiment("pendulum2"),
        "--duration",
        "0.01",
        "--stride",
        "10",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let traj = Table::load(dir.path().join("trajectory.csv")).unwrap();
    let samples = Table::load(dir.path().join("samples.csv")).unwrap();
    assert_eq!(traj.rows.len(), 100);
    assert_eq!(samples.rows.len(), 10);
    // q0 comes from the config.
    let q1 = traj.column_index("q0").unwrap();
    assert!((traj.rows[0][q1] - 0.8).abs() < 1e-3);
}

fn train(dir: &Path, extra: &[&str]) -> Output {
    let config = experiment("aerobat-lite");
    let mut args = vec![
        "train",
        "--config",
        &config,
        "--duration",
        "0.05",
        "--out",
        s(dir),
    ];
    args.extend_from_slice(extra);
    wingfit(&args)
}

#[test]
fn interrupted_training_resumes_to_the_same_result() {
    let full = tempfile::tempdir().unwrap();
    let part = tempfile::tempdir().unwrap();
    let o = train(full.path(), &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = train(part.path(), &["--steps", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cp = part.path().join("checkpoint.txt");
    let o = train(part.path(), &["--resume", s(&cp)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["checkpoint.txt", "forces.csv"] {
        assert_eq!(
            fs::read(full.path().join(f)).unwrap(),
            fs::read(part.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let log = Table::load(full.path().join("training.csv")).unwrap();
    assert_eq!(log.rows.len(), 5);
    assert_eq!(
        log.header,
        ["step", "innovation_norm", "nmse", "cov_diag_max"]
    );
}

#[test]
fn training_on_a_sample_file_is_deterministic() {
    let sim = tempfile::tempdir().unwrap();
    let o = wingfit(&[
        "simulate",
        "--config",
        &experiment("aerobat-lite"),
        "--duration",
        "0.05",
        "--out",
        s(sim.path()),
    ]);
    assert_eq!(code(&o), 0);
    let samples = sim.path().join("samples.csv");
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let d = tempfile::tempdir().unwrap();
            let o = train(d.path(), &["--samples", s(&samples)]);
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
            d
        })
        .collect();
    for f in ["training.csv", "forces.csv", "checkpoint.txt"] {
        assert_eq!(
            fs::read(runs[0].path().join(f)).unwrap(),
            fs::read(runs[1].path().join(f)).unwrap(),
            "{f}"
        );
    }
    let missing = sim.path().join("absent.csv");
    let o = train(runs[0].path(), &["--samples", s(&missing)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bench_reports_every_term_and_backend() {
    let dir = tempfile::tempdir().unwrap();
    let o = wingfit(&[
        "bench",
        "--config",
        &experiment("pendulum2"),
        "--iters",
        "20",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 8);
    for row in &rows {
        assert_eq!(&row[2], "20");
        let diff: f64 = row[6].parse().unwrap();
        assert!(diff <= 1e-15, "{row:?}");
        let median: f64 = row[3].parse().unwrap();
        assert!(median > 0.0 || &row[0] == "Pjac");
    }
    assert!(fs::read_to_string(dir.path().join("bench.txt"))
        .unwrap()
        .contains("speedup"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("speedup D"));
    assert_eq!(
        code(&wingfit(&[
            "bench",
            "--config",
            &experiment("pendulum2"),
            "--iters",
            "0",
            "--out",
            s(dir.path())
        ])),
        2
    );
}

#[test]
fn validate_passes_on_every_shipped_model() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["pendulum1", "pendulum2", "planar-flapper", "aerobat-lite"] {
        let o = wingfit(&["validate", "--model", &model(name), "--out", s(dir.path())]);
        assert_eq!(
            code(&o),
            0,
            "{name}: {}",
            String::from_utf8_lossy(&o.stdout)
        );
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert!(
            stdout
                .lines()
                .filter(|l| l.trim_start().starts_with("PASS"))
                .count()
                >= 7,
            "{stdout}"
        );
        assert!(!stdout.contains("FAIL"));
    }
}
