use std::path::Path;
use std::process::{Command, Output};

use qpf::io::{read_record, EstimatesFile};

fn qpf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qpf"))
        .args(args)
        .env_remove("QPF_THREADS")
        .output()
        .expect("spawn qpf")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn simulate(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--steps", "3000", "--set", "n_fock=16", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    qpf(&args)
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&simulate(a.path(), &["--seeds", "3..5"])), 0);
    assert_eq!(code(&simulate(b.path(), &["--seeds", "3..5"])), 0);
    for name in ["record_seed3.csv", "record_seed4.csv", "truth_seed4.csv", "manifest.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between runs");
    }
    assert!(!a.path().join("record_seed5.csv").exists(), "seed ranges are half-open");
    let r3 = read_record(&a.path().join("record_seed3.csv")).unwrap();
    let r4 = read_record(&a.path().join("record_seed4.csv")).unwrap();
    assert_eq!(r3.len(), 3000);
    assert_ne!(r3.dy, r4.dy);
}

#[test]
fn thread_count_does_not_change_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run = |dir: &Path, threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_qpf"))
            .args(["simulate", "--seeds", "0..3", "--steps", "1000", "--set", "n_fock=12", "--out"])
            .arg(dir)
            .env("QPF_THREADS", threads)
            .output()
            .unwrap()
    };
    assert_eq!(code(&run(a.path(), "1")), 0);
    assert_eq!(code(&run(b.path(), "3")), 0);
    for s in 0..3 {
        let name = format!("record_seed{s}.csv");
        assert_eq!(std::fs::read(a.path().join(&name)).unwrap(), std::fs::read(b.path().join(&name)).unwrap());
    }
}

#[test]
fn every_backend_filters_a_record() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(code(&simulate(dir.path(), &["--seed", "7"])), 0);
    let record = dir.path().join("record_seed7.csv");
    let rec = read_record(&record).unwrap();
    for backend in ["qpde", "qpde-fd", "density", "projection", "wonham-frozen"] {
        let out = qpf(&["filter", record.to_str().unwrap(), "--backend", backend, "--set", "n_fock=16", "--out", d]);
        assert_eq!(code(&out), 0, "{backend}: {}", String::from_utf8_lossy(&out.stderr));
        let est = EstimatesFile::read(&dir.path().join(format!("estimates_{backend}_seed7.csv"))).unwrap();
        assert_eq!(est.p_plus.len(), rec.len() + 1, "initial value plus one per step");
        assert!(est.p_plus.iter().all(|p| (0.0..=1.0).contains(p)), "{backend} left [0, 1]");
    }
    assert!(dir.path().join("trace_seed7.csv").exists());

    let a = dir.path().join("estimates_qpde_seed7.csv");
    let b = dir.path().join("estimates_projection_seed7.csv");
    let out = qpf(&["compare", a.to_str().unwrap(), b.to_str().unwrap(), "--record", record.to_str().unwrap(), "--out", d]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(dir.path().join("metrics.txt")).unwrap();
    assert!(text.contains("rms_p"), "{text}");
}

#[test]
fn verify_passes_and_catches_a_wrong_coefficient() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let ok = qpf(&["verify", "--steps", "2000", "--out", d]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    assert!(dir.path().join("verify_report.txt").exists());
    let bad = qpf(&["verify", "--steps", "2000", "--perturb-weight-drift", "0.01", "--out", d]);
    assert_eq!(code(&bad), 3);
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&qpf(&["simulate", "--no-such-flag"])), 1);
    assert_eq!(code(&qpf(&["frobnicate"])), 1);
    assert_eq!(code(&qpf(&["simulate", "--seeds", "5..2"])), 1);
    assert_eq!(code(&qpf(&["simulate", "--seed", "1", "--set", "colour=blue"])), 1);
    assert_eq!(code(&qpf(&["filter", "missing.csv", "--backend", "telepathy"])), 1);
    let t = Command::new(env!("CARGO_BIN_EXE_qpf"))
        .args(["simulate", "--seed", "0", "--steps", "10"])
        .env("QPF_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&t), 1);
}

#[test]
fn unstable_grid_filter_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = qpf(&["simulate", "--seed", "1", "--steps", "100", "--dt", "0.01", "--set", "n_fock=10", "--out", d]);
    assert_eq!(code(&out), 0);
    let record = dir.path().join("record_seed1.csv");
    let out = qpf(&["filter", record.to_str().unwrap(), "--backend", "qpde-fd", "--set", "q_points=2000", "--out", d]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_file_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "# short sweep\nsteps = 1500\nn_fock = 14\nseeds = 0..2\nsweep.eta = 0.5, 1\nout = {}\n",
            dir.path().display()
        ),
    )
    .unwrap();
    let out = qpf(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()).count();
    assert_eq!(rows, 1 + 4, "header plus 2 values x 2 seeds:\n{text}");
}
