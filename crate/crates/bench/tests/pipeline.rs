use flowalign_bench::config::{ExperimentConfig, FieldKind, Method, SweepAxis};
use flowalign_bench::metrics::MetricRow;
use flowalign_bench::run::run;
use flowalign_bench::stats::mean;
use flowalign_bench::sweep::{run_sweep, sweep_points};

fn small(out: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.run.tasks = 6;
    cfg.run.seeds = vec![0, 1];
    cfg.run.out = out.to_path_buf();
    cfg
}

#[test]
fn identical_runs_write_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(&dir.path().join("a"));
    cfg.run.trajectories = true;
    run(&cfg).unwrap();
    cfg.run.out = dir.path().join("b");
    run(&cfg).unwrap();
    for f in ["metrics.csv", "edits.csv", "prop1_residual.csv", "trajectories/task003_seed1.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn empty_task_list_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.run.tasks = 0;
    assert!(run(&cfg).unwrap().is_empty());
    let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(lines.len(), 1);
    assert!(lines[0].starts_with("task,seed,method"));
}

#[test]
fn nfe_is_reported_per_method() {
    let dir = tempfile::tempdir().unwrap();
    for (m, nfe) in [(Method::FlowAlign, 99), (Method::FlowEdit, 132)] {
        let mut cfg = small(dir.path());
        cfg.run.tasks = 2;
        cfg.edit.method = m;
        assert!(run(&cfg).unwrap().iter().all(|r| r.nfe == nfe));
        let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert!(manifest.contains(&format!("nfe_per_step = {}", nfe / 33)));
    }
}

#[test]
fn manifest_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(&dir.path().join("a"));
    cfg.edit.zeta = 0.03;
    cfg.edit.method = Method::SdEdit;
    run(&cfg).unwrap();
    let mut again = ExperimentConfig::load(&dir.path().join("a/manifest.txt")).unwrap();
    assert_eq!(again, cfg);
    again.run.out = dir.path().join("b");
    run(&again).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("a/metrics.csv")).unwrap(),
        std::fs::read(dir.path().join("b/metrics.csv")).unwrap()
    );
}

#[test]
fn single_point_sweep_matches_run_means() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.sweep.axis = SweepAxis::Omega;
    cfg.sweep.values = vec!["5".into()];
    cfg.edit.omega = 5.0;
    let rows = run(&cfg).unwrap();
    let pts = run_sweep(&cfg).unwrap();
    assert_eq!(pts.len(), 1);
    let m = |f: fn(&MetricRow) -> f64| mean(&rows.iter().map(f).collect::<Vec<_>>());
    assert_eq!(pts[0].n, rows.len());
    assert_eq!(pts[0].preserve_mse.0, m(|r| r.preserve_mse));
    assert_eq!(pts[0].preserve_psnr.0, m(|r| r.preserve_psnr));
    assert_eq!(pts[0].hit.0, m(|r| r.target_hit as f64));
    assert_eq!(pts[0].roundtrip_mse.0, m(|r| r.roundtrip_mse));
    assert!(dir.path().join("sweep.svg").exists());
}

#[test]
fn omega_sweep_accuracy_is_non_decreasing() {
    let mut cfg = ExperimentConfig::default();
    cfg.sweep.axis = SweepAxis::Omega;
    cfg.sweep.values = ["1", "2.5", "5", "7.5"].map(String::from).to_vec();
    let pts = sweep_points(&cfg).unwrap();
    let hits: Vec<f64> = pts.iter().map(|p| p.hit.0).collect();
    assert!(hits.windows(2).all(|w| w[1] >= w[0]), "{hits:?}");
}

#[test]
fn method_sweep_covers_baselines() {
    let mut cfg = small(std::path::Path::new("unused"));
    cfg.sweep.axis = SweepAxis::Method;
    cfg.sweep.values = ["flowalign", "flowedit", "ddib", "sdedit"].map(String::from).to_vec();
    let pts = sweep_points(&cfg).unwrap();
    let nfe: Vec<f64> = pts.iter().map(|p| p.nfe).collect();
    assert_eq!(nfe, vec![99.0, 132.0, 17.0 + 34.0, 66.0]);
}

#[test]
fn missing_checkpoint_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.model.field = FieldKind::Learned;
    cfg.model.checkpoint = dir.path().join("absent.falb");
    let err = run(&cfg).unwrap_err().to_string();
    assert!(err.contains("missing checkpoint"), "{err}");
}
