use bgnn::baselines::Baseline;
use bgnn::beamcore::Utility;
use bgnn::checkpoint;
use bgnn::exec::Execution;
use bgnn::experiments::{eval_csv, evaluate, generalize, Cell, EvalSpec};
use bgnn::training::{train, TrainConfig};

#[test]
fn short_desk_run_beats_the_untrained_model() {
    let cfg = TrainConfig { epochs: 10, ..TrainConfig::desk(Utility::SumRate) };
    let out = train(&cfg, |_, _| Ok(())).unwrap();
    let initial = out.report.initial_validation;
    assert!(out.best_validation > 1.2 * initial, "{} vs {initial}", out.best_validation);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    checkpoint::save(&out.best, &path).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    assert_eq!(loaded, out.best);

    let spec = |execution| EvalSpec {
        cells: EvalSpec::grid(&[3, 6], &[2, 4], &[10.0]),
        samples: 8,
        seed: 3,
        scenario: cfg.scenario.clone(),
        baselines: vec![Baseline::Wmmse, Baseline::Zf, Baseline::Mrt],
        execution,
    };
    let a = eval_csv(&evaluate(&out.best, &spec(Execution::Parallel)).unwrap(), Utility::SumRate, "m");
    let b = eval_csv(&evaluate(&loaded, &spec(Execution::Sequential)).unwrap(), Utility::SumRate, "m");
    assert_eq!(a, b);

    let big = EvalSpec { cells: vec![Cell { n: 16, k: 16, snr_db: 10.0 }], samples: 1, ..spec(Execution::Parallel) };
    assert!(generalize(&loaded, &big).unwrap()[0].ratio.is_finite());
}
