use std::fs;

use coreflow::io::{read_batch, Config};
use coreflow::pipeline::run_pipeline;
use coreflow::synth::Case;

fn tiny(case: Case, p_miss: f64) -> Config {
    let mut cfg = Config::default();
    cfg.data.case = case;
    cfg.data.m1 = 12;
    cfg.data.m2 = 10;
    cfg.data.rank = 3;
    cfg.data.n = 48;
    cfg.data.p_miss = p_miss;
    cfg.stage1.rank = 3;
    cfg.stage1.batch_size = 16;
    cfg.stage1.steps = 10;
    cfg.stage1.epochs = 3;
    cfg.flow.steps = 150;
    cfg.flow.batch_size = 16;
    cfg.flow.hidden = vec![16, 16];
    cfg.data.holdout = 40;
    cfg.eval.n_generate = 40;
    cfg
}

#[test]
fn pipeline_is_deterministic() {
    let cfg = tiny(Case::Waves, 0.2);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(&cfg, true, a.path()).unwrap();
    run_pipeline(&cfg, true, b.path()).unwrap();
    for f in [
        "repeat_0/generated.cfmb",
        "repeat_0/report.json",
        "report.json",
    ] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn generated_batch_has_training_shape() {
    let cfg = tiny(Case::Blobs, 0.0);
    let dir = tempfile::tempdir().unwrap();
    let summary = run_pipeline(&cfg, false, dir.path()).unwrap();
    let gen = read_batch(&dir.path().join("repeat_0/generated.cfmb")).unwrap();
    assert_eq!(gen.shape(), (12, 10));
    assert_eq!(gen.len(), 40);
    assert!(gen.matrices().iter().all(|m| m.is_finite()));
    assert!(summary
        .mean
        .values()
        .flat_map(|m| m.values())
        .all(|v| v.is_finite()));
}
