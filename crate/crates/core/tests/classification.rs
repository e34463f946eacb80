//! Classification-track integration checks that need a real (but quick)
//! training run.

use entrank::experiment::{make_datasets, ExperimentConfig};
use entrank::pipeline::{evaluate_generator, train_inter, StageConfig};

/// With zero shift and zero variance the source and target distributions
/// coincide, so a source-trained classifier transfers essentially perfectly.
#[test]
fn identical_domains_transfer_above_99_percent() {
    let mut cfg = ExperimentConfig::classification_default();
    cfg.data.domain_shift = 0.0;
    cfg.data.intra_variance = 0.0;
    cfg.data.source_count = 200;
    cfg.data.target_train_count = 50;
    cfg.data.target_eval_count = 200;
    cfg.stage = StageConfig {
        adv_weight: 0.0,
        inter_iterations: 1500,
        batch_size: 4,
        seed: 12,
        ..cfg.stage
    };

    let data = make_datasets(&cfg, 12).unwrap();
    let out = train_inter(
        &data.source.labeled().unwrap(),
        &data.target_train.unlabeled(),
        &cfg.generator,
        &cfg.discriminator,
        &cfg.stage,
    )
    .unwrap();
    let eval = evaluate_generator(
        &out.generator,
        &cfg.generator,
        &data.target_eval.labeled().unwrap(),
        None,
    )
    .unwrap();
    assert!(
        eval.accuracy >= 0.99,
        "same-distribution transfer accuracy {:.4}",
        eval.accuracy
    );
}
