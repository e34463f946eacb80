//! Experiment harness: the five-variant comparison (source-only, inter-only,
//! self-training-only, adversarial-only, full), multi-seed aggregation, the
//! lambda ablation, and the on-disk layout of a run.
//!
//! Per seed, stage 1 is trained once and shared by every stage-3 variant,
//! which is exactly what the variants mean: they differ only in what happens
//! after inter-domain adaptation. Seeds run in parallel with disjoint state;
//! aggregation is order-deterministic, so a rerun with the same config and
//! seeds produces byte-identical results.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{
    gen_classification_domain, gen_segmentation_domain, Dataset, DomainConfig, DomainRole,
    SplitTag, UnlabeledSet,
};
use crate::dataio::{save_checkpoint, write_label_map};
use crate::error::{Error, Result};
use crate::maps::LabelMap;
use crate::models::{DiscriminatorConfig, GeneratorConfig, NetMode};
use crate::optim::ParameterSet;
use crate::pipeline::{
    evaluate_generator, generate_ranking_artifacts, train_inter, train_intra, CurvePoint,
    RankingArtifacts, StageConfig,
};
use crate::ranking::{ranking_csv, RankRecord, RareClassSet, SplitAssignment};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackMode {
    Segmentation,
    Classification,
}

/// Benchmark data settings. The shift/variance pair applies to the target
/// domain only; the source domain is generated clean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub height: usize,
    pub width: usize,
    pub class_count: usize,
    pub shapes_min: usize,
    pub shapes_max: usize,
    pub domain_shift: f64,
    pub intra_variance: f64,
    pub rare_classes: std::collections::BTreeSet<usize>,
    pub rare_weight: f64,
    pub source_count: usize,
    pub target_train_count: usize,
    pub target_eval_count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            height: 32,
            width: 32,
            class_count: 5,
            shapes_min: 2,
            shapes_max: 5,
            domain_shift: 1.0,
            intra_variance: 0.3,
            rare_classes: [4].into_iter().collect(),
            rare_weight: 0.15,
            source_count: 400,
            target_train_count: 300,
            target_eval_count: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mode: TrackMode,
    pub data: DataConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub stage: StageConfig,
    /// Minimum pixel fraction for a rare class to count as predicted.
    pub rare_pixel_fraction: f64,
    /// Classes for the auxiliary subset mIoU report (non-rare by default).
    pub eval_subset: Option<Vec<usize>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: TrackMode::Segmentation,
            data: DataConfig::default(),
            generator: GeneratorConfig::segmentation(5),
            discriminator: DiscriminatorConfig::new(NetMode::Segmentation, 5),
            stage: StageConfig::default(),
            rare_pixel_fraction: crate::ranking::DEFAULT_RARE_PIXEL_FRACTION,
            eval_subset: Some(vec![0, 1, 2, 3]),
        }
    }
}

impl ExperimentConfig {
    /// Rotated two-moons benchmark; lambda 0.8 is the classification-track
    /// default ratio.
    pub fn classification_default() -> Self {
        ExperimentConfig {
            mode: TrackMode::Classification,
            data: DataConfig {
                height: 8,
                width: 8,
                class_count: 2,
                shapes_min: 1,
                shapes_max: 1,
                domain_shift: 30.0,
                intra_variance: 0.1,
                rare_classes: Default::default(),
                rare_weight: 1.0,
                source_count: 400,
                target_train_count: 400,
                target_eval_count: 300,
            },
            generator: GeneratorConfig::classification(2, 2),
            discriminator: DiscriminatorConfig::new(NetMode::Classification, 2),
            stage: StageConfig {
                lambda: 0.8,
                inter_iterations: 2000,
                intra_iterations: 1200,
                batch_size: 4,
                ..StageConfig::default()
            },
            rare_pixel_fraction: crate::ranking::DEFAULT_RARE_PIXEL_FRACTION,
            eval_subset: None,
        }
    }

    pub fn default_for(mode: TrackMode) -> Self {
        match mode {
            TrackMode::Segmentation => ExperimentConfig::default(),
            TrackMode::Classification => ExperimentConfig::classification_default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stage.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.generator.class_count != self.data.class_count {
            return Err(Error::Config(format!(
                "generator has {} classes, data has {}",
                self.generator.class_count, self.data.class_count
            )));
        }
        if self.discriminator.class_count != self.data.class_count {
            return Err(Error::Config(format!(
                "discriminator expects {} classes, data has {}",
                self.discriminator.class_count, self.data.class_count
            )));
        }
        let gen_mode = match self.mode {
            TrackMode::Segmentation => NetMode::Segmentation,
            TrackMode::Classification => NetMode::Classification,
        };
        if self.generator.mode != gen_mode || self.discriminator.mode != gen_mode {
            return Err(Error::Config(
                "network modes must match the experiment track".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.rare_pixel_fraction) {
            return Err(Error::Config(
                "rare_pixel_fraction must be in [0,1)".into(),
            ));
        }
        Ok(())
    }

    pub fn rare_class_set(&self) -> Result<RareClassSet> {
        RareClassSet::new(self.data.rare_classes.clone(), self.rare_pixel_fraction)
    }

    pub fn metric_name(&self) -> &'static str {
        match self.mode {
            TrackMode::Segmentation => "miou",
            TrackMode::Classification => "accuracy",
        }
    }
}

/// Source train / target train / target eval triple for one seed.
pub struct SeedData {
    pub source: Dataset,
    pub target_train: Dataset,
    pub target_eval: Dataset,
}

/// The three generation configs (source train, target train, target eval)
/// for one experiment seed. Shift and variance apply to target configs only.
pub fn domain_configs(cfg: &ExperimentConfig, seed: u64) -> [DomainConfig; 3] {
    let base = |role: DomainRole, split: SplitTag, count: usize, label: &str| DomainConfig {
        role,
        split,
        height: cfg.data.height,
        width: cfg.data.width,
        class_count: cfg.data.class_count,
        image_count: count,
        shapes_min: cfg.data.shapes_min,
        shapes_max: cfg.data.shapes_max,
        palette: None,
        domain_shift: if role == DomainRole::Source { 0.0 } else { cfg.data.domain_shift },
        intra_variance: if role == DomainRole::Source { 0.0 } else { cfg.data.intra_variance },
        rare_classes: cfg.data.rare_classes.clone(),
        rare_weight: cfg.data.rare_weight,
        seed: rng::derive_seed(seed, label),
    };
    [
        base(
            DomainRole::Source,
            SplitTag::Train,
            cfg.data.source_count,
            "data-source",
        ),
        base(
            DomainRole::Target,
            SplitTag::Train,
            cfg.data.target_train_count,
            "data-target-train",
        ),
        base(
            DomainRole::Target,
            SplitTag::Eval,
            cfg.data.target_eval_count,
            "data-target-eval",
        ),
    ]
}

pub fn make_datasets(cfg: &ExperimentConfig, seed: u64) -> Result<SeedData> {
    let gen = match cfg.mode {
        TrackMode::Segmentation => gen_segmentation_domain,
        TrackMode::Classification => gen_classification_domain,
    };
    let [source, target_train, target_eval] = domain_configs(cfg, seed);
    Ok(SeedData {
        source: gen(&source)?,
        target_train: gen(&target_train)?,
        target_eval: gen(&target_eval)?,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VariantScores {
    pub source_only: f64,
    pub inter_only: f64,
    pub self_training_only: f64,
    pub adv_only: f64,
    pub full: f64,
}

impl VariantScores {
    fn as_array(&self) -> [f64; 5] {
        [
            self.source_only,
            self.inter_only,
            self.self_training_only,
            self.adv_only,
            self.full,
        ]
    }

    fn from_array(a: [f64; 5]) -> Self {
        VariantScores {
            source_only: a[0],
            inter_only: a[1],
            self_training_only: a[2],
            adv_only: a[3],
            full: a[4],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub scores: VariantScores,
    pub easy_count: usize,
    pub hard_count: usize,
    /// Relative path of this seed's ranking manifest within the run dir.
    pub ranking_ref: String,
    pub curves: BTreeMap<String, Vec<CurvePoint>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub metric: String,
    pub lambda: f64,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedOutcome>,
    pub mean: VariantScores,
    pub std: VariantScores,
}

/// Heavyweight per-seed products kept out of `results.json`.
pub struct SeedArtifacts {
    pub seed: u64,
    pub g_inter: ParameterSet,
    pub d_inter: Option<ParameterSet>,
    pub g_full: ParameterSet,
    pub records: Vec<RankRecord>,
    pub assignment: SplitAssignment,
    pub pseudo_labels: Vec<(String, LabelMap)>,
}

pub struct ExperimentRun {
    pub result: ExperimentResult,
    pub artifacts: Vec<SeedArtifacts>,
}

fn score_of(cfg: &ExperimentConfig, outcome: &crate::pipeline::EvalOutcome) -> f64 {
    match cfg.mode {
        TrackMode::Segmentation => outcome.miou,
        TrackMode::Classification => outcome.accuracy,
    }
}

/// Easy (image, pseudo label) pairs and hard images, looked up by split id.
fn split_views<'a>(
    target: &UnlabeledSet<'a>,
    artifacts: &'a RankingArtifacts,
) -> (Vec<(&'a Tensor, &'a LabelMap)>, Vec<&'a Tensor>) {
    let by_id: BTreeMap<&str, &'a Tensor> = target.items.iter().map(|(id, t)| (*id, *t)).collect();
    let easy = artifacts
        .pseudo_labels
        .iter()
        .map(|(id, lm)| (by_id[id.as_str()], lm))
        .collect();
    let hard = artifacts
        .assignment
        .hard
        .iter()
        .map(|id| by_id[id.as_str()])
        .collect();
    (easy, hard)
}

fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<(SeedOutcome, SeedArtifacts)> {
    let data = make_datasets(cfg, seed)?;
    let source = data.source.labeled()?;
    let target = data.target_train.unlabeled();
    let eval = data.target_eval.labeled()?;
    let subset = cfg.eval_subset.as_deref();
    let stage = StageConfig {
        seed,
        ..cfg.stage.clone()
    };
    let mut curves = BTreeMap::new();

    // Source-only baseline: no adversarial term, no discriminator.
    let source_only_cfg = StageConfig {
        adv_weight: 0.0,
        ..stage.clone()
    };
    let source_only = train_inter(
        &source,
        &target,
        &cfg.generator,
        &cfg.discriminator,
        &source_only_cfg,
    )?;
    let s_source =
        score_of(cfg, &evaluate_generator(&source_only.generator, &cfg.generator, &eval, subset)?);
    curves.insert("source_only".to_string(), source_only.curve);

    // Stage 1, shared by every stage-3 variant.
    let inter = train_inter(&source, &target, &cfg.generator, &cfg.discriminator, &stage)?;
    let s_inter =
        score_of(cfg, &evaluate_generator(&inter.generator, &cfg.generator, &eval, subset)?);
    curves.insert("inter".to_string(), inter.curve.clone());

    let rare = cfg.rare_class_set()?;

    // Stage 2 at the configured lambda.
    let artifacts = generate_ranking_artifacts(
        &inter.generator,
        &cfg.generator,
        &target,
        stage.lambda,
        stage.use_normalized_ranking,
        &rare,
    )?;
    let (easy, hard) = split_views(&target, &artifacts);

    // Full pipeline.
    let full = train_intra(
        &easy,
        &hard,
        Some(&inter.generator),
        &cfg.generator,
        &cfg.discriminator,
        &stage,
    )?;
    let s_full = score_of(cfg, &evaluate_generator(&full.generator, &cfg.generator, &eval, subset)?);
    curves.insert("full".to_string(), full.curve.clone());

    // Self-training only: lambda = 1 puts every image in the easy split, the
    // adversarial term is inert.
    let st_artifacts = generate_ranking_artifacts(
        &inter.generator,
        &cfg.generator,
        &target,
        1.0,
        stage.use_normalized_ranking,
        &rare,
    )?;
    let (st_easy, st_hard) = split_views(&target, &st_artifacts);
    let st = train_intra(
        &st_easy,
        &st_hard,
        Some(&inter.generator),
        &cfg.generator,
        &cfg.discriminator,
        &stage,
    )?;
    let s_st = score_of(cfg, &evaluate_generator(&st.generator, &cfg.generator, &eval, subset)?);
    curves.insert("self_training_only".to_string(), st.curve);

    // Adversarial-only: pseudo-label loss weight 0.
    let adv_cfg = StageConfig {
        pseudo_label_weight: 0.0,
        ..stage.clone()
    };
    let adv = train_intra(
        &easy,
        &hard,
        Some(&inter.generator),
        &cfg.generator,
        &cfg.discriminator,
        &adv_cfg,
    )?;
    let s_adv = score_of(cfg, &evaluate_generator(&adv.generator, &cfg.generator, &eval, subset)?);
    curves.insert("adv_only".to_string(), adv.curve);

    let outcome = SeedOutcome {
        seed,
        scores: VariantScores {
            source_only: s_source,
            inter_only: s_inter,
            self_training_only: s_st,
            adv_only: s_adv,
            full: s_full,
        },
        easy_count: artifacts.assignment.easy.len(),
        hard_count: artifacts.assignment.hard.len(),
        ranking_ref: String::new(),
        curves,
    };
    let artifacts = SeedArtifacts {
        seed,
        g_inter: inter.generator,
        d_inter: inter.discriminator,
        g_full: full.generator,
        records: artifacts.records,
        assignment: artifacts.assignment,
        pseudo_labels: artifacts.pseudo_labels,
    };
    Ok((outcome, artifacts))
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every variant for every seed. Seeds execute in parallel with
/// disjoint state.
pub fn run_experiment(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<ExperimentRun> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::Input("need at least one seed".into()));
    }
    let mut unique = seeds.to_vec();
    unique.sort_unstable();
    unique.dedup();
    if unique.len() != seeds.len() {
        return Err(Error::Input("duplicate seeds".into()));
    }

    let per_seed: Vec<(SeedOutcome, SeedArtifacts)> = seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, seed))
        .collect::<Result<_>>()?;

    let mut outcomes = Vec::with_capacity(seeds.len());
    let mut artifacts = Vec::with_capacity(seeds.len());
    for (i, (mut o, a)) in per_seed.into_iter().enumerate() {
        o.ranking_ref = if i == 0 {
            "ranking.csv".to_string()
        } else {
            format!("seeds/{}/ranking.csv", o.seed)
        };
        outcomes.push(o);
        artifacts.push(a);
    }

    let columns: Vec<[f64; 5]> = outcomes.iter().map(|o| o.scores.as_array()).collect();
    let mut means = [0.0; 5];
    let mut stds = [0.0; 5];
    for v in 0..5 {
        let xs: Vec<f64> = columns.iter().map(|c| c[v]).collect();
        let (m, s) = mean_std(&xs);
        means[v] = m;
        stds[v] = s;
    }

    Ok(ExperimentRun {
        result: ExperimentResult {
            metric: cfg.metric_name().to_string(),
            lambda: cfg.stage.lambda,
            seeds: seeds.to_vec(),
            per_seed: outcomes,
            mean: VariantScores::from_array(means),
            std: VariantScores::from_array(stds),
        },
        artifacts,
    })
}

// --- lambda ablation ---

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub lambda: f64,
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub metric: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

/// Full pipeline per lambda per seed; stage 1 is trained once per seed and
/// shared across lambdas. The lambda = 0 row is the inter-only result
/// bit-exactly (stage 3 skipped).
pub fn run_lambda_ablation(
    cfg: &ExperimentConfig,
    lambdas: &[f64],
    seeds: &[u64],
) -> Result<AblationTable> {
    cfg.validate()?;
    if lambdas.is_empty() {
        return Err(Error::Input("need at least one lambda".into()));
    }
    for &l in lambdas {
        if !(0.0..=1.0).contains(&l) {
            return Err(Error::Config(format!("lambda must be in [0,1], got {l}")));
        }
    }
    if seeds.is_empty() {
        return Err(Error::Input("need at least one seed".into()));
    }

    // per_lambda_scores[s][l] = score of lambda l under seed s
    let per_seed_scores: Vec<Vec<f64>> = seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<f64>> {
            let data = make_datasets(cfg, seed)?;
            let source = data.source.labeled()?;
            let target = data.target_train.unlabeled();
            let eval = data.target_eval.labeled()?;
            let subset = cfg.eval_subset.as_deref();
            let stage = StageConfig {
                seed,
                ..cfg.stage.clone()
            };
            let inter = train_inter(&source, &target, &cfg.generator, &cfg.discriminator, &stage)?;
            let inter_score = score_of(
                cfg,
                &evaluate_generator(&inter.generator, &cfg.generator, &eval, subset)?,
            );
            let rare = cfg.rare_class_set()?;
            lambdas
                .iter()
                .map(|&lambda| -> Result<f64> {
                    if lambda == 0.0 {
                        return Ok(inter_score);
                    }
                    let art = generate_ranking_artifacts(
                        &inter.generator,
                        &cfg.generator,
                        &target,
                        lambda,
                        stage.use_normalized_ranking,
                        &rare,
                    )?;
                    let (easy, hard) = split_views(&target, &art);
                    let lambda_stage = StageConfig {
                        lambda,
                        ..stage.clone()
                    };
                    let out = train_intra(
                        &easy,
                        &hard,
                        Some(&inter.generator),
                        &cfg.generator,
                        &cfg.discriminator,
                        &lambda_stage,
                    )?;
                    Ok(score_of(
                        cfg,
                        &evaluate_generator(&out.generator, &cfg.generator, &eval, subset)?,
                    ))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let rows = lambdas
        .iter()
        .enumerate()
        .map(|(li, &lambda)| {
            let per_seed: Vec<f64> = per_seed_scores.iter().map(|s| s[li]).collect();
            let (mean, std) = mean_std(&per_seed);
            AblationRow {
                lambda,
                mean,
                std,
                per_seed,
            }
        })
        .collect();
    Ok(AblationTable {
        metric: cfg.metric_name().to_string(),
        seeds: seeds.to_vec(),
        rows,
    })
}

/// Table-3-shaped CSV: one row per lambda.
pub fn ablation_csv(table: &AblationTable) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("lambda,mean_miou,std_miou");
    for seed in &table.seeds {
        write!(out, ",miou_seed{seed}").expect("string write");
    }
    out.push('\n');
    for row in &table.rows {
        write!(out, "{},{:.6},{:.6}", row.lambda, row.mean, row.std).expect("string write");
        for v in &row.per_seed {
            write!(out, ",{v:.6}").expect("string write");
        }
        out.push('\n');
    }
    out
}

// --- on-disk layout ---

/// Writes the documented run layout: `config.json`, `results.json`, the
/// first seed's artifacts at the top level (`checkpoints/`, `ranking.csv`,
/// `pseudo/`) and every further seed under `seeds/<seed>/`.
pub fn write_experiment_dir(
    dir: &Path,
    cfg: &ExperimentConfig,
    run: &ExperimentRun,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let config_echo = serde_json::json!({
        "config": cfg,
        "seeds": run.result.seeds,
    });
    fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(&config_echo)? + "\n",
    )?;
    fs::write(
        dir.join("results.json"),
        serde_json::to_string_pretty(&run.result)? + "\n",
    )?;
    for (i, art) in run.artifacts.iter().enumerate() {
        let seed_dir = if i == 0 {
            dir.to_path_buf()
        } else {
            dir.join("seeds").join(art.seed.to_string())
        };
        write_seed_artifacts(&seed_dir, cfg, art)?;
    }
    Ok(())
}

fn write_seed_artifacts(dir: &Path, cfg: &ExperimentConfig, art: &SeedArtifacts) -> Result<()> {
    fs::create_dir_all(dir.join("pseudo"))?;
    let gen_cfg_json = serde_json::to_value(&cfg.generator)?;
    save_checkpoint(
        &dir.join("checkpoints").join("g_inter"),
        &art.g_inter,
        &gen_cfg_json,
        art.seed,
    )?;
    if let Some(d) = &art.d_inter {
        save_checkpoint(
            &dir.join("checkpoints").join("d_inter"),
            d,
            &serde_json::to_value(&cfg.discriminator)?,
            art.seed,
        )?;
    }
    save_checkpoint(
        &dir.join("checkpoints").join("g_full"),
        &art.g_full,
        &gen_cfg_json,
        art.seed,
    )?;
    fs::write(
        dir.join("ranking.csv"),
        ranking_csv(&art.records, &art.assignment, cfg.stage.use_normalized_ranking),
    )?;
    for (id, lm) in &art.pseudo_labels {
        write_label_map(&dir.join("pseudo").join(format!("{id}.tnsr")), lm)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Shrunken config for fast structural tests.
    pub(crate) fn tiny_experiment() -> ExperimentConfig {
        ExperimentConfig {
            data: DataConfig {
                height: 12,
                width: 12,
                source_count: 10,
                target_train_count: 8,
                target_eval_count: 6,
                ..DataConfig::default()
            },
            generator: GeneratorConfig {
                widths: vec![6, 8],
                ..GeneratorConfig::segmentation(5)
            },
            discriminator: DiscriminatorConfig {
                widths: vec![4, 4],
                ..DiscriminatorConfig::new(NetMode::Segmentation, 5)
            },
            stage: StageConfig {
                inter_iterations: 8,
                intra_iterations: 6,
                loss_log_every: 4,
                ..StageConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn experiment_structure_and_determinism() {
        let cfg = tiny_experiment();
        let run1 = run_experiment(&cfg, &[1, 2]).unwrap();
        let run2 = run_experiment(&cfg, &[1, 2]).unwrap();
        let j1 = serde_json::to_string(&run1.result).unwrap();
        let j2 = serde_json::to_string(&run2.result).unwrap();
        assert_eq!(j1, j2);
        assert_eq!(run1.result.per_seed.len(), 2);
        assert_eq!(run1.result.metric, "miou");
        // lambda 0.67 over 8 target images -> round(5.36) = 5 easy
        assert_eq!(run1.result.per_seed[0].easy_count, 5);
        assert_eq!(run1.result.per_seed[0].hard_count, 3);
    }

    #[test]
    fn duplicate_seeds_rejected() {
        let cfg = tiny_experiment();
        assert!(matches!(
            run_experiment(&cfg, &[3, 3]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn ablation_lambda_zero_row_is_inter_only_bit_exact() {
        let cfg = tiny_experiment();
        let table = run_lambda_ablation(&cfg, &[0.0, 0.5, 1.0], &[4]).unwrap();
        let run = run_experiment(&cfg, &[4]).unwrap();
        assert_eq!(table.rows[0].per_seed[0], run.result.per_seed[0].scores.inter_only);
        assert_eq!(table.rows.len(), 3);
        let csv = ablation_csv(&table);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("lambda,mean_miou,std_miou,miou_seed4"));
    }

    #[test]
    fn run_dir_layout() {
        let cfg = tiny_experiment();
        let run = run_experiment(&cfg, &[5, 6]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_experiment_dir(dir.path(), &cfg, &run).unwrap();
        for name in ["config.json", "results.json", "ranking.csv"] {
            assert!(dir.path().join(name).is_file(), "{name} missing");
        }
        assert!(dir.path().join("checkpoints/g_inter/manifest.json").is_file());
        assert!(dir.path().join("pseudo").is_dir());
        assert!(dir.path().join("seeds/6/ranking.csv").is_file());
    }
}
