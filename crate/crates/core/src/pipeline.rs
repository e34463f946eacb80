//! The three-stage training procedure.
//!
//! Stage 1 (`train_inter`) trains the generator on labeled source data while
//! a discriminator adversarially aligns source and target entropy maps.
//! Stage 2 (`generate_ranking_artifacts`) ranks target images by mean
//! prediction entropy, splits them at ratio lambda and pseudo-labels the easy
//! split. Stage 3 (`train_intra`) repeats the adversarial game inside the
//! target domain: easy (pseudo-labeled, source role) versus hard (target
//! role). Each iteration takes one generator step and one discriminator
//! step; the discriminator always sees entropy maps detached from the
//! generator tape, and the generator sees frozen discriminator weights.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::datagen::{LabeledSet, UnlabeledSet};
use crate::error::{Error, Result};
use crate::eval::ConfusionMatrix;
use crate::losses::{
    discriminator_loss, entropy_map, generator_adv_loss, seg_cross_entropy,
    total_generator_objective, Reduction,
};
use crate::maps::{LabelMap, ProbMap};
use crate::models::{
    forward_discriminator, forward_generator, init_discriminator, init_generator,
    DiscriminatorConfig, GeneratorConfig, ParamMode,
};
use crate::optim::{adam_step, sgd_step, ParameterSet};
use crate::pseudolabel::to_pseudo_label;
use crate::ranking::{
    normalized_rank_score, rank_score, split, RankRecord, RareClassSet, SplitAssignment,
};
use crate::rng;
use crate::tensor::Tensor;

/// Paper-scale generator learning rate; the config scales it for desk scale.
pub const BASE_GENERATOR_LR: f32 = 2.5e-4;

/// Configuration shared by the training stages: per-stage iteration counts,
/// batch size, the SGD generator optimizer, the Adam discriminator optimizer,
/// the adversarial weight, the split ratio lambda and its flags, and the
/// master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    pub inter_iterations: usize,
    pub intra_iterations: usize,
    pub batch_size: usize,
    /// Generator lr = `BASE_GENERATOR_LR * g_lr_scale`.
    pub g_lr_scale: f32,
    pub g_momentum: f32,
    pub g_weight_decay: f32,
    pub d_lr: f32,
    pub d_beta1: f32,
    pub d_beta2: f32,
    pub d_eps: f32,
    pub adv_weight: f32,
    pub lambda: f64,
    pub use_normalized_ranking: bool,
    pub init_intra_from_inter: bool,
    /// Weight of the pseudo-label cross-entropy in stage 3 (0 disables
    /// self-training, leaving the adversarial-only configuration).
    pub pseudo_label_weight: f32,
    pub ce_reduction: Reduction,
    pub adv_reduction: Reduction,
    /// Loss curve sampling period in iterations.
    pub loss_log_every: usize,
    pub seed: u64,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            inter_iterations: 1200,
            intra_iterations: 800,
            batch_size: 1,
            g_lr_scale: 40.0,
            g_momentum: 0.9,
            g_weight_decay: 1e-4,
            d_lr: 1e-4,
            d_beta1: 0.9,
            d_beta2: 0.999,
            d_eps: 1e-8,
            adv_weight: 0.001,
            lambda: 0.67,
            use_normalized_ranking: false,
            init_intra_from_inter: true,
            pseudo_label_weight: 1.0,
            ce_reduction: Reduction::Mean,
            adv_reduction: Reduction::Mean,
            loss_log_every: 25,
            seed: 0,
        }
    }
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inter_iterations == 0 || self.intra_iterations == 0 {
            return Err(Error::Config("iteration counts must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.g_lr_scale <= 0.0 {
            return Err(Error::Config("g_lr_scale must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must be in [0,1], got {}",
                self.lambda
            )));
        }
        if self.adv_weight < 0.0 || self.pseudo_label_weight < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.loss_log_every == 0 {
            return Err(Error::Config("loss_log_every must be >= 1".into()));
        }
        Ok(())
    }

    pub fn generator_lr(&self) -> f32 {
        BASE_GENERATOR_LR * self.g_lr_scale
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub g_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_loss: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub generator: ParameterSet,
    pub discriminator: Option<ParameterSet>,
    pub curve: Vec<CurvePoint>,
    /// True when the stage was skipped (empty easy split) and the generator
    /// is the unchanged warm start.
    pub skipped: bool,
}

/// Stage 1: supervised source training plus inter-domain adversarial
/// alignment of entropy maps. `adv_weight == 0` disables the discriminator
/// entirely, reducing the stage to source-only supervised training.
pub fn train_inter(
    source: &LabeledSet<'_>,
    target: &UnlabeledSet<'_>,
    gen_cfg: &GeneratorConfig,
    disc_cfg: &DiscriminatorConfig,
    cfg: &StageConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if source.items.is_empty() {
        return Err(Error::Input("empty source dataset".into()));
    }
    let adversarial = cfg.adv_weight > 0.0;
    if adversarial && target.items.is_empty() {
        return Err(Error::Input("empty target dataset".into()));
    }
    let supervised: Vec<(&Tensor, &LabelMap)> =
        source.items.iter().map(|(_, img, lm)| (*img, *lm)).collect();
    let adversarial_imgs: Vec<&Tensor> = if adversarial {
        target.items.iter().map(|(_, img)| *img).collect()
    } else {
        Vec::new()
    };
    let mut generator = init_generator(gen_cfg, rng::derive_seed(cfg.seed, "g-inter"))?;
    let mut discriminator = if adversarial {
        Some(init_discriminator(disc_cfg, rng::derive_seed(cfg.seed, "d-inter"))?)
    } else {
        None
    };
    let curve = run_adversarial_stage(
        &mut generator,
        &mut discriminator,
        &supervised,
        1.0,
        &adversarial_imgs,
        gen_cfg,
        disc_cfg,
        cfg,
        cfg.inter_iterations,
        "inter-batches",
    )?;
    Ok(TrainOutput {
        generator,
        discriminator,
        curve,
        skipped: false,
    })
}

/// Stage 3: self-training on the pseudo-labeled easy split plus intra-domain
/// adversarial alignment of hard-split entropy maps against easy-split ones.
/// An empty easy split skips the stage (warning case): the returned generator
/// is the unchanged warm start. An empty hard split makes the adversarial
/// term inert, leaving pure self-training.
pub fn train_intra(
    easy: &[(&Tensor, &LabelMap)],
    hard: &[&Tensor],
    warm_start: Option<&ParameterSet>,
    gen_cfg: &GeneratorConfig,
    disc_cfg: &DiscriminatorConfig,
    cfg: &StageConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let mut generator = match (cfg.init_intra_from_inter, warm_start) {
        (true, Some(w)) => w.clone(),
        (true, None) => {
            return Err(Error::Usage(
                "init_intra_from_inter set but no warm start provided".into(),
            ));
        }
        (false, _) => init_generator(gen_cfg, rng::derive_seed(cfg.seed, "g-intra"))?,
    };
    if easy.is_empty() {
        return Ok(TrainOutput {
            generator,
            discriminator: None,
            curve: Vec::new(),
            skipped: true,
        });
    }
    let adversarial = cfg.adv_weight > 0.0 && !hard.is_empty();
    let mut discriminator = if adversarial {
        Some(init_discriminator(disc_cfg, rng::derive_seed(cfg.seed, "d-intra"))?)
    } else {
        None
    };
    let curve = run_adversarial_stage(
        &mut generator,
        &mut discriminator,
        easy,
        cfg.pseudo_label_weight,
        hard,
        gen_cfg,
        disc_cfg,
        cfg,
        cfg.intra_iterations,
        "intra-batches",
    )?;
    Ok(TrainOutput {
        generator,
        discriminator,
        curve,
        skipped: false,
    })
}

/// Shared alternating loop. `supervised` items play the source role (label 1
/// for the discriminator), `adversarial_imgs` the target role (label 0).
#[allow(clippy::too_many_arguments)]
fn run_adversarial_stage(
    generator: &mut ParameterSet,
    discriminator: &mut Option<ParameterSet>,
    supervised: &[(&Tensor, &LabelMap)],
    supervised_weight: f32,
    adversarial_imgs: &[&Tensor],
    gen_cfg: &GeneratorConfig,
    disc_cfg: &DiscriminatorConfig,
    cfg: &StageConfig,
    iterations: usize,
    batch_stream: &str,
) -> Result<Vec<CurvePoint>> {
    let adversarial = discriminator.is_some() && cfg.adv_weight > 0.0 && !adversarial_imgs.is_empty();
    // Separate streams so the supervised batch sequence is identical whether
    // or not the adversarial term is active.
    let mut sup_batches = rng::stream(cfg.seed, &format!("{batch_stream}-sup"));
    let mut adv_batches = rng::stream(cfg.seed, &format!("{batch_stream}-adv"));
    let mut curve = Vec::new();
    let batch = cfg.batch_size;

    for iter in 0..iterations {
        // --- generator step ---
        let mut tape = Tape::new();
        let mut detached: Vec<(Tensor, Tensor, Tensor, Tensor)> = Vec::new();

        let mut ce_terms: Vec<Var> = Vec::new();
        let mut src_maps: Vec<(Var, Var)> = Vec::new();
        for _ in 0..batch {
            let (img, label) = supervised[rng::index(&mut sup_batches, supervised.len())];
            let x = tape.constant(img.clone())?;
            let out = forward_generator(&mut tape, generator, gen_cfg, x, ParamMode::Train)?;
            if supervised_weight > 0.0 {
                ce_terms.push(seg_cross_entropy(&mut tape, out.probs, label, cfg.ce_reduction)?);
            }
            if adversarial {
                let ent = entropy_map(&mut tape, out.probs)?;
                src_maps.push((ent, out.logits));
            }
        }

        let mut adv_terms: Vec<Var> = Vec::new();
        if adversarial {
            let d = discriminator.as_ref().expect("adversarial implies discriminator");
            for &(src_ent, src_logits) in &src_maps {
                let img = adversarial_imgs[rng::index(&mut adv_batches, adversarial_imgs.len())];
                let x = tape.constant(img.clone())?;
                let out = forward_generator(&mut tape, generator, gen_cfg, x, ParamMode::Train)?;
                let ent = entropy_map(&mut tape, out.probs)?;
                let d_out =
                    forward_discriminator(&mut tape, d, disc_cfg, ent, out.logits, ParamMode::Freeze)?;
                adv_terms.push(generator_adv_loss(&mut tape, d_out, cfg.adv_reduction)?);
                detached.push((
                    tape.value(src_ent).clone(),
                    tape.value(src_logits).clone(),
                    tape.value(ent).clone(),
                    tape.value(out.logits).clone(),
                ));
            }
        }

        let ce_mean = match mean_of(&mut tape, &ce_terms)? {
            Some(v) if supervised_weight != 1.0 => Some(tape.scale(v, supervised_weight)?),
            other => other,
        };
        let adv_mean = mean_of(&mut tape, &adv_terms)?;
        let loss = match (ce_mean, adv_mean) {
            (Some(ce), Some(adv)) => total_generator_objective(&mut tape, ce, adv, cfg.adv_weight)?,
            (Some(ce), None) => ce,
            (None, Some(adv)) => tape.scale(adv, cfg.adv_weight)?,
            (None, None) => {
                return Err(Error::Config(
                    "stage has neither a supervised nor an adversarial term".into(),
                ));
            }
        };
        let g_loss = f64::from(tape.value(loss).item()?);
        tape.backward(loss, &mut [generator])?;
        sgd_step(generator, cfg.generator_lr(), cfg.g_momentum, cfg.g_weight_decay)?;

        // --- discriminator step on detached entropy maps ---
        let mut d_loss = None;
        if adversarial {
            let d = discriminator.as_mut().expect("adversarial implies discriminator");
            let mut tape = Tape::new();
            let mut terms = Vec::with_capacity(batch);
            for (src_ent, src_logits, tgt_ent, tgt_logits) in &detached {
                let se = tape.constant(src_ent.clone())?;
                let sl = tape.constant(src_logits.clone())?;
                let te = tape.constant(tgt_ent.clone())?;
                let tl = tape.constant(tgt_logits.clone())?;
                let d_src = forward_discriminator(&mut tape, d, disc_cfg, se, sl, ParamMode::Train)?;
                let d_tgt = forward_discriminator(&mut tape, d, disc_cfg, te, tl, ParamMode::Train)?;
                terms.push(discriminator_loss(&mut tape, d_src, d_tgt, cfg.adv_reduction)?);
            }
            let loss = mean_of(&mut tape, &terms)?.expect("at least one pair");
            d_loss = Some(f64::from(tape.value(loss).item()?));
            tape.backward(loss, &mut [d])?;
            adam_step(d, cfg.d_lr, cfg.d_beta1, cfg.d_beta2, cfg.d_eps)?;
        }

        if iter % cfg.loss_log_every == 0 || iter + 1 == iterations {
            curve.push(CurvePoint {
                iteration: iter,
                g_loss,
                d_loss,
            });
        }
    }
    Ok(curve)
}

fn mean_of(tape: &mut Tape, terms: &[Var]) -> Result<Option<Var>> {
    let Some((&first, rest)) = terms.split_first() else {
        return Ok(None);
    };
    let mut acc = first;
    for &t in rest {
        acc = tape.add(acc, t)?;
    }
    if terms.len() > 1 {
        acc = tape.scale(acc, 1.0 / terms.len() as f32)?;
    }
    Ok(Some(acc))
}

/// Inference forward pass: frozen parameters, throwaway tape.
pub fn forward_infer(
    params: &ParameterSet,
    gen_cfg: &GeneratorConfig,
    image: &Tensor,
) -> Result<ProbMap> {
    let mut tape = Tape::new();
    let x = tape.constant(image.clone())?;
    let out = forward_generator(&mut tape, params, gen_cfg, x, ParamMode::Freeze)?;
    ProbMap::new(tape.value(out.probs).clone())
}

/// Stage 2 products: ranking records, the split, pseudo labels for the easy
/// split, and the probability maps every score came from.
#[derive(Debug)]
pub struct RankingArtifacts {
    pub records: Vec<RankRecord>,
    pub assignment: SplitAssignment,
    /// Easy-split ids in split order with their pseudo labels.
    pub pseudo_labels: Vec<(String, LabelMap)>,
    pub probmaps: Vec<(String, ProbMap)>,
}

/// Runs the trained generator over every target image, scores the entropy
/// maps, splits at `lambda`, and pseudo-labels the easy split only.
pub fn generate_ranking_artifacts(
    generator: &ParameterSet,
    gen_cfg: &GeneratorConfig,
    target: &UnlabeledSet<'_>,
    lambda: f64,
    use_normalized: bool,
    rare: &RareClassSet,
) -> Result<RankingArtifacts> {
    use rayon::prelude::*;

    if target.items.is_empty() {
        return Err(Error::Input("empty target dataset".into()));
    }
    let scored: Vec<(String, ProbMap, RankRecord)> = target
        .items
        .par_iter()
        .map(|(id, img)| -> Result<_> {
            let probs = forward_infer(generator, gen_cfg, img)?;
            let ent = crate::losses::entropy_map_of(&probs);
            let score = rank_score(&ent)?;
            let pred = probs.argmax();
            let (normalized_score, rare_class_count) = normalized_rank_score(&ent, &pred, rare)?;
            let record = RankRecord {
                image_id: id.to_string(),
                score,
                normalized_score,
                rare_class_count,
            };
            Ok((id.to_string(), probs, record))
        })
        .collect::<Result<_>>()?;

    let records: Vec<RankRecord> = scored.iter().map(|(_, _, r)| r.clone()).collect();
    let assignment = split(&records, lambda, use_normalized)?;
    let pseudo_labels = assignment
        .easy
        .iter()
        .map(|id| {
            let (_, probs, _) = scored
                .iter()
                .find(|(sid, _, _)| sid == id)
                .expect("split ids come from the records");
            (id.clone(), to_pseudo_label(probs))
        })
        .collect();
    let probmaps = scored.into_iter().map(|(id, p, _)| (id, p)).collect();
    Ok(RankingArtifacts {
        records,
        assignment,
        pseudo_labels,
        probmaps,
    })
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub confusion: ConfusionMatrix,
    pub miou: f64,
    pub accuracy: f64,
    pub subset_miou: Option<f64>,
}

/// Evaluates a generator on a labeled eval set.
pub fn evaluate_generator(
    generator: &ParameterSet,
    gen_cfg: &GeneratorConfig,
    eval: &LabeledSet<'_>,
    subset: Option<&[usize]>,
) -> Result<EvalOutcome> {
    use rayon::prelude::*;

    if eval.items.is_empty() {
        return Err(Error::Input("empty eval dataset".into()));
    }
    let class_count = gen_cfg.class_count;
    let matrices: Vec<ConfusionMatrix> = eval
        .items
        .par_iter()
        .map(|(_, img, gt)| -> Result<ConfusionMatrix> {
            let pred = forward_infer(generator, gen_cfg, img)?.argmax();
            let mut cm = ConfusionMatrix::new(class_count);
            cm.accumulate(&pred, gt)?;
            Ok(cm)
        })
        .collect::<Result<_>>()?;
    let mut confusion = ConfusionMatrix::new(class_count);
    for m in &matrices {
        confusion.merge(m)?;
    }
    let miou = confusion.iou()?.miou;
    let accuracy = confusion.accuracy()?;
    let subset_miou = match subset {
        Some(s) => Some(confusion.subset_miou(s)?),
        None => None,
    };
    Ok(EvalOutcome {
        confusion,
        miou,
        accuracy,
        subset_miou,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{
        gen_segmentation_domain, Dataset, DomainConfig, DomainRole, SplitTag,
    };
    use crate::models::NetMode;

    fn tiny_domain(role: DomainRole, split: SplitTag, seed: u64, shift: f64) -> Dataset {
        let cfg = DomainConfig {
            role,
            split,
            height: 12,
            width: 12,
            class_count: 4,
            image_count: 8,
            shapes_min: 1,
            shapes_max: 3,
            palette: None,
            domain_shift: shift,
            intra_variance: 0.1,
            rare_classes: Default::default(),
            rare_weight: 1.0,
            seed,
        };
        gen_segmentation_domain(&cfg).unwrap()
    }

    fn tiny_stage(iters: usize) -> StageConfig {
        StageConfig {
            inter_iterations: iters,
            intra_iterations: iters,
            batch_size: 1,
            seed: 3,
            ..StageConfig::default()
        }
    }

    fn net_cfgs() -> (GeneratorConfig, DiscriminatorConfig) {
        let g = GeneratorConfig {
            widths: vec![6, 8],
            ..GeneratorConfig::segmentation(4)
        };
        let d = DiscriminatorConfig {
            widths: vec![4, 4],
            ..DiscriminatorConfig::new(NetMode::Segmentation, 4)
        };
        (g, d)
    }

    #[test]
    fn inter_training_is_deterministic() {
        let source = tiny_domain(DomainRole::Source, SplitTag::Train, 1, 0.0);
        let target = tiny_domain(DomainRole::Target, SplitTag::Train, 2, 0.8);
        let (g, d) = net_cfgs();
        let cfg = tiny_stage(6);
        let a = train_inter(&source.labeled().unwrap(), &target.unlabeled(), &g, &d, &cfg).unwrap();
        let b = train_inter(&source.labeled().unwrap(), &target.unlabeled(), &g, &d, &cfg).unwrap();
        assert!(a.generator.values_equal(&b.generator));
        assert!(a
            .discriminator
            .unwrap()
            .values_equal(&b.discriminator.unwrap()));
    }

    #[test]
    fn zero_adv_weight_trains_without_discriminator() {
        let source = tiny_domain(DomainRole::Source, SplitTag::Train, 1, 0.0);
        let target = tiny_domain(DomainRole::Target, SplitTag::Train, 2, 0.8);
        let (g, d) = net_cfgs();
        let cfg = StageConfig {
            adv_weight: 0.0,
            ..tiny_stage(6)
        };
        let out = train_inter(&source.labeled().unwrap(), &target.unlabeled(), &g, &d, &cfg).unwrap();
        assert!(out.discriminator.is_none());
        assert!(out.curve.iter().all(|p| p.d_loss.is_none()));
    }

    #[test]
    fn zero_adv_weight_ignores_target_content() {
        // The degenerate configuration is source-only supervised training:
        // swapping the target set cannot change the trained generator.
        let source = tiny_domain(DomainRole::Source, SplitTag::Train, 1, 0.0);
        let target_a = tiny_domain(DomainRole::Target, SplitTag::Train, 2, 0.8);
        let target_b = tiny_domain(DomainRole::Target, SplitTag::Train, 9, 0.3);
        let (g, d) = net_cfgs();
        let cfg = StageConfig {
            adv_weight: 0.0,
            ..tiny_stage(8)
        };
        let labeled = source.labeled().unwrap();
        let a = train_inter(&labeled, &target_a.unlabeled(), &g, &d, &cfg).unwrap();
        let b = train_inter(&labeled, &target_b.unlabeled(), &g, &d, &cfg).unwrap();
        assert!(a.generator.values_equal(&b.generator));
    }

    #[test]
    fn empty_source_is_input_error() {
        let target = tiny_domain(DomainRole::Target, SplitTag::Train, 2, 0.8);
        let (g, d) = net_cfgs();
        let empty = LabeledSet { items: Vec::new() };
        assert!(matches!(
            train_inter(&empty, &target.unlabeled(), &g, &d, &tiny_stage(3)),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn supervised_loss_decreases_on_fixed_batch() {
        // Single source image, supervised only: the CE trend over the first
        // 10 steps should be strongly downward.
        let source = tiny_domain(DomainRole::Source, SplitTag::Train, 1, 0.0);
        let labeled = source.labeled().unwrap();
        let one = LabeledSet {
            items: vec![labeled.items[0]],
        };
        let (g, d) = net_cfgs();
        let cfg = StageConfig {
            adv_weight: 0.0,
            inter_iterations: 10,
            loss_log_every: 1,
            ..tiny_stage(10)
        };
        let target = tiny_domain(DomainRole::Target, SplitTag::Train, 2, 0.8);
        let out = train_inter(&one, &target.unlabeled(), &g, &d, &cfg).unwrap();
        let losses: Vec<f64> = out.curve.iter().map(|p| p.g_loss).collect();
        assert_eq!(losses.len(), 10);
        let decreases = losses.windows(2).filter(|w| w[1] < w[0]).count();
        assert!(decreases >= 8, "only {decreases} of 9 steps decreased: {losses:?}");
    }

    #[test]
    fn ranking_artifacts_respect_lambda_contract() {
        let target = tiny_domain(DomainRole::Target, SplitTag::Train, 2, 0.8);
        let (g_cfg, _) = net_cfgs();
        let g = init_generator(&g_cfg, 17).unwrap();
        let unl = target.unlabeled();
        let n = unl.items.len();

        for (lambda, expected) in [(0.0, 0usize), (0.5, 4), (1.0, n)] {
            let art = generate_ranking_artifacts(
                &g,
                &g_cfg,
                &unl,
                lambda,
                false,
                &RareClassSet::empty(),
            )
            .unwrap();
            assert_eq!(art.assignment.easy.len(), expected);
            assert_eq!(art.pseudo_labels.len(), expected);
            assert_eq!(art.assignment.easy.len() + art.assignment.hard.len(), n);
            assert_eq!(art.probmaps.len(), n);
        }

        let err = generate_ranking_artifacts(&g, &g_cfg, &unl, 1.5, false, &RareClassSet::empty());
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn intra_skips_on_empty_easy_split() {
        let (g_cfg, d_cfg) = net_cfgs();
        let warm = init_generator(&g_cfg, 4).unwrap();
        let target = tiny_domain(DomainRole::Target, SplitTag::Train, 2, 0.8);
        let unl = target.unlabeled();
        let hard: Vec<&Tensor> = unl.items.iter().map(|(_, t)| *t).collect();
        let out = train_intra(&[], &hard, Some(&warm), &g_cfg, &d_cfg, &tiny_stage(4)).unwrap();
        assert!(out.skipped);
        assert!(out.generator.values_equal(&warm));
    }

    #[test]
    fn intra_with_empty_hard_is_pure_self_training() {
        let (g_cfg, d_cfg) = net_cfgs();
        let warm = init_generator(&g_cfg, 4).unwrap();
        let target = tiny_domain(DomainRole::Target, SplitTag::Train, 2, 0.8);
        let unl = target.unlabeled();
        let art = generate_ranking_artifacts(&warm, &g_cfg, &unl, 1.0, false, &RareClassSet::empty())
            .unwrap();
        let by_id: std::collections::BTreeMap<&str, &Tensor> =
            unl.items.iter().map(|(id, t)| (*id, *t)).collect();
        let easy: Vec<(&Tensor, &LabelMap)> = art
            .pseudo_labels
            .iter()
            .map(|(id, lm)| (by_id[id.as_str()], lm))
            .collect();
        let out = train_intra(&easy, &[], Some(&warm), &g_cfg, &d_cfg, &tiny_stage(4)).unwrap();
        assert!(!out.skipped);
        assert!(out.discriminator.is_none());
        assert!(!out.generator.values_equal(&warm));
    }

    #[test]
    fn intra_cold_start_ignores_warm_params() {
        let (g_cfg, d_cfg) = net_cfgs();
        let warm = init_generator(&g_cfg, 4).unwrap();
        let target = tiny_domain(DomainRole::Target, SplitTag::Train, 2, 0.8);
        let unl = target.unlabeled();
        let art = generate_ranking_artifacts(&warm, &g_cfg, &unl, 0.5, false, &RareClassSet::empty())
            .unwrap();
        let by_id: std::collections::BTreeMap<&str, &Tensor> =
            unl.items.iter().map(|(id, t)| (*id, *t)).collect();
        let easy: Vec<(&Tensor, &LabelMap)> = art
            .pseudo_labels
            .iter()
            .map(|(id, lm)| (by_id[id.as_str()], lm))
            .collect();
        let hard: Vec<&Tensor> = art
            .assignment
            .hard
            .iter()
            .map(|id| by_id[id.as_str()])
            .collect();
        let cfg = StageConfig {
            init_intra_from_inter: false,
            ..tiny_stage(3)
        };
        let cold = train_intra(&easy, &hard, None, &g_cfg, &d_cfg, &cfg).unwrap();
        let cold_again = train_intra(&easy, &hard, Some(&warm), &g_cfg, &d_cfg, &cfg).unwrap();
        // Cold start never reads the warm parameters.
        assert!(cold.generator.values_equal(&cold_again.generator));

        // Demanding a warm start without providing one is a usage error.
        let warm_cfg = StageConfig {
            init_intra_from_inter: true,
            ..tiny_stage(3)
        };
        assert!(matches!(
            train_intra(&easy, &hard, None, &g_cfg, &d_cfg, &warm_cfg),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn evaluation_runs_and_scores_in_range() {
        let eval = tiny_domain(DomainRole::Target, SplitTag::Eval, 5, 0.8);
        let (g_cfg, _) = net_cfgs();
        let g = init_generator(&g_cfg, 8).unwrap();
        let out = evaluate_generator(&g, &g_cfg, &eval.labeled().unwrap(), None).unwrap();
        assert!((0.0..=1.0).contains(&out.miou));
        assert!((0.0..=1.0).contains(&out.accuracy));
    }
}
