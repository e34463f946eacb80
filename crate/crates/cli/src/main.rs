//! Command-line driver tying the pipeline stages together. Every subcommand
//! is a thin wrapper over the library; `rank`, `split`, `pseudo-label` and
//! `eval` also run model-agnostically on a directory of externally produced
//! probability-map tensor files (`--probmaps`).
//!
//! Exit codes: 0 success, 2 usage error, 3 invalid config, 1 anything else.
//! Failures print a single `error: <kind>: <message>` line on stderr.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use entrank::dataio::{
    load_checkpoint, read_dataset, read_tensor_dir, save_checkpoint, write_dataset,
    write_label_map, write_tensor,
};
use entrank::error::{Error, Result};
use entrank::eval::{iou_csv, ConfusionMatrix, IouSummary};
use entrank::experiment::{
    ablation_csv, domain_configs, make_datasets, run_experiment, run_lambda_ablation,
    write_experiment_dir, ExperimentConfig, TrackMode,
};
use entrank::maps::{LabelMap, ProbMap};
use entrank::pipeline::{
    evaluate_generator, generate_ranking_artifacts, train_inter, train_intra, CurvePoint,
    StageConfig,
};
use entrank::pseudolabel::to_pseudo_label;
use entrank::ranking::{parse_ranking_csv, rank_probmaps, ranking_csv, split as split_records};
use entrank::Tensor;

#[derive(Parser)]
#[command(
    name = "entrank",
    version,
    about = "Two-step self-supervised domain adaptation: inter-domain adversarial alignment, \
             entropy ranking, and intra-domain self-training"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the default JSON config for a track to stdout.
    DefaultConfig {
        /// segmentation | classification
        #[arg(long, default_value = "segmentation")]
        mode: String,
    },
    /// Generate the source / target-train / target-eval datasets.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Stage 1: supervised source training + inter-domain alignment.
    TrainInter {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset root produced by gen-data.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Stage 2a: entropy ranking (from a checkpoint+data, or --probmaps).
    Rank {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset root produced by gen-data (model mode).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory of externally produced ProbMap tensor files.
        #[arg(long)]
        probmaps: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        normalize_rank: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 2b: re-split an existing ranking at a new lambda.
    Split {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Existing ranking.csv to re-split.
        #[arg(long)]
        ranking: Option<PathBuf>,
        #[arg(long)]
        probmaps: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        normalize_rank: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 2c: pseudo-label the easy split.
    PseudoLabel {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        probmaps: Option<PathBuf>,
        /// Ranking manifest fixing the split; recomputed when absent.
        #[arg(long)]
        ranking: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        normalize_rank: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 3: intra-domain adaptation from a ranking + pseudo labels.
    TrainIntra {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Stage-1 generator checkpoint (warm start).
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        ranking: PathBuf,
        /// Directory of pseudo-label tensor files.
        #[arg(long)]
        pseudo: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint (or --probmaps) against a labeled dataset.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        probmaps: Option<PathBuf>,
        /// Labeled dataset directory (e.g. <root>/target_eval).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the five-variant comparison over several seeds.
    RunExperiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Seed count N (seeds 0..N-1) or an explicit comma list "1,2,3".
        #[arg(long, default_value = "5")]
        seeds: String,
    },
    /// Lambda ablation: full pipeline per lambda per seed.
    AblateLambda {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "0,0.5,0.67,1.0")]
        lambdas: String,
        #[arg(long, default_value = "5")]
        seeds: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 3u8,
                Error::Usage(_) => 2u8,
                _ => 1u8,
            })
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    let cfg = match path {
        None => ExperimentConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("invalid config {}: {e}", p.display())))?
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn read_probmap_dir(dir: &Path) -> Result<Vec<(String, ProbMap)>> {
    read_tensor_dir(dir)?
        .into_iter()
        .map(|(id, t)| {
            let p = ProbMap::new(t)
                .map_err(|e| Error::Input(format!("probmap {id:?} invalid: {e}")))?;
            Ok((id, p))
        })
        .collect()
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let parse = |s: &str| -> Result<u64> {
        s.trim()
            .parse::<u64>()
            .map_err(|_| Error::Config(format!("bad seed value {s:?}")))
    };
    let seeds = if spec.contains(',') {
        spec.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(parse)
            .collect::<Result<Vec<_>>>()?
    } else {
        let n = parse(spec)?;
        (0..n).collect()
    };
    if seeds.is_empty() {
        return Err(Error::Config(format!("no seeds in {spec:?}")));
    }
    Ok(seeds)
}

fn parse_lambdas(spec: &str) -> Result<Vec<f64>> {
    let lambdas = spec
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad lambda value {s:?}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if lambdas.is_empty() {
        return Err(Error::Config(format!("no lambdas in {spec:?}")));
    }
    Ok(lambdas)
}

fn stage_with_seed(cfg: &ExperimentConfig, seed: Option<u64>) -> StageConfig {
    StageConfig {
        seed: seed.unwrap_or(cfg.stage.seed),
        ..cfg.stage.clone()
    }
}

fn write_curves(path: &Path, curves: &BTreeMap<String, Vec<CurvePoint>>) -> Result<()> {
    write_json(path, curves)
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::DefaultConfig { mode } => {
            let mode = match mode.as_str() {
                "segmentation" => TrackMode::Segmentation,
                "classification" => TrackMode::Classification,
                other => {
                    return Err(Error::Config(format!(
                        "mode must be segmentation or classification, got {other:?}"
                    )));
                }
            };
            println!(
                "{}",
                serde_json::to_string_pretty(&ExperimentConfig::default_for(mode))?
            );
            Ok(())
        }

        Cmd::GenData { config, out, seed } => {
            let cfg = load_config(&config)?;
            let seed = seed.unwrap_or(cfg.stage.seed);
            let data = make_datasets(&cfg, seed)?;
            let [src_cfg, tt_cfg, te_cfg] = domain_configs(&cfg, seed);
            fs::create_dir_all(&out)?;
            write_dataset(&out.join("source"), &data.source, &src_cfg)?;
            write_dataset(&out.join("target_train"), &data.target_train, &tt_cfg)?;
            write_dataset(&out.join("target_eval"), &data.target_eval, &te_cfg)?;
            write_json(&out.join("config.json"), &cfg)?;
            println!(
                "wrote {} source / {} target-train / {} target-eval images under {}",
                data.source.len(),
                data.target_train.len(),
                data.target_eval.len(),
                out.display()
            );
            Ok(())
        }

        Cmd::TrainInter {
            config,
            data,
            out,
            seed,
        } => {
            let cfg = load_config(&config)?;
            let stage = stage_with_seed(&cfg, seed);
            let (source, _) = read_dataset(&data.join("source"))?;
            let (target, _) = read_dataset(&data.join("target_train"))?;
            let trained = train_inter(
                &source.labeled()?,
                &target.unlabeled(),
                &cfg.generator,
                &cfg.discriminator,
                &stage,
            )?;
            fs::create_dir_all(&out)?;
            write_json(&out.join("config.json"), &cfg)?;
            let gen_cfg = serde_json::to_value(&cfg.generator)?;
            save_checkpoint(
                &out.join("checkpoints").join("g_inter"),
                &trained.generator,
                &gen_cfg,
                stage.seed,
            )?;
            if let Some(d) = &trained.discriminator {
                save_checkpoint(
                    &out.join("checkpoints").join("d_inter"),
                    d,
                    &serde_json::to_value(&cfg.discriminator)?,
                    stage.seed,
                )?;
            }
            write_curves(
                &out.join("curves.json"),
                &BTreeMap::from([("inter".to_string(), trained.curve)]),
            )?;
            println!("trained inter stage for {} iterations -> {}", stage.inter_iterations, out.display());
            Ok(())
        }

        Cmd::Rank {
            config,
            checkpoint,
            data,
            probmaps,
            lambda,
            normalize_rank,
            out,
        } => {
            let cfg = load_config(&config)?;
            let rare = cfg.rare_class_set()?;
            let lambda = lambda.unwrap_or(cfg.stage.lambda);
            let use_norm = normalize_rank || cfg.stage.use_normalized_ranking;
            fs::create_dir_all(&out)?;
            if let Some(pm) = probmaps {
                let maps = read_probmap_dir(&pm)?;
                let records = rank_probmaps(&maps, &rare)?;
                let assignment = split_records(&records, lambda, use_norm)?;
                fs::write(out.join("ranking.csv"), ranking_csv(&records, &assignment, use_norm))?;
                println!(
                    "ranked {} probmaps: {} easy / {} hard -> {}",
                    records.len(),
                    assignment.easy.len(),
                    assignment.hard.len(),
                    out.display()
                );
            } else {
                let (Some(ckpt), Some(data)) = (checkpoint, data) else {
                    return Err(Error::Usage(
                        "rank needs either --probmaps or both --checkpoint and --data".into(),
                    ));
                };
                let ck = load_checkpoint(&ckpt)?;
                let (target, _) = read_dataset(&data.join("target_train"))?;
                let art = generate_ranking_artifacts(
                    &ck.params,
                    &cfg.generator,
                    &target.unlabeled(),
                    lambda,
                    use_norm,
                    &rare,
                )?;
                fs::write(
                    out.join("ranking.csv"),
                    ranking_csv(&art.records, &art.assignment, use_norm),
                )?;
                fs::create_dir_all(out.join("probmaps"))?;
                for (id, p) in &art.probmaps {
                    write_tensor(&out.join("probmaps").join(format!("{id}.tnsr")), p.tensor())?;
                }
                println!(
                    "ranked {} target images: {} easy / {} hard -> {}",
                    art.records.len(),
                    art.assignment.easy.len(),
                    art.assignment.hard.len(),
                    out.display()
                );
            }
            Ok(())
        }

        Cmd::Split {
            config,
            ranking,
            probmaps,
            lambda,
            normalize_rank,
            out,
        } => {
            let cfg = load_config(&config)?;
            let lambda = lambda.unwrap_or(cfg.stage.lambda);
            let use_norm = normalize_rank || cfg.stage.use_normalized_ranking;
            let records = match (&ranking, &probmaps) {
                (Some(csv), _) => parse_ranking_csv(&fs::read_to_string(csv)?)?.0,
                (None, Some(pm)) => rank_probmaps(&read_probmap_dir(pm)?, &cfg.rare_class_set()?)?,
                (None, None) => {
                    return Err(Error::Usage(
                        "split needs either --ranking or --probmaps".into(),
                    ));
                }
            };
            let assignment = split_records(&records, lambda, use_norm)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("ranking.csv"), ranking_csv(&records, &assignment, use_norm))?;
            println!(
                "split {} records at lambda {lambda}: {} easy / {} hard -> {}",
                records.len(),
                assignment.easy.len(),
                assignment.hard.len(),
                out.display()
            );
            Ok(())
        }

        Cmd::PseudoLabel {
            config,
            checkpoint,
            data,
            probmaps,
            ranking,
            lambda,
            normalize_rank,
            out,
        } => {
            let cfg = load_config(&config)?;
            let rare = cfg.rare_class_set()?;
            let lambda = lambda.unwrap_or(cfg.stage.lambda);
            let use_norm = normalize_rank || cfg.stage.use_normalized_ranking;
            fs::create_dir_all(out.join("pseudo"))?;

            let pseudo: Vec<(String, LabelMap)> = if let Some(pm) = probmaps {
                let maps = read_probmap_dir(&pm)?;
                let easy_ids: Vec<String> = match &ranking {
                    Some(csv) => parse_ranking_csv(&fs::read_to_string(csv)?)?.1,
                    None => {
                        let records = rank_probmaps(&maps, &rare)?;
                        split_records(&records, lambda, use_norm)?.easy
                    }
                };
                let by_id: BTreeMap<&str, &ProbMap> =
                    maps.iter().map(|(id, p)| (id.as_str(), p)).collect();
                easy_ids
                    .iter()
                    .map(|id| {
                        let p = by_id.get(id.as_str()).ok_or_else(|| {
                            Error::Input(format!("ranking names {id:?} but no probmap exists"))
                        })?;
                        Ok((id.clone(), to_pseudo_label(p)))
                    })
                    .collect::<Result<_>>()?
            } else {
                let (Some(ckpt), Some(data)) = (checkpoint, data) else {
                    return Err(Error::Usage(
                        "pseudo-label needs either --probmaps or both --checkpoint and --data"
                            .into(),
                    ));
                };
                let ck = load_checkpoint(&ckpt)?;
                let (target, _) = read_dataset(&data.join("target_train"))?;
                generate_ranking_artifacts(
                    &ck.params,
                    &cfg.generator,
                    &target.unlabeled(),
                    lambda,
                    use_norm,
                    &rare,
                )?
                .pseudo_labels
            };
            for (id, lm) in &pseudo {
                write_label_map(&out.join("pseudo").join(format!("{id}.tnsr")), lm)?;
            }
            println!("wrote {} pseudo labels -> {}", pseudo.len(), out.display());
            Ok(())
        }

        Cmd::TrainIntra {
            config,
            data,
            checkpoint,
            ranking,
            pseudo,
            out,
            seed,
        } => {
            let cfg = load_config(&config)?;
            let stage = stage_with_seed(&cfg, seed);
            let ck = load_checkpoint(&checkpoint)?;
            let (target, _) = read_dataset(&data.join("target_train"))?;
            let unlabeled = target.unlabeled();
            let by_id: BTreeMap<&str, &Tensor> =
                unlabeled.items.iter().map(|(id, t)| (*id, *t)).collect();
            let (_, easy_ids, hard_ids) = parse_ranking_csv(&fs::read_to_string(&ranking)?)?;
            let lookup = |id: &str| -> Result<&Tensor> {
                by_id
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::Input(format!("ranking names {id:?} not in dataset")))
            };
            let pseudo_maps: Vec<(String, LabelMap)> = easy_ids
                .iter()
                .map(|id| {
                    let lm = entrank::dataio::read_label_map(
                        &pseudo.join(format!("{id}.tnsr")),
                        cfg.data.class_count,
                    )?;
                    Ok((id.clone(), lm))
                })
                .collect::<Result<_>>()?;
            let easy: Vec<(&Tensor, &LabelMap)> = pseudo_maps
                .iter()
                .map(|(id, lm)| Ok((lookup(id)?, lm)))
                .collect::<Result<_>>()?;
            let hard: Vec<&Tensor> = hard_ids
                .iter()
                .map(|id| lookup(id))
                .collect::<Result<_>>()?;
            let trained = train_intra(
                &easy,
                &hard,
                Some(&ck.params),
                &cfg.generator,
                &cfg.discriminator,
                &stage,
            )?;
            if trained.skipped {
                eprintln!("warning: empty easy split, intra stage skipped (inter model kept)");
            }
            fs::create_dir_all(&out)?;
            write_json(&out.join("config.json"), &cfg)?;
            save_checkpoint(
                &out.join("checkpoints").join("g_intra"),
                &trained.generator,
                &serde_json::to_value(&cfg.generator)?,
                stage.seed,
            )?;
            if let Some(d) = &trained.discriminator {
                save_checkpoint(
                    &out.join("checkpoints").join("d_intra"),
                    d,
                    &serde_json::to_value(&cfg.discriminator)?,
                    stage.seed,
                )?;
            }
            write_curves(
                &out.join("curves.json"),
                &BTreeMap::from([("intra".to_string(), trained.curve)]),
            )?;
            println!(
                "trained intra stage on {} easy / {} hard -> {}",
                easy.len(),
                hard.len(),
                out.display()
            );
            Ok(())
        }

        Cmd::Eval {
            config,
            checkpoint,
            probmaps,
            data,
            out,
        } => {
            let cfg = load_config(&config)?;
            let (dataset, _) = read_dataset(&data)?;
            let labeled = dataset.labeled()?;
            let subset = cfg.eval_subset.as_deref();
            let (confusion, miou, accuracy, subset_miou) = if let Some(pm) = probmaps {
                let maps = read_probmap_dir(&pm)?;
                let by_id: BTreeMap<&str, &ProbMap> =
                    maps.iter().map(|(id, p)| (id.as_str(), p)).collect();
                let mut cm = ConfusionMatrix::new(cfg.data.class_count);
                for (id, _, gt) in &labeled.items {
                    let p = by_id.get(id).ok_or_else(|| {
                        Error::Input(format!("no probmap for eval image {id:?}"))
                    })?;
                    cm.accumulate(&p.argmax(), gt)?;
                }
                let miou = cm.iou()?.miou;
                let acc = cm.accuracy()?;
                let sub = subset.map(|s| cm.subset_miou(s)).transpose()?;
                (cm, miou, acc, sub)
            } else {
                let Some(ckpt) = checkpoint else {
                    return Err(Error::Usage(
                        "eval needs either --probmaps or --checkpoint".into(),
                    ));
                };
                let ck = load_checkpoint(&ckpt)?;
                let outcome = evaluate_generator(&ck.params, &cfg.generator, &labeled, subset)?;
                (outcome.confusion, outcome.miou, outcome.accuracy, outcome.subset_miou)
            };
            fs::create_dir_all(&out)?;
            fs::write(out.join("iou.csv"), iou_csv(&confusion.iou()?))?;
            let mut summary = serde_json::to_value(&IouSummary::from_matrix(
                &confusion,
                subset_miou.and(subset),
            )?)?;
            summary["accuracy"] = serde_json::json!(accuracy);
            write_json(&out.join("summary.json"), &summary)?;
            println!("miou {miou:.4}, accuracy {accuracy:.4} -> {}", out.display());
            Ok(())
        }

        Cmd::RunExperiment { config, out, seeds } => {
            let cfg = load_config(&config)?;
            let seeds = parse_seeds(&seeds)?;
            let run = run_experiment(&cfg, &seeds)?;
            write_experiment_dir(&out, &cfg, &run)?;
            let m = &run.result.mean;
            println!(
                "{} over {} seeds: source_only {:.4}, inter_only {:.4}, self_training_only {:.4}, \
                 adv_only {:.4}, full {:.4} -> {}",
                run.result.metric,
                seeds.len(),
                m.source_only,
                m.inter_only,
                m.self_training_only,
                m.adv_only,
                m.full,
                out.display()
            );
            Ok(())
        }

        Cmd::AblateLambda {
            config,
            out,
            lambdas,
            seeds,
        } => {
            let cfg = load_config(&config)?;
            let lambdas = parse_lambdas(&lambdas)?;
            let seeds = parse_seeds(&seeds)?;
            let table = run_lambda_ablation(&cfg, &lambdas, &seeds)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("ablation.csv"), ablation_csv(&table))?;
            write_json(&out.join("ablation.json"), &table)?;
            for row in &table.rows {
                println!("lambda {:.2}: {} {:.4} +/- {:.4}", row.lambda, table.metric, row.mean, row.std);
            }
            println!("-> {}", out.display());
            Ok(())
        }
    }
}
