//! End-to-end smoke test: every CLI path on a shrunken config, plus the
//! model-agnostic probmap mode and the documented exit codes. The full
//! workflow must stay well under five minutes on a laptop CPU.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use entrank::dataio::write_tensor;
use entrank::experiment::ExperimentConfig;
use entrank::Tensor;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_entrank"))
}

fn run_ok(args: &[&str]) -> String {
    let out = bin().args(args).output().expect("spawn entrank");
    assert!(
        out.status.success(),
        "entrank {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let mut cfg = ExperimentConfig::default();
    cfg.data.height = 12;
    cfg.data.width = 12;
    cfg.data.source_count = 8;
    cfg.data.target_train_count = 8;
    cfg.data.target_eval_count = 6;
    cfg.generator.widths = vec![6, 8];
    cfg.discriminator.widths = vec![4, 4];
    cfg.stage.inter_iterations = 6;
    cfg.stage.intra_iterations = 4;
    cfg.stage.loss_log_every = 2;
    let path = dir.join("tiny.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn full_cli_workflow() {
    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = tiny_config(root);
    let cfg_s = cfg.to_str().unwrap();
    let p = |path: PathBuf| path.to_str().unwrap().to_owned();

    // default-config emits parseable JSON for both tracks.
    for mode in ["segmentation", "classification"] {
        let text = run_ok(&["default-config", "--mode", mode]);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["mode"], mode);
    }

    // gen-data
    let data = p(root.join("data"));
    run_ok(&["gen-data", "--config", cfg_s, "--out", &data, "--seed", "3"]);
    for sub in ["source", "target_train", "target_eval"] {
        assert!(root.join("data").join(sub).join("manifest.json").is_file());
    }
    assert!(
        !root.join("data/target_train/labels").exists(),
        "target train labels must not be persisted"
    );

    // train-inter
    let inter = p(root.join("inter"));
    run_ok(&["train-inter", "--config", cfg_s, "--data", &data, "--out", &inter, "--seed", "3"]);
    let g_inter = p(root.join("inter/checkpoints/g_inter"));
    assert!(root.join("inter/checkpoints/d_inter/manifest.json").is_file());

    // rank (model mode) writes ranking.csv + probmaps/
    let rank_dir = p(root.join("rank"));
    run_ok(&[
        "rank", "--config", cfg_s, "--checkpoint", &g_inter, "--data", &data, "--out", &rank_dir,
    ]);
    let ranking_csv = fs::read_to_string(root.join("rank/ranking.csv")).unwrap();
    assert!(ranking_csv.starts_with("image_id,score,normalized_score,rare_class_count,split"));

    // rank (probmap mode) on the maps the model produced: identical output.
    let rank2_dir = p(root.join("rank2"));
    let probmaps = p(root.join("rank/probmaps"));
    run_ok(&["rank", "--config", cfg_s, "--probmaps", &probmaps, "--out", &rank2_dir]);
    let ranking2_csv = fs::read_to_string(root.join("rank2/ranking.csv")).unwrap();
    assert_eq!(ranking_csv, ranking2_csv, "external-probmap ranking differs");

    // split at a different lambda from the existing manifest.
    let split_dir = p(root.join("split"));
    run_ok(&[
        "split",
        "--config",
        cfg_s,
        "--ranking",
        &format!("{rank_dir}/ranking.csv"),
        "--lambda",
        "0.5",
        "--out",
        &split_dir,
    ]);
    let resplit = fs::read_to_string(root.join("split/ranking.csv")).unwrap();
    assert_eq!(resplit.matches(",easy").count(), 4); // round(0.5 * 8)

    // pseudo-label from probmaps + ranking: one file per easy image.
    let pseudo_dir = p(root.join("pseudo"));
    run_ok(&[
        "pseudo-label",
        "--config",
        cfg_s,
        "--probmaps",
        &probmaps,
        "--ranking",
        &format!("{rank_dir}/ranking.csv"),
        "--out",
        &pseudo_dir,
    ]);
    let easy_count = ranking_csv.matches(",easy").count();
    let pseudo_files = fs::read_dir(root.join("pseudo/pseudo")).unwrap().count();
    assert_eq!(pseudo_files, easy_count);

    // train-intra from the artifacts.
    let intra = p(root.join("intra"));
    run_ok(&[
        "train-intra",
        "--config",
        cfg_s,
        "--data",
        &data,
        "--checkpoint",
        &g_inter,
        "--ranking",
        &format!("{rank_dir}/ranking.csv"),
        "--pseudo",
        &format!("{pseudo_dir}/pseudo"),
        "--out",
        &intra,
        "--seed",
        "3",
    ]);
    let g_intra = p(root.join("intra/checkpoints/g_intra"));

    // eval on the intra checkpoint.
    let eval_dir = p(root.join("eval"));
    run_ok(&[
        "eval",
        "--config",
        cfg_s,
        "--checkpoint",
        &g_intra,
        "--data",
        &format!("{data}/target_eval"),
        "--out",
        &eval_dir,
    ]);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("eval/summary.json")).unwrap()).unwrap();
    assert!(summary["miou"].as_f64().unwrap() >= 0.0);
    assert!(summary["accuracy"].as_f64().unwrap() >= 0.0);
    assert!(fs::read_to_string(root.join("eval/iou.csv")).unwrap().starts_with("class,iou"));

    // eval on external probmaps covering the eval ids.
    let eval_maps = root.join("eval_maps");
    fs::create_dir_all(&eval_maps).unwrap();
    for i in 0..6 {
        write_tensor(
            &eval_maps.join(format!("img{i:05}.tnsr")),
            &Tensor::full(vec![5, 12, 12], 0.2),
        )
        .unwrap();
    }
    let eval2_dir = p(root.join("eval2"));
    run_ok(&[
        "eval",
        "--config",
        cfg_s,
        "--probmaps",
        eval_maps.to_str().unwrap(),
        "--data",
        &format!("{data}/target_eval"),
        "--out",
        &eval2_dir,
    ]);

    // run-experiment twice: byte-identical results.json.
    let exp1 = p(root.join("exp1"));
    let exp2 = p(root.join("exp2"));
    run_ok(&["run-experiment", "--config", cfg_s, "--out", &exp1, "--seeds", "1,2"]);
    run_ok(&["run-experiment", "--config", cfg_s, "--out", &exp2, "--seeds", "1,2"]);
    assert_eq!(
        fs::read(root.join("exp1/results.json")).unwrap(),
        fs::read(root.join("exp2/results.json")).unwrap()
    );
    for name in ["config.json", "results.json", "ranking.csv"] {
        assert!(root.join("exp1").join(name).is_file());
    }
    assert!(root.join("exp1/seeds/2/ranking.csv").is_file());

    // ablate-lambda: one CSV row per lambda.
    let abl = p(root.join("abl"));
    run_ok(&[
        "ablate-lambda", "--config", cfg_s, "--lambdas", "0,0.5,0.67,1", "--seeds", "1", "--out",
        &abl,
    ]);
    let ablation = fs::read_to_string(root.join("abl/ablation.csv")).unwrap();
    assert_eq!(ablation.lines().count(), 5, "header + 4 rows:\n{ablation}");

    assert!(
        started.elapsed().as_secs() < 300,
        "smoke workflow took {:?}",
        started.elapsed()
    );
}

#[test]
fn uniform_probmaps_rank_at_max_entropy() {
    // C = 19 uniform maps must all score ln 19.
    let tmp = tempfile::tempdir().unwrap();
    let maps = tmp.path().join("maps");
    fs::create_dir_all(&maps).unwrap();
    for i in 0..4 {
        write_tensor(
            &maps.join(format!("u{i}.tnsr")),
            &Tensor::full(vec![19, 6, 6], 1.0 / 19.0),
        )
        .unwrap();
    }
    let out = tmp.path().join("ranked");
    run_ok(&[
        "rank",
        "--probmaps",
        maps.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(out.join("ranking.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let score: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((score - 2.944439).abs() < 1e-4, "{line}");
    }
}

#[test]
fn exit_codes_are_documented() {
    // Unknown flag -> usage error (2, from clap).
    let out = bin().args(["rank", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Invalid config -> config error (3) with a one-line parsable message.
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let out = bin()
        .args([
            "gen-data",
            "--config",
            bad.to_str().unwrap(),
            "--out",
            tmp.path().join("x").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.lines().count(), 1, "stderr not single-line: {stderr}");
    assert!(stderr.starts_with("error: config error:"), "{stderr}");

    // Missing input combination -> usage error (2).
    let out = bin()
        .args(["rank", "--out", tmp.path().join("y").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
