//! The five subcommands.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mmfs_core::gradcheck::{CheckScope, DEFAULT_EPS};
use mmfs_data::{
    generate_synthetic, load_manifest, load_samples, split_dataset, SplitDataset, SyntheticSpec,
};
use mmfs_models::{FusionKind, SentimentModel, Vocab};
use mmfs_train::{
    compare_experiment, evaluate, load_checkpoint, save_checkpoint, train, CompareSetup,
    MetricsReport,
};

use crate::args::Args;
use crate::config::{manifest_path, resolve, RunConfig};
use crate::error::{CliError, Result};

/// Split parameters recorded next to a checkpoint so evaluation can rebuild
/// the exact train/val/test partition.
#[derive(Debug, Serialize, Deserialize)]
struct SplitRecord {
    seed: u64,
    counts: [usize; 3],
}

fn split_record_path(ckpt: &Path) -> PathBuf {
    let mut name = ckpt.file_name().unwrap_or_default().to_os_string();
    name.push(".split.json");
    ckpt.with_file_name(name)
}

fn vocab_path(ckpt: &Path) -> PathBuf {
    let mut name = ckpt.file_name().unwrap_or_default().to_os_string();
    name.push(".vocab");
    ckpt.with_file_name(name)
}

fn load_split(config: &RunConfig) -> Result<(SplitDataset, Vocab)> {
    let manifest = load_manifest(&manifest_path(config)?)?;
    let samples = load_samples(&manifest, config.image_size, config.image_size)?;
    let counts = config.split_counts(samples.len());
    let split = split_dataset(samples, counts, config.seed)?;
    let texts: Vec<&str> = split.train.iter().map(|s| s.text.as_str()).collect();
    let vocab = Vocab::build(&texts, 1, config.vocab_max_size)?;
    Ok((split, vocab))
}

pub fn cmd_synth(args: &Args) -> Result<()> {
    let n = args.get_parsed::<usize>("n")?.unwrap_or(3000);
    let image_size = args.get_parsed::<usize>("image-size")?.unwrap_or(16);
    let noise = args.get_parsed::<f64>("noise")?.unwrap_or(0.1);
    let seed = args.get_parsed::<u64>("seed")?.unwrap_or(7);
    let out = PathBuf::from(
        args.get("out")
            .ok_or_else(|| CliError::Usage("synth needs --out DIR".into()))?,
    );
    args.finish()?;

    let mut spec = SyntheticSpec::new(n, image_size, seed);
    spec.noise_std = noise;
    let manifest = generate_synthetic(&spec, &out)?;

    let loaded = load_manifest(&manifest)?;
    let mut label_counts = std::collections::BTreeMap::new();
    for r in &loaded.records {
        *label_counts.entry(r.label.to_string()).or_insert(0usize) += 1;
    }
    let summary = serde_json::json!({
        "out": out,
        "manifest": manifest,
        "samples": loaded.len(),
        "label_counts": label_counts,
        "seed": seed,
    });
    println!("{}", serde_json::to_string_pretty(&summary).unwrap());
    Ok(())
}

pub fn cmd_train(args: &Args) -> Result<()> {
    let kind: FusionKind = args
        .get("model")
        .ok_or_else(|| CliError::Usage(format!(
            "train needs --model KIND (one of: {})",
            FusionKind::valid_names()
        )))?
        .parse()
        .map_err(CliError::Config)?;
    let config = resolve(args)?;
    args.finish()?;
    std::fs::create_dir_all(&config.out)?;

    let (split, vocab) = load_split(&config)?;
    let model = SentimentModel::new(
        kind,
        &config.text_config(vocab.size()),
        &config.image_config(),
        &config.fusion_config(),
        config.seed,
    );
    let train_config = config.train_config();
    let history = train(&model, &split, &vocab, config.max_seq_len, &train_config)?;

    let ckpt = config.out.join(format!("{}.ckpt", kind.table_name().to_lowercase()));
    save_checkpoint(&model, &ckpt)?;
    vocab.save(&vocab_path(&ckpt))?;
    let counts = config.split_counts(split.train.len() + split.val.len() + split.test.len());
    let record = SplitRecord {
        seed: config.seed,
        counts: [counts.0, counts.1, counts.2],
    };
    std::fs::write(
        split_record_path(&ckpt),
        serde_json::to_string_pretty(&record).unwrap(),
    )?;
    std::fs::write(
        config.out.join("history.json"),
        serde_json::to_string_pretty(&history).unwrap(),
    )?;

    let val = evaluate(
        &model,
        &split.val,
        &vocab,
        config.max_seq_len,
        train_config.batch_size,
        train_config.threads,
    )?;
    let summary = serde_json::json!({
        "model": kind.table_name(),
        "checkpoint": ckpt,
        "epochs": history.epoch_loss.len(),
        "best_epoch": history.best_epoch,
        "val": metrics_json(&val),
    });
    println!("{}", serde_json::to_string_pretty(&summary).unwrap());
    Ok(())
}

fn metrics_json(m: &MetricsReport) -> serde_json::Value {
    serde_json::json!({
        "acc": m.accuracy,
        "pre": m.macro_precision,
        "recall": m.macro_recall,
        "f1": m.macro_f1,
        "averaging": m.averaging,
        "samples": m.samples,
        "confusion": m.confusion.counts,
    })
}

pub fn cmd_eval(args: &Args) -> Result<()> {
    let ckpt = PathBuf::from(
        args.get("checkpoint")
            .ok_or_else(|| CliError::Usage("eval needs --checkpoint PATH".into()))?,
    );
    let which = args.get("split").unwrap_or("test").to_string();
    let config = resolve(args)?;
    args.finish()?;

    let model = load_checkpoint(&ckpt)?;
    let vocab = Vocab::load(&vocab_path(&ckpt))?;
    let (image_h, image_w, max_seq) = model_dims(&model);

    let manifest = load_manifest(&manifest_path(&config)?)?;
    let samples = load_samples(&manifest, image_h, image_w)?;
    let chosen = match which.as_str() {
        "all" => samples,
        name @ ("train" | "val" | "test") => {
            let record: SplitRecord = serde_json::from_str(
                &std::fs::read_to_string(split_record_path(&ckpt)).map_err(|e| {
                    CliError::Run(format!(
                        "cannot read split record next to the checkpoint ({e}); use --split all"
                    ))
                })?,
            )
            .map_err(|e| CliError::Run(format!("bad split record: {e}")))?;
            let split = split_dataset(
                samples,
                (record.counts[0], record.counts[1], record.counts[2]),
                record.seed,
            )?;
            match name {
                "train" => split.train,
                "val" => split.val,
                _ => split.test,
            }
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown split {other:?}; expected train, val, test, or all"
            )))
        }
    };
    let report = evaluate(&model, &chosen, &vocab, max_seq, config.batch_size, config.threads)?;
    println!("{}", serde_json::to_string_pretty(&metrics_json(&report)).unwrap());
    Ok(())
}

fn model_dims(model: &SentimentModel) -> (usize, usize, usize) {
    let (h, w) = model
        .image
        .as_ref()
        .map(|i| (i.config.in_height, i.config.in_width))
        .unwrap_or((16, 16));
    let max_seq = model.text.as_ref().map(|t| t.config.max_seq_len).unwrap_or(16);
    (h, w, max_seq)
}

pub fn cmd_compare(args: &Args) -> Result<()> {
    let config = resolve(args)?;
    args.finish()?;
    std::fs::create_dir_all(&config.out)?;

    let (split, vocab) = load_split(&config)?;
    let setup = CompareSetup {
        text: config.text_config(vocab.size()),
        image: config.image_config(),
        fusion: config.fusion_config(),
        train: config.train_config(),
    };
    let report = compare_experiment(&split, &vocab, &setup)?;

    let csv = mmfs_train::csv_string(&report);
    std::fs::write(config.out.join("report.csv"), &csv)?;
    std::fs::write(
        config.out.join("report.json"),
        serde_json::to_string_pretty(&report).unwrap(),
    )?;
    print!("{csv}");
    Ok(())
}

pub fn cmd_gradcheck(args: &Args) -> Result<()> {
    let scope = args.get("scope").unwrap_or("all").to_string();
    args.finish()?;
    let cases = match scope.as_str() {
        "ops" => mmfs_models::check::registry_for(CheckScope::Ops),
        "encoders" => mmfs_models::check::registry_for(CheckScope::Encoders),
        "fusion" => mmfs_models::check::registry_for(CheckScope::Fusion),
        "all" => mmfs_models::check::registry(),
        other => {
            return Err(CliError::Usage(format!(
                "unknown scope {other:?}; expected ops, encoders, fusion, or all"
            )))
        }
    };
    let mut failures = Vec::new();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (name, res, tol, pass) in mmfs_core::gradcheck::run_cases(&cases) {
        match res {
            Ok(err) => {
                writeln!(
                    out,
                    "{name}\t{err:.3e}\t< {tol:.0e}\t{}",
                    if pass { "PASS" } else { "FAIL" }
                )?;
                if !pass {
                    failures.push(name);
                }
            }
            Err(e) => {
                writeln!(out, "{name}\terror: {e}\t< {tol:.0e}\tFAIL")?;
                failures.push(name);
            }
        }
    }
    writeln!(out, "# eps {DEFAULT_EPS:.0e}, {} cases, {} failed", cases.len(), failures.len())?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::VerificationFailed(format!(
            "{} gradient check(s) failed: {}",
            failures.len(),
            failures.join(", ")
        )))
    }
}
