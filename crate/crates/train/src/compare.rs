//! The seven-model comparison: train every kind from a fresh seeded
//! initialization, evaluate on validation and test, and emit the report in
//! the fixed row order Bert, ResNet, CMAC, HSTEC, OTE, NativeCat,
//! NativeCombine.

use std::io::Write;
use std::time::Instant;

use mmfs_data::SplitDataset;
use mmfs_models::{
    FusionConfig, FusionKind, ImageEncoderConfig, SentimentModel, TextEncoderConfig, Vocab,
};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Result, TrainError};
use crate::metrics::MetricsReport;
use crate::trainer::{evaluate, train, TrainHistory};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRun {
    pub model: String,
    pub kind: FusionKind,
    pub val: MetricsReport,
    pub test: MetricsReport,
    pub history: TrainHistory,
    /// Wall-clock seconds; informational only, excluded from the CSV so
    /// reruns stay byte-identical.
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub runs: Vec<ModelRun>,
}

impl ExperimentReport {
    pub fn run_for(&self, kind: FusionKind) -> &ModelRun {
        self.runs
            .iter()
            .find(|r| r.kind == kind)
            .expect("report holds all seven kinds")
    }
}

/// Model architecture shared by all seven runs.
pub struct CompareSetup {
    pub text: TextEncoderConfig,
    pub image: ImageEncoderConfig,
    pub fusion: FusionConfig,
    pub train: TrainConfig,
}

/// Trains all seven kinds, seeding run k with `config.seed + k` so every
/// model starts from a fresh deterministic initialization.
pub fn compare_experiment(
    data: &SplitDataset,
    vocab: &Vocab,
    setup: &CompareSetup,
) -> Result<ExperimentReport> {
    if data.test.is_empty() {
        return Err(TrainError::EmptySplit("test"));
    }
    let mut runs = Vec::with_capacity(FusionKind::ALL.len());
    for (offset, kind) in FusionKind::ALL.iter().enumerate() {
        let started = Instant::now();
        let mut train_config = setup.train.clone();
        train_config.seed = setup.train.seed + offset as u64;
        let model = SentimentModel::new(
            *kind,
            &setup.text,
            &setup.image,
            &setup.fusion,
            train_config.seed,
        );
        let history = train(&model, data, vocab, setup.text.max_seq_len, &train_config)?;
        let val = evaluate(
            &model,
            &data.val,
            vocab,
            setup.text.max_seq_len,
            train_config.batch_size,
            train_config.threads,
        )?;
        let test = evaluate(
            &model,
            &data.test,
            vocab,
            setup.text.max_seq_len,
            train_config.batch_size,
            train_config.threads,
        )?;
        runs.push(ModelRun {
            model: kind.table_name().to_string(),
            kind: *kind,
            val,
            test,
            history,
            wall_secs: started.elapsed().as_secs_f64(),
        });
    }
    Ok(ExperimentReport {
        seed: setup.train.seed,
        runs,
    })
}

/// CSV with one row per model in table order; metric columns are test-set
/// percentages with two decimals.
pub fn write_csv(report: &ExperimentReport, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "model,acc,pre,recall,f1")?;
    for run in &report.runs {
        writeln!(
            out,
            "{},{:.2},{:.2},{:.2},{:.2}",
            run.model,
            100.0 * run.test.accuracy,
            100.0 * run.test.macro_precision,
            100.0 * run.test.macro_recall,
            100.0 * run.test.macro_f1,
        )?;
    }
    Ok(())
}

pub fn csv_string(report: &ExperimentReport) -> String {
    let mut buf = Vec::new();
    write_csv(report, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("csv is ascii")
}
