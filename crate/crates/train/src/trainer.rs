//! The training loop and evaluation.

use mmfs_core::optim::Adam;
use mmfs_core::{ops, Ctx, GradTape, Rng};
use mmfs_data::{make_batches, Batch, Sample, SplitDataset};
use mmfs_models::{SentimentModel, StateEntry, Vocab};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Result, TrainError};
use crate::metrics::{metrics_from_confusion, ConfusionMatrix, MetricsReport};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training loss per epoch (sample-weighted).
    pub epoch_loss: Vec<f64>,
    /// Validation accuracy after each epoch.
    pub val_accuracy: Vec<f64>,
    /// Epoch whose parameters were kept (earliest among ties).
    pub best_epoch: usize,
}

fn epoch_shuffle_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9e3779b97f4a7c15)
}

/// Trains in place. After the final epoch the model is restored to the
/// parameters of the best-validation-accuracy epoch (ties keep the earlier
/// one) and the per-epoch history is returned.
pub fn train(
    model: &SentimentModel,
    data: &SplitDataset,
    vocab: &Vocab,
    max_seq_len: usize,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    if data.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if data.val.is_empty() {
        return Err(TrainError::EmptySplit("val"));
    }
    let optimizer = Adam::new(config.learning_rate, config.weight_decay);
    let trainable = model.trainable_parameters(config.freeze_encoders);
    let mut dropout_rng = Rng::new(config.seed).fork(0xD0);

    let mut history = TrainHistory {
        epoch_loss: Vec::with_capacity(config.epochs),
        val_accuracy: Vec::with_capacity(config.epochs),
        best_epoch: 0,
    };
    let mut best: Option<(f64, Vec<StateEntry>)> = None;
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let batches = make_batches(
            &data.train,
            vocab,
            config.batch_size,
            max_seq_len,
            Some(epoch_shuffle_seed(config.seed, epoch)),
        )?;
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in &batches {
            let loss = train_step(model, batch, &optimizer, &trainable, config, &mut dropout_rng, step)?;
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
            step += 1;
        }
        history.epoch_loss.push(loss_sum / seen as f64);

        let val = evaluate(model, &data.val, vocab, max_seq_len, config.batch_size, config.threads)?;
        history.val_accuracy.push(val.accuracy);
        let improved = match &best {
            Some((acc, _)) => val.accuracy > *acc,
            None => true,
        };
        if improved {
            best = Some((val.accuracy, model.state_dict()));
            history.best_epoch = epoch;
        }
    }

    let (_, state) = best.expect("at least one epoch ran");
    model
        .load_state_dict(&state)
        .map_err(TrainError::StateMismatch)?;
    Ok(history)
}

fn train_step(
    model: &SentimentModel,
    batch: &Batch,
    optimizer: &Adam,
    trainable: &[mmfs_core::Parameter],
    config: &TrainConfig,
    dropout_rng: &mut Rng,
    step: usize,
) -> Result<f64> {
    let tape = GradTape::new();
    let mut ctx = Ctx::train(&tape, dropout_rng);
    let out = model.forward(&mut ctx, &batch.ids, &batch.mask, &batch.images, config.freeze_encoders)?;
    let mut loss = ops::cross_entropy_loss(&out.logits, &batch.labels)?;
    if config.aux_loss_weight > 0.0 {
        for branch in [&out.text_logits, &out.image_logits].into_iter().flatten() {
            let aux = ops::cross_entropy_loss(branch, &batch.labels)?;
            loss = loss.add(&aux.scale(config.aux_loss_weight)?)?;
        }
    }
    let value = loss.item();
    if !value.is_finite() {
        return Err(TrainError::NonFiniteLoss { step });
    }
    tape.backward(&loss)?;
    optimizer.step(trainable)?;
    Ok(value)
}

/// One training pass over a fixed batch list (no shuffling, no evaluation);
/// returns per-step losses. Used by the overfit checks.
pub fn train_steps(
    model: &SentimentModel,
    batches: &[Batch],
    config: &TrainConfig,
    steps: usize,
) -> Result<Vec<f64>> {
    let optimizer = Adam::new(config.learning_rate, config.weight_decay);
    let trainable = model.trainable_parameters(config.freeze_encoders);
    let mut dropout_rng = Rng::new(config.seed).fork(0xD0);
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch = &batches[step % batches.len()];
        losses.push(train_step(
            model,
            batch,
            &optimizer,
            &trainable,
            config,
            &mut dropout_rng,
            step,
        )?);
    }
    Ok(losses)
}

/// Inference-mode evaluation: accumulates one confusion matrix over every
/// sample exactly once and derives the metric suite from it. With
/// `threads > 1` the samples are scored on replica models in worker threads
/// and the integer confusion counts merged, so the report is identical to a
/// single-threaded run.
pub fn evaluate(
    model: &SentimentModel,
    samples: &[Sample],
    vocab: &Vocab,
    max_seq_len: usize,
    batch_size: usize,
    threads: usize,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let classes = mmfs_data::Label::ALL.len();
    let threads = threads.max(1).min(samples.len());
    let cm = if threads == 1 {
        score_chunk(model, samples, vocab, max_seq_len, batch_size, classes)?
    } else {
        let state = model.state_dict();
        let spec = ModelSpec::of(model);
        let chunk_size = samples.len().div_ceil(threads);
        let results: Vec<Result<ConfusionMatrix>> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for chunk in samples.chunks(chunk_size) {
                let state = &state;
                let spec = &spec;
                handles.push(scope.spawn(move || {
                    let replica = spec.build();
                    replica
                        .load_state_dict(state)
                        .map_err(TrainError::StateMismatch)?;
                    score_chunk(&replica, chunk, vocab, max_seq_len, batch_size, classes)
                }));
            }
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        let mut cm = ConfusionMatrix::new(classes);
        for r in results {
            cm.merge(&r?);
        }
        cm
    };
    metrics_from_confusion(&cm)
}

fn score_chunk(
    model: &SentimentModel,
    samples: &[Sample],
    vocab: &Vocab,
    max_seq_len: usize,
    batch_size: usize,
    classes: usize,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(classes);
    let batches = make_batches(samples, vocab, batch_size, max_seq_len, None)?;
    for batch in &batches {
        let mut ctx = Ctx::inference();
        let out = model.forward(&mut ctx, &batch.ids, &batch.mask, &batch.images, false)?;
        for (&truth, &pred) in batch.labels.iter().zip(&out.labels) {
            cm.record(truth, pred);
        }
    }
    Ok(cm)
}

/// Everything needed to rebuild a model's architecture (for worker replicas
/// and checkpoint restores).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: mmfs_models::FusionKind,
    pub text: Option<mmfs_models::TextEncoderConfig>,
    pub image: Option<mmfs_models::ImageEncoderConfig>,
    pub fusion: mmfs_models::FusionConfig,
}

impl ModelSpec {
    pub fn of(model: &SentimentModel) -> ModelSpec {
        ModelSpec {
            kind: model.kind,
            text: model.text.as_ref().map(|t| t.config.clone()),
            image: model.image.as_ref().map(|i| i.config.clone()),
            fusion: model.fusion.config.clone(),
        }
    }

    /// Fresh model with this architecture (weights arbitrary until a state
    /// dict is loaded).
    pub fn build(&self) -> SentimentModel {
        let text = self
            .text
            .clone()
            .unwrap_or_else(|| mmfs_models::TextEncoderConfig::desk(16));
        let image = self.image.clone().unwrap_or_else(mmfs_models::ImageEncoderConfig::desk);
        SentimentModel::new(self.kind, &text, &image, &self.fusion, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mmfs_data::Label;
    use mmfs_models::{FusionConfig, FusionKind, Pooling, TextEncoderConfig};

    fn tiny_setup(kind: FusionKind) -> (SentimentModel, Vocab, Vec<Sample>) {
        let texts = [
            "sun warm bright", "rain cold grey", "desk lamp paper",
            "sun sky gold", "rain mud storm", "desk chair room",
        ];
        let vocab = Vocab::build(&texts, 1, 64).unwrap();
        let text_cfg = TextEncoderConfig {
            vocab_size: vocab.size(),
            embed_dim: 16,
            num_heads: 2,
            num_layers: 1,
            max_seq_len: 6,
            dropout: 0.0,
            pooling: Pooling::Cls,
        };
        let image_cfg = mmfs_models::ImageEncoderConfig {
            in_channels: 3,
            in_height: 8,
            in_width: 8,
            stem_channels: 4,
            stem_stride: 1,
            stages: vec![mmfs_models::StageConfig { blocks: 1, channels: 8, stride: 2 }],
            block: mmfs_models::BlockKind::Basic,
        };
        let fusion_cfg = FusionConfig {
            d_model: 16,
            num_heads: 2,
            num_classes: 3,
            dropout: 0.0,
            ote_literal_concat: false,
        };
        let model = SentimentModel::new(kind, &text_cfg, &image_cfg, &fusion_cfg, 1);
        let mut rng = Rng::new(5);
        let samples: Vec<Sample> = (0..12)
            .map(|i| {
                let class = i % 3;
                let mut img = vec![0.2; 3 * 64];
                for p in 0..64 {
                    img[class * 64 + p] = 0.8 + 0.02 * rng.normal();
                }
                Sample {
                    id: format!("s{i}"),
                    text: texts[i % texts.len()].to_string(),
                    image: mmfs_data::ImageBuffer::new(vec![3, 8, 8], img),
                    label: Label::from_index(class).unwrap(),
                }
            })
            .collect();
        (model, vocab, samples)
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            learning_rate: 2e-3,
            batch_size: 4,
            epochs: 3,
            weight_decay: 0.0,
            dropout: 0.0,
            seed: 3,
            profile: crate::config::Profile::Desk,
            freeze_encoders: false,
            aux_loss_weight: 0.0,
            threads: 1,
        }
    }

    #[test]
    fn identical_seeds_give_identical_loss_sequences() {
        let config = tiny_config();
        let (m1, vocab, samples) = tiny_setup(FusionKind::NativeCat);
        let data = SplitDataset {
            train: samples[..8].to_vec(),
            val: samples[8..].to_vec(),
            test: vec![],
            seed: 0,
        };
        let h1 = train(&m1, &data, &vocab, 6, &config).unwrap();
        let (m2, _, _) = tiny_setup(FusionKind::NativeCat);
        let h2 = train(&m2, &data, &vocab, 6, &config).unwrap();
        assert_eq!(h1.epoch_loss, h2.epoch_loss);
        assert_eq!(h1.val_accuracy, h2.val_accuracy);
        assert_eq!(h1.best_epoch, h2.best_epoch);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut config = tiny_config();
        config.learning_rate = 0.0;
        let (model, vocab, samples) = tiny_setup(FusionKind::NativeCombine);
        let before: Vec<Vec<f64>> = model
            .parameters()
            .iter()
            .map(|p| p.value().data().to_vec())
            .collect();
        let data = SplitDataset {
            train: samples[..8].to_vec(),
            val: samples[8..].to_vec(),
            test: vec![],
            seed: 0,
        };
        train(&model, &data, &vocab, 6, &config).unwrap();
        let after: Vec<Vec<f64>> = model
            .parameters()
            .iter()
            .map(|p| p.value().data().to_vec())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn empty_splits_are_rejected() {
        let config = tiny_config();
        let (model, vocab, samples) = tiny_setup(FusionKind::TextOnly);
        let no_train = SplitDataset {
            train: vec![],
            val: samples[..2].to_vec(),
            test: vec![],
            seed: 0,
        };
        assert!(matches!(
            train(&model, &no_train, &vocab, 6, &config).unwrap_err(),
            TrainError::EmptySplit("train")
        ));
        let no_val = SplitDataset {
            train: samples[..2].to_vec(),
            val: vec![],
            test: vec![],
            seed: 0,
        };
        assert!(matches!(
            train(&model, &no_val, &vocab, 6, &config).unwrap_err(),
            TrainError::EmptySplit("val")
        ));
    }

    #[test]
    fn evaluation_is_order_invariant_and_pure() {
        let (model, vocab, samples) = tiny_setup(FusionKind::ImageOnly);
        let r1 = evaluate(&model, &samples, &vocab, 6, 4, 1).unwrap();
        let mut reversed = samples.clone();
        reversed.reverse();
        let r2 = evaluate(&model, &reversed, &vocab, 6, 5, 1).unwrap();
        assert_eq!(r1.accuracy, r2.accuracy);
        assert_eq!(r1.confusion, r2.confusion);
        // Purity: evaluating twice gives the identical report.
        let r3 = evaluate(&model, &samples, &vocab, 6, 4, 1).unwrap();
        assert_eq!(r1, r3);
    }

    #[test]
    fn perfect_predictor_scores_ones_everywhere() {
        // Relabel the samples with the model's own predictions; evaluating
        // against those labels makes the model a perfect predictor.
        let (model, vocab, mut samples) = tiny_setup(FusionKind::NativeCat);
        let before = evaluate(&model, &samples, &vocab, 6, 4, 1).unwrap();
        let _ = before;
        let batches = make_batches(&samples, &vocab, 4, 6, None).unwrap();
        let mut predicted = Vec::new();
        for batch in &batches {
            let out = model
                .forward(&mut Ctx::inference(), &batch.ids, &batch.mask, &batch.images, false)
                .unwrap();
            predicted.extend(out.labels);
        }
        for (sample, pred) in samples.iter_mut().zip(predicted) {
            sample.label = Label::from_index(pred).unwrap();
        }
        let report = evaluate(&model, &samples, &vocab, 6, 4, 1).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.macro_f1, 1.0);
        for c in 0..3 {
            for p in 0..3 {
                if c != p {
                    assert_eq!(report.confusion.get(c, p), 0);
                }
            }
        }
    }

    #[test]
    fn constant_predictor_on_balanced_set() {
        // Zeroed classifier output: uniform probabilities, argmax always 0.
        let (model, vocab, samples) = tiny_setup(FusionKind::NativeCat);
        model.fusion.zero_classifier_outputs();
        let report = evaluate(&model, &samples, &vocab, 6, 4, 1).unwrap();
        assert!((report.accuracy - 1.0 / 3.0).abs() < 1e-12);
        assert!((report.macro_precision - 1.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn threaded_evaluation_matches_sequential() {
        let (model, vocab, samples) = tiny_setup(FusionKind::NativeCat);
        let seq = evaluate(&model, &samples, &vocab, 6, 4, 1).unwrap();
        let par = evaluate(&model, &samples, &vocab, 6, 4, 3).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn aux_branch_losses_change_the_objective() {
        let config = tiny_config();
        let mut with_aux = tiny_config();
        with_aux.aux_loss_weight = 0.5;
        let data = |samples: &[Sample]| SplitDataset {
            train: samples[..8].to_vec(),
            val: samples[8..].to_vec(),
            test: vec![],
            seed: 0,
        };
        let (m1, vocab, samples) = tiny_setup(FusionKind::NativeCombine);
        let h1 = train(&m1, &data(&samples), &vocab, 6, &config).unwrap();
        let (m2, _, _) = tiny_setup(FusionKind::NativeCombine);
        let h2 = train(&m2, &data(&samples), &vocab, 6, &with_aux).unwrap();
        assert_ne!(h1.epoch_loss, h2.epoch_loss);
        // Kinds without branch logits are unaffected by the weight.
        let (m3, _, _) = tiny_setup(FusionKind::NativeCat);
        let h3 = train(&m3, &data(&samples), &vocab, 6, &config).unwrap();
        let (m4, _, _) = tiny_setup(FusionKind::NativeCat);
        let h4 = train(&m4, &data(&samples), &vocab, 6, &with_aux).unwrap();
        assert_eq!(h3.epoch_loss, h4.epoch_loss);
    }

    #[test]
    fn best_epoch_parameters_are_restored() {
        let config = tiny_config();
        let (model, vocab, samples) = tiny_setup(FusionKind::NativeCat);
        let data = SplitDataset {
            train: samples[..8].to_vec(),
            val: samples[8..].to_vec(),
            test: vec![],
            seed: 0,
        };
        let history = train(&model, &data, &vocab, 6, &config).unwrap();
        let best = history.val_accuracy[history.best_epoch];
        for acc in &history.val_accuracy {
            assert!(best >= *acc);
        }
        // The restored model reproduces the best recorded accuracy.
        let val = evaluate(&model, &data.val, &vocab, 6, 4, 1).unwrap();
        assert_eq!(val.accuracy, best);
    }
}
