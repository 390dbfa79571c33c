//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! The criteria exercise gradient integrity, oracle equivalence,
//! normalization and residual invariants, metric correctness, overfit
//! capability, the multimodal-vs-unimodal comparison on the synthetic
//! compositional dataset, reproducibility, and dataset plumbing.
//!
//! Heavy criteria serialize on a lock so wall-clock budgets are measured
//! without contention from sibling tests.

use std::sync::Mutex;
use std::time::Instant;

use mmfs_core::{ops, BoolTensor, Ctx, GradTape, Rng, Tensor};
use mmfs_data::{
    generate_synthetic, load_manifest, load_samples, split_dataset, Sample, SplitDataset,
    SyntheticSpec,
};
use mmfs_models::{
    oracle, EncodedImage, EncodedText, FusionConfig, FusionKind, FusionModel, ImageEncoderConfig,
    SentimentModel, TextEncoderConfig, Vocab,
};
use mmfs_train::{
    compare_experiment, csv_string, evaluate, load_checkpoint, metrics_from_confusion,
    save_checkpoint, CompareSetup, ConfusionMatrix, TrainConfig,
};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn temp_dir(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join("mmfs_acceptance").join(name);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Desk-profile architecture shared by the training criteria.
fn desk_setup(vocab_size: usize, epochs: usize, seed: u64) -> CompareSetup {
    let mut train = TrainConfig::desk();
    train.epochs = epochs;
    train.seed = seed;
    CompareSetup {
        text: TextEncoderConfig::desk(vocab_size),
        image: ImageEncoderConfig::desk(),
        fusion: FusionConfig::desk(),
        train,
    }
}

fn synthetic_split(n: usize, counts: (usize, usize, usize), seed: u64, dir: &str) -> (SplitDataset, Vocab) {
    let out = temp_dir(dir);
    let spec = SyntheticSpec::new(n, 16, seed);
    let manifest_path = generate_synthetic(&spec, &out).unwrap();
    let manifest = load_manifest(&manifest_path).unwrap();
    let samples = load_samples(&manifest, 16, 16).unwrap();
    let split = split_dataset(samples, counts, seed).unwrap();
    let texts: Vec<&str> = split.train.iter().map(|s| s.text.as_str()).collect();
    let vocab = Vocab::build(&texts, 1, 4096).unwrap();
    (split, vocab)
}

/// Criterion 1: every registered op, both encoders, and all fusion forward
/// passes match central finite differences (1e-6 simple ops, 1e-4
/// batch-norm and full models) in under two minutes.
#[test]
fn c1_gradient_integrity() {
    let _guard = serial();
    let started = Instant::now();
    let cases = mmfs_models::check::registry();
    let mut failures = Vec::new();
    for (name, res, tol, pass) in mmfs_core::gradcheck::run_cases(&cases) {
        match res {
            Ok(err) if pass => println!("  gradcheck {name:<26} {err:.3e} < {tol:.0e}"),
            Ok(err) => failures.push(format!("{name}: {err:.3e} >= {tol:.0e}")),
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let in_budget = elapsed < 120.0;
    let pass = failures.is_empty() && in_budget;
    report(
        "1 gradient integrity",
        pass,
        &format!("{} cases, {elapsed:.1}s", cases.len()),
    );
    assert!(failures.is_empty(), "failed checks:\n{}", failures.join("\n"));
    assert!(in_budget, "gradcheck took {elapsed:.1}s, budget is 120s");
}

/// Criterion 2: each fusion forward pass matches the independent scalar
/// reimplementation on B=1, S=3, d_model=4 fixed-seed inputs within 1e-10.
#[test]
fn c2_oracle_equivalence() {
    let _guard = serial();
    const D: usize = 4;
    const S: usize = 3;
    let mut worst: f64 = 0.0;
    for (i, kind) in FusionKind::MULTIMODAL.iter().enumerate() {
        let config = FusionConfig {
            d_model: D,
            num_heads: 2,
            num_classes: 3,
            dropout: 0.0,
            ote_literal_concat: false,
        };
        let model = FusionModel::new(*kind, D, D, config, &mut Rng::new(7000 + i as u64));
        let mut rng = Rng::new(8000 + i as u64);
        let text_hidden = Tensor::randn(vec![1, S, D], 0.0, 1.0, &mut rng);
        let text_pooled = Tensor::randn(vec![1, D], 0.0, 1.0, &mut rng);
        let image_hidden = Tensor::randn(vec![1, S, D], 0.0, 1.0, &mut rng);
        let image_pooled = Tensor::randn(vec![1, D], 0.0, 1.0, &mut rng);
        let mask = vec![true, true, false];
        let rows = |t: &Tensor| -> Vec<Vec<f64>> {
            (0..S)
                .map(|s| (0..D).map(|j| t.data()[s * D + j]).collect())
                .collect()
        };
        let input = oracle::OracleInput {
            text_rows: rows(&text_hidden),
            text_pooled: text_pooled.data().to_vec(),
            text_mask: mask.clone(),
            image_rows: rows(&image_hidden),
            image_pooled: image_pooled.data().to_vec(),
        };
        let text = EncodedText {
            hidden: text_hidden,
            pooled: text_pooled,
            mask: BoolTensor::from_vec(vec![1, S], mask),
        };
        let image = EncodedImage {
            hidden: image_hidden,
            pooled: image_pooled,
        };
        let out = model
            .forward(&mut Ctx::inference(), Some(&text), Some(&image))
            .unwrap();
        let want = oracle::fusion_forward(&model, &input);
        for (g, w) in out.p.data().iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }
    let pass = worst < 1e-10;
    report("2 oracle equivalence", pass, &format!("max |diff| {worst:.2e}"));
    assert!(pass, "fusion oracle deviation {worst:.3e} >= 1e-10");
}

/// Criterion 3: across 1000 random inputs per kind, probability rows and
/// attention weight rows sum to 1 within 1e-9.
#[test]
fn c3_normalization_invariants() {
    let _guard = serial();
    let mut checked_rows = 0usize;
    let mut worst: f64 = 0.0;
    for (i, kind) in FusionKind::ALL.iter().enumerate() {
        let config = FusionConfig {
            d_model: 8,
            num_heads: 2,
            num_classes: 3,
            dropout: 0.0,
            ote_literal_concat: false,
        };
        let model = FusionModel::new(*kind, 6, 10, config, &mut Rng::new(100 + i as u64));
        let mut rng = Rng::new(200 + i as u64);
        for _ in 0..1000 {
            let s_t = 2 + rng.below(3);
            let s_i = 2 + rng.below(3);
            let mut mask = vec![true; s_t];
            for m in mask.iter_mut().skip(1 + rng.below(s_t)) {
                *m = false;
            }
            let text = EncodedText {
                hidden: Tensor::randn(vec![1, s_t, 6], 0.0, 2.0, &mut rng),
                pooled: Tensor::randn(vec![1, 6], 0.0, 2.0, &mut rng),
                mask: BoolTensor::from_vec(vec![1, s_t], mask),
            };
            let image = EncodedImage {
                hidden: Tensor::randn(vec![1, s_i, 10], 0.0, 2.0, &mut rng),
                pooled: Tensor::randn(vec![1, 10], 0.0, 2.0, &mut rng),
            };
            let out = model
                .forward(&mut Ctx::inference(), Some(&text), Some(&image))
                .unwrap();
            let sum: f64 = out.p.data().iter().sum();
            worst = worst.max((sum - 1.0).abs());
            assert!(out.p.data().iter().all(|v| (0.0..=1.0).contains(v)));
            checked_rows += 1;
            for weights in &out.attn {
                let k = *weights.shape().last().unwrap();
                for row in weights.data().chunks(k) {
                    let sum: f64 = row.iter().sum();
                    worst = worst.max((sum - 1.0).abs());
                    checked_rows += 1;
                }
            }
        }
    }
    let pass = worst < 1e-9;
    report(
        "3 normalization invariants",
        pass,
        &format!("{checked_rows} rows, worst |sum-1| {worst:.2e}"),
    );
    assert!(pass, "row normalization off by {worst:.3e}");
}

/// Criterion 4: zeroed residual branches make blocks compute relu(x)
/// exactly, and a zeroed encoder layer is an exact identity.
#[test]
fn c4_residual_identity() {
    let _guard = serial();
    let mut rng = Rng::new(400);
    // Non-downsampling blocks of both kinds.
    for kind in [mmfs_models::BlockKind::Basic, mmfs_models::BlockKind::Bottleneck] {
        let block = mmfs_models::ResidualBlock::new(kind, "b", 8, 8, 1, &mut rng);
        assert!(!block.has_downsample());
        block.zero_residual_output();
        let x = Tensor::randn(vec![2, 8, 5, 5], 0.0, 1.0, &mut rng);
        let y = block.forward(&mut Ctx::inference(), &x).unwrap();
        assert_eq!(y.data(), x.relu().unwrap().data(), "{kind:?} block is not relu(x)");
    }
    // Encoder layer with zeroed sublayer output projections.
    let layer = mmfs_core::nn::EncoderLayer::new("enc", 16, 4, 0.1, &mut rng);
    layer.zero_residual_branches();
    let x = Tensor::randn(vec![2, 5, 16], 0.0, 1.0, &mut rng);
    let y = layer.forward(&mut Ctx::inference(), &x, None).unwrap();
    let identical = x.data() == y.data();
    report("4 residual identity", identical, "blocks = relu(x), encoder layer = identity");
    assert!(identical, "zeroed encoder layer is not an exact identity");
}

/// Criterion 5: the metric formulas reproduce the hand-computed binary case
/// exactly and agree with a brute-force per-sample counter on 1000 random
/// 3x3 matrices.
#[test]
fn c5_metric_correctness() {
    let _guard = serial();
    let cm = ConfusionMatrix::from_counts(2, vec![4, 1, 2, 3]);
    let m = metrics_from_confusion(&cm).unwrap();
    let exact = m.per_class[0].precision == 2.0 / 3.0
        && m.per_class[0].recall == 4.0 / 5.0
        && (m.per_class[0].f1 - 8.0 / 11.0).abs() < 1e-15;

    let mut rng = Rng::new(500);
    let mut agreements = 0usize;
    for _ in 0..1000 {
        let counts: Vec<u64> = (0..9).map(|_| rng.below(25) as u64).collect();
        if counts.iter().sum::<u64>() == 0 {
            agreements += 1;
            continue;
        }
        let cm = ConfusionMatrix::from_counts(3, counts.clone());
        let report = metrics_from_confusion(&cm).unwrap();
        let mut ok = true;
        let total: u64 = counts.iter().sum();
        let correct: u64 = (0..3).map(|i| counts[i * 3 + i]).sum();
        ok &= report.accuracy == correct as f64 / total as f64;
        for class in 0..3 {
            let tp = counts[class * 3 + class] as f64;
            let col: u64 = (0..3).map(|r| counts[r * 3 + class]).sum();
            let row: u64 = (0..3).map(|p| counts[class * 3 + p]).sum();
            let precision = if col == 0 { 0.0 } else { tp / col as f64 };
            let recall = if row == 0 { 0.0 } else { tp / row as f64 };
            ok &= (report.per_class[class].precision - precision).abs() < 1e-12;
            ok &= (report.per_class[class].recall - recall).abs() < 1e-12;
        }
        if ok {
            agreements += 1;
        }
    }
    let pass = exact && agreements == 1000;
    report(
        "5 metric correctness",
        pass,
        &format!("hand case exact: {exact}, {agreements}/1000 random matrices agree"),
    );
    assert!(pass);
}

/// Criterion 6: every model kind reaches 100% training accuracy on a
/// 32-sample synthetic subset within 200 optimizer steps at desk profile,
/// in under three minutes total.
#[test]
fn c6_overfit_capability() {
    let _guard = serial();
    let started = Instant::now();
    let (split, vocab) = synthetic_split(32, (32, 0, 0), 21, "overfit32");
    let subset: Vec<Sample> = split.train.clone();
    assert_eq!(subset.len(), 32);

    let mut failures = Vec::new();
    for (i, kind) in FusionKind::ALL.iter().enumerate() {
        let setup = desk_setup(vocab.size(), 1, 100 + i as u64);
        let model = SentimentModel::new(*kind, &setup.text, &setup.image, &setup.fusion, setup.train.seed);
        let batches = mmfs_data::make_batches(&subset, &vocab, setup.train.batch_size, setup.text.max_seq_len, None).unwrap();
        let optimizer = mmfs_core::optim::Adam::new(setup.train.learning_rate, 0.0);
        let trainable = model.parameters();
        let mut dropout_rng = Rng::new(setup.train.seed).fork(0xD0);
        let mut steps_used = None;
        for step in 0..200 {
            let batch = &batches[step % batches.len()];
            let tape = GradTape::new();
            let mut ctx = Ctx::train(&tape, &mut dropout_rng);
            let out = model
                .forward(&mut ctx, &batch.ids, &batch.mask, &batch.images, false)
                .unwrap();
            let loss = ops::cross_entropy_loss(&out.logits, &batch.labels).unwrap();
            tape.backward(&loss).unwrap();
            optimizer.step(&trainable).unwrap();
            // Check training accuracy in inference mode every few steps.
            if step % 5 == 4 || step == 199 {
                let acc = evaluate(&model, &subset, &vocab, setup.text.max_seq_len, 32, 1)
                    .unwrap()
                    .accuracy;
                if acc == 1.0 {
                    steps_used = Some(step + 1);
                    break;
                }
            }
        }
        match steps_used {
            Some(steps) => println!("  overfit {:<20} reached 100% at step {steps}", kind.table_name()),
            None => failures.push(kind.table_name().to_string()),
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let pass = failures.is_empty() && elapsed < 180.0;
    report(
        "6 overfit capability",
        pass,
        &format!("7 kinds, {elapsed:.0}s"),
    );
    assert!(
        failures.is_empty(),
        "kinds that missed 100% within 200 steps: {failures:?}"
    );
    assert!(elapsed < 180.0, "overfit suite took {elapsed:.0}s, budget is 180s");
}

/// Criterion 7: the comparison experiment on the compositional synthetic
/// dataset (3000/500/500, seed 7, desk profile, 10 epochs): unimodal models
/// score at most 45% test accuracy, every multimodal model at least 90%,
/// hence a gap of at least 45 points, in under 15 minutes single-threaded.
#[test]
fn c7_table4_analogue() {
    let _guard = serial();
    let started = Instant::now();
    let (split, vocab) = synthetic_split(4000, (3000, 500, 500), 7, "table4");
    let setup = desk_setup(vocab.size(), 10, 7);
    let report_data = compare_experiment(&split, &vocab, &setup).unwrap();
    let elapsed = started.elapsed().as_secs_f64();

    println!("{}", csv_string(&report_data));
    let acc = |kind: FusionKind| report_data.run_for(kind).test.accuracy;
    let unimodal = [FusionKind::TextOnly, FusionKind::ImageOnly];
    let max_uni = unimodal.iter().map(|k| acc(*k)).fold(0.0, f64::max);
    let min_multi = FusionKind::MULTIMODAL
        .iter()
        .map(|k| acc(*k))
        .fold(1.0, f64::min);

    let mut clauses = Vec::new();
    for kind in unimodal {
        let a = acc(kind);
        clauses.push((format!("{} <= 45% (got {:.1}%)", kind.table_name(), 100.0 * a), a <= 0.45));
    }
    for kind in FusionKind::MULTIMODAL {
        let a = acc(kind);
        clauses.push((format!("{} >= 90% (got {:.1}%)", kind.table_name(), 100.0 * a), a >= 0.90));
    }
    clauses.push((
        format!(
            "min(multimodal) - max(unimodal) >= 45 points (got {:.1})",
            100.0 * (min_multi - max_uni)
        ),
        min_multi - max_uni >= 0.45,
    ));
    clauses.push((format!("runtime < 15 min (got {elapsed:.0}s)"), elapsed < 900.0));

    let mut failed = Vec::new();
    for (desc, ok) in &clauses {
        println!("  clause {}: {desc}", if *ok { "PASS" } else { "FAIL" });
        if !ok {
            failed.push(desc.clone());
        }
    }
    report(
        "7 table-4 analogue",
        failed.is_empty(),
        &format!("min multi {:.1}%, max uni {:.1}%, {elapsed:.0}s", 100.0 * min_multi, 100.0 * max_uni),
    );
    assert!(failed.is_empty(), "failed clauses:\n{}", failed.join("\n"));
}

/// Criterion 8: identical seeds give byte-identical comparison CSVs, and a
/// checkpoint round-trip reproduces the evaluation report.
#[test]
fn c8_reproducibility() {
    let _guard = serial();
    let (split, vocab) = synthetic_split(120, (80, 20, 20), 13, "repro");
    let setup = || desk_setup(vocab.size(), 2, 13);

    let csv1 = csv_string(&compare_experiment(&split, &vocab, &setup()).unwrap());
    let csv2 = csv_string(&compare_experiment(&split, &vocab, &setup()).unwrap());
    let identical_csv = csv1 == csv2;

    // Checkpoint round-trip: train one model briefly, save, load, compare
    // evaluation reports.
    let s = setup();
    let model = SentimentModel::new(FusionKind::Ote, &s.text, &s.image, &s.fusion, 13);
    mmfs_train::train(&model, &split, &vocab, s.text.max_seq_len, &s.train).unwrap();
    let before = evaluate(&model, &split.test, &vocab, s.text.max_seq_len, 32, 1).unwrap();
    let dir = temp_dir("repro_ckpt");
    let path = dir.join("ote.ckpt");
    save_checkpoint(&model, &path).unwrap();
    let restored = load_checkpoint(&path).unwrap();
    let after = evaluate(&restored, &split.test, &vocab, s.text.max_seq_len, 32, 1).unwrap();
    let identical_eval = before == after;

    let pass = identical_csv && identical_eval;
    report(
        "8 reproducibility",
        pass,
        &format!("csv identical: {identical_csv}, roundtrip report identical: {identical_eval}"),
    );
    assert!(identical_csv, "two identical-seed compare runs differ:\n{csv1}\nvs\n{csv2}");
    assert!(identical_eval, "evaluation changed across a checkpoint round-trip");
}

/// Criterion 9: splitting 4512 synthetic records with counts
/// (3200, 800, 512) yields exactly those sizes, disjoint by id.
#[test]
fn c9_dataset_plumbing() {
    let _guard = serial();
    let spec = SyntheticSpec::new(4512, 4, 2);
    let samples: Vec<Sample> = mmfs_data::generate_samples(&spec)
        .into_iter()
        .map(|s| Sample {
            id: s.id,
            text: s.text,
            image: mmfs_data::ImageBuffer::new(vec![3, 4, 4], vec![0.0; 48]),
            label: s.label,
        })
        .collect();
    let split = split_dataset(samples, (3200, 800, 512), 7).unwrap();
    let sizes_ok =
        split.train.len() == 3200 && split.val.len() == 800 && split.test.len() == 512;
    let mut ids: Vec<&str> = split
        .train
        .iter()
        .chain(&split.val)
        .chain(&split.test)
        .map(|s| s.id.as_str())
        .collect();
    let total = ids.len();
    ids.sort_unstable();
    ids.dedup();
    let disjoint = ids.len() == total && total == 4512;
    let pass = sizes_ok && disjoint;
    report(
        "9 dataset plumbing",
        pass,
        &format!("sizes 3200/800/512: {sizes_ok}, disjoint ids: {disjoint}"),
    );
    assert!(pass);
}
