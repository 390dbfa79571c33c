//! Batching: tokenize, pad to a fixed sequence length, stack images.

use mmfs_core::{BoolTensor, IntTensor, Rng, Tensor};
use mmfs_models::{tokenize, Vocab};

use crate::dataset::Sample;
use crate::error::{DataError, Result};

#[derive(Debug, Clone)]
pub struct Batch {
    /// [B, S] token ids.
    pub ids: IntTensor,
    /// [B, S] true on live positions.
    pub mask: BoolTensor,
    /// [B, 3, H, W] standardized images.
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Splits samples into batches of `batch_size` (final partial batch kept).
/// With a shuffle seed the order is a seeded uniform permutation; without
/// one, input order is preserved.
pub fn make_batches(
    samples: &[Sample],
    vocab: &Vocab,
    batch_size: usize,
    max_seq_len: usize,
    shuffle_seed: Option<u64>,
) -> Result<Vec<Batch>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    if samples.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    if let Some(seed) = shuffle_seed {
        Rng::new(seed).shuffle(&mut order);
    }
    let image_shape = samples[0].image.shape.clone();

    let mut batches = Vec::with_capacity(order.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let b = chunk.len();
        let mut ids = Vec::with_capacity(b * max_seq_len);
        let mut mask = Vec::with_capacity(b * max_seq_len);
        let mut images = Vec::with_capacity(b * image_shape.iter().product::<usize>());
        let mut labels = Vec::with_capacity(b);
        for &i in chunk {
            let sample = &samples[i];
            assert_eq!(sample.image.shape, image_shape, "mixed image sizes in one dataset");
            let (row_ids, row_mask) = tokenize(&sample.text, vocab, max_seq_len);
            ids.extend(row_ids.data);
            mask.extend(row_mask.data);
            images.extend_from_slice(&sample.image.data);
            labels.push(sample.label.index());
        }
        let mut img_shape = vec![b];
        img_shape.extend_from_slice(&image_shape);
        batches.push(Batch {
            ids: IntTensor::from_vec(vec![b, max_seq_len], ids),
            mask: BoolTensor::from_vec(vec![b, max_seq_len], mask),
            images: Tensor::from_vec(img_shape, images),
            labels,
        });
    }
    Ok(batches)
}
