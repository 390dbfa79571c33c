//! In-memory samples, manifest loading, and the seeded three-way split.

use mmfs_core::Rng;

use crate::error::{DataError, Result};
use crate::manifest::{DatasetManifest, Label};
use crate::ppm::{load_image_buffer, ImageBuffer};

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub text: String,
    /// Standardized [3,H,W] image.
    pub image: ImageBuffer,
    pub label: Label,
}

/// Decodes every record's image at the given size.
pub fn load_samples(manifest: &DatasetManifest, image_h: usize, image_w: usize) -> Result<Vec<Sample>> {
    manifest
        .records
        .iter()
        .map(|r| {
            Ok(Sample {
                id: r.id.clone(),
                text: r.text.clone(),
                image: load_image_buffer(&manifest.image_path(r), image_h, image_w)?,
                label: r.label,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub seed: u64,
}

/// Seeded uniform shuffle followed by contiguous slices of the requested
/// sizes. Deterministic in (input order, seed).
pub fn split_dataset(
    mut samples: Vec<Sample>,
    counts: (usize, usize, usize),
    seed: u64,
) -> Result<SplitDataset> {
    let (n_train, n_val, n_test) = counts;
    let requested = n_train + n_val + n_test;
    if requested > samples.len() {
        return Err(DataError::InsufficientSamples {
            requested,
            available: samples.len(),
        });
    }
    let mut rng = Rng::new(seed);
    rng.shuffle(&mut samples);
    let train: Vec<Sample> = samples.drain(..n_train).collect();
    let val: Vec<Sample> = samples.drain(..n_val).collect();
    let test: Vec<Sample> = samples.drain(..n_test).collect();
    Ok(SplitDataset {
        train,
        val,
        test,
        seed,
    })
}
