//! Data pipeline: JSONL manifests, binary PPM images, the synthetic
//! compositional dataset whose label is (text class + image class) mod 3,
//! seeded train/val/test splits, and deterministic batching.

pub mod batch;
pub mod dataset;
pub mod error;
pub mod manifest;
pub mod ppm;
pub mod synthetic;

pub use batch::{make_batches, Batch};
pub use dataset::{load_samples, split_dataset, Sample, SplitDataset};
pub use error::{DataError, Result};
pub use manifest::{load_manifest, save_manifest, DatasetManifest, Label, ManifestRecord};
pub use ppm::{decode_p6, encode_p6, image_from_bytes, load_image, load_image_buffer, standardize, unstandardize, ImageBuffer};
pub use synthetic::{generate_samples, generate_synthetic, label_rule, SyntheticSpec};
