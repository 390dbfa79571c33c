//! Synthetic compositional dataset.
//!
//! Each sample draws a text class `a` and an image class `b` independently
//! and uniformly from {0,1,2}; the label is (a + b) mod 3. The text carries
//! only `a` (one keyword among filler words) and the image carries only `b`
//! (dominant color channel plus noise), so either modality alone has zero
//! mutual information with the label while the pair determines it exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mmfs_core::Rng;

use crate::error::Result;
use crate::manifest::{save_manifest, Label, ManifestRecord};
use crate::ppm::encode_p6;

pub const DEFAULT_KEYWORDS: [[&str; 3]; 3] = [
    ["sunrise", "glow", "bloom"],
    ["thunder", "rust", "gravel"],
    ["ledger", "corridor", "window"],
];

const FILLER: [&str; 12] = [
    "the", "a", "so", "just", "very", "today", "really", "now", "this", "feels", "kind", "of",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_samples: usize,
    pub image_size: usize,
    /// Per-pixel Gaussian noise on top of the class color.
    pub noise_std: f64,
    /// Three keyword triplets, one per text class.
    pub keywords: Vec<Vec<String>>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(num_samples: usize, image_size: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            num_samples,
            image_size,
            noise_std: 0.1,
            keywords: DEFAULT_KEYWORDS
                .iter()
                .map(|t| t.iter().map(|s| s.to_string()).collect())
                .collect(),
            seed,
        }
    }

    pub fn validate(&self) {
        assert!(self.noise_std >= 0.0, "noise_std must be nonnegative");
        assert_eq!(self.keywords.len(), 3, "need one keyword triplet per class");
        for t in &self.keywords {
            assert!(!t.is_empty(), "keyword triplets must be nonempty");
        }
        assert!(self.image_size >= 1);
    }
}

/// The labeling rule. Enumerating the 3x3 (a,b) grid shows each row and
/// column hits every class exactly once, so label|a and label|b are uniform.
pub fn label_rule(text_class: usize, image_class: usize) -> Label {
    Label::from_index((text_class + image_class) % 3).unwrap()
}

/// One generated sample, before anything touches the disk.
pub struct SyntheticSample {
    pub id: String,
    pub text: String,
    pub text_class: usize,
    pub image_class: usize,
    pub label: Label,
    /// Interleaved RGB bytes, image_size x image_size.
    pub pixels: Vec<u8>,
}

fn gen_sample(spec: &SyntheticSpec, index: usize, rng: &mut Rng) -> SyntheticSample {
    let a = rng.below(3);
    let b = rng.below(3);
    let label = label_rule(a, b);

    // Filler words with the class keyword at a random position.
    let n_words = 3 + rng.below(4);
    let mut words: Vec<String> = (0..n_words)
        .map(|_| FILLER[rng.below(FILLER.len())].to_string())
        .collect();
    let keyword = &spec.keywords[a][rng.below(spec.keywords[a].len())];
    let at = rng.below(words.len() + 1);
    words.insert(at, keyword.clone());
    let text = words.join(" ");

    // Dominant channel b at 0.8, the others at 0.2, plus Gaussian noise.
    let hw = spec.image_size * spec.image_size;
    let mut pixels = vec![0u8; hw * 3];
    for p in 0..hw {
        for c in 0..3 {
            let base = if c == b { 0.8 } else { 0.2 };
            let v = (base + spec.noise_std * rng.normal()).clamp(0.0, 1.0);
            pixels[p * 3 + c] = (v * 255.0).round() as u8;
        }
    }
    SyntheticSample {
        id: format!("s{index:05}"),
        text,
        text_class: a,
        image_class: b,
        label,
        pixels,
    }
}

/// Generates all samples in memory (used both by [`generate_synthetic`] and
/// by tests that inspect the hidden (a,b) pair).
pub fn generate_samples(spec: &SyntheticSpec) -> Vec<SyntheticSample> {
    spec.validate();
    let mut rng = Rng::new(spec.seed);
    (0..spec.num_samples).map(|i| gen_sample(spec, i, &mut rng)).collect()
}

/// Writes `manifest.jsonl`, `images/*.ppm`, and `spec.json` under `out_dir`.
/// Identical specs produce byte-identical outputs.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<PathBuf> {
    let samples = generate_samples(spec);
    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&images_dir)?;

    let mut records = Vec::with_capacity(samples.len());
    for s in &samples {
        let rel = format!("images/{}.ppm", s.id);
        std::fs::write(
            out_dir.join(&rel),
            encode_p6(spec.image_size, spec.image_size, &s.pixels),
        )?;
        records.push(ManifestRecord {
            id: s.id.clone(),
            text: s.text.clone(),
            image: rel,
            label: s.label,
        });
    }
    let manifest_path = out_dir.join("manifest.jsonl");
    save_manifest(&manifest_path, &records)?;
    let spec_json = serde_json::to_string_pretty(spec).expect("spec serializes");
    std::fs::write(out_dir.join("spec.json"), spec_json)?;
    Ok(manifest_path)
}
