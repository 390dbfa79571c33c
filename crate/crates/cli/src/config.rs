//! Run configuration: profile defaults, then the JSON config file, then CLI
//! flags, highest precedence last. File keys mirror the reference
//! hyperparameter table verbatim (bert_embedding, num_header, bert_dropout,
//! batch_size, learning_rate, epoch, weight_decay); unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use mmfs_models::{
    BlockKind, FusionConfig, ImageEncoderConfig, Pooling, StageConfig, TextEncoderConfig,
};
use mmfs_train::{Profile, TrainConfig};

use crate::args::Args;
use crate::error::{CliError, Result};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub profile: Option<String>,
    pub bert_embedding: Option<usize>,
    pub num_header: Option<usize>,
    pub bert_dropout: Option<f64>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub epoch: Option<usize>,
    pub weight_decay: Option<f64>,
    pub bert_layers: Option<usize>,
    pub max_seq_len: Option<usize>,
    pub image_size: Option<usize>,
    pub d_model: Option<usize>,
    pub seed: Option<u64>,
    pub freeze_encoders: Option<bool>,
    pub aux_loss_weight: Option<f64>,
    pub threads: Option<usize>,
    pub vocab_max_size: Option<usize>,
    pub ote_literal_concat: Option<bool>,
    /// [n_train, n_val, n_test]; absent means a 70/15/15 split.
    pub split: Option<[usize; 3]>,
    pub data: Option<String>,
    pub out: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub profile: Profile,
    pub bert_embedding: usize,
    pub num_header: usize,
    pub bert_dropout: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epoch: usize,
    pub weight_decay: f64,
    pub bert_layers: usize,
    pub max_seq_len: usize,
    pub image_size: usize,
    pub d_model: usize,
    pub seed: u64,
    pub freeze_encoders: bool,
    pub aux_loss_weight: f64,
    pub threads: usize,
    pub vocab_max_size: usize,
    pub ote_literal_concat: bool,
    pub split: Option<[usize; 3]>,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn defaults(profile: Profile) -> RunConfig {
        match profile {
            Profile::Desk => RunConfig {
                profile,
                bert_embedding: 64,
                num_header: 4,
                bert_dropout: 0.1,
                batch_size: 32,
                learning_rate: 1e-3,
                epoch: 10,
                weight_decay: 0.0,
                bert_layers: 2,
                max_seq_len: 32,
                image_size: 16,
                d_model: 64,
                seed: 7,
                freeze_encoders: false,
                aux_loss_weight: 0.0,
                threads: 1,
                vocab_max_size: 4096,
                ote_literal_concat: false,
                split: None,
                data: None,
                out: PathBuf::from("runs"),
            },
            Profile::Paper => RunConfig {
                profile,
                bert_embedding: 768,
                num_header: 12,
                bert_dropout: 0.1,
                batch_size: 16,
                learning_rate: 3e-5,
                epoch: 20,
                weight_decay: 0.0,
                bert_layers: 12,
                max_seq_len: 128,
                image_size: 224,
                d_model: 768,
                seed: 7,
                freeze_encoders: false,
                aux_loss_weight: 0.0,
                threads: 1,
                vocab_max_size: 30_000,
                ote_literal_concat: false,
                split: None,
                data: None,
                out: PathBuf::from("runs"),
            },
        }
    }

    fn apply_file(&mut self, file: ConfigFile) -> Result<()> {
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = file.$field {
                    self.$field = v;
                }
            };
        }
        take!(bert_embedding);
        take!(num_header);
        take!(bert_dropout);
        take!(batch_size);
        take!(learning_rate);
        take!(epoch);
        take!(weight_decay);
        take!(bert_layers);
        take!(max_seq_len);
        take!(image_size);
        take!(d_model);
        take!(seed);
        take!(freeze_encoders);
        take!(aux_loss_weight);
        take!(threads);
        take!(vocab_max_size);
        take!(ote_literal_concat);
        if file.split.is_some() {
            self.split = file.split;
        }
        if let Some(data) = file.data {
            self.data = Some(PathBuf::from(data));
        }
        if let Some(out) = file.out {
            self.out = PathBuf::from(out);
        }
        Ok(())
    }

    fn apply_cli(&mut self, args: &Args) -> Result<()> {
        if let Some(seed) = args.get_parsed::<u64>("seed")? {
            self.seed = seed;
        }
        if let Some(epochs) = args.get_parsed::<usize>("epochs")? {
            self.epoch = epochs;
        }
        if let Some(bs) = args.get_parsed::<usize>("batch-size")? {
            self.batch_size = bs;
        }
        if let Some(lr) = args.get_parsed::<f64>("lr")? {
            self.learning_rate = lr;
        }
        if let Some(threads) = args.get_parsed::<usize>("threads")? {
            self.threads = threads;
        }
        if args.switch("freeze-encoders") {
            self.freeze_encoders = true;
        }
        if let Some(data) = args.get("data") {
            self.data = Some(PathBuf::from(data));
        }
        if let Some(out) = args.get("out") {
            self.out = PathBuf::from(out);
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        self.train_config()
            .validate()
            .map_err(CliError::Config)?;
        if self.bert_embedding % self.num_header != 0 {
            return Err(CliError::Config(format!(
                "bert_embedding {} must divide by num_header {}",
                self.bert_embedding, self.num_header
            )));
        }
        if self.d_model % self.num_header != 0 {
            return Err(CliError::Config(format!(
                "d_model {} must divide by num_header {}",
                self.d_model, self.num_header
            )));
        }
        Ok(())
    }

    pub fn text_config(&self, vocab_size: usize) -> TextEncoderConfig {
        TextEncoderConfig {
            vocab_size,
            embed_dim: self.bert_embedding,
            num_heads: self.num_header,
            num_layers: self.bert_layers,
            max_seq_len: self.max_seq_len,
            dropout: self.bert_dropout,
            pooling: Pooling::Cls,
        }
    }

    pub fn image_config(&self) -> ImageEncoderConfig {
        match self.profile {
            Profile::Desk => ImageEncoderConfig {
                in_channels: 3,
                in_height: self.image_size,
                in_width: self.image_size,
                stem_channels: 16,
                stem_stride: 1,
                stages: vec![
                    StageConfig { blocks: 1, channels: 16, stride: 1 },
                    StageConfig { blocks: 1, channels: 32, stride: 2 },
                    StageConfig { blocks: 1, channels: 64, stride: 2 },
                ],
                block: BlockKind::Basic,
            },
            Profile::Paper => {
                let mut config = ImageEncoderConfig::paper();
                config.in_height = self.image_size;
                config.in_width = self.image_size;
                config
            }
        }
    }

    pub fn fusion_config(&self) -> FusionConfig {
        FusionConfig {
            d_model: self.d_model,
            num_heads: self.num_header,
            num_classes: 3,
            dropout: self.bert_dropout,
            ote_literal_concat: self.ote_literal_concat,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epoch,
            weight_decay: self.weight_decay,
            dropout: self.bert_dropout,
            seed: self.seed,
            profile: self.profile,
            freeze_encoders: self.freeze_encoders,
            aux_loss_weight: self.aux_loss_weight,
            threads: self.threads,
        }
    }

    /// Split counts: explicit, or 70/15/15 with the remainder on train.
    pub fn split_counts(&self, total: usize) -> (usize, usize, usize) {
        match self.split {
            Some([t, v, s]) => (t, v, s),
            None => {
                let val = total * 15 / 100;
                let test = total * 15 / 100;
                (total - val - test, val, test)
            }
        }
    }
}

/// Profile default -> config file -> CLI flags.
pub fn resolve(args: &Args) -> Result<RunConfig> {
    let file: ConfigFile = match args.get("config") {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Run(format!("cannot read config {path:?}: {e}")))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("config {path}: {e}")))?
        }
        None => ConfigFile::default(),
    };
    let profile = match args.get("profile").map(str::to_string).or(file.profile.clone()) {
        None => Profile::Desk,
        Some(p) => match p.as_str() {
            "desk" => Profile::Desk,
            "paper" => Profile::Paper,
            other => {
                return Err(CliError::Config(format!(
                    "unknown profile {other:?}; expected \"desk\" or \"paper\""
                )))
            }
        },
    };
    let mut config = RunConfig::defaults(profile);
    config.apply_file(file)?;
    config.apply_cli(args)?;
    if config.data.is_none() {
        if let Ok(root) = std::env::var("MMFS_DATA_ROOT") {
            config.data = Some(PathBuf::from(root));
        }
    }
    config.validate()?;
    Ok(config)
}

/// Resolves `--data`: a directory means `<dir>/manifest.jsonl`.
pub fn manifest_path(config: &RunConfig) -> Result<PathBuf> {
    let data = config
        .data
        .clone()
        .ok_or_else(|| CliError::Usage("no data given: pass --data or set MMFS_DATA_ROOT".into()))?;
    if data.is_dir() {
        Ok(data.join("manifest.jsonl"))
    } else {
        Ok(data)
    }
}

pub fn parse_profile_free(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(raw: &[&str]) -> Args {
        Args::parse(&raw.iter().map(|s| s.to_string()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn defaults_then_file_then_cli() {
        let dir = std::env::temp_dir().join("mmfs_cli_cfg");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cfg.json");
        std::fs::write(&path, r#"{"batch_size": 8, "seed": 100}"#).unwrap();
        let a = args(&["--config", path.to_str().unwrap(), "--seed", "5"]);
        let config = resolve(&a).unwrap();
        // CLI beats file beats profile default.
        assert_eq!(config.seed, 5);
        assert_eq!(config.batch_size, 8);
        assert_eq!(config.epoch, 10);
    }

    #[test]
    fn unknown_config_keys_are_errors() {
        let dir = std::env::temp_dir().join("mmfs_cli_cfg");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.json");
        std::fs::write(&path, r#"{"bert_embeddings": 64}"#).unwrap();
        let a = args(&["--config", path.to_str().unwrap()]);
        let err = resolve(&a).unwrap_err();
        assert!(matches!(err, CliError::Config(_)), "{err}");
        assert!(err.to_string().contains("bert_embeddings"));
    }

    #[test]
    fn zero_epochs_rejected() {
        let a = args(&["--epochs", "0"]);
        let err = resolve(&a).unwrap_err();
        assert!(err.to_string().contains("epoch"), "{err}");
    }

    #[test]
    fn paper_profile_matches_reference_table() {
        let a = args(&["--profile", "paper"]);
        let config = resolve(&a).unwrap();
        assert_eq!(config.bert_embedding, 768);
        assert_eq!(config.num_header, 12);
        assert_eq!(config.bert_dropout, 0.1);
        assert_eq!(config.batch_size, 16);
        assert_eq!(config.learning_rate, 3e-5);
        assert_eq!(config.epoch, 20);
        assert_eq!(config.weight_decay, 0.0);
    }

    #[test]
    fn split_counts_default_to_70_15_15() {
        let config = RunConfig::defaults(Profile::Desk);
        assert_eq!(config.split_counts(100), (70, 15, 15));
        assert_eq!(config.split_counts(4000), (2800, 600, 600));
    }
}
