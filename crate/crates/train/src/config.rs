//! Training hyperparameters with the two named profiles.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// The reference hyperparameters (lr 3e-5, batch 16, 20 epochs).
    Paper,
    /// Sized for minutes-scale verification runs.
    Desk,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub dropout: f64,
    pub seed: u64,
    pub profile: Profile,
    /// Train only the fusion head, leaving encoder weights fixed.
    pub freeze_encoders: bool,
    /// Weight of the optional per-branch auxiliary losses added to the
    /// fused-logit loss for two-branch fusions; 0 keeps the single fused
    /// objective.
    pub aux_loss_weight: f64,
    /// Evaluation worker threads (1 keeps everything on one core).
    pub threads: usize,
}

impl TrainConfig {
    pub fn paper() -> TrainConfig {
        TrainConfig {
            learning_rate: 3e-5,
            batch_size: 16,
            epochs: 20,
            weight_decay: 0.0,
            dropout: 0.1,
            seed: 7,
            profile: Profile::Paper,
            freeze_encoders: false,
            aux_loss_weight: 0.0,
            threads: 1,
        }
    }

    pub fn desk() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 10,
            weight_decay: 0.0,
            dropout: 0.1,
            seed: 7,
            profile: Profile::Desk,
            freeze_encoders: false,
            aux_loss_weight: 0.0,
            threads: 1,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(format!("learning_rate {} must be finite and nonnegative", self.learning_rate));
        }
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        if self.epochs == 0 {
            return Err("epoch must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        if self.threads == 0 {
            return Err("threads must be positive".into());
        }
        if self.aux_loss_weight < 0.0 {
            return Err("aux_loss_weight must be nonnegative".into());
        }
        Ok(())
    }
}
