use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnkit::AdamConfig;
use crate::scenegen::AugmentConfig;

/// Supervised training of the detector on labeled (or pseudo-labeled) scenes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Source-mode augmentation; `None` trains on the scenes as given.
    pub augment: Option<AugmentConfig>,
    pub student_dropout: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            adam: AdamConfig::default(),
            augment: Some(AugmentConfig::default()),
            student_dropout: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        self.adam.validate()
    }
}

/// Pseudo-label rounds and the uncertainty-aware mean teacher.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptConfig {
    /// Confidence threshold per round; the last entry is reused.
    pub delta_schedule: Vec<f64>,
    /// Number of retraining rounds J.
    pub iterations: usize,
    /// Monte-Carlo dropout passes T of the teacher.
    pub mc_passes: usize,
    /// EMA keep ratio.
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Weight ROI losses by the teacher's inverse variance; off gives the
    /// plain mean teacher.
    pub uncertainty: bool,
    /// Transfer student weights once per epoch instead of once per batch.
    pub per_epoch_ema: bool,
    /// Apply the uncertainty weight to the teacher term as well.
    pub weight_teacher_term: bool,
    pub student_dropout: bool,
    /// Measure teacher variance on probabilities instead of logits.
    pub variance_over_probs: bool,
    /// Keep the direction loss during pseudo-label training.
    pub dir_loss: bool,
    /// Report the teacher rather than the student as the adapted model.
    pub evaluate_teacher: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            delta_schedule: vec![0.1, 0.6, 0.8],
            iterations: 3,
            mc_passes: 15,
            alpha: 0.999,
            epochs: 50,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 0,
            uncertainty: true,
            per_epoch_ema: false,
            weight_teacher_term: true,
            student_dropout: true,
            variance_over_probs: false,
            dir_loss: true,
            evaluate_teacher: true,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta_schedule.is_empty() {
            return Err(Error::config("delta_schedule needs at least one threshold"));
        }
        if let Some(d) = self.delta_schedule.iter().find(|d| !(**d > 0.0 && **d < 1.0)) {
            return Err(Error::config(format!("threshold {d} outside (0, 1)")));
        }
        if self.mc_passes < 2 {
            return Err(Error::config("mc_passes must be at least 2 for a sample variance"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        self.adam.validate()
    }

    /// Threshold used in round `j` (round 0 labels come from the source model).
    pub fn delta(&self, j: usize) -> f64 {
        self.delta_schedule[j.min(self.delta_schedule.len() - 1)]
    }

    /// Training settings of one pseudo-label round (no augmentation).
    pub fn round_training(&self, round: usize) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: self.adam,
            augment: None,
            student_dropout: self.student_dropout,
            seed: crate::nnkit::mix64(self.seed ^ (0x726f_756e_6400 + round as u64)),
        }
    }
}
