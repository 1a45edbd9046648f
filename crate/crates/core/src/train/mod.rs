//! Optimization: batched Adam followed by guarded full-batch L-BFGS,
//! regularization strategies and multi-fidelity hierarchies.

mod adam;
mod hierarchy;
mod lbfgs;
mod record;
mod regularize;
mod single;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{adam_stage, Adam, LrSchedule};
pub use hierarchy::{train_hierarchy, HierarchyConfig, HierarchyOutcome, LevelConfig};
pub use lbfgs::{lbfgs_stage, LbfgsConfig, LbfgsOutcome, LbfgsStep};
pub use record::{HistoryRow, RunRecord, RunStatus, Stage};
pub use regularize::{anneal_update, gradual_fraction, Regularizer, SelfAttention};
pub use single::{train_level, LevelSetup};

use crate::loss::{CollocationConfig, LossError};
use crate::nn::{InitScheme, NnError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at {stage} step {step}")]
    NonFiniteLoss { stage: &'static str, step: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub adam_steps: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Steps over which the rate decays geometrically; constant afterwards.
    pub lr_decay_steps: usize,
    pub batches_per_epoch: usize,
    pub lbfgs_steps: usize,
    pub lbfgs_warm_start: usize,
    pub history_size: usize,
    pub regularizer: Regularizer,
    /// Initial time fraction of the gradual schedules.
    pub gradual_start: f64,
    /// Moving-average factor of gradient annealing.
    pub annealing_momentum: f64,
    pub init: InitScheme,
    pub collocation: CollocationConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            adam_steps: 3000,
            lr_start: 1e-3,
            lr_end: 1e-4,
            lr_decay_steps: 1500,
            batches_per_epoch: 10,
            lbfgs_steps: 10_000,
            lbfgs_warm_start: 50,
            history_size: 50,
            regularizer: Regularizer::None,
            gradual_start: 0.1,
            annealing_momentum: 0.9,
            init: InitScheme::GlorotNormal,
            collocation: CollocationConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.batches_per_epoch == 0 || self.history_size == 0 {
            return bad("batches_per_epoch and history_size must be positive".into());
        }
        if self.collocation.n_interior == 0 || self.collocation.n_boundary < 2 {
            return bad("collocation counts must be positive".into());
        }
        if self.collocation.n_interior < self.batches_per_epoch {
            return bad(format!(
                "{} interior points cannot fill {} batches",
                self.collocation.n_interior, self.batches_per_epoch
            ));
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0 && self.lr_end <= self.lr_start) {
            return bad(format!(
                "need 0 < lr_end <= lr_start, got {} and {}",
                self.lr_end, self.lr_start
            ));
        }
        if !(self.gradual_start > 0.0 && self.gradual_start <= 1.0) {
            return bad(format!("gradual_start must be in (0, 1], got {}", self.gradual_start));
        }
        if !(0.0..1.0).contains(&self.annealing_momentum) {
            return bad(format!(
                "annealing_momentum must be in [0, 1), got {}",
                self.annealing_momentum
            ));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            start: self.lr_start,
            end: self.lr_end,
            decay_steps: self.lr_decay_steps,
        }
    }

    pub fn epochs(&self) -> usize {
        self.adam_steps.div_ceil(self.batches_per_epoch)
    }

    /// Same settings with both stages twice as long.
    pub fn doubled(&self) -> Self {
        Self {
            adam_steps: 2 * self.adam_steps,
            lbfgs_steps: 2 * self.lbfgs_steps,
            ..*self
        }
    }
}

/// Stable 64-bit seed mixing (splitmix64).
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
