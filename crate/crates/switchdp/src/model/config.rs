use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Load-balancing loss mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LbMode {
    /// Batch-coupled auxiliary loss added to the training objective.
    Batch,
    /// No auxiliary loss (required in DP mode).
    Off,
}

/// Architecture and routing hyperparameters of the switch classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchConfig {
    /// Number of experts per switch layer (N).
    pub num_experts: usize,
    /// Expert capacity factor; capacity = ceil(factor * B * T / N).
    pub capacity_factor: f64,
    /// Load-balancing loss coefficient.
    pub alpha: f64,
    pub lb_mode: LbMode,
    /// Zero gating gradients and exclude gating from updates.
    pub freeze_gating: bool,
    /// Hidden width (H).
    pub hidden: usize,
    /// Expert feed-forward width (F).
    pub ffn_dim: usize,
    /// Number of switch blocks (L); 0 gives embedding → pool → classifier.
    pub num_layers: usize,
    /// Vocabulary size (V).
    pub vocab: usize,
    /// Output classes (K).
    pub classes: usize,
    /// Sequence length (T).
    pub max_tokens: usize,
}

impl SwitchConfig {
    /// Per-expert slot capacity for a batch of `b` samples, always ≥ 1.
    pub fn capacity(&self, b: usize) -> usize {
        let raw = self.capacity_factor * (b * self.max_tokens) as f64 / self.num_experts as f64;
        (raw.ceil() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_experts == 0
            || self.hidden == 0
            || self.ffn_dim == 0
            || self.vocab == 0
            || self.classes == 0
            || self.max_tokens == 0
        {
            return Err(Error::Config(
                "num_experts, hidden, ffn_dim, vocab, classes, max_tokens must be positive".into(),
            ));
        }
        if self.capacity_factor < 1.0 {
            return Err(Error::Config(format!(
                "capacity_factor must be >= 1, got {}",
                self.capacity_factor
            )));
        }
        if self.alpha < 0.0 {
            return Err(Error::Config(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}
