use serde::{Deserialize, Serialize};

use crate::error::{HydraError, Result};

/// Encoder dimensions. `d_k = d_model / n_heads`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_body_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 512,
            d_model: 64,
            n_heads: 4,
            n_body_layers: 2,
            d_ff: 128,
            max_len: 64,
        }
    }
}

impl ModelConfig {
    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_body_layers", self.n_body_layers),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(HydraError::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(HydraError::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model < 2 {
            return Err(HydraError::Config("d_model must be at least 2".into()));
        }
        if self.max_len < 2 {
            return Err(HydraError::Config("max_len must be at least 2".into()));
        }
        if self.vocab_size < 3 {
            return Err(HydraError::Config("vocab_size must cover the 3 reserved ids".into()));
        }
        Ok(())
    }

    /// Scalar count of one encoder layer (attention, feed-forward, two norms).
    pub fn layer_scalars(&self) -> usize {
        let (d, f) = (self.d_model, self.d_ff);
        4 * (d * d + d) + (f * d + f) + (d * f + d) + 4 * d
    }

    /// Scalar count of the fused query and key projections of one layer.
    pub fn qk_scalars(&self) -> usize {
        2 * (self.d_model * self.d_model + self.d_model)
    }

    pub fn embedding_scalars(&self) -> usize {
        (self.vocab_size + self.max_len) * self.d_model
    }
}
