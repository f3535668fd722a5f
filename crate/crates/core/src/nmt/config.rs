use serde::{Deserialize, Serialize};

use crate::error::TrainError;

/// Architecture and training settings for an attentional encoder-decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmtConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub bidirectional: bool,
    pub residual: bool,
    /// Dropout between stacked layers and before the output projection.
    pub dropout: f64,
    pub epochs: usize,
    /// Initial SGD learning rate.
    pub lr: f64,
    /// Factor applied to the learning rate every epoch once dev loss has
    /// stopped improving.
    pub lr_decay: f64,
    /// Consecutive epochs without a new best dev loss before decay starts.
    pub decay_patience: usize,
    pub batch_size: usize,
    pub max_grad_norm: f64,
    pub init_range: f64,
    /// Longest sentence (either side) kept for training.
    pub max_len: usize,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub seed: u64,
}

impl Default for NmtConfig {
    fn default() -> Self {
        NmtConfig {
            embed_dim: 500,
            hidden_dim: 500,
            num_layers: 4,
            bidirectional: false,
            residual: false,
            dropout: 0.3,
            epochs: 20,
            lr: 1.0,
            lr_decay: 0.5,
            decay_patience: 1,
            batch_size: 32,
            max_grad_norm: 5.0,
            init_range: 0.1,
            max_len: 50,
            src_vocab_size: 50_000,
            tgt_vocab_size: 50_000,
            seed: 1,
        }
    }
}

impl NmtConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return bad("embed_dim and hidden_dim must be positive".into());
        }
        if self.num_layers == 0 {
            return bad("num_layers must be at least 1".into());
        }
        if self.residual && self.hidden_dim != self.embed_dim {
            return bad(format!(
                "residual connections need hidden_dim == embed_dim, got {} and {}",
                self.hidden_dim, self.embed_dim
            ));
        }
        if self.bidirectional && self.hidden_dim % 2 != 0 {
            return bad(format!(
                "bidirectional encoder needs an even hidden_dim, got {}",
                self.hidden_dim
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if !(self.lr > 0.0) {
            return Err(TrainError::LearningRate(self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay {} not in (0, 1]", self.lr_decay));
        }
        if self.decay_patience == 0 {
            return bad("decay_patience must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.max_len == 0 {
            return bad("max_len must be positive".into());
        }
        Ok(())
    }

    /// Width of one encoder direction.
    pub fn direction_dim(&self) -> usize {
        if self.bidirectional {
            self.hidden_dim / 2
        } else {
            self.hidden_dim
        }
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }
}
