//! Small encoder-decoder models for multi-label coding, trained from scratch
//! with hand-written gradients.
//!
//! An encoder maps a token sequence to hidden states `H` (`d_h x n`). The
//! decoder turns `H` into one logit per label, either by max-pooling or by
//! label-wise attention:
//!
//! * `LaCaml`: `A = softmax(W H)`, `V = H A^T`
//! * `LaLaat`: `Z = tanh(P H)`, `A = softmax(U Z)`, `V = H A^T`
//!
//! where the softmax runs over token positions for every label, and label
//! `l` reads out `w_l . V[:, l] + b_l`.

mod network;
mod optim;
mod params;
mod train;

use serde::{Deserialize, Serialize};

pub use network::{accumulate_gradients, backward, bce_loss, forward, forward_masked, ForwardTrace};
pub use optim::{adamw_update, lr_schedule, AdamW, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use params::{load_embeddings, DecoderParams, EncoderParams, GruParams, Parameters};
pub use train::{
    predict, predict_sequences, train, TrainConfig, TrainOutcome, TrainedModel, Vocabulary, PAD, UNK,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Encoder {
    /// Embeddings used directly as hidden states (`d_h = d_e`).
    Bag,
    /// Same-padded 1-d convolution followed by tanh.
    Conv { window: usize, d_h: usize },
    /// Bidirectional GRU; each direction has `d_h / 2` units.
    BiRnn { d_h: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decoder {
    MaxPool,
    LaCaml,
    LaLaat { d_p: usize },
}

/// Architecture choices independent of the data (vocabulary and label count).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub d_e: usize,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl Architecture {
    pub fn resolve(&self, vocab_size: usize, n_labels: usize) -> Result<ModelConfig> {
        let config = ModelConfig {
            vocab_size,
            d_e: self.d_e,
            encoder: self.encoder,
            decoder: self.decoder,
            n_labels,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_e: usize,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub n_labels: usize,
}

impl ModelConfig {
    pub fn d_h(&self) -> usize {
        match self.encoder {
            Encoder::Bag => self.d_e,
            Encoder::Conv { d_h, .. } | Encoder::BiRnn { d_h } => d_h,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::invalid(format!("{name} must be at least 1")))
            } else {
                Ok(())
            }
        };
        positive("vocab_size", self.vocab_size)?;
        positive("d_e", self.d_e)?;
        positive("n_labels", self.n_labels)?;
        match self.encoder {
            Encoder::Bag => {}
            Encoder::Conv { window, d_h } => {
                positive("window", window)?;
                positive("d_h", d_h)?;
            }
            Encoder::BiRnn { d_h } => {
                if d_h < 2 || d_h % 2 != 0 {
                    return Err(Error::invalid("birnn d_h must be even and at least 2"));
                }
            }
        }
        if let Decoder::LaLaat { d_p } = self.decoder {
            positive("d_p", d_p)?;
        }
        Ok(())
    }
}
