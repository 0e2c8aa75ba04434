use serde::{Deserialize, Serialize};

use crate::autodiff::InitScheme;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Width of the per-point linear projection; 0 feeds the raw scalar.
    pub d_proj: usize,
    pub d_hidden: usize,
    /// Points per beat.
    pub beat_len: usize,
    /// Points per slice; a whole number of beats.
    pub slice_len: usize,
    pub n_classes: usize,
    pub dropout_rate: f64,
    /// Weight of the slice classification loss.
    pub w_d: f64,
    /// Weight of the per-point localization loss.
    pub w_l: f64,
    /// Feed `[h_t ∥ s]` instead of `h_t` to the point head.
    pub concat_slice_features: bool,
    pub init_scheme: InitScheme,
    /// Attention score dimension; `None` means `2 * d_hidden`.
    pub attention_dim: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_proj: 64,
            d_hidden: 128,
            beat_len: 150,
            slice_len: 1500,
            n_classes: 3,
            dropout_rate: 0.5,
            w_d: 1.0,
            w_l: 40.0,
            concat_slice_features: false,
            init_scheme: InitScheme::Glorot,
            attention_dim: None,
        }
    }
}

impl ModelConfig {
    /// Small network for 40 Hz synthetic corpora: 30-point beats, 10-beat slices.
    pub fn desk() -> Self {
        Self {
            d_proj: 8,
            d_hidden: 16,
            beat_len: 30,
            slice_len: 300,
            ..Self::default()
        }
    }

    pub fn beats_per_slice(&self) -> usize {
        self.slice_len / self.beat_len
    }

    pub fn feature_dim(&self) -> usize {
        2 * self.d_hidden
    }

    pub fn attn_dim(&self) -> usize {
        self.attention_dim.unwrap_or(2 * self.d_hidden)
    }

    /// Per-point input width of the point-level recurrence.
    pub fn point_input_dim(&self) -> usize {
        self.d_proj.max(1)
    }

    pub fn head2_input_dim(&self) -> usize {
        if self.concat_slice_features {
            4 * self.d_hidden
        } else {
            2 * self.d_hidden
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(format!("model config: {m}")));
        if self.beat_len == 0 || self.slice_len == 0 || !self.slice_len.is_multiple_of(self.beat_len) {
            return bad(format!(
                "slice length {} must be a positive multiple of beat length {}",
                self.slice_len, self.beat_len
            ));
        }
        if self.d_hidden == 0 || self.attn_dim() == 0 {
            return bad("hidden and attention sizes must be positive".into());
        }
        if self.n_classes != 3 {
            return bad(format!("expected 3 classes, got {}", self.n_classes));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.w_d > 0.0 && self.w_l > 0.0) {
            return bad("loss weights must be positive".into());
        }
        Ok(())
    }
}
