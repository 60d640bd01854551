use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
}

/// Where layer normalization sits in an encoder layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormPlacement {
    /// Normalize sublayer inputs; one extra norm at the stack output.
    Pre,
    /// Normalize after each residual sum.
    Post,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HitterConfig {
    pub d_model: usize,
    pub ffn_dim: usize,
    pub heads: usize,
    pub entity_layers: usize,
    pub context_layers: usize,
    pub dropout: f64,
    pub embedding_dropout: f64,
    pub label_smoothing: f64,
    pub context_enabled: bool,
    pub mep_aux_enabled: bool,
    pub activation: Activation,
    pub norm: NormPlacement,
    pub layer_norm_eps: f64,
    pub init_std: f64,
    /// Learned dense + norm in front of the tied classifier of the recovery head.
    pub mep_transform: bool,
}

impl Default for HitterConfig {
    fn default() -> Self {
        Self {
            d_model: 320,
            ffn_dim: 1280,
            heads: 8,
            entity_layers: 3,
            context_layers: 6,
            dropout: 0.1,
            embedding_dropout: 0.6,
            label_smoothing: 0.1,
            context_enabled: true,
            mep_aux_enabled: true,
            activation: Activation::Gelu,
            norm: NormPlacement::Pre,
            layer_norm_eps: 1e-12,
            init_std: 0.02,
            mep_transform: false,
        }
    }
}

impl HitterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(CoreError::Config(format!(
                "d_model ({}) must be a positive multiple of heads ({})",
                self.d_model, self.heads
            )));
        }
        if self.ffn_dim == 0 {
            return Err(CoreError::Config("ffn_dim must be positive".into()));
        }
        for (name, p) in [
            ("dropout", self.dropout),
            ("embedding_dropout", self.embedding_dropout),
            ("label_smoothing", self.label_smoothing),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(CoreError::Config(format!("{name} must be in [0, 1), got {p}")));
            }
        }
        if self.layer_norm_eps <= 0.0 || self.init_std <= 0.0 {
            return Err(CoreError::Config("layer_norm_eps and init_std must be positive".into()));
        }
        Ok(())
    }
}
