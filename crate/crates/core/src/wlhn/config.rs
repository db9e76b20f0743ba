use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of a WLHN (or plain GIN) model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width `d` of every hidden representation.
    pub dim: usize,
    /// Number of GIN layers `T`.
    pub layers: usize,
    /// Hyperbolic length of every parent-child edge.
    pub tau: f64,
    pub epsilon_trainable: bool,
    /// `[linear → batch norm → ReLU]` blocks per GIN layer.
    pub mlp_depth: usize,
    pub dropout: f64,
    /// Hidden widths of the prediction head.
    pub head: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            layers: 2,
            tau: 1.0,
            epsilon_trainable: true,
            mlp_depth: 2,
            dropout: 0.0,
            head: vec![128, 64],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.layers == 0 {
            return fail("layers must be at least 1".into());
        }
        if self.dim < 2 {
            return fail(format!("dim must be at least 2, got {}", self.dim));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail(format!("tau must be positive and finite, got {}", self.tau));
        }
        if self.mlp_depth == 0 {
            return fail("mlp_depth must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.head.contains(&0) {
            return fail("head widths must be positive".into());
        }
        Ok(())
    }

    /// Departures from the usual search grid (dims 32/64/128, 1–5 layers,
    /// dropout 0 or 0.5). Informational only.
    pub fn grid_notes(&self) -> Vec<String> {
        let mut notes = Vec::new();
        if ![32, 64, 128].contains(&self.dim) {
            notes.push(format!("dim {} is outside {{32, 64, 128}}", self.dim));
        }
        if !(1..=5).contains(&self.layers) {
            notes.push(format!("layers {} is outside 1..=5", self.layers));
        }
        if self.dropout != 0.0 && self.dropout != 0.5 {
            notes.push(format!("dropout {} is outside {{0, 0.5}}", self.dropout));
        }
        notes
    }
}

/// Which representation feeds the readout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    /// Log-mapped hyperbolic embeddings of the color hierarchy.
    #[default]
    Wlhn,
    /// Final Euclidean GIN representations (mean-pooled for graph tasks).
    Gin,
}

impl std::str::FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wlhn" => Ok(Arm::Wlhn),
            "gin" => Ok(Arm::Gin),
            other => Err(Error::Config(format!("unknown arm {other:?}"))),
        }
    }
}
