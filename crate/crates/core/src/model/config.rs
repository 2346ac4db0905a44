use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    GeluTanh,
}

impl Activation {
    pub(crate) fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::GeluTanh => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::GeluTanh),
            other => Err(Error::Config(format!("unknown activation code {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionalEncoding {
    LearnedAbsolute,
}

/// Shape of the miniature decoder-only transformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub embed_dim: usize,
    pub vocab_size: usize,
    pub max_context: usize,
    pub mlp_hidden: usize,
    pub activation: Activation,
    pub positional: PositionalEncoding,
}

impl ModelConfig {
    /// Config with the usual `4d` MLP and GELU.
    pub fn new(n_layers: usize, n_heads: usize, embed_dim: usize, vocab_size: usize, max_context: usize) -> Self {
        Self {
            n_layers,
            n_heads,
            embed_dim,
            vocab_size,
            max_context,
            mlp_hidden: 4 * embed_dim,
            activation: Activation::GeluTanh,
            positional: PositionalEncoding::LearnedAbsolute,
        }
    }

    /// The configuration of the reference checkpoint.
    pub fn reference() -> Self {
        Self::new(4, 4, 64, 128, 64)
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn n_locations(&self) -> usize {
        self.n_layers * self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("embed_dim", self.embed_dim),
            ("vocab_size", self.vocab_size),
            ("max_context", self.max_context),
            ("mlp_hidden", self.mlp_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.embed_dim.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        Ok(())
    }
}
