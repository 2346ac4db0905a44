use std::sync::OnceLock;

use sha2::{Digest, Sha256};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Scalar};

/// Parameters of one transformer block. Vectors are stored as `1 x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub ln1_g: Matrix<T>,
    pub ln1_b: Matrix<T>,
    /// Fused `[Q | K | V]` projection, `d x 3d`; head `h` owns columns
    /// `h*dh..(h+1)*dh` within each third.
    pub w_qkv: Matrix<T>,
    pub b_qkv: Matrix<T>,
    /// Output projection, `d x d`; rows `h*dh..(h+1)*dh` read head `h`.
    pub w_out: Matrix<T>,
    pub b_out: Matrix<T>,
    pub ln2_g: Matrix<T>,
    pub ln2_b: Matrix<T>,
    pub w_up: Matrix<T>,
    pub b_up: Matrix<T>,
    pub w_down: Matrix<T>,
    pub b_down: Matrix<T>,
}

/// All parameter tensors of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub tok_emb: Matrix<T>,
    pub pos_emb: Matrix<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub lnf_g: Matrix<T>,
    pub lnf_b: Matrix<T>,
    pub unembed: Matrix<T>,
}

impl<T: Scalar> LayerWeights<T> {
    fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.embed_dim;
        let m = cfg.mlp_hidden;
        Self {
            ln1_g: Matrix::filled(1, d, T::one()),
            ln1_b: Matrix::zeros(1, d),
            w_qkv: Matrix::zeros(d, 3 * d),
            b_qkv: Matrix::zeros(1, 3 * d),
            w_out: Matrix::zeros(d, d),
            b_out: Matrix::zeros(1, d),
            ln2_g: Matrix::filled(1, d, T::one()),
            ln2_b: Matrix::zeros(1, d),
            w_up: Matrix::zeros(d, m),
            b_up: Matrix::zeros(1, m),
            w_down: Matrix::zeros(m, d),
            b_down: Matrix::zeros(1, d),
        }
    }

    fn tensors(&self) -> [&Matrix<T>; 12] {
        [
            &self.ln1_g,
            &self.ln1_b,
            &self.w_qkv,
            &self.b_qkv,
            &self.w_out,
            &self.b_out,
            &self.ln2_g,
            &self.ln2_b,
            &self.w_up,
            &self.b_up,
            &self.w_down,
            &self.b_down,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Matrix<T>; 12] {
        [
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.w_qkv,
            &mut self.b_qkv,
            &mut self.w_out,
            &mut self.b_out,
            &mut self.ln2_g,
            &mut self.ln2_b,
            &mut self.w_up,
            &mut self.b_up,
            &mut self.w_down,
            &mut self.b_down,
        ]
    }
}

pub(crate) const LAYER_TENSOR_NAMES: [&str; 12] = [
    "ln1_g", "ln1_b", "w_qkv", "b_qkv", "w_out", "b_out", "ln2_g", "ln2_b", "w_up", "b_up", "w_down", "b_down",
];

impl<T: Scalar> Weights<T> {
    /// All-zero weights with unit layernorm gains.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.embed_dim;
        Self {
            tok_emb: Matrix::zeros(cfg.vocab_size, d),
            pos_emb: Matrix::zeros(cfg.max_context, d),
            layers: (0..cfg.n_layers).map(|_| LayerWeights::zeros(cfg)).collect(),
            lnf_g: Matrix::filled(1, d, T::one()),
            lnf_b: Matrix::zeros(1, d),
            unembed: Matrix::zeros(d, cfg.vocab_size),
        }
    }

    /// Tensors in file order: token embedding, positional embedding, each
    /// layer's twelve tensors, final layernorm gain and bias, unembedding.
    pub fn tensors(&self) -> Vec<&Matrix<T>> {
        let mut out = vec![&self.tok_emb, &self.pos_emb];
        for l in &self.layers {
            out.extend(l.tensors());
        }
        out.extend([&self.lnf_g, &self.lnf_b, &self.unembed]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        out.extend([&mut self.lnf_g, &mut self.lnf_b, &mut self.unembed]);
        out
    }

    /// Names matching [`Weights::tensors`].
    pub fn tensor_names(n_layers: usize) -> Vec<String> {
        let mut out = vec!["tok_emb".to_string(), "pos_emb".to_string()];
        for l in 0..n_layers {
            out.extend(LAYER_TENSOR_NAMES.iter().map(|n| format!("layers.{l}.{n}")));
        }
        out.extend(["lnf_g", "lnf_b", "unembed"].map(String::from));
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Weights<U> {
        Weights {
            tok_emb: self.tok_emb.cast(),
            pos_emb: self.pos_emb.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    ln1_g: l.ln1_g.cast(),
                    ln1_b: l.ln1_b.cast(),
                    w_qkv: l.w_qkv.cast(),
                    b_qkv: l.b_qkv.cast(),
                    w_out: l.w_out.cast(),
                    b_out: l.b_out.cast(),
                    ln2_g: l.ln2_g.cast(),
                    ln2_b: l.ln2_b.cast(),
                    w_up: l.w_up.cast(),
                    b_up: l.b_up.cast(),
                    w_down: l.w_down.cast(),
                    b_down: l.b_down.cast(),
                })
                .collect(),
            lnf_g: self.lnf_g.cast(),
            lnf_b: self.lnf_b.cast(),
            unembed: self.unembed.cast(),
        }
    }
}

/// A configured transformer with immutable weights.
#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    weights: Weights<T>,
    fingerprint: OnceLock<String>,
}

impl<T: Scalar> PartialEq for Model<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.weights == other.weights
    }
}

impl<T: Scalar> Model<T> {
    /// Validates the config and that every tensor has the shape it implies.
    pub fn new(config: ModelConfig, weights: Weights<T>) -> Result<Self> {
        config.validate()?;
        if weights.layers.len() != config.n_layers {
            return Err(Error::Config(format!(
                "config declares {} layers, weights hold {}",
                config.n_layers,
                weights.layers.len()
            )));
        }
        let want = Weights::<T>::zeros(&config);
        let names = Weights::<T>::tensor_names(config.n_layers);
        for ((have, want), name) in weights.tensors().iter().zip(want.tensors()).zip(&names) {
            if have.shape() != want.shape() {
                return Err(Error::Config(format!(
                    "tensor {name} has shape {:?}, config implies {:?}",
                    have.shape(),
                    want.shape()
                )));
            }
        }
        Ok(Self {
            config,
            weights,
            fingerprint: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &Weights<T> {
        &self.weights
    }

    pub fn into_weights(self) -> Weights<T> {
        self.weights
    }

    /// Content hash over the config and the 32-bit weights; identical for
    /// the `f32` and `f64` views of the same checkpoint.
    pub fn fingerprint(&self) -> &str {
        self.fingerprint.get_or_init(|| {
            let mut h = Sha256::new();
            for v in super::io::config_words(&self.config) {
                h.update(v.to_le_bytes());
            }
            for t in self.weights.tensors() {
                for &x in t.as_slice() {
                    h.update((x.f64() as f32).to_le_bytes());
                }
            }
            let digest = h.finalize();
            digest[..16].iter().map(|b| format!("{b:02x}")).collect()
        })
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config,
            weights: self.weights.cast(),
            fingerprint: OnceLock::new(),
        }
    }
}
