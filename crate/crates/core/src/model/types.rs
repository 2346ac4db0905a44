use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Scalar};

/// One attention head, addressed by `(layer, head)`. Ordered layer-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "[usize; 2]", from = "[usize; 2]")]
pub struct HeadLocation {
    pub layer: usize,
    pub head: usize,
}

impl HeadLocation {
    pub fn new(layer: usize, head: usize) -> Self {
        Self { layer, head }
    }

    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        if self.layer >= cfg.n_layers || self.head >= cfg.n_heads {
            return Err(Error::Shape(format!(
                "head location ({}, {}) outside {}x{} model",
                self.layer, self.head, cfg.n_layers, cfg.n_heads
            )));
        }
        Ok(())
    }

    /// Every location of a model, in canonical order.
    pub fn all(cfg: &ModelConfig) -> impl Iterator<Item = HeadLocation> {
        let heads = cfg.n_heads;
        (0..cfg.n_layers).flat_map(move |l| (0..heads).map(move |h| HeadLocation::new(l, h)))
    }

    /// Index in the flattened `layer * n_heads + head` order.
    pub fn flat(&self, n_heads: usize) -> usize {
        self.layer * n_heads + self.head
    }
}

impl From<HeadLocation> for [usize; 2] {
    fn from(l: HeadLocation) -> Self {
        [l.layer, l.head]
    }
}

impl From<[usize; 2]> for HeadLocation {
    fn from([layer, head]: [usize; 2]) -> Self {
        Self { layer, head }
    }
}

/// A run of continuous embedding vectors that replace the token embeddings
/// at positions `position..position + vectors.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftSegment {
    pub position: usize,
    pub vectors: Vec<Vec<f32>>,
}

/// Token ids plus optional soft-token segments.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelInput {
    pub tokens: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub soft: Vec<SoftSegment>,
}

impl ModelInput {
    pub fn from_tokens(tokens: Vec<u32>) -> Self {
        Self {
            tokens,
            soft: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Appends `tokens` without touching the soft segments.
    pub fn extended(&self, tokens: &[u32]) -> Self {
        let mut out = self.clone();
        out.tokens.extend_from_slice(tokens);
        out
    }

    /// Checks vocabulary range, soft-token dimensions and segment placement.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Shape("model input is empty".into()));
        }
        if self.tokens.len() > cfg.max_context {
            return Err(Error::ContextOverflow {
                required: self.tokens.len(),
                available: cfg.max_context,
            });
        }
        if let Some(&t) = self.tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::Shape(format!("token {t} outside vocabulary of {}", cfg.vocab_size)));
        }
        let mut taken = vec![false; self.tokens.len()];
        for seg in &self.soft {
            let end = seg.position + seg.vectors.len();
            if end > self.tokens.len() {
                return Err(Error::Shape(format!(
                    "soft segment {}..{end} exceeds input length {}",
                    seg.position,
                    self.tokens.len()
                )));
            }
            for (i, v) in seg.vectors.iter().enumerate() {
                if v.len() != cfg.embed_dim {
                    return Err(Error::Shape(format!(
                        "soft token has dimension {}, model expects {}",
                        v.len(),
                        cfg.embed_dim
                    )));
                }
                let p = seg.position + i;
                if taken[p] {
                    return Err(Error::Shape(format!("soft segments overlap at position {p}")));
                }
                taken[p] = true;
            }
        }
        Ok(())
    }
}

/// Which positions a patch governs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatchScope {
    /// Only the final prompt position.
    LastPromptToken,
    /// The final prompt position and every position decoded after it.
    #[default]
    EveryStep,
    /// Every position, prompt included. Used for structural ablations.
    AllPositions,
}

impl PatchScope {
    #[inline]
    pub(crate) fn governs(self, position: usize, prompt_last: usize) -> bool {
        match self {
            PatchScope::LastPromptToken => position == prompt_last,
            PatchScope::EveryStep => position >= prompt_last,
            PatchScope::AllPositions => true,
        }
    }
}

/// Replacement vectors for selected head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet<T> {
    pub entries: BTreeMap<HeadLocation, Vec<T>>,
    pub scope: PatchScope,
}

impl<T: Scalar> PatchSet<T> {
    pub fn empty(scope: PatchScope) -> Self {
        Self {
            entries: BTreeMap::new(),
            scope,
        }
    }

    pub fn new(entries: BTreeMap<HeadLocation, Vec<T>>, scope: PatchScope) -> Self {
        Self { entries, scope }
    }

    pub fn insert(&mut self, loc: HeadLocation, v: Vec<T>) {
        self.entries.insert(loc, v);
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        for (loc, v) in &self.entries {
            loc.check(cfg)?;
            if v.len() != cfg.head_dim() {
                return Err(Error::Shape(format!(
                    "patch for ({}, {}) has length {}, head dimension is {}",
                    loc.layer,
                    loc.head,
                    v.len(),
                    cfg.head_dim()
                )));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::NumericDomain("patch vector contains NaN or Inf".into()));
            }
        }
        Ok(())
    }

    /// Dense per-layer lookup used by the forward pass.
    pub(crate) fn by_layer(&self, cfg: &ModelConfig) -> Vec<Vec<Option<&[T]>>> {
        let mut out = vec![vec![None; cfg.n_heads]; cfg.n_layers];
        for (loc, v) in &self.entries {
            out[loc.layer][loc.head] = Some(v.as_slice());
        }
        out
    }
}

/// Which head outputs to record at the final input position.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Capture {
    #[default]
    None,
    All,
    Set(BTreeSet<HeadLocation>),
}

impl Capture {
    pub(crate) fn wants(&self, loc: &HeadLocation) -> bool {
        match self {
            Capture::None => false,
            Capture::All => true,
            Capture::Set(s) => s.contains(loc),
        }
    }

    pub(crate) fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if let Capture::Set(s) = self {
            for loc in s {
                loc.check(cfg)?;
            }
        }
        Ok(())
    }
}

/// Logits for every input position and the requested head captures.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult<T> {
    pub logits: Matrix<T>,
    pub captures: BTreeMap<HeadLocation, Vec<T>>,
}

impl<T: Scalar> ForwardResult<T> {
    pub fn last_logits(&self) -> &[T] {
        self.logits.row(self.logits.rows() - 1)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
