use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Reserved token ids shared by every task.
pub mod vocab {
    pub const PAD: u32 = 0;
    pub const SEP: u32 = 1;
    pub const EOS: u32 = 2;
    /// Placeholder for a soft token; its embedding is replaced.
    pub const IMG: u32 = 3;
}

/// A contiguous run of token ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolRange {
    pub start: u32,
    pub len: u32,
}

impl SymbolRange {
    pub const fn new(start: u32, len: u32) -> Self {
        Self { start, len }
    }

    pub fn end(&self) -> u32 {
        self.start + self.len
    }

    pub fn symbol(&self, index: usize) -> u32 {
        debug_assert!(index < self.len as usize);
        self.start + index as u32
    }

    pub fn index_of(&self, token: u32) -> Option<usize> {
        (token >= self.start && token < self.end()).then(|| (token - self.start) as usize)
    }

    pub fn contains(&self, token: u32) -> bool {
        self.index_of(token).is_some()
    }

    fn overlaps(&self, other: &SymbolRange) -> bool {
        self.start < other.end() && other.start < self.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Delimiters {
    pub sep: u32,
    pub eos: u32,
    pub placeholder: u32,
}

impl Default for Delimiters {
    fn default() -> Self {
        Self {
            sep: vocab::SEP,
            eos: vocab::EOS,
            placeholder: vocab::IMG,
        }
    }
}

/// The rule family an episode is drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskKind {
    /// `output[(i + id) mod n]` for input index `i`.
    TokenBijection,
    /// A fixed random dictionary from keys to values, chosen by task id.
    KeyValueLookup,
    /// Two classes per episode with fresh random labels; inputs are split
    /// into `n_classes` equal contiguous groups.
    TwoWayOneShotClass { n_classes: usize },
    /// Noisy "images" of `tokens_per_image` soft tokens around unit-norm
    /// class prototypes; class `c` is labelled by a task-specific permutation.
    SoftTokenClass {
        n_classes: usize,
        tokens_per_image: usize,
        noise_sigma: f64,
        embed_dim: usize,
        prototype_seed: u64,
    },
}

/// Everything needed to generate episodes of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub id: u32,
    pub kind: TaskKind,
    pub inputs: SymbolRange,
    pub outputs: SymbolRange,
    #[serde(default)]
    pub delimiters: Delimiters,
}

/// Default vocabulary partition for a 128-token model.
pub mod layout {
    use super::SymbolRange;

    pub const BIJECTION_IN: SymbolRange = SymbolRange::new(4, 24);
    pub const BIJECTION_OUT: SymbolRange = SymbolRange::new(28, 24);
    pub const LOOKUP_KEYS: SymbolRange = SymbolRange::new(52, 20);
    pub const LOOKUP_VALUES: SymbolRange = SymbolRange::new(72, 16);
    pub const TWO_WAY_ITEMS: SymbolRange = SymbolRange::new(88, 24);
    pub const TWO_WAY_LABELS: SymbolRange = SymbolRange::new(112, 8);
    pub const SOFT_LABELS: SymbolRange = SymbolRange::new(120, 8);
    pub const MIN_VOCAB: usize = 128;
}

impl TaskSpec {
    pub fn bijection(id: u32) -> Self {
        Self {
            id,
            kind: TaskKind::TokenBijection,
            inputs: layout::BIJECTION_IN,
            outputs: layout::BIJECTION_OUT,
            delimiters: Delimiters::default(),
        }
    }

    pub fn lookup(id: u32) -> Self {
        Self {
            id,
            kind: TaskKind::KeyValueLookup,
            inputs: layout::LOOKUP_KEYS,
            outputs: layout::LOOKUP_VALUES,
            delimiters: Delimiters::default(),
        }
    }

    pub fn two_way(id: u32) -> Self {
        Self {
            id,
            kind: TaskKind::TwoWayOneShotClass { n_classes: 6 },
            inputs: layout::TWO_WAY_ITEMS,
            outputs: layout::TWO_WAY_LABELS,
            delimiters: Delimiters::default(),
        }
    }

    pub fn soft_class(id: u32, embed_dim: usize) -> Self {
        Self {
            id,
            kind: TaskKind::SoftTokenClass {
                n_classes: 8,
                tokens_per_image: 4,
                noise_sigma: 0.1,
                embed_dim,
                prototype_seed: 0,
            },
            inputs: SymbolRange::new(vocab::IMG, 1),
            outputs: layout::SOFT_LABELS,
            delimiters: Delimiters::default(),
        }
    }

    /// Short name used in logs and CSV rows, e.g. `bijection-3`.
    pub fn label(&self) -> String {
        let kind = match self.kind {
            TaskKind::TokenBijection => "bijection",
            TaskKind::KeyValueLookup => "lookup",
            TaskKind::TwoWayOneShotClass { .. } => "two-way",
            TaskKind::SoftTokenClass { .. } => "soft-class",
        };
        format!("{kind}-{}", self.id)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.delimiters;
        let specials = [d.sep, d.eos, d.placeholder];
        let in_sym = |t: u32| self.inputs.contains(t) || self.outputs.contains(t);
        if matches!(self.kind, TaskKind::SoftTokenClass { .. }) {
            if self.inputs != SymbolRange::new(d.placeholder, 1) {
                return Err(Error::Task("soft-token tasks take the placeholder as their only input symbol".into()));
            }
            if self.outputs.contains(d.sep) || self.outputs.contains(d.eos) || self.outputs.contains(d.placeholder) {
                return Err(Error::Task("output symbols overlap delimiters".into()));
            }
        } else if self.inputs.overlaps(&self.outputs) || specials.iter().any(|&t| in_sym(t)) {
            return Err(Error::Task(format!("{}: symbol sets are not disjoint", self.label())));
        }
        if d.sep == d.eos || d.sep == d.placeholder || d.eos == d.placeholder {
            return Err(Error::Task("delimiters must be distinct".into()));
        }
        match self.kind {
            TaskKind::TokenBijection if self.inputs.len != self.outputs.len => {
                Err(Error::Task("a bijection needs as many outputs as inputs".into()))
            }
            TaskKind::TwoWayOneShotClass { n_classes } => {
                if n_classes < 2 || !(self.inputs.len as usize).is_multiple_of(n_classes) || self.inputs.len as usize / n_classes < 2 {
                    return Err(Error::Task(format!(
                        "{} inputs cannot form {n_classes} classes of at least 2 items",
                        self.inputs.len
                    )));
                }
                if self.outputs.len < 2 {
                    return Err(Error::Task("two-way tasks need at least 2 labels".into()));
                }
                Ok(())
            }
            TaskKind::SoftTokenClass {
                n_classes,
                tokens_per_image,
                noise_sigma,
                embed_dim,
                ..
            } => {
                if n_classes == 0 || n_classes > self.outputs.len as usize {
                    return Err(Error::Task(format!(
                        "{n_classes} classes need at least that many labels, have {}",
                        self.outputs.len
                    )));
                }
                if tokens_per_image == 0 || embed_dim == 0 || !(noise_sigma >= 0.0) {
                    return Err(Error::Task("soft-token task parameters out of range".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Bijection rule: output index for input index `i`.
    pub(crate) fn bijection_map(&self, i: usize) -> usize {
        let n = self.outputs.len as usize;
        (i + self.id as usize) % n
    }

    /// Lookup dictionary: value index for every key index.
    pub(crate) fn lookup_table(&self) -> Vec<usize> {
        let mut r = rng::stream(self.id as u64, "lookup-table", 0);
        (0..self.inputs.len).map(|_| r.random_range(0..self.outputs.len as usize)).collect()
    }

    /// Soft-token label permutation: label index for every class.
    pub(crate) fn class_labels(&self, n_classes: usize) -> Vec<usize> {
        let mut labels: Vec<usize> = (0..self.outputs.len as usize).collect();
        labels.shuffle(&mut rng::stream(self.id as u64, "class-labels", 0));
        labels.truncate(n_classes);
        labels
    }

    /// Unit-norm prototype for `(class, slot)`.
    pub fn prototype(&self, class: usize, slot: usize) -> Vec<f32> {
        let TaskKind::SoftTokenClass {
            embed_dim,
            prototype_seed,
            tokens_per_image,
            ..
        } = self.kind
        else {
            return Vec::new();
        };
        let mut r = rng::stream(prototype_seed, "prototype", (class * tokens_per_image + slot) as u64);
        let v: Vec<f64> = (0..embed_dim).map(|_| StandardNormal.sample(&mut r)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| (x / norm) as f32).collect()
    }

    /// Smallest shot count the task can form an answerable episode with.
    pub fn min_shots(&self) -> usize {
        match self.kind {
            TaskKind::TwoWayOneShotClass { .. } => 2,
            _ => 0,
        }
    }
}
