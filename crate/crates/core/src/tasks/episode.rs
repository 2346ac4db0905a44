use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// One side of a shot or a query: tokens, plus soft vectors when the item
/// is an "image" (then every token is the placeholder).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Item {
    pub tokens: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub soft: Vec<Vec<f32>>,
}

impl Item {
    pub fn token(t: u32) -> Self {
        Self {
            tokens: vec![t],
            soft: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shot {
    pub input: Item,
    pub output: Vec<u32>,
}

/// An in-context instance: shots, a query and the gold response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EpisodeRecord", into = "EpisodeRecord")]
pub struct Episode {
    pub task: String,
    pub seed: u64,
    pub shots: Vec<Shot>,
    pub query: Item,
    pub gold: Vec<u32>,
}

/// JSONL line layout.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeRecord {
    task: String,
    seed: u64,
    n_shots: usize,
    shots: Vec<Shot>,
    query: Item,
    gold: Vec<u32>,
}

impl TryFrom<EpisodeRecord> for Episode {
    type Error = String;

    fn try_from(r: EpisodeRecord) -> std::result::Result<Self, String> {
        if r.n_shots != r.shots.len() {
            return Err(format!("n_shots is {} but {} shots are listed", r.n_shots, r.shots.len()));
        }
        Ok(Episode {
            task: r.task,
            seed: r.seed,
            shots: r.shots,
            query: r.query,
            gold: r.gold,
        })
    }
}

impl From<Episode> for EpisodeRecord {
    fn from(e: Episode) -> Self {
        EpisodeRecord {
            task: e.task,
            seed: e.seed,
            n_shots: e.shots.len(),
            shots: e.shots,
            query: e.query,
            gold: e.gold,
        }
    }
}

impl Episode {
    pub fn n_shots(&self) -> usize {
        self.shots.len()
    }

    /// The same query and gold with only the first `k` shots.
    pub fn truncated(&self, k: usize) -> Episode {
        let mut e = self.clone();
        e.shots.truncate(k);
        e
    }
}

fn image(spec: &TaskSpec, class: usize, r: &mut Rng) -> Item {
    let TaskKind::SoftTokenClass {
        tokens_per_image,
        noise_sigma,
        ..
    } = spec.kind
    else {
        unreachable!("image() is only called for soft-token tasks")
    };
    let noise = Normal::new(0.0, noise_sigma).expect("sigma validated non-negative");
    let soft = (0..tokens_per_image)
        .map(|slot| {
            spec.prototype(class, slot)
                .into_iter()
                .map(|p| p + noise.sample(r) as f32)
                .collect()
        })
        .collect();
    Item {
        tokens: vec![spec.delimiters.placeholder; tokens_per_image],
        soft,
    }
}

fn too_small(spec: &TaskSpec, n_shots: usize, have: usize) -> Error {
    Error::Task(format!(
        "{}: {} distinct inputs cannot cover {n_shots} shots plus a query",
        spec.label(),
        have
    ))
}

/// Draws an episode with `n_shots` shots. Deterministic in `seed`; the
/// query input never appears among the shots.
pub fn sample_episode(spec: &TaskSpec, n_shots: usize, seed: u64) -> Result<Episode> {
    spec.validate()?;
    let mut r = rng::rng(seed);
    let (shots, query, gold) = match &spec.kind {
        TaskKind::TokenBijection | TaskKind::KeyValueLookup => {
            let n_in = spec.inputs.len as usize;
            if n_shots + 1 > n_in {
                return Err(too_small(spec, n_shots, n_in));
            }
            let table = match spec.kind {
                TaskKind::KeyValueLookup => spec.lookup_table(),
                _ => (0..n_in).map(|i| spec.bijection_map(i)).collect(),
            };
            let mut idx: Vec<usize> = (0..n_in).collect();
            idx.shuffle(&mut r);
            let pair = |i: usize| (Item::token(spec.inputs.symbol(i)), vec![spec.outputs.symbol(table[i])]);
            let shots = idx[..n_shots]
                .iter()
                .map(|&i| {
                    let (input, output) = pair(i);
                    Shot { input, output }
                })
                .collect();
            let (query, gold) = pair(idx[n_shots]);
            (shots, query, gold)
        }
        TaskKind::TwoWayOneShotClass { n_classes } => {
            if n_shots < 2 {
                return Err(Error::Task(format!(
                    "{}: two-way episodes need at least 2 shots, got {n_shots}",
                    spec.label()
                )));
            }
            let per_class = spec.inputs.len as usize / n_classes;
            let classes: Vec<usize> = rand::seq::index::sample(&mut r, *n_classes, 2).into_vec();
            let labels: Vec<usize> = rand::seq::index::sample(&mut r, spec.outputs.len as usize, 2).into_vec();
            let q_side = r.random_range(0..2);
            let q_item = r.random_range(0..per_class);
            let first = r.random_range(0..2);
            let item_of = |class: usize, k: usize| spec.inputs.symbol(class * per_class + k);
            let mut shots = Vec::with_capacity(n_shots);
            for i in 0..n_shots {
                let side = (first + i) % 2;
                let choices: Vec<usize> = (0..per_class).filter(|&k| side != q_side || k != q_item).collect();
                let k = *choices.choose(&mut r).expect("at least one other item per class");
                shots.push(Shot {
                    input: Item::token(item_of(classes[side], k)),
                    output: vec![spec.outputs.symbol(labels[side])],
                });
            }
            (
                shots,
                Item::token(item_of(classes[q_side], q_item)),
                vec![spec.outputs.symbol(labels[q_side])],
            )
        }
        TaskKind::SoftTokenClass { n_classes, .. } => {
            let labels = spec.class_labels(*n_classes);
            let mut shots = Vec::with_capacity(n_shots);
            for _ in 0..n_shots {
                let c = r.random_range(0..*n_classes);
                shots.push(Shot {
                    input: image(spec, c, &mut r),
                    output: vec![spec.outputs.symbol(labels[c])],
                });
            }
            let c = r.random_range(0..*n_classes);
            (shots, image(spec, c, &mut r), vec![spec.outputs.symbol(labels[c])])
        }
    };
    Ok(Episode {
        task: spec.label(),
        seed,
        shots,
        query,
        gold,
    })
}

/// Replaces `n_replace` randomly chosen shots with shots drawn from
/// `foreign`. Query and gold are untouched.
pub fn corrupt_episode(episode: &Episode, foreign: &TaskSpec, n_replace: usize, r: &mut Rng) -> Result<Episode> {
    let n = episode.n_shots();
    if n_replace > n {
        return Err(Error::Task(format!("cannot replace {n_replace} of {n} shots")));
    }
    let mut out = episode.clone();
    if n_replace == 0 {
        return Ok(out);
    }
    let donor = sample_episode(foreign, n_replace.max(foreign.min_shots()), r.random())?;
    let slots = rand::seq::index::sample(r, n, n_replace);
    for (slot, shot) in slots.into_iter().zip(donor.shots) {
        out.shots[slot] = shot;
    }
    Ok(out)
}

pub fn write_jsonl(path: impl AsRef<Path>, episodes: &[Episode]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for e in episodes {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Episode>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
