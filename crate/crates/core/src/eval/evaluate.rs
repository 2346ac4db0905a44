use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::Protocol;
use crate::error::{Error, Result};
use crate::model::{generate, Model};
use crate::numerics::Scalar;
use crate::rng::{self, SeedRole};
use crate::tasks::{render_episode, sample_episode, Episode, Layout, TaskSpec};

/// Exact-match results of one protocol on one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub correct: usize,
    pub n: usize,
    /// Mean prompt length per query.
    pub tokens_per_query: f64,
    /// Present only when timing was requested.
    pub wallclock_ms_per_100: Option<f64>,
}

/// Per-seed values with their mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// Absent with fewer than two seeds.
    pub std: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = if values.is_empty() { f64::NAN } else { values.iter().sum::<f64>() / n };
        let std = (values.len() >= 2)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Self {
            per_seed: values.to_vec(),
            mean,
            std,
        }
    }
}

/// Evaluation episodes: evaluation-role seeds, so they never coincide with
/// extraction episodes of any run.
pub fn eval_episodes(task: &TaskSpec, n_shots: usize, count: usize, seed: u64) -> Result<Vec<Episode>> {
    (0..count)
        .map(|i| sample_episode(task, n_shots, rng::episode_seed(SeedRole::Evaluation, seed, "eval", i as u64)))
        .collect()
}

/// Extraction episodes from the named stream.
pub fn extraction_episodes(
    task: &TaskSpec,
    n_shots: usize,
    count: usize,
    seed: u64,
    stream: &str,
) -> Result<Vec<Episode>> {
    (0..count)
        .map(|i| sample_episode(task, n_shots, rng::episode_seed(SeedRole::Extraction, seed, stream, i as u64)))
        .collect()
}

/// Scores `protocol` on `episodes`. Each episode is cut to the protocol's
/// shot count, so one set sampled with enough shots serves every protocol
/// with the same queries.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    protocol: &Protocol<'_>,
    task: &TaskSpec,
    episodes: &[Episode],
    timing: bool,
) -> Result<Metrics> {
    if episodes.is_empty() {
        return Err(Error::Task("empty evaluation set".into()));
    }
    let patch = match protocol.artifact() {
        Some(a) => {
            a.check_model(model)?;
            Some(a.patch_set::<T>())
        }
        None => None,
    };
    let k = protocol.shots();
    let layout = Layout::new(task.delimiters, model.config().max_context);
    let mut correct = 0;
    let mut tokens = 0usize;
    let start = Instant::now();
    for (i, ep) in episodes.iter().enumerate() {
        if ep.n_shots() < k {
            return Err(Error::Task(format!("{} needs {k} shots, episode has {}", protocol.kind(), ep.n_shots()))
                .in_episode(i));
        }
        let input = render_episode(&ep.truncated(k), &layout).map_err(|e| e.in_episode(i))?;
        tokens += input.len();
        let out = match generate(model, &input, patch.as_ref(), ep.gold.len()) {
            Ok(out) => out,
            Err(Error::TruncatedOutput { partial }) => partial,
            Err(e) => return Err(e.in_episode(i)),
        };
        correct += usize::from(out == ep.gold);
    }
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    let n = episodes.len();
    Ok(Metrics {
        accuracy: correct as f64 / n as f64,
        correct,
        n,
        tokens_per_query: tokens as f64 / n as f64,
        wallclock_ms_per_100: timing.then(|| elapsed * 100.0 / n as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_std_needs_two_seeds() {
        assert_eq!(Summary::of(&[0.5]).std, None);
        let s = Summary::of(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std.unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }
}
