use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{forward, Capture, HeadLocation, Model};
use crate::numerics::Scalar;
use crate::tasks::{render_episode, Episode, Layout, TaskSpec};

/// Per-head mean of final-prompt-token activations over `n_calls` episodes
/// of `n_shots` shots each.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanActivations<T> {
    pub values: BTreeMap<HeadLocation, Vec<T>>,
    pub n_calls: usize,
    pub n_shots: usize,
    pub task: String,
    pub model_fingerprint: String,
}

impl<T: Scalar> MeanActivations<T> {
    pub fn get(&self, loc: &HeadLocation) -> Option<&[T]> {
        self.values.get(loc).map(Vec::as_slice)
    }

    /// Same values viewed at another precision.
    pub fn cast<U: Scalar>(&self) -> MeanActivations<U> {
        MeanActivations {
            values: self
                .values
                .iter()
                .map(|(k, v)| (*k, v.iter().map(|x| U::of(x.f64())).collect()))
                .collect(),
            n_calls: self.n_calls,
            n_shots: self.n_shots,
            task: self.task.clone(),
            model_fingerprint: self.model_fingerprint.clone(),
        }
    }

    pub fn check_model<U: Scalar>(&self, model: &Model<U>) -> Result<()> {
        if self.model_fingerprint != model.fingerprint() {
            return Err(Error::Fingerprint {
                artifact: self.model_fingerprint.clone(),
                model: model.fingerprint().to_string(),
            });
        }
        Ok(())
    }
}

/// Runs every episode once, capturing all heads at the last prompt token,
/// and averages elementwise.
pub fn compute_mean_activations<T: Scalar>(
    model: &Model<T>,
    task: &TaskSpec,
    episodes: &[Episode],
) -> Result<MeanActivations<T>> {
    let first = episodes
        .first()
        .ok_or_else(|| Error::Task("mean activations need at least one episode".into()))?;
    let n_shots = first.n_shots();
    let layout = Layout::new(task.delimiters, model.config().max_context);
    let locations: Vec<HeadLocation> = HeadLocation::all(model.config()).collect();
    let dh = model.config().head_dim();
    let mut sums = vec![vec![0.0f64; dh]; locations.len()];
    for (i, ep) in episodes.iter().enumerate() {
        if ep.n_shots() != n_shots {
            return Err(Error::Task(format!(
                "episode {i} has {} shots, episode 0 has {n_shots}",
                ep.n_shots()
            ))
            .in_episode(i));
        }
        let input = render_episode(ep, &layout).map_err(|e| e.in_episode(i))?;
        let r = forward(model, &input, &Capture::All).map_err(|e| e.in_episode(i))?;
        for (loc, sum) in locations.iter().zip(sums.iter_mut()) {
            for (s, &x) in sum.iter_mut().zip(&r.captures[loc]) {
                *s += x.f64();
            }
        }
    }
    let n = episodes.len() as f64;
    let values = locations
        .into_iter()
        .zip(sums)
        .map(|(loc, s)| (loc, s.into_iter().map(|x| T::of(x / n)).collect()))
        .collect();
    Ok(MeanActivations {
        values,
        n_calls: episodes.len(),
        n_shots,
        task: task.label(),
        model_fingerprint: model.fingerprint().to_string(),
    })
}
