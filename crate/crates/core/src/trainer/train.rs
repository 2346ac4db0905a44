use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::backprop::{loss_and_grad, PackedBatch};
use crate::error::{Error, Result};
use crate::model::{argmax, last_logits, Model, Weights};
use crate::numerics::{AdamConfig, AdamState, Precision, Scalar};
use crate::rng::{self, SeedRole};
use crate::tasks::{render_episode, render_supervised, sample_episode, Layout, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureEntry {
    pub task: TaskSpec,
    pub weight: f64,
    /// Shot counts are drawn uniformly from `min_shots..=max_shots`.
    #[serde(default)]
    pub min_shots: Option<usize>,
    pub max_shots: usize,
}

/// Weighted set of tasks episodes are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mixture {
    pub entries: Vec<MixtureEntry>,
}

impl Mixture {
    /// One task with shot counts in `min_shots..=max_shots`.
    pub fn single(task: TaskSpec, min_shots: usize, max_shots: usize) -> Self {
        Self {
            entries: vec![MixtureEntry {
                task,
                weight: 1.0,
                min_shots: Some(min_shots),
                max_shots,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Config("task mixture is empty".into()));
        }
        let total: f64 = self.entries.iter().map(|e| e.weight).sum();
        if (total - 1.0).abs() > 1e-9 || self.entries.iter().any(|e| !(e.weight >= 0.0)) {
            return Err(Error::Config(format!("mixture weights must be non-negative and sum to 1, got {total}")));
        }
        for e in &self.entries {
            e.task.validate()?;
            let lo = e.min_shots.unwrap_or(e.task.min_shots());
            if lo > e.max_shots {
                return Err(Error::Config(format!("{}: min_shots {lo} > max_shots {}", e.task.label(), e.max_shots)));
            }
        }
        Ok(())
    }

    fn pick(&self, u: f64) -> &MixtureEntry {
        let mut acc = 0.0;
        for e in &self.entries {
            acc += e.weight;
            if u < acc {
                return e;
            }
        }
        self.entries.last().expect("validated non-empty")
    }
}

/// Held-out accuracy probe run every `eval_every` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalProbe {
    pub tasks: Vec<TaskSpec>,
    pub n_shots: usize,
    pub n_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub warmup_steps: usize,
    #[serde(default = "default_adam")]
    pub adam: AdamConfig,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default)]
    pub eval: Option<EvalProbe>,
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
}

fn default_adam() -> AdamConfig {
    AdamConfig::training()
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            self.lr
        } else {
            self.lr * ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub eval_acc: Option<f64>,
}

pub struct TrainOutput<T> {
    pub model: Model<T>,
    pub log: Vec<LogRow>,
}

/// First-token exact-match accuracy of the probe on evaluation-role seeds.
pub fn probe_accuracy<T: Scalar>(model: &Model<T>, probe: &EvalProbe, seed: u64) -> Result<f64> {
    let layout_ctx = model.config().max_context;
    let mut correct = 0usize;
    let mut total = 0usize;
    for (ti, task) in probe.tasks.iter().enumerate() {
        let layout = Layout::new(task.delimiters, layout_ctx);
        for i in 0..probe.n_episodes {
            let s = rng::episode_seed(SeedRole::Evaluation, seed, "train-probe", (ti * probe.n_episodes + i) as u64);
            let ep = sample_episode(task, probe.n_shots, s)?;
            let input = render_episode(&ep, &layout)?;
            let pred = argmax(&last_logits(model, &input, None)?) as u32;
            correct += usize::from(pred == ep.gold[0]);
            total += 1;
        }
    }
    Ok(correct as f64 / total.max(1) as f64)
}

/// Draws the supervised batch for one step.
pub fn sample_batch(mixture: &Mixture, cfg: &TrainConfig, max_context: usize, step: usize) -> Result<PackedBatch> {
    let mut items = Vec::with_capacity(cfg.batch_size);
    for b in 0..cfg.batch_size {
        let mut r = rng::stream(cfg.seed, "train-batch", (step * cfg.batch_size + b) as u64);
        let entry = mixture.pick(r.random::<f64>());
        let lo = entry.min_shots.unwrap_or(entry.task.min_shots());
        let n = r.random_range(lo..=entry.max_shots);
        let s = rng::episode_seed(SeedRole::Extraction, r.random(), "train-episode", 0);
        let ep = sample_episode(&entry.task, n, s)?;
        items.push(render_supervised(&ep, &Layout::new(entry.task.delimiters, max_context))?);
    }
    Ok(PackedBatch::new(&items))
}

/// Trains on answer positions only with Adam. Deterministic in `cfg.seed`.
pub fn train<T: Scalar>(
    model: &Model<T>,
    mixture: &Mixture,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&LogRow),
) -> Result<TrainOutput<T>> {
    mixture.validate()?;
    cfg.validate()?;
    let config = *model.config();
    let mut weights = model.weights().clone();
    let mut states: Vec<AdamState<T>> = weights
        .tensors()
        .iter()
        .map(|t| AdamState::new(t.rows(), t.cols(), cfg.adam))
        .collect();
    let mut log = Vec::with_capacity(cfg.steps);
    let mut current = model.clone();

    for step in 0..cfg.steps {
        let batch = sample_batch(mixture, cfg, config.max_context, step)?;
        let (loss, mut grad) = loss_and_grad(&current, &batch)?;
        let loss = loss.f64();
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        if let Some(max_norm) = cfg.grad_clip {
            clip(&mut grad, max_norm);
        }
        let lr = cfg.lr_at(step);
        for ((p, g), s) in weights.tensors_mut().into_iter().zip(grad.tensors()).zip(&mut states) {
            s.step_with_lr(p.as_mut_slice(), g.as_slice(), lr)
                .map_err(|_| Error::Diverged { step })?;
        }
        current = Model::new(config, weights.clone())?;

        let last = step + 1 == cfg.steps;
        let eval_acc = match &cfg.eval {
            Some(probe) if cfg.eval_every > 0 && ((step + 1) % cfg.eval_every == 0 || last) => {
                Some(probe_accuracy(&current, probe, cfg.seed)?)
            }
            _ => None,
        };
        let row = LogRow {
            step: step + 1,
            loss,
            eval_acc,
        };
        progress(&row);
        log.push(row);
    }
    Ok(TrainOutput { model: current, log })
}

fn clip<T: Scalar>(grad: &mut Weights<T>, max_norm: f64) {
    let norm = grad
        .tensors()
        .iter()
        .flat_map(|t| t.as_slice().iter())
        .map(|x| x.f64() * x.f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for t in grad.tensors_mut() {
            t.scale(s);
        }
    }
}

/// Writes the loss log as `step,loss,eval_acc`.
pub fn write_loss_log(path: impl AsRef<Path>, log: &[LogRow]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("step,loss,eval_acc\n");
    for r in log {
        let acc = r.eval_acc.map(|a| format!("{a:.6}")).unwrap_or_default();
        out.push_str(&format!("{},{:.9},{}\n", r.step, r.loss, acc));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
