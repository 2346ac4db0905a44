use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::evaluate::{eval_episodes, evaluate, Metrics};
use super::pipeline::{baseline_fv, baseline_vtv, mean_activations_for, run_mtv, MtvSetup, VTV_CALLS, VTV_SHOTS, VTV_STEPS};
use super::sweep::ResultRow;
use super::{Protocol, ProtocolKind};
use crate::error::Result;
use crate::model::Model;
use crate::numerics::Scalar;
use crate::tasks::TaskSpec;

/// Which rows a comparison produces besides `zero-shot`, `mtv`, `fv-mode`
/// and `vtv-mode`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub setup: MtvSetup,
    pub seeds: Vec<u64>,
    pub n_eval: usize,
    /// One `icl-k` row per entry.
    #[serde(default = "default_icl")]
    pub icl_shots: Vec<usize>,
    /// One `mtv+k` row per entry.
    #[serde(default)]
    pub mtv_plus_shots: Vec<usize>,
    /// Fixed layer for the fv-mode baseline; default is the middle layer.
    #[serde(default)]
    pub fv_layer: Option<usize>,
}

fn default_icl() -> Vec<usize> {
    vec![4]
}

fn row(kind: ProtocolKind, task: &TaskSpec, nts: (usize, usize, usize), seed: u64, m: &Metrics, notes: String) -> ResultRow {
    ResultRow {
        protocol: kind.to_string(),
        task: task.label(),
        n_shots: nts.0,
        n_calls: nts.1,
        steps: nts.2,
        seed,
        accuracy: Some(m.accuracy),
        tokens_per_query: Some(m.tokens_per_query),
        wallclock_ms_per_100: m.wallclock_ms_per_100,
        notes,
    }
}

/// Every protocol on the same evaluation queries, per seed. With `timing`
/// the wall-clock column is filled and `mtv` rows note the one-time
/// extraction cost. A finetuned model adds a `finetuned` row.
pub fn compare<T: Scalar>(
    model: &Model<T>,
    task: &TaskSpec,
    cfg: &CompareConfig,
    finetuned: Option<&Model<T>>,
    timing: bool,
) -> Result<Vec<ResultRow>> {
    let max_shots = cfg
        .icl_shots
        .iter()
        .chain(&cfg.mtv_plus_shots)
        .copied()
        .max()
        .unwrap_or(0);
    let (n, t, s) = (cfg.setup.n_shots, cfg.setup.n_calls, cfg.setup.extraction.steps);
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let episodes = eval_episodes(task, max_shots, cfg.n_eval, seed)?;
        let eval = |m: &Model<T>, p: Protocol<'_>| evaluate(m, &p, task, &episodes, timing);

        let m = eval(model, Protocol::ZeroShot)?;
        rows.push(row(ProtocolKind::ZeroShot, task, (0, 0, 0), seed, &m, String::new()));
        for &k in &cfg.icl_shots {
            let m = eval(model, Protocol::Icl(k))?;
            rows.push(row(ProtocolKind::Icl(k), task, (k, 0, 0), seed, &m, String::new()));
        }

        let start = Instant::now();
        let mtv = run_mtv(model, task, &cfg.setup, seed)?.artifact;
        let extract_ms = start.elapsed().as_secs_f64() * 1e3;
        let heads = |a: &crate::mtv::MtvArtifact| format!("heads={}", a.locations.len());
        let m = eval(model, Protocol::Mtv(&mtv))?;
        let mut notes = heads(&mtv);
        if timing {
            notes.push_str(&format!(" extract_ms={extract_ms:.1}"));
        }
        rows.push(row(ProtocolKind::Mtv, task, (n, t, s), seed, &m, notes));
        for &k in &cfg.mtv_plus_shots {
            let m = eval(model, Protocol::MtvPlusShots(&mtv, k))?;
            rows.push(row(ProtocolKind::MtvPlusShots(k), task, (n, t, s), seed, &m, heads(&mtv)));
        }

        let mean = mean_activations_for(model, task, n, t, seed)?;
        let fv = baseline_fv(model, &mean, cfg.fv_layer, &cfg.setup.extraction)?;
        let m = eval(model, Protocol::FvMode(&fv))?;
        rows.push(row(ProtocolKind::FvMode, task, (n, t, 0), seed, &m, heads(&fv)));

        let vtv = baseline_vtv(model, task, &cfg.setup.extraction, seed)?;
        let m = eval(model, Protocol::VtvMode(&vtv))?;
        rows.push(row(ProtocolKind::VtvMode, task, (VTV_SHOTS, VTV_CALLS, VTV_STEPS), seed, &m, heads(&vtv)));

        if let Some(ft) = finetuned {
            let m = eval(ft, Protocol::Finetuned)?;
            rows.push(row(ProtocolKind::Finetuned, task, (0, 0, 0), seed, &m, String::new()));
        }
    }
    Ok(rows)
}

/// Mean accuracy of one protocol across the rows of a comparison or sweep.
pub fn mean_accuracy(rows: &[ResultRow], protocol: &str) -> Option<f64> {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.protocol == protocol)
        .filter_map(|r| r.accuracy)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}
