use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mtv_core::eval::{
    alignment_examples, append_rows, artifact_from, baseline_fv, baseline_vtv, brute_force_best_subset, compare,
    eval_episodes, evaluate, mean_activations_for, run_mtv, sweep, CompareConfig, Protocol, ProtocolKind,
    ResultRow, Summary, SweepGrid, SweepOptions, VTV_CALLS, VTV_SHOTS, VTV_STEPS,
};
use mtv_core::model::{load_weights, save_weights, HeadLocation, Model};
use mtv_core::mtv::HeadMask;
use mtv_core::numerics::Scalar;
use mtv_core::tasks::{render_supervised, sample_episode, Layout};
use mtv_core::trainer::{
    finetune_config, grad_check, init_model_with_std, reference_recipe, train, write_loss_log, Recipe,
};
use mtv_core::MtvArtifact;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::failure::{Failure, Kind};

pub const VERSION: &str = env!("MTV_GIT_DESCRIBE");

/// Shared run settings that do not belong in the config file.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub jobs: usize,
    pub timing: bool,
    /// Finetuning steps when `train --finetune` was given.
    pub finetune: Option<usize>,
}

pub struct Ctx<'a> {
    pub command: &'a str,
    pub cfg: RunConfig,
    pub opts: RunOptions,
}

impl Ctx<'_> {
    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir().join(name)
    }

    /// Creates the output directory and writes `<command>.config.json`.
    fn prepare(&self) -> Result<(), Failure> {
        let dir = self.cfg.out_dir();
        fs::create_dir_all(dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?;
        let snapshot = json!({
            "command": self.command,
            "version": VERSION,
            "config": self.cfg,
            "jobs": self.opts.jobs,
            "timing": self.opts.timing,
        });
        write_json(&self.out(&format!("{}.config.json", self.command)), &snapshot)
    }

    fn model<T: Scalar>(&self) -> Result<Model<T>, Failure> {
        Ok(load_weights(self.cfg.model_path()?)?)
    }

    fn meta(&self) -> serde_json::Value {
        json!({ "version": VERSION, "config": format!("{}.config.json", self.command) })
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn write_rows(path: &Path, rows: &[ResultRow]) -> Result<(), Failure> {
    if path.exists() {
        fs::remove_file(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    }
    Ok(append_rows(path, rows)?)
}

fn log(msg: impl AsRef<str>) {
    eprintln!("{}", msg.as_ref());
}

pub fn train_cmd<T: Scalar>(ctx: &Ctx) -> Result<(), Failure> {
    let (init, recipe) = match ctx.opts.finetune {
        Some(steps) => {
            let model = ctx.model::<T>()?;
            let (mixture, mut train) = finetune_config(ctx.cfg.task.clone(), steps, ctx.cfg.seeds[0]);
            train.precision = ctx.cfg.precision;
            let recipe = Recipe {
                model: *model.config(),
                init_seed: 0,
                mixture,
                train,
            };
            (model, recipe)
        }
        None => {
            let recipe = ctx.cfg.recipe.clone().unwrap_or_else(reference_recipe);
            (init_model_with_std::<T>(&recipe.model, recipe.init_seed, mtv_core::trainer::INIT_STD)?, recipe)
        }
    };
    ctx.prepare()?;
    let out = train(&init, &recipe.mixture, &recipe.train, |row| {
        if let Some(acc) = row.eval_acc {
            log(format!("step {} loss {:.4} probe {:.3}", row.step, row.loss, acc));
        }
    })?;
    save_weights(&out.model, ctx.out("checkpoint.mtvw"))?;
    write_loss_log(ctx.out("loss.csv"), &out.log)?;
    write_json(&ctx.out("recipe.json"), &recipe)?;
    log(format!("wrote {}", ctx.out("checkpoint.mtvw").display()));
    Ok(())
}

/// Every head's mean activation, stored in the artifact format.
pub fn mean_acts_cmd<T: Scalar>(ctx: &Ctx) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let model = ctx.model::<T>()?;
    ctx.prepare()?;
    let seed = cfg.seeds[0];
    let mean = mean_activations_for(&model, &cfg.task, cfg.n_shots, cfg.n_calls, seed)?;
    let locations: Vec<HeadLocation> = HeadLocation::all(model.config()).collect();
    let mut a = artifact_from(&mean, locations, "mean-acts", 0, &cfg.extraction);
    a.seeds.insert("episodes".into(), seed);
    a.save(ctx.out("mean_acts.json"))?;
    log(format!("wrote {}", ctx.out("mean_acts.json").display()));
    Ok(())
}

pub fn extract_cmd<T: Scalar>(ctx: &Ctx) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let model = ctx.model::<T>()?;
    ctx.prepare()?;
    let out = run_mtv(&model, &cfg.task, &cfg.setup(), cfg.seeds[0])?;
    out.artifact.save(ctx.out("artifact.json"))?;
    let mut w = csv::Writer::from_path(ctx.out("trace.csv")).map_err(|e| Failure::io(e.to_string()))?;
    for t in &out.trace {
        w.serialize(t).map_err(|e| Failure::io(e.to_string()))?;
    }
    w.flush().map_err(|e| Failure::io(e.to_string()))?;
    log(format!(
        "selected {} heads: {:?}",
        out.artifact.locations.len(),
        out.artifact.locations.iter().map(|l| (l.layer, l.head)).collect::<Vec<_>>()
    ));
    Ok(())
}

fn summaries(rows: &[ResultRow]) -> BTreeMap<String, Summary> {
    let mut by: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        if let Some(a) = r.accuracy {
            by.entry(r.protocol.clone()).or_default().push(a);
        }
    }
    by.into_iter().map(|(k, v)| (k, Summary::of(&v))).collect()
}

pub fn eval_cmd<T: Scalar>(ctx: &Ctx) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    if cfg.protocols.is_empty() {
        return Err(Failure::usage("eval needs at least one protocol (--protocols or \"protocols\")"));
    }
    let model = ctx.model::<T>()?;
    let fixed = cfg.artifact.as_ref().map(MtvArtifact::load).transpose()?;
    if let Some(a) = &fixed {
        a.check_model(&model)?;
    }
    let finetuned = match (&cfg.finetuned, cfg.protocols.contains(&ProtocolKind::Finetuned)) {
        (Some(p), true) => Some(load_weights::<T>(p)?),
        (None, true) => return Err(Failure::usage("the finetuned protocol needs \"finetuned\" (--finetuned)")),
        _ => None,
    };
    ctx.prepare()?;
    let max_shots = cfg
        .protocols
        .iter()
        .map(|p| match p {
            ProtocolKind::Icl(k) | ProtocolKind::MtvPlusShots(k) => *k,
            _ => 0,
        })
        .max()
        .unwrap_or(0);
    let setup = cfg.setup();
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let episodes = eval_episodes(&cfg.task, max_shots, cfg.n_eval, seed)?;
        let mut mtv: Option<MtvArtifact> = fixed.clone();
        for &kind in &cfg.protocols {
            let needs_mtv = matches!(kind, ProtocolKind::Mtv | ProtocolKind::MtvPlusShots(_));
            if needs_mtv && mtv.is_none() {
                mtv = Some(run_mtv(&model, &cfg.task, &setup, seed)?.artifact);
            }
            let (artifact, nts) = match kind {
                ProtocolKind::Mtv | ProtocolKind::MtvPlusShots(_) => {
                    let a = mtv.clone().expect("extracted above");
                    let nts = (a.n_shots, a.n_calls, a.steps);
                    (Some(a), nts)
                }
                ProtocolKind::FvMode => {
                    let mean = mean_activations_for(&model, &cfg.task, cfg.n_shots, cfg.n_calls, seed)?;
                    let a = baseline_fv(&model, &mean, cfg.compare.fv_layer, &cfg.extraction)?;
                    (Some(a), (cfg.n_shots, cfg.n_calls, 0))
                }
                ProtocolKind::VtvMode => {
                    let a = baseline_vtv(&model, &cfg.task, &cfg.extraction, seed)?;
                    (Some(a), (VTV_SHOTS, VTV_CALLS, VTV_STEPS))
                }
                ProtocolKind::Icl(k) => (None, (k, 0, 0)),
                ProtocolKind::ZeroShot | ProtocolKind::Finetuned => (None, (0, 0, 0)),
            };
            let protocol = match (kind, artifact.as_ref()) {
                (ProtocolKind::ZeroShot, _) => Protocol::ZeroShot,
                (ProtocolKind::Icl(k), _) => Protocol::Icl(k),
                (ProtocolKind::Finetuned, _) => Protocol::Finetuned,
                (ProtocolKind::Mtv, Some(a)) => Protocol::Mtv(a),
                (ProtocolKind::MtvPlusShots(k), Some(a)) => Protocol::MtvPlusShots(a, k),
                (ProtocolKind::FvMode, Some(a)) => Protocol::FvMode(a),
                (ProtocolKind::VtvMode, Some(a)) => Protocol::VtvMode(a),
                _ => unreachable!("artifact built for every patched protocol"),
            };
            let target = if kind == ProtocolKind::Finetuned { finetuned.as_ref().expect("loaded above") } else { &model };
            let m = evaluate(target, &protocol, &cfg.task, &episodes, ctx.opts.timing)?;
            rows.push(ResultRow {
                protocol: kind.to_string(),
                task: cfg.task.label(),
                n_shots: nts.0,
                n_calls: nts.1,
                steps: nts.2,
                seed,
                accuracy: Some(m.accuracy),
                tokens_per_query: Some(m.tokens_per_query),
                wallclock_ms_per_100: m.wallclock_ms_per_100,
                notes: artifact.map(|a| format!("heads={}", a.locations.len())).unwrap_or_default(),
            });
        }
    }
    write_rows(&ctx.out("eval.csv"), &rows)?;
    write_json(&ctx.out("eval.json"), &json!({ "meta": ctx.meta(), "summary": summaries(&rows) }))?;
    for (p, s) in summaries(&rows) {
        log(format!("{p}: {:.3}", s.mean));
    }
    Ok(())
}

pub fn sweep_cmd<T: Scalar>(ctx: &Ctx) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let model = ctx.model::<T>()?;
    ctx.prepare()?;
    let grid = SweepGrid {
        task: cfg.task.clone(),
        n_shots: cfg.sweep.n_shots.clone(),
        n_calls: cfg.sweep.n_calls.clone(),
        steps: cfg.sweep.steps.clone(),
        seeds: cfg.seeds.clone(),
        n_eval: cfg.n_eval,
        extraction: cfg.extraction.clone(),
    };
    let opts = SweepOptions {
        jobs: ctx.opts.jobs,
        timing: ctx.opts.timing,
    };
    let rows = sweep(&model, &grid, ctx.out("sweep.csv"), opts)?;
    let mut points: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.task == grid.task.label()) {
        if let Some(a) = r.accuracy {
            points.entry(format!("N={},T={},S={}", r.n_shots, r.n_calls, r.steps)).or_default().push(a);
        }
    }
    let summary: BTreeMap<_, _> = points.into_iter().map(|(k, v)| (k, Summary::of(&v))).collect();
    let errors = rows.iter().filter(|r| r.is_error()).count();
    write_json(
        &ctx.out("sweep.json"),
        &json!({ "meta": ctx.meta(), "rows": rows.len(), "errors": errors, "summary": summary }),
    )?;
    log(format!("{} rows, {errors} errors", rows.len()));
    Ok(())
}

pub fn compare_cmd<T: Scalar>(ctx: &Ctx) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let model = ctx.model::<T>()?;
    let finetuned = cfg.finetuned.as_ref().map(load_weights::<T>).transpose()?;
    ctx.prepare()?;
    let cc = CompareConfig {
        setup: cfg.setup(),
        seeds: cfg.seeds.clone(),
        n_eval: cfg.n_eval,
        icl_shots: cfg.compare.icl_shots.clone(),
        mtv_plus_shots: cfg.compare.mtv_plus_shots.clone(),
        fv_layer: cfg.compare.fv_layer,
    };
    let rows = compare(&model, &cfg.task, &cc, finetuned.as_ref(), ctx.opts.timing)?;
    write_rows(&ctx.out("compare.csv"), &rows)?;
    // Per seed: does mtv match or beat both baselines?
    let acc = |p: &str, seed: u64| rows.iter().find(|r| r.protocol == p && r.seed == seed).and_then(|r| r.accuracy);
    let wins = cfg
        .seeds
        .iter()
        .filter(|&&s| match (acc("mtv", s), acc("fv-mode", s), acc("vtv-mode", s)) {
            (Some(m), Some(f), Some(v)) => m >= f.max(v),
            _ => false,
        })
        .count();
    let ordering_holds = 3 * wins >= 2 * cfg.seeds.len();
    write_json(
        &ctx.out("compare.json"),
        &json!({
            "meta": ctx.meta(),
            "summary": summaries(&rows),
            "mtv_beats_baselines_seeds": wins,
            "ordering_holds": ordering_holds,
        }),
    )?;
    for (p, s) in summaries(&rows) {
        log(format!("{p}: {:.3}", s.mean));
    }
    if !ordering_holds {
        log(format!(
            "FLAG: mtv >= max(fv-mode, vtv-mode) in only {wins} of {} seeds",
            cfg.seeds.len()
        ));
    }
    Ok(())
}

pub fn gradcheck_cmd(ctx: &Ctx) -> Result<(), Failure> {
    let g = &ctx.cfg.gradcheck;
    ctx.prepare()?;
    let seed = ctx.cfg.seeds[0];
    let model = init_model_with_std::<f64>(&g.model, seed, 0.3)?;
    let layout = Layout::new(ctx.cfg.task.delimiters, g.model.max_context);
    let items = (0..g.n_episodes)
        .map(|i| {
            let ep = sample_episode(&ctx.cfg.task, 1 + i % 3, seed.wrapping_add(i as u64))?;
            render_supervised(&ep, &layout)
        })
        .collect::<mtv_core::Result<Vec<_>>>()?;
    let report = grad_check(&model, &items, g.epsilon)?;
    let pass = report.max_rel_error < g.tolerance;
    write_json(
        &ctx.out("gradcheck.json"),
        &json!({ "meta": ctx.meta(), "report": report, "tolerance": g.tolerance, "pass": pass }),
    )?;
    log(format!("max relative error {:.3e} (tolerance {:.0e})", report.max_rel_error, g.tolerance));
    if !pass {
        return Err(Failure::new(
            Kind::Check,
            format!("gradient check failed: {:.3e} >= {:.0e}", report.max_rel_error, g.tolerance),
        ));
    }
    Ok(())
}

/// Exhaustive head-subset search, with the policy's choice for reference.
pub fn oracle_cmd<T: Scalar>(ctx: &Ctx) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let model = ctx.model::<T>()?;
    ctx.prepare()?;
    let seed = cfg.seeds[0];
    let mean = mean_activations_for(&model, &cfg.task, cfg.n_shots, cfg.n_calls, seed)?;
    let alignment = alignment_examples(&model, &cfg.task, cfg.align_shots, cfg.oracle.n_alignment, seed, "alignment")?;
    let best = brute_force_best_subset(&model, &mean, &alignment, &cfg.extraction, cfg.oracle.max_heads)?;
    let empty = HeadMask::empty(model.config().n_layers, model.config().n_heads);
    let empty_loss = mtv_core::eval::alignment_loss(&model, &mean, &alignment, &empty, &cfg.extraction)?;
    let heads: Vec<_> = best.mask.locations().iter().map(|l| [l.layer, l.head]).collect();
    write_json(
        &ctx.out("oracle.json"),
        &json!({
            "meta": ctx.meta(),
            "locations": heads,
            "loss": best.loss,
            "empty_loss": empty_loss,
            "n_evaluated": best.n_evaluated,
        }),
    )?;
    log(format!("best of {} masks: loss {:.4} with {} heads", best.n_evaluated, best.loss, heads.len()));
    Ok(())
}
