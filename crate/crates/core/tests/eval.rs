mod common;

use common::rigged_two_head;
use mtv_core::eval::{
    artifact_from, baseline_fv, baseline_vtv, brute_force_best_subset, compare, eval_episodes, evaluate,
    extraction_episodes, generalization_eval, mean_accuracy, mean_activations_for, read_rows, run_mtv, sweep,
    CompareConfig, MtvSetup, Protocol, ResultRow, SweepGrid, SweepOptions, Summary, VTV_CALLS, VTV_SHOTS, VTV_STEPS,
};
use mtv_core::model::{HeadLocation, Model, ModelConfig};
use mtv_core::mtv::{ExtractionConfig, HeadMask, MeanActivations};
use mtv_core::rng::{episode_seed, SeedRole};
use mtv_core::tasks::{Layout, TaskSpec};
use mtv_core::trainer::{init_model, init_model_with_std};
use mtv_core::Error;

fn small() -> Model<f32> {
    init_model_with_std(&ModelConfig::new(2, 2, 16, 128, 64), 5, 0.3).unwrap()
}

#[test]
fn untrained_model_is_at_or_below_chance() {
    let m: Model<f32> = init_model(&ModelConfig::new(2, 4, 32, 128, 64), 3).unwrap();
    let task = TaskSpec::bijection(0);
    let episodes = eval_episodes(&task, 4, 300, 0).unwrap();
    let p = 1.0 / task.outputs.len as f64;
    let bound = p + 3.0 * (p * (1.0 - p) / 300.0).sqrt();
    for proto in [Protocol::ZeroShot, Protocol::Icl(1), Protocol::Icl(4)] {
        let m = evaluate(&m, &proto, &task, &episodes, false).unwrap();
        assert!(m.accuracy <= bound, "{}: {} > {bound}", proto.kind(), m.accuracy);
        assert!((0.0..=1.0).contains(&m.accuracy));
        assert_eq!(m.n, 300);
        assert!(m.wallclock_ms_per_100.is_none());
    }
}

#[test]
fn evaluation_is_deterministic_and_rejects_bad_input() {
    let m = small();
    let task = TaskSpec::bijection(1);
    let episodes = eval_episodes(&task, 2, 30, 4).unwrap();
    let a = evaluate(&m, &Protocol::Icl(2), &task, &episodes, false).unwrap();
    let b = evaluate(&m, &Protocol::Icl(2), &task, &episodes, false).unwrap();
    assert_eq!(a, b);
    assert!(evaluate(&m, &Protocol::ZeroShot, &task, &[], false).is_err());
    assert!(matches!(
        evaluate(&m, &Protocol::Icl(3), &task, &episodes, false),
        Err(Error::Episode { index: 0, .. })
    ));
    let other = init_model_with_std::<f32>(&ModelConfig::new(2, 2, 16, 128, 64), 6, 0.3).unwrap();
    let artifact = run_mtv(&other, &task, &MtvSetup::new(2, 3, 2), 0).unwrap().artifact;
    assert!(matches!(
        evaluate(&m, &Protocol::Mtv(&artifact), &task, &episodes, false),
        Err(Error::Fingerprint { .. })
    ));
}

#[test]
fn evaluation_and_extraction_seeds_are_disjoint() {
    let task = TaskSpec::bijection(0);
    for run in 0..4 {
        for i in 0..200 {
            assert_eq!(episode_seed(SeedRole::Evaluation, run, "eval", i) >> 63, 1);
            for stream in ["mean-acts", "alignment"] {
                assert_eq!(episode_seed(SeedRole::Extraction, run, stream, i) >> 63, 0);
            }
        }
    }
    let eval = eval_episodes(&task, 1, 50, 0).unwrap();
    let ext = extraction_episodes(&task, 1, 50, 0, "eval").unwrap();
    assert!(eval.iter().all(|e| ext.iter().all(|x| x.seed != e.seed)));
}

#[test]
fn summary_std_needs_two_seeds() {
    assert_eq!(Summary::of(&[0.5]).std, None);
    let s = Summary::of(&[0.2, 0.4]);
    assert!((s.mean - 0.3).abs() < 1e-12);
    assert!((s.std.unwrap() - 0.02f64.sqrt()).abs() < 1e-12);
}

#[test]
fn brute_force_properties() {
    let rig = rigged_two_head();
    let cfg = ExtractionConfig::default();
    let best = brute_force_best_subset(&rig.model, &rig.mean, &rig.alignment, &cfg, 6).unwrap();
    assert_eq!(best.n_evaluated, 4);
    assert_eq!(best.mask.locations(), vec![rig.a]);
    let empty = mtv_core::eval::alignment_loss(&rig.model, &rig.mean, &rig.alignment, &HeadMask::empty(1, 2), &cfg).unwrap();
    assert!(best.loss <= empty);
    // Uniform logits over 16 tokens when nothing is patched.
    assert!((empty - 16f64.ln()).abs() < 1e-5);

    let one: Model<f32> = init_model_with_std(&ModelConfig::new(1, 1, 8, 16, 8), 2, 0.5).unwrap();
    let mean = MeanActivations {
        values: [(HeadLocation::new(0, 0), vec![1.0; 8])].into(),
        n_calls: 1,
        n_shots: 0,
        task: "t".into(),
        model_fingerprint: one.fingerprint().to_string(),
    };
    let r = brute_force_best_subset(&one, &mean, &rig.alignment, &cfg, 6).unwrap();
    assert_eq!(r.n_evaluated, 2);

    let big: Model<f32> = init_model(&ModelConfig::new(2, 4, 16, 128, 16), 1).unwrap();
    let mean = mean_activations_for(&big, &TaskSpec::bijection(0), 1, 2, 0).unwrap();
    assert!(matches!(
        brute_force_best_subset(&big, &mean, &rig.alignment, &cfg, 6),
        Err(Error::Config(_))
    ));
    assert!(brute_force_best_subset(&big, &mean, &rig.alignment, &cfg, 17).is_err());
}

#[test]
fn generalization_degenerate_cases() {
    let m = small();
    let task = TaskSpec::bijection(2);
    let episodes = eval_episodes(&task, 0, 40, 1).unwrap();
    let out = run_mtv(&m, &task, &MtvSetup::new(2, 4, 3), 1).unwrap();
    let mut artifact = out.artifact;
    artifact.locations = HeadLocation::all(m.config()).take(2).collect();
    let mean = mean_activations_for(&m, &task, 2, 4, 1).unwrap();
    artifact.values = artifact.locations.iter().map(|l| mean.values[l].clone()).collect();

    let same = generalization_eval(&m, &artifact, &task, &mean, &episodes).unwrap();
    let direct = evaluate(&m, &Protocol::Mtv(&artifact), &task, &episodes, false).unwrap();
    assert_eq!(same, direct);

    let lookup = TaskSpec::lookup(0);
    let episodes_b = eval_episodes(&lookup, 0, 40, 1).unwrap();
    let mean_b = mean_activations_for(&m, &lookup, 2, 4, 1).unwrap();
    artifact.locations.clear();
    artifact.values.clear();
    let hybrid = generalization_eval(&m, &artifact, &lookup, &mean_b, &episodes_b).unwrap();
    let zero = evaluate(&m, &Protocol::ZeroShot, &lookup, &episodes_b, false).unwrap();
    assert_eq!(hybrid, zero);
}

#[test]
fn fv_and_vtv_baseline_contracts() {
    let m: Model<f32> = init_model_with_std(&ModelConfig::new(4, 3, 12, 128, 64), 1, 0.3).unwrap();
    let task = TaskSpec::bijection(0);
    let mean = mean_activations_for(&m, &task, 2, 3, 0).unwrap();
    let base = ExtractionConfig::default();
    let fv = baseline_fv(&m, &mean, None, &base).unwrap();
    assert_eq!(fv.locations, (0..3).map(|h| HeadLocation::new(2, h)).collect::<Vec<_>>());
    assert_eq!(fv.values.len(), 3);
    assert_eq!(fv.method, "fv-mode");
    assert_eq!(baseline_fv(&m, &mean, Some(0), &base).unwrap().locations[0].layer, 0);
    assert!(matches!(baseline_fv(&m, &mean, Some(4), &base), Err(Error::Config(_))));

    let big = ExtractionConfig {
        steps: 99,
        ..base.clone()
    };
    let vtv = baseline_vtv(&m, &task, &big, 3).unwrap();
    assert_eq!((vtv.n_shots, vtv.n_calls, vtv.steps), (VTV_SHOTS, VTV_CALLS, VTV_STEPS));
    assert_eq!((VTV_SHOTS, VTV_CALLS, VTV_STEPS), (1, 10, 10));
    assert_eq!(vtv.method, "vtv-mode");
}

#[test]
fn token_accounting() {
    let m = small();
    let task = TaskSpec::bijection(3);
    let episodes = eval_episodes(&task, 4, 25, 2).unwrap();
    let mean = mean_activations_for(&m, &task, 2, 3, 0).unwrap();
    let all = artifact_from(&mean, HeadLocation::all(m.config()).collect(), "mtv", 0, &ExtractionConfig::default());
    let tokens = |p: Protocol<'_>| evaluate(&m, &p, &task, &episodes, false).unwrap().tokens_per_query;
    let zero = tokens(Protocol::ZeroShot);
    assert_eq!(tokens(Protocol::Mtv(&all)), zero);
    let shot_len = Layout::shot_len(1, 1) as f64;
    for k in 1..=4 {
        assert_eq!(tokens(Protocol::Icl(k)) - zero, k as f64 * shot_len);
    }
    assert_eq!(tokens(Protocol::MtvPlusShots(&all, 1)), tokens(Protocol::Icl(1)));
}

fn grid(n_eval: usize) -> SweepGrid {
    SweepGrid {
        task: TaskSpec::bijection(0),
        n_shots: vec![2],
        n_calls: vec![3],
        steps: vec![2],
        seeds: vec![0],
        n_eval,
        extraction: ExtractionConfig::default(),
    }
}

#[test]
fn sweep_rows_resume_and_errors() {
    let m = small();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let rows = sweep(&m, &grid(10), &path, SweepOptions::default()).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(!rows[0].is_error());
    let before = std::fs::read(&path).unwrap();
    let again = sweep(&m, &grid(10), &path, SweepOptions::default()).unwrap();
    assert_eq!(again, rows);
    assert_eq!(std::fs::read(&path).unwrap(), before);

    let mut g = grid(10);
    g.n_shots = vec![2, 40];
    g.seeds = vec![0, 1];
    let rows = sweep(&m, &g, &path, SweepOptions { jobs: 2, timing: false }).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0], again[0]);
    let keys: std::collections::HashSet<_> = rows.iter().map(ResultRow::key).collect();
    assert_eq!(keys.len(), 4);
    let errors: Vec<_> = rows.iter().filter(|r| r.is_error()).collect();
    assert_eq!(errors.len(), 2);
    assert!(errors.iter().all(|r| r.n_shots == 40 && r.accuracy.is_none()));
    assert_eq!(read_rows(&path).unwrap(), rows);

    let serial = dir.path().join("serial.csv");
    sweep(&m, &g, &serial, SweepOptions::default()).unwrap();
    assert_eq!(std::fs::read(&serial).unwrap(), std::fs::read(&path).unwrap());

    let mut empty = grid(10);
    empty.seeds.clear();
    assert!(sweep(&m, &empty, dir.path().join("e.csv"), SweepOptions::default()).is_err());
}

#[test]
fn compare_rows_and_accounting() {
    let m = small();
    let task = TaskSpec::bijection(0);
    let cfg = CompareConfig {
        setup: MtvSetup::new(2, 3, 2),
        seeds: vec![0, 1],
        n_eval: 8,
        icl_shots: vec![4],
        mtv_plus_shots: vec![1],
        fv_layer: None,
    };
    let rows = compare(&m, &task, &cfg, Some(&m), false).unwrap();
    let labels: Vec<_> = rows.iter().filter(|r| r.seed == 0).map(|r| r.protocol.as_str()).collect();
    assert_eq!(labels, ["zero-shot", "icl-4", "mtv", "mtv+1", "fv-mode", "vtv-mode", "finetuned"]);
    let tokens = |p: &str| rows.iter().find(|r| r.protocol == p).unwrap().tokens_per_query.unwrap();
    assert_eq!(tokens("mtv"), tokens("zero-shot"));
    assert_eq!(tokens("fv-mode"), tokens("zero-shot"));
    assert_eq!(tokens("icl-4") - tokens("zero-shot"), 4.0 * Layout::shot_len(1, 1) as f64);
    assert_eq!(mean_accuracy(&rows, "finetuned"), mean_accuracy(&rows, "zero-shot"));
    assert_eq!(compare(&m, &task, &cfg, Some(&m), false).unwrap(), rows);
    assert!(mean_accuracy(&rows, "icl-8").is_none());
}
