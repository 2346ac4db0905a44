use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mtv_core::model::save_weights;
use mtv_core::trainer::init_model_with_std;
use mtv_core::ModelConfig;

fn mtv(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtv"))
        .args(args)
        .current_dir(dir)
        .env_remove("MTV_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited")
}

fn stderr_line(out: &Output) -> String {
    let s = String::from_utf8_lossy(&out.stderr).to_string();
    assert_eq!(s.lines().count(), 1, "{s}");
    s
}

/// Small random model written to `dir`.
fn small_model(dir: &Path, seed: u64) -> PathBuf {
    let m = init_model_with_std::<f32>(&ModelConfig::new(2, 2, 16, 128, 64), seed, 0.3).unwrap();
    let p = dir.join(format!("model{seed}.mtvw"));
    save_weights(&m, &p).unwrap();
    p
}

fn reference() -> String {
    concat!(env!("CARGO_MANIFEST_DIR"), "/../../checkpoints/reference.mtvw").to_string()
}

#[test]
fn extract_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path(), 1);
    let m = model.to_str().unwrap();
    for out in ["a", "b"] {
        ok(&mtv(&["extract", "--seed", "7", "--model", m, "--n-calls", "5", "--steps", "10", "--out-dir", out], dir.path()));
    }
    for f in ["artifact.json", "trace.csv", "extract.config.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        if f.ends_with("config.json") {
            // Differs only in the out_dir it records.
            assert_eq!(a.len(), b.len());
        } else {
            assert_eq!(a, b, "{f}");
        }
    }
    let artifact = mtv_core::MtvArtifact::load(dir.path().join("a/artifact.json")).unwrap();
    assert_eq!((artifact.n_shots, artifact.n_calls, artifact.steps), (4, 5, 10));
}

#[test]
fn eval_without_protocols_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path(), 1);
    let out = mtv(&["eval", "--model", model.to_str().unwrap()], dir.path());
    assert_eq!(code(&out), 2);
    assert!(stderr_line(&out).starts_with("error kind=usage code=2 "));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_model(dir.path(), 1);
    let b = small_model(dir.path(), 2);

    let out = mtv(&["extract", "--frobnicate"], dir.path());
    assert_eq!(code(&out), 2);
    stderr_line(&out);

    std::fs::write(dir.path().join("bad.json"), r#"{"N": 2, "unknown_key": 1}"#).unwrap();
    let out = mtv(&["extract", "--config", "bad.json"], dir.path());
    assert_eq!(code(&out), 3);
    assert!(stderr_line(&out).contains("unknown_key"));

    std::fs::write(dir.path().join("broken.json"), "{").unwrap();
    assert_eq!(code(&mtv(&["extract", "--config", "broken.json"], dir.path())), 3);

    let out = mtv(&["extract", "--model", "missing.mtvw"], dir.path());
    assert_eq!(code(&out), 5);

    ok(&mtv(&["extract", "--model", a.to_str().unwrap(), "--n-calls", "3", "--steps", "3"], dir.path()));
    let out = mtv(
        &["eval", "--model", b.to_str().unwrap(), "--protocols", "mtv", "--artifact", "out/artifact.json"],
        dir.path(),
    );
    assert_eq!(code(&out), 4);
    assert!(stderr_line(&out).starts_with("error kind=fingerprint code=4 "));
}

#[test]
fn config_file_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path(), 3);
    let cfg = serde_json::json!({
        "model": model,
        "N": 2,
        "T": 4,
        "S": 3,
        "seeds": [5],
        "n_eval": 6,
        "protocols": ["zero-shot", "icl-2", "mtv", "mtv+1"],
    });
    std::fs::write(dir.path().join("run.json"), cfg.to_string()).unwrap();
    ok(&mtv(&["eval", "--config", "run.json", "--n-eval", "4"], dir.path()));
    let snap: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/eval.config.json")).unwrap()).unwrap();
    assert_eq!(snap["config"]["n_eval"], 4);
    assert_eq!(snap["config"]["N"], 2);
    assert_eq!(snap["command"], "eval");
    assert!(snap["version"].is_string());
    let rows = mtv_core::eval::read_rows(dir.path().join("out/eval.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.seed == 5));
    let tokens = |p: &str| rows.iter().find(|r| r.protocol == p).unwrap().tokens_per_query;
    assert_eq!(tokens("mtv"), tokens("zero-shot"));
    assert_eq!(tokens("mtv+1").unwrap(), tokens("zero-shot").unwrap() + 4.0);

    let out = mtv(&["extract", "--config", "run.json", "--out-dir", "env-ignored"], dir.path());
    ok(&out);
    assert!(dir.path().join("env-ignored/artifact.json").exists());

    let out = Command::new(env!("CARGO_BIN_EXE_mtv"))
        .args(["mean-acts", "--config", "run.json"])
        .current_dir(dir.path())
        .env("MTV_OUT_DIR", "from-env")
        .output()
        .unwrap();
    ok(&out);
    let mean = mtv_core::MtvArtifact::load(dir.path().join("from-env/mean_acts.json")).unwrap();
    assert_eq!(mean.locations.len(), 4);
    assert_eq!(mean.method, "mean-acts");
}

#[test]
fn compare_on_reference_checkpoint_accounts_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let r = reference();
    ok(&mtv(
        &["compare", "--model", &r, "--n-calls", "10", "--steps", "10", "--n-eval", "20", "--seeds", "0,1"],
        dir.path(),
    ));
    let rows = mtv_core::eval::read_rows(dir.path().join("out/compare.csv")).unwrap();
    let protocols: std::collections::BTreeSet<_> = rows.iter().map(|r| r.protocol.as_str()).collect();
    for p in ["zero-shot", "icl-4", "mtv", "fv-mode", "vtv-mode"] {
        assert!(protocols.contains(p), "{p} missing");
    }
    for seed in [0, 1] {
        let tokens = |p: &str| rows.iter().find(|r| r.protocol == p && r.seed == seed).unwrap().tokens_per_query;
        assert_eq!(tokens("mtv"), tokens("zero-shot"));
        assert_eq!(tokens("icl-4").unwrap() - tokens("zero-shot").unwrap(), 16.0);
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/compare.json")).unwrap()).unwrap();
    assert!(summary["ordering_holds"].is_boolean());
}

#[test]
fn gradcheck_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    ok(&mtv(&["gradcheck", "--seed", "3"], dir.path()));
    let g: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/gradcheck.json")).unwrap()).unwrap();
    assert_eq!(g["pass"], true);

    std::fs::write(dir.path().join("strict.json"), r#"{"gradcheck": {"tolerance": 1e-30}}"#).unwrap();
    assert_eq!(code(&mtv(&["gradcheck", "--config", "strict.json"], dir.path())), 7);

    let model = small_model(dir.path(), 4);
    let m = model.to_str().unwrap();
    std::fs::write(dir.path().join("o.json"), r#"{"oracle": {"max_heads": 4, "n_alignment": 4}, "T": 3}"#).unwrap();
    ok(&mtv(&["oracle", "--config", "o.json", "--model", m], dir.path()));
    let o: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/oracle.json")).unwrap()).unwrap();
    assert_eq!(o["n_evaluated"], 16);
    assert!(o["loss"].as_f64().unwrap() <= o["empty_loss"].as_f64().unwrap());
    std::fs::write(dir.path().join("o2.json"), r#"{"oracle": {"max_heads": 3}}"#).unwrap();
    assert_eq!(code(&mtv(&["oracle", "--config", "o2.json", "--model", m], dir.path())), 3);
}

#[test]
fn sweep_resumes_without_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path(), 5);
    std::fs::write(
        dir.path().join("s.json"),
        r#"{"sweep": {"N": [1, 2], "T": [3], "S": [2]}, "seeds": [0, 1], "n_eval": 5}"#,
    )
    .unwrap();
    let m = model.to_str().unwrap();
    ok(&mtv(&["sweep", "--config", "s.json", "--model", m, "--jobs", "2"], dir.path()));
    let first = std::fs::read(dir.path().join("out/sweep.csv")).unwrap();
    ok(&mtv(&["sweep", "--config", "s.json", "--model", m], dir.path()));
    assert_eq!(std::fs::read(dir.path().join("out/sweep.csv")).unwrap(), first);
    assert_eq!(mtv_core::eval::read_rows(dir.path().join("out/sweep.csv")).unwrap().len(), 4);
}

#[test]
fn train_tiny_recipe() {
    let dir = tempfile::tempdir().unwrap();
    let mut recipe = mtv_core::trainer::reference_recipe();
    recipe.model = ModelConfig::new(1, 2, 16, 128, 64);
    recipe.train.batch_size = 2;
    recipe.train.eval_every = 2;
    for e in &mut recipe.mixture.entries {
        if let mtv_core::tasks::TaskKind::SoftTokenClass { embed_dim, .. } = &mut e.task.kind {
            *embed_dim = 16;
        }
    }
    let cfg = serde_json::json!({ "recipe": recipe });
    std::fs::write(dir.path().join("t.json"), cfg.to_string()).unwrap();
    for out in ["a", "b"] {
        ok(&mtv(&["train", "--config", "t.json", "--train-steps", "3", "--seed", "2", "--out-dir", out], dir.path()));
    }
    let a = std::fs::read(dir.path().join("a/checkpoint.mtvw")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b/checkpoint.mtvw")).unwrap());
    let log = std::fs::read_to_string(dir.path().join("a/loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);
}

#[test]
fn finetune_then_evaluate_the_finetuned_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path(), 6);
    let m = model.to_str().unwrap();
    let out = mtv(&["train", "--finetune"], dir.path());
    assert_ne!(code(&out), 0);
    stderr_line(&out);

    ok(&mtv(&["train", "--finetune", "--model", m, "--train-steps", "3", "--seed", "1", "--out-dir", "ft"], dir.path()));
    assert_eq!(std::fs::read_to_string(dir.path().join("ft/loss.csv")).unwrap().lines().count(), 4);
    let recipe: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ft/recipe.json")).unwrap()).unwrap();
    assert_eq!(recipe["model"]["n_layers"], 2);

    ok(&mtv(
        &["eval", "--model", m, "--protocols", "zero-shot,finetuned", "--finetuned", "ft/checkpoint.mtvw", "--n-eval", "5"],
        dir.path(),
    ));
    let rows = mtv_core::eval::read_rows(dir.path().join("out/eval.csv")).unwrap();
    assert!(rows.iter().any(|r| r.protocol == "finetuned"));
}
