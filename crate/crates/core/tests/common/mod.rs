#![allow(dead_code)]

use std::collections::BTreeMap;

use mtv_core::model::{forward, last_logits, Capture, HeadLocation, Model, ModelConfig, ModelInput, PatchScope};
use mtv_core::mtv::{patch_for, AlignmentExample, HeadMask, MeanActivations};
use mtv_core::numerics::Matrix;
use mtv_core::trainer::init_model_with_std;
use mtv_core::model::{argmax, Weights};
use rand::Rng as _;

pub const GOLD: u32 = 5;
pub const WRONG: u32 = 6;

/// One layer, two heads, all-zero weights except: head A's output feeds
/// residual dimension 0, head B's feeds dimension 1, and the unembedding
/// reads dimension 0 as `GOLD` and dimension 1 as `WRONG`. Unpatched, the
/// residual stream is zero and the logits are uniform; patching A with its
/// mean makes `GOLD` win, patching B makes `WRONG` win.
pub struct Rigged {
    pub model: Model<f32>,
    pub mean: MeanActivations<f32>,
    pub alignment: Vec<AlignmentExample>,
    pub a: HeadLocation,
    pub b: HeadLocation,
}

pub fn rigged_two_head() -> Rigged {
    let cfg = ModelConfig::new(1, 2, 8, 16, 8);
    let mut w = Weights::<f32>::zeros(&cfg);
    w.layers[0].ln1_g.fill(1.0);
    w.layers[0].ln2_g.fill(1.0);
    w.lnf_g.fill(1.0);
    // Head h owns rows 4h..4h+4 of the output projection.
    w.layers[0].w_out.set(0, 0, 10.0);
    w.layers[0].w_out.set(4, 1, 10.0);
    w.unembed.set(0, GOLD as usize, 5.0);
    w.unembed.set(1, WRONG as usize, 5.0);
    let model = Model::new(cfg, w).unwrap();
    let a = HeadLocation::new(0, 0);
    let b = HeadLocation::new(0, 1);
    let mean = MeanActivations {
        values: BTreeMap::from([(a, vec![1.0, 0.0, 0.0, 0.0]), (b, vec![1.0, 0.0, 0.0, 0.0])]),
        n_calls: 1,
        n_shots: 0,
        task: "rigged".into(),
        model_fingerprint: model.fingerprint().to_string(),
    };
    let alignment = (0..4)
        .map(|i| AlignmentExample {
            query: ModelInput::from_tokens(vec![7 + i, 1]),
            gold: vec![GOLD],
        })
        .collect();
    Rigged {
        model,
        mean,
        alignment,
        a,
        b,
    }
}

/// Random model whose alignment golds are the argmax under a hidden target
/// mask. Of 200 random queries the 8 where the target patch raises the
/// gold's log-probability most are kept, so the set rewards the target.
pub struct RandomRigged {
    pub model: Model<f32>,
    pub mean: MeanActivations<f32>,
    pub alignment: Vec<AlignmentExample>,
    pub target: HeadMask,
}

fn log_prob(v: &[f32], k: usize) -> f64 {
    let m = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let z: f64 = v.iter().map(|&y| f64::from(y - m).exp()).sum();
    f64::from(v[k] - m) - z.ln()
}

pub fn random_rigged(seed: u64, n_layers: usize, n_heads: usize) -> RandomRigged {
    let cfg = ModelConfig::new(n_layers, n_heads, 4 * n_heads, 32, 16);
    let model: Model<f32> = init_model_with_std(&cfg, seed, 0.5).unwrap();
    let mut r = mtv_core::rng::stream(seed, "rigged", 0);
    let mut query = || ModelInput::from_tokens((0..6).map(|_| r.random_range(0..32)).collect());
    let mut sums: BTreeMap<HeadLocation, Vec<f64>> = BTreeMap::new();
    for _ in 0..16 {
        for (loc, v) in forward(&model, &query(), &Capture::All).unwrap().captures {
            let s = sums.entry(loc).or_insert_with(|| vec![0.0; v.len()]);
            for (a, b) in s.iter_mut().zip(v) {
                *a += f64::from(b);
            }
        }
    }
    let mean = MeanActivations {
        values: sums
            .into_iter()
            .map(|(k, v)| (k, v.into_iter().map(|x| (x / 16.0) as f32).collect()))
            .collect(),
        n_calls: 16,
        n_shots: 0,
        task: "random-rigged".into(),
        model_fingerprint: model.fingerprint().to_string(),
    };
    let n = n_layers * n_heads;
    let mut r = mtv_core::rng::stream(seed, "rigged-target", 0);
    let target = loop {
        let m = HeadMask::from_index(n_layers, n_heads, r.random_range(1..1u64 << n));
        if (1..n).contains(&m.count()) {
            break m;
        }
    };
    let patch = patch_for(&mean, &target.locations(), PatchScope::EveryStep).unwrap();
    let mut scored: Vec<(f64, AlignmentExample)> = (0..200)
        .map(|_| {
            let x = query();
            let patched = last_logits(&model, &x, Some(&patch)).unwrap();
            let plain = last_logits(&model, &x, None).unwrap();
            let g = argmax(&patched);
            let gain = log_prob(&patched, g) - log_prob(&plain, g);
            (gain, AlignmentExample { query: x, gold: vec![g as u32] })
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let alignment = scored.into_iter().take(8).map(|(_, a)| a).collect();
    RandomRigged {
        model,
        mean,
        alignment,
        target,
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn probs(theta: &Matrix<f64>) -> Vec<f64> {
    theta.as_slice().iter().map(|&t| sigmoid(t)).collect()
}
