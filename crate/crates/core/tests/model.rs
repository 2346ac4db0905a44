use std::collections::BTreeMap;

use mtv_core::model::{
    forward, forward_patched, forward_with, generate, generate_uncached, last_logits, Capture, HeadLocation, Model,
    ModelConfig, ModelInput, PatchScope, PatchSet, SoftSegment,
};
use mtv_core::trainer::init_model_with_std;
use mtv_core::Error;
use proptest::prelude::*;
use rand::Rng as _;

fn random_input(cfg: &ModelConfig, len: usize, seed: u64) -> ModelInput {
    let mut r = mtv_core::rng::rng(seed);
    ModelInput::from_tokens((0..len).map(|_| r.random_range(0..cfg.vocab_size as u32)).collect())
}

fn model(cfg: ModelConfig, seed: u64) -> Model<f32> {
    init_model_with_std(&cfg, seed, 0.2).unwrap()
}

fn max_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

#[test]
fn forward_is_deterministic_and_capture_is_neutral() {
    let cfg = ModelConfig::new(2, 4, 32, 128, 32);
    let m = model(cfg, 1);
    let x = random_input(&cfg, 20, 2);
    let a = forward(&m, &x, &Capture::None).unwrap();
    let b = forward(&m, &x, &Capture::None).unwrap();
    let c = forward(&m, &x, &Capture::All).unwrap();
    assert_eq!(a.logits, b.logits);
    assert_eq!(a.logits, c.logits);
    assert_eq!(c.captures.len(), 8);
    assert!(c.captures.values().all(|v| v.len() == 8));
    assert_eq!(last_logits(&m, &x, None).unwrap(), a.last_logits());
}

#[test]
fn empty_patch_is_bit_identical() {
    let cfg = ModelConfig::new(3, 2, 16, 128, 32);
    let m = model(cfg, 3);
    let x = random_input(&cfg, 12, 4);
    let plain = forward(&m, &x, &Capture::None).unwrap();
    for scope in [PatchScope::LastPromptToken, PatchScope::EveryStep, PatchScope::AllPositions] {
        let p = forward_patched(&m, &x, &PatchSet::empty(scope), &Capture::None).unwrap();
        assert_eq!(plain.logits, p.logits);
    }
}

#[test]
fn self_patch_reproduces_logits() {
    let cfg = ModelConfig::new(2, 2, 16, 128, 32);
    let m = model(cfg, 5);
    let x = random_input(&cfg, 9, 6);
    let r = forward(&m, &x, &Capture::All).unwrap();
    let patch = PatchSet::new(r.captures.clone(), PatchScope::LastPromptToken);
    let p = forward_patched(&m, &x, &patch, &Capture::None).unwrap();
    assert!(max_diff(r.logits.as_slice(), p.logits.as_slice()) <= 1e-6);
}

#[test]
fn patch_only_touches_later_layers_and_governed_positions() {
    let cfg = ModelConfig::new(3, 2, 16, 128, 32);
    let m = model(cfg, 7);
    let x = random_input(&cfg, 10, 8);
    let plain = forward(&m, &x, &Capture::All).unwrap();
    let mut patch = PatchSet::empty(PatchScope::LastPromptToken);
    patch.insert(HeadLocation::new(1, 0), vec![3.0; cfg.head_dim()]);
    let p = forward_patched(&m, &x, &patch, &Capture::All).unwrap();
    for (loc, v) in &plain.captures {
        if loc.layer == 0 || *loc == HeadLocation::new(1, 1) {
            assert_eq!(v, &p.captures[loc], "{loc:?} changed");
        }
    }
    assert_eq!(p.captures[&HeadLocation::new(1, 0)], vec![3.0; cfg.head_dim()]);
    // Earlier positions cannot see the last one.
    let n = x.len();
    assert_eq!(plain.logits.slice_rows(0, n - 1), p.logits.slice_rows(0, n - 1));
    assert_ne!(plain.logits.row(n - 1), p.logits.row(n - 1));
}

#[test]
fn zero_patch_equals_structural_zeroing() {
    let cfg = ModelConfig::new(2, 2, 16, 128, 32);
    let m = model(cfg, 9);
    let x = random_input(&cfg, 14, 10);
    let dh = cfg.head_dim();
    for loc in HeadLocation::all(&cfg) {
        let mut w = m.weights().clone();
        for r in loc.head * dh..(loc.head + 1) * dh {
            w.layers[loc.layer].w_out.row_mut(r).fill(0.0);
        }
        let zeroed = Model::new(cfg, w).unwrap();
        let a = forward(&zeroed, &x, &Capture::None).unwrap();
        let patch = PatchSet::new(BTreeMap::from([(loc, vec![0.0; dh])]), PatchScope::AllPositions);
        let b = forward_patched(&m, &x, &patch, &Capture::None).unwrap();
        assert!(max_diff(a.logits.as_slice(), b.logits.as_slice()) <= 1e-6, "{loc:?}");
    }
}

#[test]
fn soft_segments_replace_token_embeddings() {
    let cfg = ModelConfig::new(1, 2, 8, 128, 16);
    let m = model(cfg, 11);
    let mut x = random_input(&cfg, 6, 12);
    let plain = forward(&m, &x, &Capture::None).unwrap();
    x.soft.push(SoftSegment {
        position: 2,
        vectors: vec![vec![0.5; 8], vec![-0.5; 8]],
    });
    let soft = forward(&m, &x, &Capture::None).unwrap();
    assert_eq!(plain.logits.slice_rows(0, 2), soft.logits.slice_rows(0, 2));
    assert_ne!(plain.logits.row(2), soft.logits.row(2));
    x.soft[0].position = 5;
    assert!(matches!(forward(&m, &x, &Capture::None), Err(Error::Shape(_))));
}

#[test]
fn generate_edge_cases() {
    let cfg = ModelConfig::new(1, 2, 16, 128, 16);
    let m = model(cfg, 13);
    let x = random_input(&cfg, 15, 14);
    assert!(generate(&m, &x, None, 0).unwrap().is_empty());
    match generate(&m, &x, None, 5) {
        Err(Error::TruncatedOutput { partial }) => {
            assert_eq!(partial.len(), 2);
            assert_eq!(partial, generate_uncached(&m, &x, None, 2).unwrap());
        }
        other => panic!("expected truncation, got {other:?}"),
    }
    let too_long = random_input(&cfg, 17, 15);
    assert!(matches!(forward(&m, &too_long, &Capture::None), Err(Error::ContextOverflow { .. })));
    let bad_token = ModelInput::from_tokens(vec![1, 999]);
    assert!(forward(&m, &bad_token, &Capture::None).is_err());
    let mut bad_patch = PatchSet::empty(PatchScope::EveryStep);
    bad_patch.insert(HeadLocation::new(0, 0), vec![0.0; 3]);
    assert!(matches!(generate(&m, &x, Some(&bad_patch), 1), Err(Error::Shape(_))));
}

#[test]
fn prompt_scope_boundaries() {
    let cfg = ModelConfig::new(2, 2, 16, 128, 32);
    let m = model(cfg, 17);
    let x = random_input(&cfg, 12, 18);
    let mut patch = PatchSet::empty(PatchScope::EveryStep);
    patch.insert(HeadLocation::new(0, 1), vec![1.0; cfg.head_dim()]);
    // Prompt of 8 tokens followed by 4 decoded ones: every-step governs 7..
    let every = forward_with(&m, &x, Some(&patch), &Capture::None, 8).unwrap();
    patch.scope = PatchScope::LastPromptToken;
    let last = forward_with(&m, &x, Some(&patch), &Capture::None, 8).unwrap();
    assert_eq!(every.logits.slice_rows(0, 8), last.logits.slice_rows(0, 8));
    assert_ne!(every.logits.row(9), last.logits.row(9));
}

fn arb_case() -> impl Strategy<Value = (ModelConfig, u64, usize, usize, bool)> {
    (1usize..=3, 0usize..3, 1usize..=3, any::<u64>(), 1usize..10, 1usize..6, any::<bool>()).prop_map(
        |(l, hi, dm, seed, len, new, patched)| {
            let h = [1, 2, 4][hi];
            let d = (h * 4 * dm).min(32);
            (ModelConfig::new(l, h, d, 128, 24), seed, len, new, patched)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn cached_decoding_matches_recompute((cfg, seed, len, new, patched) in arb_case()) {
        let m: Model<f64> = init_model_with_std(&cfg, seed, 0.5).unwrap();
        let x = random_input(&cfg, len, seed ^ 1);
        let patch = patched.then(|| {
            let mut p = PatchSet::empty(PatchScope::EveryStep);
            p.insert(HeadLocation::new(cfg.n_layers - 1, 0), vec![0.7; cfg.head_dim()]);
            p
        });
        let a = generate(&m, &x, patch.as_ref(), new).unwrap();
        let b = generate_uncached(&m, &x, patch.as_ref(), new).unwrap();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn self_patch_and_empty_patch_are_identities(
        (cfg, seed, len, _, _) in arb_case(),
        scope in prop::sample::select(vec![PatchScope::LastPromptToken, PatchScope::EveryStep, PatchScope::AllPositions]),
        keep in prop::collection::vec(any::<bool>(), 12),
    ) {
        let m: Model<f64> = init_model_with_std(&cfg, seed, 0.5).unwrap();
        let x = random_input(&cfg, len, seed ^ 2);
        let r = forward(&m, &x, &Capture::All).unwrap();
        let empty = forward_patched(&m, &x, &PatchSet::empty(scope), &Capture::None).unwrap();
        prop_assert_eq!(&r.logits, &empty.logits);

        // Any subset of heads set to their own final-token capture.
        let subset: BTreeMap<_, _> =
            r.captures.iter().zip(keep.iter().cycle()).filter(|(_, &k)| k).map(|((l, v), _)| (*l, v.clone())).collect();
        let scope = if scope == PatchScope::AllPositions { PatchScope::LastPromptToken } else { scope };
        let p = forward_patched(&m, &x, &PatchSet::new(subset, scope), &Capture::None).unwrap();
        let diff = r.logits.as_slice().iter().zip(p.logits.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(diff <= 1e-10, "{}", diff);
    }
}
