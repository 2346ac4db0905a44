//! Inference forward pass with head capture and patching.
//!
//! Every public entry point runs [`run_block`] over a per-call KV cache, so
//! full recomputation and incremental decoding share one code path.

use std::collections::BTreeMap;

use super::{Capture, ForwardResult, HeadLocation, Model, ModelInput, PatchScope, PatchSet};
use crate::error::{Error, Result};
use crate::model::Activation;
use crate::numerics::{gelu_tanh, layer_norm_in_place, matmul, softmax_in_place, Matrix, Scalar};

pub(crate) const LN_EPS: f64 = 1e-5;

/// Keys and values of every processed position, per layer.
pub(crate) struct KvCache<T> {
    keys: Vec<Matrix<T>>,
    values: Vec<Matrix<T>>,
    len: usize,
}

impl<T: Scalar> KvCache<T> {
    pub(crate) fn new<U: Scalar>(model: &Model<U>) -> Self {
        let c = model.config();
        Self {
            keys: (0..c.n_layers).map(|_| Matrix::zeros(c.max_context, c.embed_dim)).collect(),
            values: (0..c.n_layers).map(|_| Matrix::zeros(c.max_context, c.embed_dim)).collect(),
            len: 0,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum Logits {
    All,
    Last,
}

pub(crate) struct BlockSpec<'a, T> {
    pub patch: Option<&'a PatchSet<T>>,
    /// Final prompt position, the anchor for patch scopes.
    pub prompt_last: usize,
    pub capture: &'a Capture,
    /// Position whose head outputs are captured.
    pub capture_at: usize,
    pub logits: Logits,
}

/// Processes positions `cache.len()..input.len()`, appending their keys and
/// values to the cache.
pub(crate) fn run_block<T: Scalar>(
    model: &Model<T>,
    cache: &mut KvCache<T>,
    input: &ModelInput,
    spec: &BlockSpec<'_, T>,
) -> Result<ForwardResult<T>> {
    let cfg = model.config();
    let w = model.weights();
    let d = cfg.embed_dim;
    let dh = cfg.head_dim();
    let start = cache.len;
    let end = input.len();
    let n = end - start;
    if end > cfg.max_context {
        return Err(Error::ContextOverflow {
            required: end,
            available: cfg.max_context,
        });
    }

    let mut soft_rows: Vec<Option<&[f32]>> = vec![None; end];
    for seg in &input.soft {
        for (i, v) in seg.vectors.iter().enumerate() {
            soft_rows[seg.position + i] = Some(v);
        }
    }

    // Soft tokens replace the token embedding; positions are added after.
    let mut x = Matrix::<T>::zeros(n, d);
    for i in 0..n {
        let p = start + i;
        let row = x.row_mut(i);
        match soft_rows[p] {
            Some(v) => row.iter_mut().zip(v).for_each(|(r, &s)| *r = T::of(s as f64)),
            None => row.copy_from_slice(w.tok_emb.row(input.tokens[p] as usize)),
        }
        for (r, &pe) in row.iter_mut().zip(w.pos_emb.row(p)) {
            *r += pe;
        }
    }

    let patches = spec.patch.map(|p| p.by_layer(cfg));
    let scope = spec.patch.map(|p| p.scope).unwrap_or(PatchScope::LastPromptToken);
    let eps = T::of(LN_EPS);
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut captures = BTreeMap::new();
    let mut h = Matrix::<T>::zeros(n, d);
    let mut z = Matrix::<T>::zeros(n, d);
    let mut scores: Vec<T> = Vec::with_capacity(end);

    for (li, lw) in w.layers.iter().enumerate() {
        for i in 0..n {
            layer_norm_in_place(x.row(i), lw.ln1_g.as_slice(), lw.ln1_b.as_slice(), eps, h.row_mut(i));
        }
        let mut qkv = matmul(&h, &lw.w_qkv);
        qkv.add_row_vector(lw.b_qkv.as_slice());
        for i in 0..n {
            let row = qkv.row(i);
            cache.keys[li].row_mut(start + i).copy_from_slice(&row[d..2 * d]);
            cache.values[li].row_mut(start + i).copy_from_slice(&row[2 * d..]);
        }
        let keys = &cache.keys[li];
        let values = &cache.values[li];
        for i in 0..n {
            let p = start + i;
            let q_row = qkv.row(i);
            for head in 0..cfg.n_heads {
                let lo = head * dh;
                let q = &q_row[lo..lo + dh];
                let out = &mut z.row_mut(i)[lo..lo + dh];
                let patch = patches
                    .as_ref()
                    .and_then(|ps| ps[li][head])
                    .filter(|_| scope.governs(p, spec.prompt_last));
                match patch {
                    Some(v) => out.copy_from_slice(v),
                    None => {
                        scores.clear();
                        for j in 0..=p {
                            let k = &keys.row(j)[lo..lo + dh];
                            let s: T = q.iter().zip(k).map(|(&a, &b)| a * b).sum();
                            scores.push(s * scale);
                        }
                        softmax_in_place(&mut scores);
                        out.iter_mut().for_each(|o| *o = T::zero());
                        for (j, &a) in scores.iter().enumerate() {
                            let v = &values.row(j)[lo..lo + dh];
                            for (o, &vv) in out.iter_mut().zip(v) {
                                *o += a * vv;
                            }
                        }
                    }
                }
                let loc = HeadLocation::new(li, head);
                if p == spec.capture_at && spec.capture.wants(&loc) {
                    captures.insert(loc, out.to_vec());
                }
            }
        }
        let mut attn = matmul(&z, &lw.w_out);
        attn.add_row_vector(lw.b_out.as_slice());
        x.add_assign(&attn);

        for i in 0..n {
            layer_norm_in_place(x.row(i), lw.ln2_g.as_slice(), lw.ln2_b.as_slice(), eps, h.row_mut(i));
        }
        let mut up = matmul(&h, &lw.w_up);
        up.add_row_vector(lw.b_up.as_slice());
        match cfg.activation {
            Activation::Relu => up.as_mut_slice().iter_mut().for_each(|u| *u = u.max(T::zero())),
            Activation::GeluTanh => up.as_mut_slice().iter_mut().for_each(|u| *u = gelu_tanh(*u)),
        }
        let mut down = matmul(&up, &lw.w_down);
        down.add_row_vector(lw.b_down.as_slice());
        x.add_assign(&down);
    }
    cache.len = end;

    let rows = match spec.logits {
        Logits::All => 0..n,
        Logits::Last => n - 1..n,
    };
    let mut hf = Matrix::<T>::zeros(rows.len(), d);
    for (k, i) in rows.enumerate() {
        layer_norm_in_place(x.row(i), w.lnf_g.as_slice(), w.lnf_b.as_slice(), eps, hf.row_mut(k));
    }
    let logits = matmul(&hf, &w.unembed);
    logits.ensure_finite("logits")?;
    Ok(ForwardResult { logits, captures })
}

fn prepare<T: Scalar>(model: &Model<T>, input: &ModelInput, capture: &Capture, patch: Option<&PatchSet<T>>) -> Result<()> {
    input.validate(model.config())?;
    capture.validate(model.config())?;
    if let Some(p) = patch {
        p.validate(model.config())?;
    }
    Ok(())
}

/// Plain forward pass. Captures are taken at the final input position,
/// before the output projection.
pub fn forward<T: Scalar>(model: &Model<T>, input: &ModelInput, capture: &Capture) -> Result<ForwardResult<T>> {
    forward_with(model, input, None, capture, input.len())
}

/// Forward pass with head outputs replaced per `patch`; the whole input is
/// treated as the prompt.
pub fn forward_patched<T: Scalar>(
    model: &Model<T>,
    input: &ModelInput,
    patch: &PatchSet<T>,
    capture: &Capture,
) -> Result<ForwardResult<T>> {
    forward_with(model, input, Some(patch), capture, input.len())
}

/// Forward pass where the first `prompt_len` positions form the prompt and
/// the rest are treated as decoded tokens for patch-scope purposes.
pub fn forward_with<T: Scalar>(
    model: &Model<T>,
    input: &ModelInput,
    patch: Option<&PatchSet<T>>,
    capture: &Capture,
    prompt_len: usize,
) -> Result<ForwardResult<T>> {
    prepare(model, input, capture, patch)?;
    if prompt_len == 0 || prompt_len > input.len() {
        return Err(Error::Shape(format!(
            "prompt length {prompt_len} invalid for input of {}",
            input.len()
        )));
    }
    let mut cache = KvCache::new(model);
    run_block(
        model,
        &mut cache,
        input,
        &BlockSpec {
            patch,
            prompt_last: prompt_len - 1,
            capture,
            capture_at: input.len() - 1,
            logits: Logits::All,
        },
    )
}

/// Logits at the final position only; cheaper for scoring loops.
pub fn last_logits<T: Scalar>(model: &Model<T>, input: &ModelInput, patch: Option<&PatchSet<T>>) -> Result<Vec<T>> {
    prepare(model, input, &Capture::None, patch)?;
    let mut cache = KvCache::new(model);
    let r = run_block(
        model,
        &mut cache,
        input,
        &BlockSpec {
            patch,
            prompt_last: input.len() - 1,
            capture: &Capture::None,
            capture_at: input.len() - 1,
            logits: Logits::Last,
        },
    )?;
    Ok(r.logits.into_vec())
}
