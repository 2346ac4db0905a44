use super::forward::{run_block, BlockSpec, KvCache, Logits};
use super::{argmax, forward_with, Capture, Model, ModelInput, PatchSet};
use crate::error::{Error, Result};
use crate::numerics::Scalar;

/// Greedy decoding with an incremental KV cache. Keys and values cached for
/// a patched position already reflect the patched residual stream.
pub fn generate<T: Scalar>(
    model: &Model<T>,
    input: &ModelInput,
    patch: Option<&PatchSet<T>>,
    max_new_tokens: usize,
) -> Result<Vec<u32>> {
    input.validate(model.config())?;
    if let Some(p) = patch {
        p.validate(model.config())?;
    }
    if max_new_tokens == 0 {
        return Ok(Vec::new());
    }
    let prompt_last = input.len() - 1;
    let mut seq = input.clone();
    let mut cache = KvCache::new(model);
    let mut out = Vec::with_capacity(max_new_tokens);
    loop {
        let r = run_block(
            model,
            &mut cache,
            &seq,
            &BlockSpec {
                patch,
                prompt_last,
                capture: &Capture::None,
                capture_at: seq.len() - 1,
                logits: Logits::Last,
            },
        )?;
        let next = argmax(r.last_logits()) as u32;
        out.push(next);
        if out.len() == max_new_tokens {
            return Ok(out);
        }
        if seq.len() == model.config().max_context {
            return Err(Error::TruncatedOutput { partial: out });
        }
        seq.tokens.push(next);
    }
}

/// Greedy decoding that recomputes the whole sequence for every token.
/// Slow; kept as the reference the cached decoder is checked against.
pub fn generate_uncached<T: Scalar>(
    model: &Model<T>,
    input: &ModelInput,
    patch: Option<&PatchSet<T>>,
    max_new_tokens: usize,
) -> Result<Vec<u32>> {
    input.validate(model.config())?;
    let mut seq = input.clone();
    let mut out = Vec::with_capacity(max_new_tokens);
    while out.len() < max_new_tokens {
        if seq.len() > model.config().max_context {
            return Err(Error::TruncatedOutput { partial: out });
        }
        let r = forward_with(model, &seq, patch, &Capture::None, input.len())?;
        let next = argmax(r.last_logits()) as u32;
        out.push(next);
        seq.tokens.push(next);
    }
    Ok(out)
}
