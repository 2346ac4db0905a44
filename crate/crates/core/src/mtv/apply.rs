use super::artifact::MtvArtifact;
use crate::error::Result;
use crate::model::{generate, Model};
use crate::numerics::Scalar;
use crate::tasks::{render_episode, Episode, Item, Layout, Shot};

/// Response of a patched query and the prompt length it cost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Applied {
    pub tokens: Vec<u32>,
    pub prompt_tokens: usize,
}

/// Answers `query` with the artifact's heads patched. `extra_shots` are
/// rendered in front of the query as ordinary in-context examples; with
/// none the prompt is exactly the zero-shot prompt.
pub fn apply_mtv<T: Scalar>(
    model: &Model<T>,
    artifact: &MtvArtifact,
    query: &Item,
    extra_shots: &[Shot],
    layout: &Layout,
    max_new_tokens: usize,
) -> Result<Applied> {
    artifact.check_model(model)?;
    let episode = Episode {
        task: artifact.task.clone(),
        seed: 0,
        shots: extra_shots.to_vec(),
        query: query.clone(),
        gold: Vec::new(),
    };
    let input = render_episode(&episode, layout)?;
    let patch = artifact.patch_set::<T>();
    let tokens = generate(model, &input, Some(&patch), max_new_tokens)?;
    Ok(Applied {
        tokens,
        prompt_tokens: input.len(),
    })
}
