use super::{Delimiters, Episode, Item};
use crate::error::{Error, Result};
use crate::model::{ModelInput, SoftSegment};

/// Prompt grammar: `[x_1] SEP [y_1] EOS ... [x_N] SEP [y_N] EOS [q] SEP`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub delimiters: Delimiters,
    pub max_context: usize,
}

impl Layout {
    pub fn new(delimiters: Delimiters, max_context: usize) -> Self {
        Self {
            delimiters,
            max_context,
        }
    }

    /// Token count of one rendered shot.
    pub fn shot_len(input_len: usize, output_len: usize) -> usize {
        input_len + output_len + 2
    }

    /// Token count of the rendered prompt for `episode`.
    pub fn prompt_len(episode: &Episode) -> usize {
        episode
            .shots
            .iter()
            .map(|s| Self::shot_len(s.input.len(), s.output.len()))
            .sum::<usize>()
            + episode.query.len()
            + 1
    }
}

fn push_item(out: &mut ModelInput, item: &Item) {
    if !item.soft.is_empty() {
        out.soft.push(SoftSegment {
            position: out.tokens.len(),
            vectors: item.soft.clone(),
        });
    }
    out.tokens.extend_from_slice(&item.tokens);
}

fn render_unchecked(episode: &Episode, d: &Delimiters) -> ModelInput {
    let mut out = ModelInput::default();
    for shot in &episode.shots {
        push_item(&mut out, &shot.input);
        out.tokens.push(d.sep);
        out.tokens.extend_from_slice(&shot.output);
        out.tokens.push(d.eos);
    }
    push_item(&mut out, &episode.query);
    out.tokens.push(d.sep);
    out
}

/// Renders the prompt, ending with the query's separator.
pub fn render_episode(episode: &Episode, layout: &Layout) -> Result<ModelInput> {
    let need = Layout::prompt_len(episode);
    if need > layout.max_context {
        return Err(Error::ContextOverflow {
            required: need,
            available: layout.max_context,
        });
    }
    Ok(render_unchecked(episode, &layout.delimiters))
}

/// A rendered episode followed by its gold response, with the positions
/// whose next-token prediction is an answer token.
#[derive(Debug, Clone, PartialEq)]
pub struct Supervised {
    pub input: ModelInput,
    /// `(position, target)` pairs: the logits at `position` should predict
    /// `target`.
    pub targets: Vec<(usize, u32)>,
}

/// Prompt plus gold, supervising every shot output and the gold response.
pub fn render_supervised(episode: &Episode, layout: &Layout) -> Result<Supervised> {
    if episode.gold.is_empty() {
        return Err(Error::Task("episode has an empty gold response".into()));
    }
    let prompt = render_episode(episode, layout)?;
    let need = prompt.len() + episode.gold.len();
    // The final gold token is never fed back, so it needs no position.
    if need - 1 > layout.max_context {
        return Err(Error::ContextOverflow {
            required: need - 1,
            available: layout.max_context,
        });
    }
    let mut targets = Vec::new();
    let mut pos = 0;
    for shot in &episode.shots {
        pos += shot.input.len();
        for (k, &t) in shot.output.iter().enumerate() {
            targets.push((pos + k, t));
        }
        pos += shot.output.len() + 2;
    }
    pos += episode.query.len();
    for (k, &t) in episode.gold.iter().enumerate() {
        targets.push((pos + k, t));
    }
    let mut input = prompt;
    input.tokens.extend_from_slice(&episode.gold[..episode.gold.len() - 1]);
    Ok(Supervised { input, targets })
}
