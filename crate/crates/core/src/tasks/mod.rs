//! Synthetic in-context tasks.
//!
//! An [`Episode`] is `N` (input, output) shots followed by a query; it is
//! rendered into a [`ModelInput`](crate::model::ModelInput) with a fixed
//! grammar. Token tasks use disjoint ranges of a small integer vocabulary;
//! soft-token tasks stand in for images with runs of continuous vectors.

mod episode;
mod facility;
mod render;
mod spec;

pub use episode::{corrupt_episode, read_jsonl, sample_episode, write_jsonl, Episode, Item, Shot};
pub use facility::{facility_location_select, facility_location_value};
pub use render::{render_episode, render_supervised, Layout, Supervised};
pub use spec::{layout, vocab, Delimiters, SymbolRange, TaskKind, TaskSpec};
