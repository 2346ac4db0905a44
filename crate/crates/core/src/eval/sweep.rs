use std::collections::HashSet;
use std::fs::OpenOptions;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::evaluate::{eval_episodes, evaluate};
use super::pipeline::{run_mtv, MtvSetup};
use super::Protocol;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::mtv::ExtractionConfig;
use crate::numerics::Scalar;
use crate::tasks::TaskSpec;

pub const CSV_HEADER: [&str; 10] = [
    "protocol",
    "task",
    "N",
    "T",
    "S",
    "seed",
    "accuracy",
    "tokens_per_query",
    "wallclock_ms_per_100",
    "notes",
];

/// One line of a results file. Failed jobs keep their key, leave the
/// metric columns empty and carry `error: ...` in `notes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub protocol: String,
    pub task: String,
    #[serde(rename = "N")]
    pub n_shots: usize,
    #[serde(rename = "T")]
    pub n_calls: usize,
    #[serde(rename = "S")]
    pub steps: usize,
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub tokens_per_query: Option<f64>,
    pub wallclock_ms_per_100: Option<f64>,
    pub notes: String,
}

pub type RowKey = (String, String, usize, usize, usize, u64);

impl ResultRow {
    pub fn key(&self) -> RowKey {
        (
            self.protocol.clone(),
            self.task.clone(),
            self.n_shots,
            self.n_calls,
            self.steps,
            self.seed,
        )
    }

    pub fn is_error(&self) -> bool {
        self.notes.starts_with("error:")
    }
}

/// Appends rows, writing the header first when the file is new or empty.
pub fn append_rows(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<()> {
    let path = path.as_ref();
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(CSV_HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_rows(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let mut rd = csv::Reader::from_path(path)?;
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Config(format!("{} does not have the results header", path.display())));
    }
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Grid of extraction settings evaluated with the `mtv` protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub task: TaskSpec,
    pub n_shots: Vec<usize>,
    pub n_calls: Vec<usize>,
    pub steps: Vec<usize>,
    pub seeds: Vec<u64>,
    pub n_eval: usize,
    #[serde(default)]
    pub extraction: ExtractionConfig,
}

impl SweepGrid {
    /// Points in row order: N, then T, then S, then seed.
    pub fn points(&self) -> Vec<(usize, usize, usize, u64)> {
        let mut out = Vec::new();
        for &n in &self.n_shots {
            for &t in &self.n_calls {
                for &s in &self.steps {
                    for &seed in &self.seeds {
                        out.push((n, t, s, seed));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepOptions {
    /// Concurrent jobs; 1 runs everything on the calling thread.
    pub jobs: usize,
    /// Fill the wall-clock column.
    pub timing: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { jobs: 1, timing: false }
    }
}

fn run_point<T: Scalar>(
    model: &Model<T>,
    grid: &SweepGrid,
    (n, t, s, seed): (usize, usize, usize, u64),
    timing: bool,
) -> ResultRow {
    let mut row = ResultRow {
        protocol: "mtv".into(),
        task: grid.task.label(),
        n_shots: n,
        n_calls: t,
        steps: s,
        seed,
        accuracy: None,
        tokens_per_query: None,
        wallclock_ms_per_100: None,
        notes: String::new(),
    };
    let result = (|| {
        let setup = MtvSetup {
            n_shots: n,
            n_calls: t,
            align_shots: 0,
            extraction: ExtractionConfig {
                steps: s,
                ..grid.extraction.clone()
            },
        };
        let artifact = run_mtv(model, &grid.task, &setup, seed)?.artifact;
        let episodes = eval_episodes(&grid.task, 0, grid.n_eval, seed)?;
        let m = evaluate(model, &Protocol::Mtv(&artifact), &grid.task, &episodes, timing)?;
        Ok::<_, Error>((m, artifact.locations.len()))
    })();
    match result {
        Ok((m, heads)) => {
            row.accuracy = Some(m.accuracy);
            row.tokens_per_query = Some(m.tokens_per_query);
            row.wallclock_ms_per_100 = m.wallclock_ms_per_100;
            row.notes = format!("heads={heads}");
        }
        Err(e) => row.notes = format!("error: {}", e.to_string().replace(['\n', '\r'], " ")),
    }
    row
}

/// Runs every grid point not already in `path`, appending rows in grid
/// order as they finish. Failed points are recorded and the sweep goes on.
/// Returns the whole file afterwards.
pub fn sweep<T: Scalar>(
    model: &Model<T>,
    grid: &SweepGrid,
    path: impl AsRef<Path>,
    opts: SweepOptions,
) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    if grid.n_eval == 0 {
        return Err(Error::Task("empty evaluation set".into()));
    }
    let done: HashSet<RowKey> = if path.exists() {
        read_rows(path)?.iter().map(ResultRow::key).collect()
    } else {
        HashSet::new()
    };
    let label = grid.task.label();
    let todo: Vec<_> = points
        .into_iter()
        .filter(|&(n, t, s, seed)| !done.contains(&("mtv".to_string(), label.clone(), n, t, s, seed)))
        .collect();

    for chunk in todo.chunks(opts.jobs.max(1)) {
        let rows: Vec<ResultRow> = if chunk.len() == 1 {
            vec![run_point(model, grid, chunk[0], opts.timing)]
        } else {
            std::thread::scope(|sc| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&p| sc.spawn(move || run_point(model, grid, p, opts.timing)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
            })
        };
        append_rows(path, &rows)?;
    }
    read_rows(path)
}
