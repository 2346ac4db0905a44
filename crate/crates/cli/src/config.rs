use std::path::{Path, PathBuf};

use mtv_core::eval::{MtvSetup, ProtocolKind};
use mtv_core::numerics::Precision;
use mtv_core::trainer::Recipe;
use mtv_core::{ExtractionConfig, TaskSpec};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

/// Everything a run needs. Read from `--config`, then overridden by flags;
/// the resolved value is written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Weights file of the host model.
    pub model: Option<PathBuf>,
    pub task: TaskSpec,
    #[serde(rename = "N")]
    pub n_shots: usize,
    #[serde(rename = "T")]
    pub n_calls: usize,
    #[serde(rename = "S")]
    pub steps: usize,
    /// Shots in each alignment example; 0 matches zero-shot evaluation.
    pub align_shots: usize,
    pub extraction: ExtractionConfig,
    pub protocols: Vec<ProtocolKind>,
    /// Precomputed artifact for the `mtv` protocols of `eval`.
    pub artifact: Option<PathBuf>,
    /// Finetuned model for the `finetuned` protocol.
    pub finetuned: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub n_eval: usize,
    pub precision: Precision,
    pub sweep: SweepAxes,
    pub compare: CompareRows,
    pub oracle: OracleConfig,
    pub gradcheck: GradcheckConfig,
    /// Training recipe; the reference recipe when absent.
    pub recipe: Option<Recipe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepAxes {
    #[serde(rename = "N")]
    pub n_shots: Vec<usize>,
    #[serde(rename = "T")]
    pub n_calls: Vec<usize>,
    #[serde(rename = "S")]
    pub steps: Vec<usize>,
}

impl Default for SweepAxes {
    fn default() -> Self {
        Self {
            n_shots: vec![1, 2, 4, 8],
            n_calls: vec![10, 50, 100],
            steps: vec![50],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareRows {
    pub icl_shots: Vec<usize>,
    pub mtv_plus_shots: Vec<usize>,
    pub fv_layer: Option<usize>,
}

impl Default for CompareRows {
    fn default() -> Self {
        Self {
            icl_shots: vec![4],
            mtv_plus_shots: Vec::new(),
            fv_layer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub max_heads: usize,
    /// Alignment examples scored per mask.
    pub n_alignment: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            max_heads: mtv_core::eval::MAX_BRUTE_FORCE_HEADS,
            n_alignment: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub model: mtv_core::ModelConfig,
    pub epsilon: f64,
    pub tolerance: f64,
    pub n_episodes: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            model: mtv_core::ModelConfig::new(2, 2, 16, 128, 64),
            epsilon: 1e-5,
            tolerance: 1e-4,
            n_episodes: 2,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: None,
            task: TaskSpec::bijection(0),
            n_shots: 4,
            n_calls: 50,
            steps: 50,
            align_shots: 0,
            extraction: ExtractionConfig::default(),
            protocols: Vec::new(),
            artifact: None,
            finetuned: None,
            out_dir: None,
            seeds: vec![0],
            n_eval: 200,
            precision: Precision::F32,
            sweep: SweepAxes::default(),
            compare: CompareRows::default(),
            oracle: OracleConfig::default(),
            gradcheck: GradcheckConfig::default(),
            recipe: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
    }

    pub fn setup(&self) -> MtvSetup {
        MtvSetup {
            n_shots: self.n_shots,
            n_calls: self.n_calls,
            align_shots: self.align_shots,
            extraction: ExtractionConfig {
                steps: self.steps,
                ..self.extraction.clone()
            },
        }
    }

    pub fn model_path(&self) -> Result<&Path, Failure> {
        self.model
            .as_deref()
            .ok_or_else(|| Failure::usage("no model given (set \"model\" or pass --model)"))
    }

    /// Output directory: flag or config value, then `MTV_OUT_DIR`, then `out`.
    pub fn resolve_out_dir(&mut self) {
        if self.out_dir.is_none() {
            let dir = std::env::var_os("MTV_OUT_DIR").map(PathBuf::from).unwrap_or_else(|| "out".into());
            self.out_dir = Some(dir);
        }
    }

    pub fn out_dir(&self) -> &Path {
        self.out_dir.as_deref().unwrap_or(Path::new("out"))
    }

    pub fn validate(&self) -> Result<(), Failure> {
        if self.seeds.is_empty() {
            return Err(Failure::config("seeds must not be empty"));
        }
        self.extraction.validate()?;
        self.task.validate()?;
        Ok(())
    }
}

/// Parses task labels such as `bijection-3` or `soft-class-0`.
pub fn parse_task(label: &str, embed_dim: usize) -> Result<TaskSpec, Failure> {
    let (kind, id) = label
        .rsplit_once('-')
        .and_then(|(k, id)| Some((k, id.parse::<u32>().ok()?)))
        .ok_or_else(|| Failure::usage(format!("task {label:?} is not of the form <kind>-<id>")))?;
    Ok(match kind {
        "bijection" => TaskSpec::bijection(id),
        "lookup" => TaskSpec::lookup(id),
        "two-way" => TaskSpec::two_way(id),
        "soft-class" => TaskSpec::soft_class(id, embed_dim),
        _ => return Err(Failure::usage(format!("unknown task kind {kind:?}"))),
    })
}
