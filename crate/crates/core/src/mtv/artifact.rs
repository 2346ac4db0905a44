use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::model::{HeadLocation, Model, ModelConfig, PatchScope, PatchSet};
use crate::numerics::Scalar;

pub const ARTIFACT_VERSION: u32 = 1;

/// Selected head locations and the mean activations they are patched with.
#[derive(Debug, Clone, PartialEq)]
pub struct MtvArtifact {
    pub version: u32,
    pub task: String,
    /// `"mtv"`, or the baseline that produced the locations.
    pub method: String,
    pub model_fingerprint: String,
    pub config_hash: String,
    pub n_shots: usize,
    pub n_calls: usize,
    pub steps: usize,
    pub patch_scope: PatchScope,
    /// Canonical `(layer, head)` order, no duplicates.
    pub locations: Vec<HeadLocation>,
    pub values: Vec<Vec<f32>>,
    pub seeds: BTreeMap<String, u64>,
}

#[derive(Serialize)]
struct Out<'a> {
    version: u32,
    task: &'a str,
    method: &'a str,
    model_fingerprint: &'a str,
    config_hash: &'a str,
    #[serde(rename = "N")]
    n_shots: usize,
    #[serde(rename = "T")]
    n_calls: usize,
    #[serde(rename = "S")]
    steps: usize,
    patch_scope: PatchScope,
    locations: &'a [HeadLocation],
    values: Vec<Vec<Box<RawValue>>>,
    seeds: &'a BTreeMap<String, u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct In {
    version: u32,
    task: String,
    method: String,
    #[serde(default)]
    model_fingerprint: Option<String>,
    config_hash: String,
    #[serde(rename = "N")]
    n_shots: usize,
    #[serde(rename = "T")]
    n_calls: usize,
    #[serde(rename = "S")]
    steps: usize,
    patch_scope: PatchScope,
    locations: Vec<HeadLocation>,
    values: Vec<Vec<Box<RawValue>>>,
    seeds: BTreeMap<String, u64>,
}

/// Nine significant digits identify every `f32` uniquely.
fn f32_text(x: f32) -> Box<RawValue> {
    RawValue::from_string(format!("{x:.8e}")).expect("formatted float is valid JSON")
}

impl MtvArtifact {
    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.locations.len() {
            return Err(Error::Artifact("values/locations length mismatch".into()));
        }
        if self.model_fingerprint.is_empty() {
            return Err(Error::Artifact("model fingerprint absent".into()));
        }
        if self.locations.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Artifact("locations are not in canonical order without duplicates".into()));
        }
        if let Some(first) = self.values.first() {
            if self.values.iter().any(|v| v.len() != first.len()) {
                return Err(Error::Artifact("value vectors differ in length".into()));
            }
        }
        if self.values.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Artifact("values contain NaN or Inf".into()));
        }
        Ok(())
    }

    /// Checks the artifact against a model: fingerprint, locations in range
    /// and head dimension.
    pub fn check_model<T: Scalar>(&self, model: &Model<T>) -> Result<()> {
        if self.model_fingerprint != model.fingerprint() {
            return Err(Error::Fingerprint {
                artifact: self.model_fingerprint.clone(),
                model: model.fingerprint().to_string(),
            });
        }
        self.check_config(model.config())
    }

    fn check_config(&self, cfg: &ModelConfig) -> Result<()> {
        for l in &self.locations {
            l.check(cfg)?;
        }
        if let Some(v) = self.values.first() {
            if v.len() != cfg.head_dim() {
                return Err(Error::Artifact(format!(
                    "value length {} does not match head dimension {}",
                    v.len(),
                    cfg.head_dim()
                )));
            }
        }
        Ok(())
    }

    pub fn patch_set<T: Scalar>(&self) -> PatchSet<T> {
        let entries = self
            .locations
            .iter()
            .zip(&self.values)
            .map(|(l, v)| (*l, v.iter().map(|&x| T::of(f64::from(x))).collect()))
            .collect();
        PatchSet::new(entries, self.patch_scope)
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        let out = Out {
            version: self.version,
            task: &self.task,
            method: &self.method,
            model_fingerprint: &self.model_fingerprint,
            config_hash: &self.config_hash,
            n_shots: self.n_shots,
            n_calls: self.n_calls,
            steps: self.steps,
            patch_scope: self.patch_scope,
            locations: &self.locations,
            values: self
                .values
                .iter()
                .map(|v| v.iter().copied().map(f32_text).collect())
                .collect(),
            seeds: &self.seeds,
        };
        let mut s = serde_json::to_string_pretty(&out)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: In = serde_json::from_str(text)?;
        if raw.version != ARTIFACT_VERSION {
            return Err(Error::VersionMismatch {
                found: raw.version,
                expected: ARTIFACT_VERSION,
            });
        }
        let model_fingerprint = raw
            .model_fingerprint
            .filter(|f| !f.is_empty())
            .ok_or_else(|| Error::Artifact("model fingerprint absent".into()))?;
        let values = raw
            .values
            .iter()
            .map(|v| {
                v.iter()
                    .map(|x| {
                        x.get()
                            .parse::<f32>()
                            .map_err(|_| Error::Artifact(format!("bad value {}", x.get())))
                    })
                    .collect::<Result<Vec<f32>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let a = Self {
            version: raw.version,
            task: raw.task,
            method: raw.method,
            model_fingerprint,
            config_hash: raw.config_hash,
            n_shots: raw.n_shots,
            n_calls: raw.n_calls,
            steps: raw.steps,
            patch_scope: raw.patch_scope,
            locations: raw.locations,
            values,
            seeds: raw.seeds,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
