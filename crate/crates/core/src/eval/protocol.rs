use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mtv::MtvArtifact;

/// How queries are answered. Artifacts are borrowed; the protocol itself
/// does no extraction.
#[derive(Debug, Clone, Copy)]
pub enum Protocol<'a> {
    ZeroShot,
    Icl(usize),
    Mtv(&'a MtvArtifact),
    MtvPlusShots(&'a MtvArtifact, usize),
    FvMode(&'a MtvArtifact),
    VtvMode(&'a MtvArtifact),
    /// Zero-shot prompting of a finetuned model.
    Finetuned,
}

impl Protocol<'_> {
    pub fn kind(&self) -> ProtocolKind {
        match *self {
            Protocol::ZeroShot => ProtocolKind::ZeroShot,
            Protocol::Icl(k) => ProtocolKind::Icl(k),
            Protocol::Mtv(_) => ProtocolKind::Mtv,
            Protocol::MtvPlusShots(_, k) => ProtocolKind::MtvPlusShots(k),
            Protocol::FvMode(_) => ProtocolKind::FvMode,
            Protocol::VtvMode(_) => ProtocolKind::VtvMode,
            Protocol::Finetuned => ProtocolKind::Finetuned,
        }
    }

    /// Explicit shots placed in the prompt.
    pub fn shots(&self) -> usize {
        match *self {
            Protocol::Icl(k) | Protocol::MtvPlusShots(_, k) => k,
            _ => 0,
        }
    }

    pub fn artifact(&self) -> Option<&MtvArtifact> {
        match *self {
            Protocol::Mtv(a) | Protocol::MtvPlusShots(a, _) | Protocol::FvMode(a) | Protocol::VtvMode(a) => Some(a),
            _ => None,
        }
    }
}

/// A protocol without its artifact, as named on the command line and in
/// result files: `zero-shot`, `icl-4`, `mtv`, `mtv+1`, `fv-mode`,
/// `vtv-mode`, `finetuned`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ProtocolKind {
    ZeroShot,
    Icl(usize),
    Mtv,
    MtvPlusShots(usize),
    FvMode,
    VtvMode,
    Finetuned,
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtocolKind::ZeroShot => f.write_str("zero-shot"),
            ProtocolKind::Icl(k) => write!(f, "icl-{k}"),
            ProtocolKind::Mtv => f.write_str("mtv"),
            ProtocolKind::MtvPlusShots(k) => write!(f, "mtv+{k}"),
            ProtocolKind::FvMode => f.write_str("fv-mode"),
            ProtocolKind::VtvMode => f.write_str("vtv-mode"),
            ProtocolKind::Finetuned => f.write_str("finetuned"),
        }
    }
}

impl FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let shots = |n: &str| -> Result<usize> {
            match n.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(k),
                _ => Err(Error::Config(format!("protocol {s:?}: shot count must be a positive integer"))),
            }
        };
        Ok(match s {
            "zero-shot" => ProtocolKind::ZeroShot,
            "mtv" => ProtocolKind::Mtv,
            "fv-mode" => ProtocolKind::FvMode,
            "vtv-mode" => ProtocolKind::VtvMode,
            "finetuned" => ProtocolKind::Finetuned,
            _ => {
                if let Some(k) = s.strip_prefix("icl-") {
                    ProtocolKind::Icl(shots(k)?)
                } else if let Some(k) = s.strip_prefix("mtv+") {
                    ProtocolKind::MtvPlusShots(shots(k)?)
                } else {
                    return Err(Error::Config(format!("unknown protocol {s:?}")));
                }
            }
        })
    }
}

impl TryFrom<String> for ProtocolKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ProtocolKind> for String {
    fn from(p: ProtocolKind) -> String {
        p.to_string()
    }
}
