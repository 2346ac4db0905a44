use std::fmt;
use std::process::ExitCode;

/// Exit status classes. The numeric values are part of the interface and
/// listed in `--help`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Config,
    Fingerprint,
    Io,
    Runtime,
    Check,
}

impl Kind {
    pub fn code(self) -> u8 {
        match self {
            Kind::Usage => 2,
            Kind::Config => 3,
            Kind::Fingerprint => 4,
            Kind::Io => 5,
            Kind::Runtime => 6,
            Kind::Check => 7,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Config => "config",
            Kind::Fingerprint => "fingerprint",
            Kind::Io => "io",
            Kind::Runtime => "runtime",
            Kind::Check => "check",
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Kind::Usage, message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Kind::Config, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(Kind::Io, message)
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.kind.code())
    }
}

/// One line: `error kind=<kind> code=<n> message="<escaped>"`.
impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = serde_json::to_string(&self.message.replace(['\n', '\r'], " ")).unwrap_or_default();
        write!(f, "error kind={} code={} message={msg}", self.kind.name(), self.kind.code())
    }
}

impl From<mtv_core::Error> for Failure {
    fn from(e: mtv_core::Error) -> Self {
        use mtv_core::Error as E;
        let kind = match root(&e) {
            E::Config(_) => Kind::Config,
            E::Fingerprint { .. } => Kind::Fingerprint,
            E::Io { .. }
            | E::BadMagic
            | E::VersionMismatch { .. }
            | E::Truncated(_)
            | E::Checksum { .. }
            | E::Artifact(_)
            | E::Json(_)
            | E::Csv(_) => Kind::Io,
            _ => Kind::Runtime,
        };
        Self::new(kind, e.to_string())
    }
}

fn root(e: &mtv_core::Error) -> &mtv_core::Error {
    match e {
        mtv_core::Error::Episode { source, .. } => root(source),
        other => other,
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self::new(Kind::Runtime, e.to_string())
    }
}
