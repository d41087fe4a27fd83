use std::fmt;

use vebm::VebmError;

/// Error classes; each prints with a fixed `error[<kind>]:` prefix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Config,
    Io,
    Parse,
    Model,
}

impl Kind {
    fn tag(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Config => "config",
            Kind::Io => "io",
            Kind::Parse => "parse",
            Kind::Model => "model",
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

    pub fn usage(m: impl Into<String>) -> Self {
        Self::new(Kind::Usage, m)
    }

    pub fn config(m: impl Into<String>) -> Self {
        Self::new(Kind::Config, m)
    }

    pub fn io(m: impl Into<String>) -> Self {
        Self::new(Kind::Io, m)
    }

    pub fn parse(m: impl Into<String>) -> Self {
        Self::new(Kind::Parse, m)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.kind.tag(), self.message)
    }
}

impl From<VebmError> for Failure {
    fn from(e: VebmError) -> Self {
        Self::new(Kind::Model, e.to_string())
    }
}
