use std::fmt;

use gvgs_core::io::config::ConfigError;
use gvgs_core::io::IoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Config,
    MissingInput,
    Format,
    Runtime,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Usage => 2,
            Kind::Config => 3,
            Kind::MissingInput => 4,
            Kind::Format => 5,
            Kind::Runtime => 6,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Config => "config",
            Kind::MissingInput => "missing_input",
            Kind::Format => "format",
            Kind::Runtime => "runtime",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub msg: String,
}

impl CliError {
    pub fn new(kind: Kind, msg: impl Into<String>) -> Self {
        Self { kind, msg: msg.into() }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Self::new(Kind::Usage, msg)
    }

    pub fn runtime(msg: impl fmt::Display) -> Self {
        Self::new(Kind::Runtime, msg.to_string())
    }
}

/// One line: `error kind=<kind> msg="<message>"`, with quotes, backslashes
/// and line breaks escaped.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut msg = String::with_capacity(self.msg.len());
        for c in self.msg.chars() {
            match c {
                '"' => msg.push_str("\\\""),
                '\\' => msg.push_str("\\\\"),
                '\n' => msg.push_str("\\n"),
                '\r' => msg.push_str("\\r"),
                c => msg.push(c),
            }
        }
        write!(f, "error kind={} msg=\"{msg}\"", self.kind.name())
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        let kind = match &e {
            _ if e.is_not_found() => Kind::MissingInput,
            IoError::Format { .. } => Kind::Format,
            IoError::Io { .. } | IoError::Invalid(_) => Kind::Runtime,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(io) => io.into(),
            ConfigError::MissingInput { .. } => Self::new(Kind::MissingInput, e.to_string()),
            other => Self::new(Kind::Config, other.to_string()),
        }
    }
}
