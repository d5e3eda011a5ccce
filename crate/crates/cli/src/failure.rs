//! Failure classification for exit codes: 2 for configuration problems,
//! 3 for IO problems, 4 for numerical problems. clap's own usage errors
//! also exit with 2.

use camb_core::Error;
use std::fmt;

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Io(String),
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(msg) => write!(f, "{msg}"),
            Failure::Io(msg) => write!(f, "{msg}"),
            Failure::Numerical(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Param { .. } | Error::Shape { .. } | Error::Contract(_) => {
                Failure::Config(e.to_string())
            }
            Error::Io(_) | Error::Parse { .. } => Failure::Io(e.to_string()),
            Error::Domain { .. } | Error::Eval(_) => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

/// Classifies a core error while naming the file it arose from.
pub fn in_file(e: Error, path: &std::path::Path) -> Failure {
    match Failure::from(e) {
        Failure::Config(m) => Failure::Config(format!("{}: {m}", path.display())),
        Failure::Io(m) => Failure::Io(format!("{}: {m}", path.display())),
        Failure::Numerical(m) => Failure::Numerical(format!("{}: {m}", path.display())),
    }
}
