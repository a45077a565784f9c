use std::fmt;

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub const EXIT_CHECK: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    pub fn check(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CHECK,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Parameter problems are configuration errors; anything else raised
/// while reading or fitting data is a data error.
impl From<lacforest::Error> for CliError {
    fn from(e: lacforest::Error) -> Self {
        match e {
            lacforest::Error::InvalidParameter(_) => Self::config(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}
