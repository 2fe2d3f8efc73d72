use std::fmt;

use cyclekg_core::Error;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.to_string(),
        }
    }

    /// Input problems; config errors still count as usage errors.
    pub fn data(e: Error) -> Self {
        match e {
            Error::InvalidConfig { .. } => CliError::usage(e),
            e => CliError {
                code: EXIT_DATA,
                message: e.to_string(),
            },
        }
    }

    pub fn training(e: Error) -> Self {
        CliError {
            code: EXIT_TRAINING,
            message: e.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(&self.message)
    }
}
