//! Configuration handling, result files and command implementations behind
//! the `srk` binary.

pub mod commands;
pub mod config;
pub mod results;

use srk_core::Error;

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_) | Error::Io(_) => 1,
        Error::Validation(_) | Error::Parse { .. } => 2,
        Error::Computation(_) => 3,
    }
}
