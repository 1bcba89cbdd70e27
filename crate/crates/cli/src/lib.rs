//! Command-line driver for poiverify: configuration, artifact manifest,
//! subcommands and the verification service.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod serve;

pub use commands::{
    cmd_bench, cmd_build_index, cmd_generate, cmd_train, cmd_verify, load_verifier, VerifyInput,
    WireRequest,
};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use manifest::{ArtifactKind, Manifest};
