pub mod commands;
pub mod config;

pub use commands::{cmd_ablate, cmd_eval, cmd_report, cmd_train, verify_artifacts, Manifest};
pub use config::RunConfig;
