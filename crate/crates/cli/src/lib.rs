//! Model files, command pipelines and JSON/CSV reports on top of `ufgkit-core`.

pub mod commands;
pub mod model;
pub mod report;

pub use commands::{execute, run, CliError, Command, Outcome, RunArgs};
pub use model::{build_model, parse_model, serialize_model, Model, ModelError, ModelFile};
pub use report::Report;
