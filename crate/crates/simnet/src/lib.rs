//! Scenario orchestration for the V2X simulator: configuration, dataset loading,
//! artifact writing and the five runnable subcommands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifact;
pub mod config;
pub mod data;
pub mod error;
pub mod run;

pub use config::ScenarioConfig;
pub use error::{Result, SimError};
pub use run::{run, Command, RunReport};
