//! Scenario runner and acceptance suite for `pathspace-core`.
//!
//! A scenario (see [`config`]) names a flow, a simulation grid and a list of
//! checks; [`run_scenario`] evaluates the checks in order and produces a
//! [`ScenarioReport`] whose verdicts are derived from the recorded items.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod checks;
pub mod config;
pub mod error;
pub mod report;
pub mod runner;
pub mod scenarios;

pub use config::Scenario;
pub use error::{HarnessError, Result};
pub use report::ScenarioReport;
pub use runner::{run_scenario, RunOptions};

/// A built-in scenario name or a path to a scenario file.
pub fn load(name_or_path: &str) -> Result<Scenario> {
    match scenarios::builtin_source(name_or_path) {
        Some(src) => Scenario::parse(src),
        None => {
            let path = std::path::Path::new(name_or_path);
            if !path.exists() {
                return Err(HarnessError::config(format!(
                    "`{name_or_path}` is neither a built-in scenario nor an existing file"
                )));
            }
            Scenario::from_file(path)
        }
    }
}
