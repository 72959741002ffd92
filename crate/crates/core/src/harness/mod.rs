// SPDX-License-Identifier: Apache-2.0

//! Scenario scripts, the runner, reports, the bundled corpus and the
//! microbenchmarks.

pub mod app;
pub mod bench;
pub mod corpus;
pub mod report;
pub mod runner;
pub mod script;
pub mod traces;

pub use report::{ReportFormat, ScenarioReport};
pub use runner::{run, RunError, RunOptions};
pub use script::{Mode, Script, ScriptError};
