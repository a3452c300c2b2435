//! Scenario runner for the `rbsde-core` solvers.
//!
//! Scenarios are JSON files ([`scenario`]); each command ([`commands`])
//! produces a canonical JSON report ([`canonical`]) listing the asserted
//! checks that failed.

pub mod canonical;
pub mod commands;
pub mod random;
pub mod report;
pub mod runner;
pub mod scenario;

pub use commands::{run, Command, Options, Outcome, RunError};
pub use scenario::{build_scenario, load_scenario, parse_scenario, LoadError, Scenario, ScenarioFile};
