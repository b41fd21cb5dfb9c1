//! Relative performance of functionally generated portfolios in a
//! mean-reverting market with known fundamentals.

pub mod analytics;
pub mod conditions;
pub mod error;
pub mod expectation;
pub mod market;
pub mod processes;
pub mod rng;
pub mod run;
pub mod scenario;

pub use error::{Diagnostic, Error, Result};
pub use expectation::{LogRatioReport, McSettings, Method};
pub use scenario::{CheckTag, Engine, Scenario, ScenarioFile};
pub use run::{run_scenario, RunOptions, RunSummary, Verdict};
