//! Overlearning audit toolkit.
//!
//! Measures how much a feature extractor trained for one task also encodes
//! tasks it was never trained on, and suppresses that leakage with
//! gradient-reversal branches fed either known labels or fresh random
//! labels every minibatch.
//!
//! The pipeline: [`dataset`] (or [`mnist`]) produces a multi-task image
//! set, [`trainer`] fits a small CNN with optional suppression branches,
//! [`probes`] trains fixed MLP probes on frozen features to fill the task
//! performance matrix, [`trust`] scores that matrix against the ideal one,
//! and [`report`] renders the results.

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod mnist;
pub mod probes;
pub mod report;
pub mod rng;
pub mod tasks;
pub mod trainer;
pub mod trust;

pub use error::{Error, Result};
pub use tasks::{TaskRegistry, TaskSpec};
