//! Checks shared by the unit-style test targets and the acceptance runner.
#![allow(dead_code)]

pub mod dataset;
pub mod gradients;
pub mod trust_props;
