//! Oracles shared by the focused test files and the acceptance report.
#![allow(dead_code)]

pub mod compositing;
pub mod gradients;
pub mod metrics;
