//! Consumption panels, revealed-preference tests, synthetic GARP-consistent
//! generation and forecast evaluation.

pub mod evalkit;
pub mod panel;
pub mod revpref;
pub mod syngen;
