//! Experiment runner for finite-width kernel studies: dataset loading and
//! synthesis, JSON configurations, and the recipes behind the `ntklab` binary.

pub mod config;
pub mod data;
pub mod recipes;
