//! Command line and HTTP surface of the two-step triage model.

pub mod api;
pub mod cli;
pub mod config;
pub mod service;
