//! Command-line front end for `apgx`: configuration files, run
//! orchestration and artifact output.

pub mod commands;
pub mod config;
