//! Command-line driver and HTTP control service for progressive scene edits.

pub mod commands;
pub mod config;
pub mod server;
pub mod setup;

pub use config::RunConfig;
