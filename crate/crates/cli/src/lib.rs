//! Command-line entry points and the `/v1` HTTP service.

pub mod cli;
pub mod config;
pub mod service;
