//! Command-line front end and HTTP job service for the strokeforge engine.

pub mod cli;
pub mod server;
