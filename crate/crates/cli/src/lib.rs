//! Command-line front end and live session service.

pub mod cli;
pub mod service;
