//! Command-line front end and HTTP service for rule-by-example.

pub mod commands;
pub mod exit;
pub mod service;
