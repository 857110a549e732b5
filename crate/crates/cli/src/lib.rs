//! Command-line pipeline driver and HTTP service for `clickpred`.

pub mod commands;
pub mod http;
