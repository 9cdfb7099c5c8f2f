//! Command line pipeline and HTTP session service for adaptive face search.

pub mod commands;
pub mod server;
