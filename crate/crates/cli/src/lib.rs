//! Operator surface for the geosquad engine: the `geosquad` subcommands and
//! the HTTP service behind the web UI.

pub mod app;
pub mod commands;
pub mod service;
