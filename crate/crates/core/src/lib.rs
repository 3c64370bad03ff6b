//! Multi-agent geospatial copilot engine.

pub mod agents;
pub mod backend;
pub mod dataset;
pub mod engine;
pub mod evaluator;
pub mod events;
pub mod orchestrator;
pub mod prompts;
pub mod types;
pub mod registry;
pub mod sandbox;
pub mod taskgen;
