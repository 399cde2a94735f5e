//! Workflow engine for virtual-laboratory experiment pipelines.

pub mod builtin;
pub mod datastore;
pub mod dsl;
pub mod engine;
pub mod iteration;
pub mod ml;
pub mod plugin;
pub mod rng;
pub mod sim;
