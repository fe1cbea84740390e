pub mod adapter;
pub mod agent;
pub mod analysis;
pub mod cli;
pub mod data;
pub mod eval;
pub mod llm;
pub mod registry;
pub mod sandbox;
pub mod validate;
