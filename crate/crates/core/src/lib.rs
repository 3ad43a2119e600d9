//! Step-by-step observation planning for embodied question answering over
//! a four-layer indoor scene graph.

pub mod agent;
pub mod dataset;
pub mod environment;
pub mod evaluation;
pub mod exec;
pub mod language_parsing;
pub mod llm_client;
pub mod llm_planner;
pub mod pattern;
pub mod rule_planner;
pub mod scene_graph;
