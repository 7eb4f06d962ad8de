//! Probability-graph semantic compression of knowledge-graph messages, plus a
//! joint communication/computation energy model and optimizer.

pub mod cli;
pub mod codec;
pub mod cost_model;
pub mod generator;
pub mod kg;
pub mod optimizer;
pub mod prob_graph;
pub mod sweep;
