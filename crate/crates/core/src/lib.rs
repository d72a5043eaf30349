//! Tensor-network structure search with an LLM-driven loop for discovering
//! new sampling generators.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod decompose;
pub mod format;
pub mod generators;
pub mod listings;
pub mod llm;
mod network;
pub mod orchestrator;
pub mod pool;
pub mod sandbox;
pub mod search;
pub mod tensor;
