#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Similarity-stability analysis and recomputation scheduling for user-based
//! collaborative filtering.

pub mod config;
pub mod decay;
pub mod engine;
pub mod error;
pub mod ingest;
pub mod report;
pub mod scheduler;
pub mod similarity;
pub mod stability;
pub mod store;

pub use error::{Error, Result};
