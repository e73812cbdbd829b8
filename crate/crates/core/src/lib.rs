#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baseline_cox;
pub mod cli;
pub mod cohort;
pub mod comparator;
pub mod error;
pub mod featurize;
pub mod inference;
pub mod llm_client;
pub mod metrics;
pub mod output;
pub mod pipeline;
pub mod pairs;
pub mod seed;
pub mod synth;
pub mod textualize;

pub use error::{Error, Result};
