//! Training-data preprocessing: poisoned-record sanitization via k-means,
//! entity resolution with optional cluster blocking, fairness reweighing,
//! and a weighted logistic-regression trainer to measure their effect.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod error;
pub mod features;
pub mod harness;
pub mod model;
pub mod pipeline;
pub mod resolve;
pub mod reweigh;
pub mod sanitize;
pub mod union_find;

pub use dataset::{
    load_dataset, read_dataset, save_dataset, write_dataset, Dataset, Record, Schema,
};
pub use error::{Error, Result};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineMode, PipelineReport, Stage};
