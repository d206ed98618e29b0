//! Desk-scale laboratory for spatial-temporal traffic forecasting.
//!
//! Four model variants — a GRU backbone and an attention backbone, each
//! with swappable graph-convolution / graph-attention / full-attention
//! spatial blocks — built on a minimal f64 autodiff core, plus the data
//! pipeline, trainer, metrics, and a benchmark harness around them.

pub mod error;
pub mod data;
pub mod graph;
pub mod layers;
pub mod tensor;

pub use error::{Error, Result};
