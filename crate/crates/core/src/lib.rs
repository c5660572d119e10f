//! Deterministic portfolio-allocation backtesting for daily crypto data.
//!
//! The pipeline runs universe selection, per-asset metric evaluation, hybrid
//! inverse-volatility / Sharpe weighting and drawdown-banded exposure control,
//! with baselines, a threshold tuner and report rendering on top.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod allocation;
pub mod engine;
pub mod error;
pub mod exchange_client;
pub mod market_data;
pub mod metrics;
pub mod report;
pub mod risk;
pub mod tuner;
pub mod universe;

pub use error::{Error, ErrorKind, Result};
