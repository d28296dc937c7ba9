//! Valuation of income streams driven by a stochastic functional
//! differential equation, in a complete Black-Scholes market.
//!
//! The income `X₀` has drift `μ₀X₀ + ∫X₀(t+τ)φ(dτ)` and volatility loadings
//! `σ₀X₀ + ∫X₀(t+τ)φᵢ(dτ)` over a delay window `[-d, 0]`. When the
//! risk-adjusted measure `Φ` is non-negative and `K(r) > 0`, the value at `t₀`
//! is a linear functional of the observed history, computed by
//! [`valuation::human_capital`]. [`simulation`] prices the same stream by
//! Monte Carlo under either measure, and [`cli`] wraps both in the `sfde`
//! binary.
//!
//! ```
//! use sfde_pricing::history::HistorySegment;
//! use sfde_pricing::market::MarketParams;
//! use sfde_pricing::measure::DelayMeasure;
//! use sfde_pricing::model::{IncomeModel, IncomeParams};
//!
//! let market = MarketParams::single_asset(0.03, 0.07, 0.2)?;
//! let params = IncomeParams {
//!     mu0: 0.01,
//!     sigma0: vec![0.1],
//!     phi: DelayMeasure::dirac(1.0, -1.0, 0.02)?,
//!     phi_vec: vec![DelayMeasure::zero(1.0)?],
//! };
//! let model = IncomeModel::new(params, &market)?;
//! let hist = HistorySegment::constant(0.0, 1.0, 0.01, 1.0)?;
//! let v = sfde_pricing::valuation::human_capital(&model, &hist)?;
//! assert!(v.total > 49.0 && v.total < 50.0);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

// `!(x > 0.0)` is how NaN gets rejected alongside the range check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod history;
pub mod market;
pub mod measure;
pub mod model;
mod stats;
pub mod valuation;
mod rng;
pub mod simulation;
pub mod cli;
