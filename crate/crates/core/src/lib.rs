//! Log-optimal portfolio selection driven by calibrated conditional forecasts.
//!
//! The forecaster plays a vector-payoff game against the market whose target
//! set is a small l1 ball; approaching it (Blackwell) makes the forecasts
//! calibrated with respect to the side-information signal. Each round the
//! investor draws a forecast and holds the log-optimal portfolio for the
//! forecast's conditional distribution at the current signal.
//!
//! Modules, bottom up:
//! - [`discretization`]: signal, return and conditional-forecast grids.
//! - [`game`]: dense zero-sum matrix game solver.
//! - [`approachability`]: payoff vectors, l1-ball projection, halfspace game.
//! - [`forecaster`]: the randomized calibrated forecaster and its ledger.
//! - [`kelly`]: log-optimal portfolios and classical comparators.
//! - [`engine`]: the round protocol, markets and refinement schedules.

pub mod approachability;
pub mod discretization;
pub mod engine;
pub mod error;
pub mod forecaster;
pub mod game;
pub mod kelly;

pub use error::{Error, Result};
