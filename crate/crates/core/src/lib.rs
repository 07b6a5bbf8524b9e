//! Risk-controlled routing between a utility-seeking Primary scorer and a
//! conservative Guardian scorer.
//!
//! The Primary model scores every action of a context. Actions whose score is
//! within `lambda` of the top score form the candidate set; when that set is a
//! singleton the Primary acts alone, otherwise the Guardian picks from it.
//! `lambda` is fitted on a calibration sample with conformal risk control so
//! that the expected residual guardrail loss on a fresh context stays below a
//! user budget `alpha`.
//!
//! Module map:
//! - [`scores`]: candidate sets, score gaps, the residual-risk loss.
//! - [`calibrate`]: empirical risk curves and the CRC threshold fit.
//! - [`route`]: deployment-time routing and the pure score-gap router.
//! - [`providers`]: record files, the remote scorer client, tie perturbation.
//! - [`cost`]: token-based dollar accounting.
//! - [`eval`]: repeated-split experiment harness and random-router baselines.
//! - [`theory`]: synthetic families for checking the finite-sample guarantees.

#![forbid(unsafe_code)]

pub mod calibrate;
pub mod cost;
mod error;
pub mod eval;
pub mod exec;
pub mod providers;
pub mod route;
pub mod scores;
pub mod theory;

pub use error::{Error, Result};
