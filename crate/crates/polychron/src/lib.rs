//! Discrete choice modelling of simultaneous travel-time activities.
//!
//! Travellers rarely do just one thing on a journey: they read, work, talk or
//! doze, often several at once. `polychron` models how people mix activity
//! types while travelling and what that mixing does to the value of travel
//! time:
//!
//! - [`choiceset`] — activity nests and the combinatorics of nest
//!   combinations, the model's alternatives;
//! - [`cnl`] — systematic utilities, cross-nested logit probabilities,
//!   log-likelihood and analytic gradients;
//! - [`estimation`] — constrained maximum likelihood, covariance and fit
//!   statistics;
//! - [`validation`] — holdout splits, predicted-vs-observed frequencies and
//!   the chi-square goodness-of-fit test;
//! - [`synth`] — synthetic survey generation and parameter-recovery
//!   experiments;
//! - [`timeshare`] — the reformulated time constraint that lets one time
//!   interval carry several activities;
//! - [`vtts`] — value-of-travel-time-savings formulas with and without time
//!   sharing.
//!
//! The `polychron-cli` crate wraps these modules in a command-line toolkit.
//! A narrative guide lives in the `book/` directory of the repository; its
//! code snippets compile and run as this crate's doc-tests (see [`guide`]).

pub mod choiceset;
pub mod cnl;
pub mod error;
pub mod estimation;
pub mod synth;
pub mod timeshare;
pub mod validation;
pub mod vtts;

pub mod guide;

pub use error::{Error, Result};
