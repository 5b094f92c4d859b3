//! Horseshoe mixture-of-experts regression fitted by particle learning.
//!
//! The model routes each observation `(x, y)` to one of `K` Gaussian linear
//! experts through a stick-breaking logistic gate. Gate coefficients carry a
//! horseshoe prior, expert coefficients a Normal-inverse-gamma prior.
//! Inference is sequential: a particle filter that propagates sufficient
//! statistics, resampling by the one-step predictive before each update, and
//! accumulating an online estimate of the marginal likelihood.
//!
//! Modules, bottom up:
//!
//! * [`dist`]: densities and samplers (Student-t, inverse-gamma, Pólya–Gamma,
//!   Gaussian in information form, resampling).
//! * [`expert`]: conjugate Normal-inverse-gamma experts.
//! * [`gate`]: stick-breaking gate with Pólya–Gamma augmentation and
//!   horseshoe shrinkage.
//! * [`engine`]: the particle-learning filter, evidence, summaries, scoring.
//! * [`synthgen`]: the sparse synthetic benchmark generator.
//! * [`cli`]: file formats and the `hsmoe` command implementations.
//!
//! Expert indices are zero-based throughout the library. Files written by
//! the CLI (`z_true` columns, top-k lists) use one-based expert numbers.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dist;
pub mod engine;
pub mod error;
pub mod expert;
pub mod gate;
pub mod synthgen;

pub use error::{Error, Result};
