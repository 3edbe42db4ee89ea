//! Uncertainty estimation methods, uncertainty measures and
//! selective-classification evaluation on synthetic whole-slide data.
//!
//! The crate is organised along the processing pipeline:
//!
//! - [`sim`] generates deterministic synthetic slides: tile grids with
//!   polygonal tumor annotations, coverage-threshold labels, per-center
//!   scanner shifts, domain-shift splits and label-noise injectors.
//! - [`nn`] is a small feed-forward classifier with manual backpropagation,
//!   supporting deterministic, dropout and variational (Flipout) layers,
//!   trained with Adam under a reduce-on-plateau schedule.
//! - [`methods`] produces per-sample predictive distributions for the
//!   uncertainty methods (baseline, deep ensemble, MC dropout, SVI,
//!   test-time augmentation, and their ensemble variants).
//! - [`measures`] turns predictive distributions into scalar uncertainty
//!   scores (confidence, normalized entropy, predictive variance).
//! - [`metrics`] evaluates selective classification and calibration:
//!   accuracy-reject curves, AUARC, ECE, AUROC, per-slide medians, rankings.
//! - [`slide`] aggregates tile predictions to slide level: confidence maps,
//!   top-q% pooling and a gated attention-MIL head.
//! - [`io`] reads and writes the CSV/JSON/PGM interchange formats.

// Index-based loops are the clearest way to write the small matrix and
// backprop kernels in this crate.
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod io;
pub mod linalg;
pub mod measures;
pub mod methods;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sim;
pub mod slide;

pub use error::{Error, Result};
