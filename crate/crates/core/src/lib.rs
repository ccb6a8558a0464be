//! Probabilistic error bounds for black-box predictors.
//!
//! Given any fixed prediction model `T: x -> y_hat`, this crate computes
//! upper bounds on the absolute prediction error `|y - T(x)|` that hold
//! with a prescribed probability. Calibration is done by order statistics
//! of scores on an i.i.d. sample ("probabilistic scaling"), so the number
//! of calibration points depends only on the accuracy/confidence pair
//! `(epsilon, delta)` and never on the complexity of the model.
//!
//! The main entry points are:
//!
//! - [`sample_complexity`]: how many calibration samples are needed, and
//!   which order statistic to take, for a given `(epsilon, delta)`.
//! - [`calibration`]: the calibration routines themselves -- a fixed-size
//!   bound, a conditioned bound `gamma * sigma_hat(x)` that adapts to the
//!   query, and a simultaneous bound for a finite family of candidate
//!   (predictor, scale) pairs.
//! - [`kernel`]: a locally weighted kernel ridge predictor with a Parzen
//!   conditional-scale estimate, usable as a family of candidates indexed
//!   by the locality hyper-parameter.
//! - [`synthetic`]: a reproducible synthetic benchmark with a known
//!   optimal predictor and known exact bounds, plus a Monte-Carlo
//!   experiment that checks the coverage guarantee statistically.

pub mod calibration;
pub mod data;
pub mod error;
pub mod kernel;
pub mod normal;
pub mod order_statistics;
pub mod sample_complexity;
pub mod synthetic;

pub use data::Dataset;
pub use error::{Error, Result};
pub use sample_complexity::{ProbabilityLevels, SampleSpec};
