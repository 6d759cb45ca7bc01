//! Prediction-interval networks with distribution-free calibration.
//!
//! A feed-forward regression network emits an ordered triple
//! `(lower, median, upper)` through a monotone head and trains on a
//! composite pinball loss, so the three outputs estimate the `τ/2`, `1/2`,
//! and `1-τ/2` conditional quantiles. Two finite-sample procedures then
//! adjust the raw interval on a held-out calibration set:
//!
//! - **split-conformal expansion** ([`calibrate::split_conformal`]): scale
//!   both half-widths about the median by an order statistic of the
//!   per-observation expansion scores, guaranteeing marginal coverage for
//!   i.i.d. data regardless of how well the network fits;
//! - **level selection** ([`calibrate::select_tau`]): train one network per
//!   level on a grid and keep the largest level whose empirical coverage on
//!   the calibration set reaches the target, with a Hoeffding-style bound
//!   on how far the realized coverage can fall below it.
//!
//! A fixed-width residual variant, a Gaussian mean/variance baseline, and
//! the analytic oracle of the bundled heteroskedastic synthetic benchmark
//! round out the method set, and [`experiment`] orchestrates the
//! generate → split → standardize → fit → calibrate → evaluate pipeline
//! with seeded replication loops.
//!
//! # Example
//!
//! ```
//! use pinet::calibrate::{expand_interval, split_conformal};
//! use pinet::data::{gen_synthetic, split, Role, SyntheticSpec};
//! use pinet::net::{fit, PiNetwork, Predictor, TrainConfig};
//!
//! # fn main() -> pinet::Result<()> {
//! let spec = SyntheticSpec::new(4, 2, 7)?;
//! let data = split(gen_synthetic(&spec, 600)?, (0.5, 0.25, 0.25), 1)?;
//!
//! let cfg = TrainConfig { epochs: 20, ..TrainConfig::default() };
//! let trained = fit(PiNetwork::init(4, &[16], 3)?, &data.subset(Role::Train)?, 0.1, &cfg)?;
//!
//! let cal = split_conformal(&trained.net, &data.subset(Role::Calibration)?, 0.1)?;
//! let test = data.subset(Role::Test)?;
//! let interval = expand_interval(&trained.net.predict_triple(test.features.row(0)), cal.c_hat)?;
//! assert!(interval.lower <= interval.upper);
//! # Ok(())
//! # }
//! ```

pub mod calibrate;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod loss;
pub mod model_io;
pub mod net;
pub mod serde_ext;
pub mod stats;

pub use error::{Error, Result};
