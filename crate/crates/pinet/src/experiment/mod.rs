//! Experiment orchestration: configuration, the
//! generate/load → split → standardize → fit → calibrate → evaluate
//! pipeline, replication loops, and report emission.
//!
//! Replicates are embarrassingly parallel: each derives its own seeds from
//! the master seed and owns its data, networks, and RNG streams. Report
//! aggregation is a final single-writer step.

mod pipeline;
mod report;

pub use pipeline::{
    build_dataset, calibrate_models, evaluate_models, prepare, prepare_with, replicate_seed,
    run_experiment, run_replicate, run_replications, train_models, CalibrationSet, IntervalModel,
    ModelSet, PreparedData, ReplicateArtifacts,
};
pub use report::{
    write_metrics_csv, write_report_files, AggregateRow, MethodReport, ReplicateReport, RunReport,
};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::calibrate::TauGrid;
use crate::error::{Error, Result};
use crate::net::Optimizer;
use crate::stats::fnv1a;

/// Where the observations come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum DataSource {
    /// The heteroskedastic synthetic process. `n` is the total number of
    /// generated rows; the split fractions carve it into the three roles.
    Synthetic {
        dim: usize,
        signal_dims: usize,
        n: usize,
    },
    /// A CSV file with named target and feature columns.
    Csv {
        path: PathBuf,
        target: String,
        features: Vec<String>,
    },
}

/// Interval construction methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Coverage-based selection of the training level on a grid.
    Pav,
    /// Split-conformal expansion of the interval network.
    ConfNn,
    /// Fixed-width conformal from absolute residuals.
    ConfFw,
    /// Gaussian mean/variance baseline.
    NegLl,
    /// Analytic oracle intervals (synthetic data only).
    Oracle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pav => "pav",
            Method::ConfNn => "conf-nn",
            Method::ConfFw => "conf-fw",
            Method::NegLl => "neg-ll",
            Method::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "pav" => Ok(Method::Pav),
            "conf-nn" => Ok(Method::ConfNn),
            "conf-fw" => Ok(Method::ConfFw),
            "neg-ll" => Ok(Method::NegLl),
            "oracle" => Ok(Method::Oracle),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// The predictor the conformal methods calibrate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum NetworkSpec {
    /// Train a fresh interval network with these hidden layer sizes.
    Mlp { hidden: Vec<usize> },
    /// Calibration-only studies: a frozen constant triple, nothing is
    /// trained.
    FixedTriple { lower: f64, median: f64, upper: f64 },
}

/// Training hyperparameters as they appear in a configuration file. Seeds
/// are not part of the file; they are derived from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: Optimizer::adam_default(),
        }
    }
}

fn default_replications() -> usize {
    1
}

fn default_index_bins() -> usize {
    10
}

/// A complete experiment description. One file per experiment; the report
/// echoes the canonical form back for the audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Fractions of rows assigned to train/calibration/test.
    pub split: (f64, f64, f64),
    #[serde(default)]
    pub standardize: bool,
    pub network: NetworkSpec,
    #[serde(default)]
    pub train: TrainParams,
    pub methods: Vec<Method>,
    pub alpha: f64,
    /// Training level for the conformal methods; defaults to `alpha`.
    #[serde(default)]
    pub tau: Option<f64>,
    /// Level grid for the selection method; defaults to
    /// `{0.10, 0.09, …, 0.01, 0}`.
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    /// Initialize each grid network from its trained neighbor instead of
    /// fitting independently.
    #[serde(default)]
    pub warm_start: bool,
    /// Bins for the conditional-coverage-by-index curve.
    #[serde(default = "default_index_bins")]
    pub index_bins: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Default artifact directory; the command line's `--out` overrides it.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Check the cross-field invariants. Returns the canonicalized config
    /// (methods deduplicated, defaults resolved into place).
    pub fn validated(mut self) -> Result<Self> {
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods requested".into()));
        }
        let mut seen = Vec::new();
        self.methods.retain(|m| {
            if seen.contains(m) {
                false
            } else {
                seen.push(*m);
                true
            }
        });
        let synthetic = matches!(self.data, DataSource::Synthetic { .. });
        if self.methods.contains(&Method::Oracle) && !synthetic {
            return Err(Error::Config(
                "the oracle method requires a synthetic data source".into(),
            ));
        }
        if let DataSource::Synthetic {
            dim, signal_dims, ..
        } = &self.data
        {
            if signal_dims > dim {
                return Err(Error::Config(format!(
                    "signal_dims {signal_dims} exceeds dim {dim}"
                )));
            }
        }
        if let Some(tau) = self.tau {
            if !(0.0 < tau && tau <= 1.0) {
                return Err(Error::Config(format!("tau must lie in (0,1], got {tau}")));
            }
        }
        let fixed = matches!(self.network, NetworkSpec::FixedTriple { .. });
        if fixed && self.methods.contains(&Method::Pav) {
            return Err(Error::Config(
                "the selection method needs trainable networks, not a fixed triple".into(),
            ));
        }
        if fixed && self.methods.contains(&Method::NegLl) {
            return Err(Error::Config(
                "the gaussian baseline needs a trainable network, not a fixed triple".into(),
            ));
        }
        if self.methods.contains(&Method::Pav) {
            // validates: contains 0, values in [0,1], at least one nonzero
            let levels = self
                .grid
                .clone()
                .unwrap_or_else(|| TauGrid::default_ten().levels().to_vec());
            TauGrid::new(levels)?;
        }
        let (f1, f2, f3) = self.split;
        if f1 <= 0.0 || f2 <= 0.0 || f3 <= 0.0 || (f1 + f2 + f3 - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be positive and sum to 1, got ({f1}, {f2}, {f3})"
            )));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.index_bins < 2 {
            return Err(Error::Config("index_bins must be at least 2".into()));
        }
        Ok(self)
    }

    /// Training level for the conformal methods (`alpha` unless pinned).
    pub fn conformal_tau(&self) -> f64 {
        self.tau.unwrap_or(self.alpha)
    }

    /// The selection grid (default ten-step grid unless pinned).
    pub fn tau_grid(&self) -> Result<TauGrid> {
        match &self.grid {
            Some(levels) => TauGrid::new(levels.clone()),
            None => Ok(TauGrid::default_ten()),
        }
    }

    /// Stable fingerprint of the canonical JSON form, used in error
    /// context and report provenance.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a(json.as_bytes()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validated()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> ExperimentConfig {
        ExperimentConfig {
            data: DataSource::Synthetic {
                dim: 4,
                signal_dims: 2,
                n: 600,
            },
            split: (0.5, 0.25, 0.25),
            standardize: false,
            network: NetworkSpec::Mlp { hidden: vec![8] },
            train: TrainParams {
                epochs: 5,
                batch_size: 32,
                ..TrainParams::default()
            },
            methods: vec![Method::ConfNn],
            alpha: 0.1,
            tau: None,
            grid: None,
            warm_start: false,
            index_bins: 10,
            replications: 1,
            output_dir: None,
            seed: 7,
        }
    }

    #[test]
    fn validation_catches_bad_configs() {
        let mut c = base_config();
        c.alpha = 1.5;
        assert!(c.validated().is_err());

        let mut c = base_config();
        c.methods = vec![];
        assert!(c.validated().is_err());

        let mut c = base_config();
        c.data = DataSource::Csv {
            path: "x.csv".into(),
            target: "y".into(),
            features: vec!["a".into()],
        };
        c.methods = vec![Method::Oracle];
        assert!(c.validated().is_err());

        let mut c = base_config();
        c.network = NetworkSpec::FixedTriple {
            lower: -1.0,
            median: 0.0,
            upper: 1.0,
        };
        c.methods = vec![Method::Pav];
        assert!(c.validated().is_err());

        let mut c = base_config();
        c.grid = Some(vec![0.1, 0.05]); // missing 0
        c.methods = vec![Method::Pav];
        assert!(c.validated().is_err());

        let mut c = base_config();
        c.split = (0.5, 0.5, 0.0);
        assert!(c.validated().is_err());

        let mut c = base_config();
        c.replications = 0;
        assert!(c.validated().is_err());
    }

    #[test]
    fn methods_are_deduplicated_in_order() {
        let mut c = base_config();
        c.methods = vec![Method::ConfNn, Method::Pav, Method::ConfNn];
        let c = c.validated().unwrap();
        assert_eq!(c.methods, vec![Method::ConfNn, Method::Pav]);
    }

    #[test]
    fn config_json_round_trip_and_hash_stability() {
        let c = base_config().validated().unwrap();
        let json = serde_json::to_string(&c).unwrap();
        let back = ExperimentConfig::from_json(&json).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut other = c.clone();
        other.seed = 8;
        assert_ne!(other.hash(), c.hash());
    }

    #[test]
    fn method_names_round_trip() {
        for m in [
            Method::Pav,
            Method::ConfNn,
            Method::ConfFw,
            Method::NegLl,
            Method::Oracle,
        ] {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert!(Method::parse("bogus").is_err());
    }

    #[test]
    fn defaults_resolve() {
        let c = base_config();
        assert_eq!(c.conformal_tau(), 0.1);
        let grid = c.tau_grid().unwrap();
        assert_eq!(grid.k(), 10);
        let json = r#"{
            "data": {"type": "synthetic", "dim": 3, "signal_dims": 1, "n": 100},
            "split": [0.5, 0.25, 0.25],
            "network": {"type": "mlp", "hidden": [4]},
            "methods": ["conf-nn", "conf-fw"],
            "alpha": 0.2,
            "seed": 1
        }"#;
        let c = ExperimentConfig::from_json(json).unwrap();
        assert_eq!(c.train.epochs, 100);
        assert_eq!(c.replications, 1);
        assert!(!c.standardize);
        assert_eq!(c.conformal_tau(), 0.2);
    }
}
