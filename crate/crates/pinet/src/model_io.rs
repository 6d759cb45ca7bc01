//! Versioned JSON artifacts: trained models and calibration results.
//!
//! Model documents carry the architecture, row-major weights, a head tag,
//! optional training metadata, and the standardization statistics the model
//! was trained with. Weight round-trips are value-exact for finite doubles.
//! Readers reject any document whose `format_version` they do not know.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibrate::{ConformalCalibration, FixedWidthCalibration, TauSelection};
use crate::data::Standardization;
use crate::error::{Error, Result};
use crate::net::{Layer, MeanVarNetwork, Optimizer, PiNetwork, PiTriple, TrainConfig};

pub const FORMAT_VERSION: u32 = 1;

pub const HEAD_MONOTONE_TRIPLE: &str = "monotone-triple";
pub const HEAD_MEAN_VARIANCE: &str = "mean-softplus-variance";

/// The serializable shape of one predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    /// Interval network: hidden ReLU layers, three raw outputs, monotone
    /// head.
    IntervalNetwork {
        input_dim: usize,
        head: String,
        layers: Vec<Layer>,
    },
    /// Gaussian baseline: two raw outputs, softplus-positive variance.
    GaussianNetwork {
        input_dim: usize,
        head: String,
        layers: Vec<Layer>,
    },
    /// A constant triple (used for calibration-only studies).
    FixedTriple { lower: f64, median: f64, upper: f64 },
}

/// Training metadata recorded next to a stored network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    /// Level of the composite loss (absent for the Gaussian baseline).
    pub tau: Option<f64>,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
}

impl TrainingMetadata {
    pub fn from_config(cfg: &TrainConfig, tau: Option<f64>) -> Self {
        Self {
            tau,
            seed: cfg.seed,
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            optimizer: cfg.optimizer,
        }
    }
}

/// One stored predictor with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    /// Training level, when the entry belongs to a level grid.
    pub tau: Option<f64>,
    pub training: Option<TrainingMetadata>,
    pub model: ModelSpec,
}

/// A model artifact: one or more predictors (level-grid methods store one
/// per level), the feature preprocessing they expect, and the calibration
/// result once the calibration stage has run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub standardization: Option<Standardization>,
    pub entries: Vec<ModelEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationArtifact>,
}

impl ModelDocument {
    pub fn new(entries: Vec<ModelEntry>, standardization: Option<Standardization>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            standardization,
            entries,
            calibration: None,
        }
    }
}

impl ModelSpec {
    pub fn from_pi_network(net: &PiNetwork) -> Self {
        ModelSpec::IntervalNetwork {
            input_dim: net.input_dim(),
            head: HEAD_MONOTONE_TRIPLE.to_string(),
            layers: net.layers().to_vec(),
        }
    }

    pub fn from_gaussian_network(net: &MeanVarNetwork) -> Self {
        ModelSpec::GaussianNetwork {
            input_dim: net.input_dim(),
            head: HEAD_MEAN_VARIANCE.to_string(),
            layers: net.layers().to_vec(),
        }
    }

    /// Rebuild an interval network, revalidating every structural
    /// invariant.
    pub fn to_pi_network(&self) -> Result<PiNetwork> {
        match self {
            ModelSpec::IntervalNetwork {
                input_dim,
                head,
                layers,
            } => {
                if head != HEAD_MONOTONE_TRIPLE {
                    return Err(Error::Config(format!(
                        "unknown head '{head}' for an interval network"
                    )));
                }
                PiNetwork::from_parts(*input_dim, layers.clone())
            }
            other => Err(Error::Config(format!(
                "expected an interval network, found {}",
                other.kind_name()
            ))),
        }
    }

    pub fn to_gaussian_network(&self) -> Result<MeanVarNetwork> {
        match self {
            ModelSpec::GaussianNetwork {
                input_dim,
                head,
                layers,
            } => {
                if head != HEAD_MEAN_VARIANCE {
                    return Err(Error::Config(format!(
                        "unknown head '{head}' for a gaussian network"
                    )));
                }
                MeanVarNetwork::from_parts(*input_dim, layers.clone())
            }
            other => Err(Error::Config(format!(
                "expected a gaussian network, found {}",
                other.kind_name()
            ))),
        }
    }

    pub fn to_fixed_triple(&self) -> Result<PiTriple> {
        match self {
            ModelSpec::FixedTriple {
                lower,
                median,
                upper,
            } => PiTriple::new(*lower, *median, *upper),
            other => Err(Error::Config(format!(
                "expected a fixed triple, found {}",
                other.kind_name()
            ))),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelSpec::IntervalNetwork { .. } => "interval-network",
            ModelSpec::GaussianNetwork { .. } => "gaussian-network",
            ModelSpec::FixedTriple { .. } => "fixed-triple",
        }
    }

    pub fn input_dim(&self) -> Option<usize> {
        match self {
            ModelSpec::IntervalNetwork { input_dim, .. }
            | ModelSpec::GaussianNetwork { input_dim, .. } => Some(*input_dim),
            ModelSpec::FixedTriple { .. } => None,
        }
    }
}

/// Calibration artifact, tagged by method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum CalibrationArtifact {
    ConfNn(ConformalCalibration),
    ConfFw(FixedWidthCalibration),
    Pav(TauSelection),
    /// Methods without a calibration step (the Gaussian baseline and the
    /// oracle).
    None {},
}

/// The calibration artifact with its format version. The artifact itself
/// carries the target level and calibration size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDocument {
    pub format_version: u32,
    #[serde(flatten)]
    pub artifact: CalibrationArtifact,
}

impl CalibrationDocument {
    pub fn new(artifact: CalibrationArtifact) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            artifact,
        }
    }
}

fn check_version(found: u32, artifact: &'static str) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::FormatVersion {
            artifact,
            expected: FORMAT_VERSION,
            found,
        });
    }
    Ok(())
}

pub fn save_model(doc: &ModelDocument, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(doc)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelDocument> {
    let doc: ModelDocument = serde_json::from_str(&fs::read_to_string(path)?)?;
    check_version(doc.format_version, "model")?;
    Ok(doc)
}

pub fn save_calibration(doc: &CalibrationDocument, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(doc)?)?;
    Ok(())
}

pub fn load_calibration(path: &Path) -> Result<CalibrationDocument> {
    let doc: CalibrationDocument = serde_json::from_str(&fs::read_to_string(path)?)?;
    check_version(doc.format_version, "calibration")?;
    Ok(doc)
}
