//! Datasets: feature matrix plus response vector, role bookkeeping for the
//! train/calibration/test split, seeded splitting, and standardization
//! whose statistics are fit on the training rows only.

mod csv_io;
mod synthetic;

pub use csv_io::{load_csv, read_dataset_csv, write_dataset_csv};
pub use synthetic::{gen_synthetic, oracle_quantiles, OracleTriple, SyntheticSpec};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of feature values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Matrix {
    pub fn from_vec(data: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                context: "matrix construction",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { data, rows, cols })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape {
                    context: "matrix row",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(data, rows.len(), cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }
}

/// Which stage of the pipeline a row belongs to. Training rows fit the
/// networks, calibration rows adjust the intervals, test rows are held out
/// for evaluation only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Calibration,
    Test,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Calibration => "calibration",
            Role::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Role> {
        match s {
            "train" => Ok(Role::Train),
            "calibration" => Ok(Role::Calibration),
            "test" => Ok(Role::Test),
            other => Err(Error::Domain(format!("unknown role '{other}'"))),
        }
    }
}

/// Per-feature affine transform `(x - mean) / sd`, with statistics computed
/// on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardization {
    /// Transform a fresh feature vector with the stored statistics.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.means.len() {
            return Err(Error::Shape {
                context: "standardization",
                expected: self.means.len(),
                got: x.len(),
            });
        }
        Ok(x.iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }
}

/// A feature matrix with responses, optional role labels, and optional
/// standardization statistics.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Matrix,
    responses: Vec<f64>,
    feature_names: Vec<String>,
    roles: Option<Vec<Role>>,
    standardization: Option<Standardization>,
}

/// An owned extraction of the rows carrying one role.
#[derive(Debug, Clone)]
pub struct Subset {
    pub features: Matrix,
    pub responses: Vec<f64>,
}

impl Subset {
    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

impl Dataset {
    pub fn new(features: Matrix, responses: Vec<f64>, feature_names: Vec<String>) -> Result<Self> {
        if features.rows() != responses.len() {
            return Err(Error::Shape {
                context: "dataset responses",
                expected: features.rows(),
                got: responses.len(),
            });
        }
        if feature_names.len() != features.cols() {
            return Err(Error::Shape {
                context: "dataset feature names",
                expected: features.cols(),
                got: feature_names.len(),
            });
        }
        Ok(Self {
            features,
            responses,
            feature_names,
            roles: None,
            standardization: None,
        })
    }

    pub fn n(&self) -> usize {
        self.responses.len()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut Matrix {
        &mut self.features
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn roles(&self) -> Option<&[Role]> {
        self.roles.as_deref()
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    /// Attach explicit role labels (used by artifact readers).
    pub fn with_roles(mut self, roles: Vec<Role>) -> Result<Self> {
        if roles.len() != self.n() {
            return Err(Error::Shape {
                context: "dataset roles",
                expected: self.n(),
                got: roles.len(),
            });
        }
        self.roles = Some(roles);
        Ok(self)
    }

    /// Overwrite the responses, keeping everything else (test hook for
    /// leakage probes).
    pub fn with_responses(mut self, responses: Vec<f64>) -> Result<Self> {
        if responses.len() != self.n() {
            return Err(Error::Shape {
                context: "dataset responses",
                expected: self.n(),
                got: responses.len(),
            });
        }
        self.responses = responses;
        Ok(self)
    }

    /// Extract the rows labeled with `role` as an owned subset.
    pub fn subset(&self, role: Role) -> Result<Subset> {
        let roles = self
            .roles
            .as_ref()
            .ok_or(Error::Domain("dataset has no role labels yet".into()))?;
        let mut rows = Vec::new();
        let mut responses = Vec::new();
        for (i, &r) in roles.iter().enumerate() {
            if r == role {
                rows.push(self.features.row(i).to_vec());
                responses.push(self.responses[i]);
            }
        }
        Ok(Subset {
            features: Matrix::from_rows(&rows)?,
            responses,
        })
    }

    pub fn role_counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        if let Some(roles) = &self.roles {
            for r in roles {
                match r {
                    Role::Train => c.0 += 1,
                    Role::Calibration => c.1 += 1,
                    Role::Test => c.2 += 1,
                }
            }
        }
        c
    }
}

/// Uniformly random seeded partition into train/calibration/test roles.
///
/// Sizes are `⌊n·f1⌋` and `⌊n·f2⌋`, with the remainder assigned to the test
/// role. Fractions must be positive and sum to 1 within 1e-9.
pub fn split(data: Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<Dataset> {
    let (f1, f2, f3) = fractions;
    if f1 <= 0.0 || f2 <= 0.0 || f3 <= 0.0 {
        return Err(Error::Domain(format!(
            "split fractions must be positive, got ({f1}, {f2}, {f3})"
        )));
    }
    if (f1 + f2 + f3 - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "split fractions must sum to 1, got {}",
            f1 + f2 + f3
        )));
    }
    let n = data.n();
    if n < 3 {
        return Err(Error::Domain(format!("cannot three-way split {n} rows")));
    }
    let n1 = (n as f64 * f1).floor() as usize;
    let n2 = (n as f64 * f2).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut roles = vec![Role::Test; n];
    for &i in &order[..n1] {
        roles[i] = Role::Train;
    }
    for &i in &order[n1..n1 + n2] {
        roles[i] = Role::Calibration;
    }
    data.with_roles(roles)
}

/// Standardize every feature to mean 0 and standard deviation 1, with the
/// statistics computed on the training rows only and then applied to all
/// rows. Uses the population standard deviation (denominator `n`).
pub fn standardize(mut data: Dataset) -> Result<Dataset> {
    let roles = data
        .roles
        .clone()
        .ok_or(Error::Domain("standardize requires role labels".into()))?;
    let train_rows: Vec<usize> = roles
        .iter()
        .enumerate()
        .filter(|(_, r)| **r == Role::Train)
        .map(|(i, _)| i)
        .collect();
    if train_rows.is_empty() {
        return Err(Error::EmptyData("standardize with no training rows"));
    }
    let d = data.dim();
    let mut means = vec![0.0; d];
    let mut sds = vec![0.0; d];
    for j in 0..d {
        let col: Vec<f64> = train_rows
            .iter()
            .map(|&i| data.features.row(i)[j])
            .collect();
        let m = crate::stats::mean(&col)?;
        let sd = crate::stats::population_variance(&col)?.sqrt();
        if sd < 1e-12 {
            return Err(Error::ZeroVariance(data.feature_names[j].clone()));
        }
        means[j] = m;
        sds[j] = sd;
    }
    for i in 0..data.n() {
        let row = data.features.row_mut(i);
        for j in 0..d {
            row[j] = (row[j] - means[j]) / sds[j];
        }
    }
    data.standardization = Some(Standardization { means, sds });
    Ok(data)
}
