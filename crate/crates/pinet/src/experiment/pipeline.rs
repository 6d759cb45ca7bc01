//! The experiment pipeline, decomposed into the same stages the command
//! line exposes so that running them separately over serialized artifacts
//! reproduces the end-to-end run exactly.
//!
//! Training only ever receives the train-role subset, calibration only the
//! calibration-role subset, and the test rows are first touched during
//! evaluation.

use rayon::prelude::*;

use super::report::{MethodReport, ReplicateReport, RunReport};
use super::{DataSource, ExperimentConfig, Method, NetworkSpec, TrainParams};
use crate::calibrate::{
    expand_interval, fixed_width_conformal, select_tau, split_conformal, ConformalCalibration,
    FixedWidthCalibration, TauSelection,
};
use crate::data::{
    gen_synthetic, load_csv, oracle_quantiles, split, standardize, Dataset, Role, Standardization,
    Subset, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::{
    conditional_coverage, coverage_by_length, interval_metrics, quantile_mad_vs_oracle_parts,
};
use crate::model_io::CalibrationArtifact;
use crate::net::{
    fit, fit_gaussian, MeanVarNetwork, PiInterval, PiNetwork, PiTriple, Predictor, TrainConfig,
};
use crate::stats::{derive_seed, normal_quantile};

// Seed stream indices hung off each replicate seed. Fixed so artifacts are
// reproducible across runs and so the staged and end-to-end paths agree.
const STREAM_DATA: u64 = 0;
const STREAM_SPLIT: u64 = 1;
const STREAM_CONF_INIT: u64 = 2;
const STREAM_CONF_SHUFFLE: u64 = 3;
const STREAM_GAUSS_INIT: u64 = 4;
const STREAM_GAUSS_SHUFFLE: u64 = 5;
const STREAM_GRID_INIT: u64 = 100;
const STREAM_GRID_SHUFFLE: u64 = 200;

/// Seed of one replicate, derived from the master seed.
pub fn replicate_seed(master: u64, replicate: usize) -> u64 {
    derive_seed(master, replicate as u64)
}

/// Role-labeled data for one replicate, before and after preprocessing.
#[derive(Debug, Clone)]
pub struct PreparedData {
    /// Rows as generated or loaded (used for oracle quantiles and the
    /// signal index, which are defined on the original scale).
    pub raw: Dataset,
    /// Rows the models see: standardized when configured, otherwise
    /// identical to `raw`.
    pub working: Dataset,
}

/// Generate or load the rows and assign roles. The result carries no
/// standardization; that belongs to the training stage.
pub fn build_dataset(cfg: &ExperimentConfig, rep_seed: u64) -> Result<Dataset> {
    let data = match &cfg.data {
        DataSource::Synthetic {
            dim,
            signal_dims,
            n,
        } => {
            let spec = SyntheticSpec::new(*dim, *signal_dims, derive_seed(rep_seed, STREAM_DATA))?;
            gen_synthetic(&spec, *n)?
        }
        DataSource::Csv {
            path,
            target,
            features,
        } => load_csv(path, target, features)?,
    };
    split(data, cfg.split, derive_seed(rep_seed, STREAM_SPLIT))
}

/// Fit preprocessing on the train rows when configured.
pub fn prepare(cfg: &ExperimentConfig, raw: Dataset) -> Result<PreparedData> {
    let working = if cfg.standardize {
        standardize(raw.clone())?
    } else {
        raw.clone()
    };
    Ok(PreparedData { raw, working })
}

/// Reapply stored preprocessing to a freshly loaded dataset (the staged
/// path, where the statistics come from the model artifact).
pub fn prepare_with(raw: Dataset, stats: Option<&Standardization>) -> Result<PreparedData> {
    let working = match stats {
        Some(st) => {
            let mut data = raw.clone();
            for i in 0..data.n() {
                let row = st.apply(data.features().row(i))?;
                data.features_mut().row_mut(i).copy_from_slice(&row);
            }
            data
        }
        None => raw.clone(),
    };
    Ok(PreparedData { raw, working })
}

/// The predictor the conformal methods calibrate: a trained network or a
/// frozen constant triple.
#[derive(Debug, Clone)]
pub enum IntervalModel {
    Network(PiNetwork),
    Fixed(PiTriple),
}

impl Predictor for IntervalModel {
    fn predict_triple(&self, x: &[f64]) -> PiTriple {
        match self {
            IntervalModel::Network(net) => net.predict_triple(x),
            IntervalModel::Fixed(t) => *t,
        }
    }
}

/// Everything the requested methods need, trained on the train subset.
#[derive(Debug, Clone)]
pub struct ModelSet {
    pub interval: Option<IntervalModel>,
    pub grid_nets: Vec<(f64, PiNetwork)>,
    pub gaussian: Option<MeanVarNetwork>,
    pub standardization: Option<Standardization>,
}

fn train_config(params: &TrainParams, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: params.epochs,
        batch_size: params.batch_size,
        learning_rate: params.learning_rate,
        optimizer: params.optimizer,
        seed,
    }
}

/// Train every network the method list requires. Grid networks fit in
/// parallel unless warm-starting chains them.
pub fn train_models(
    cfg: &ExperimentConfig,
    prepared: &PreparedData,
    rep_seed: u64,
) -> Result<ModelSet> {
    let needs_interval =
        cfg.methods.contains(&Method::ConfNn) || cfg.methods.contains(&Method::ConfFw);
    let needs_grid = cfg.methods.contains(&Method::Pav);
    let needs_gaussian = cfg.methods.contains(&Method::NegLl);

    let train_subset = if needs_interval || needs_grid || needs_gaussian {
        Some(prepared.working.subset(Role::Train)?)
    } else {
        None
    };
    let dim = prepared.working.dim();

    let interval = if needs_interval {
        Some(match &cfg.network {
            NetworkSpec::FixedTriple {
                lower,
                median,
                upper,
            } => IntervalModel::Fixed(PiTriple::new(*lower, *median, *upper)?),
            NetworkSpec::Mlp { hidden } => {
                let train = train_subset.as_ref().unwrap();
                let init = PiNetwork::init(dim, hidden, derive_seed(rep_seed, STREAM_CONF_INIT))?;
                let tcfg = train_config(&cfg.train, derive_seed(rep_seed, STREAM_CONF_SHUFFLE));
                IntervalModel::Network(fit(init, train, cfg.conformal_tau(), &tcfg)?.net)
            }
        })
    } else {
        None
    };

    let grid_nets = if needs_grid {
        let hidden = match &cfg.network {
            NetworkSpec::Mlp { hidden } => hidden.clone(),
            NetworkSpec::FixedTriple { .. } => unreachable!("rejected during validation"),
        };
        let train = train_subset.as_ref().unwrap();
        let levels: Vec<f64> = cfg.tau_grid()?.nonzero_levels().to_vec();
        if cfg.warm_start {
            // sequential chain: each level starts from its trained neighbor
            let mut nets: Vec<(f64, PiNetwork)> = Vec::with_capacity(levels.len());
            for (i, &tau) in levels.iter().enumerate() {
                let init = match nets.last() {
                    Some((_, prev)) => prev.clone(),
                    None => PiNetwork::init(dim, &hidden, derive_seed(rep_seed, STREAM_GRID_INIT))?,
                };
                let tcfg = train_config(
                    &cfg.train,
                    derive_seed(rep_seed, STREAM_GRID_SHUFFLE + i as u64),
                );
                nets.push((tau, fit(init, train, tau, &tcfg)?.net));
            }
            nets
        } else {
            levels
                .par_iter()
                .enumerate()
                .map(|(i, &tau)| {
                    let init = PiNetwork::init(
                        dim,
                        &hidden,
                        derive_seed(rep_seed, STREAM_GRID_INIT + i as u64),
                    )?;
                    let tcfg = train_config(
                        &cfg.train,
                        derive_seed(rep_seed, STREAM_GRID_SHUFFLE + i as u64),
                    );
                    Ok((tau, fit(init, train, tau, &tcfg)?.net))
                })
                .collect::<Result<Vec<_>>>()?
        }
    } else {
        Vec::new()
    };

    let gaussian = if needs_gaussian {
        let hidden = match &cfg.network {
            NetworkSpec::Mlp { hidden } => hidden.clone(),
            NetworkSpec::FixedTriple { .. } => unreachable!("rejected during validation"),
        };
        let train = train_subset.as_ref().unwrap();
        let init = MeanVarNetwork::init(dim, &hidden, derive_seed(rep_seed, STREAM_GAUSS_INIT))?;
        let tcfg = train_config(&cfg.train, derive_seed(rep_seed, STREAM_GAUSS_SHUFFLE));
        Some(fit_gaussian(init, train, &tcfg)?.net)
    } else {
        None
    };

    Ok(ModelSet {
        interval,
        grid_nets,
        gaussian,
        standardization: prepared.working.standardization().cloned(),
    })
}

/// Every network in the set must match the dataset dimension; a stored
/// model replayed against the wrong dataset is a shape error.
fn check_dims(models: &ModelSet, dim: usize) -> Result<()> {
    let check = |got: usize| -> Result<()> {
        if got != dim {
            return Err(Error::Shape {
                context: "model input dimension vs dataset",
                expected: dim,
                got,
            });
        }
        Ok(())
    };
    if let Some(IntervalModel::Network(net)) = &models.interval {
        check(net.input_dim())?;
    }
    for (_, net) in &models.grid_nets {
        check(net.input_dim())?;
    }
    if let Some(net) = &models.gaussian {
        check(net.input_dim())?;
    }
    Ok(())
}

/// Calibration artifacts for the methods that have a calibration step.
#[derive(Debug, Clone, Default)]
pub struct CalibrationSet {
    pub conf_nn: Option<ConformalCalibration>,
    pub conf_fw: Option<FixedWidthCalibration>,
    pub pav: Option<TauSelection>,
}

/// Run every required calibration on the calibration subset.
pub fn calibrate_models(
    cfg: &ExperimentConfig,
    models: &ModelSet,
    prepared: &PreparedData,
) -> Result<CalibrationSet> {
    let mut out = CalibrationSet::default();
    check_dims(models, prepared.working.dim())?;
    let needs_calib = cfg
        .methods
        .iter()
        .any(|m| matches!(m, Method::ConfNn | Method::ConfFw | Method::Pav));
    if !needs_calib {
        return Ok(out);
    }
    let calib = prepared.working.subset(Role::Calibration)?;
    let interval_model = |what: &str| {
        models
            .interval
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{what} requested but no interval model trained")))
    };
    if cfg.methods.contains(&Method::ConfNn) {
        out.conf_nn = Some(split_conformal(
            interval_model("conf-nn")?,
            &calib,
            cfg.alpha,
        )?);
    }
    if cfg.methods.contains(&Method::ConfFw) {
        let model = interval_model("conf-fw")?;
        out.conf_fw = Some(fixed_width_conformal(
            |x| model.predict_triple(x).median,
            &calib,
            cfg.alpha,
        )?);
    }
    if cfg.methods.contains(&Method::Pav) {
        if models.grid_nets.is_empty() {
            return Err(Error::Config(
                "pav requested but no grid networks trained".into(),
            ));
        }
        out.pav = Some(select_tau(
            &cfg.tau_grid()?,
            &models.grid_nets,
            &calib,
            cfg.alpha,
        )?);
    }
    Ok(out)
}

struct MethodPredictions {
    intervals: Vec<PiInterval>,
    medians: Vec<f64>,
}

fn predict_method(
    method: Method,
    cfg: &ExperimentConfig,
    models: &ModelSet,
    cals: &CalibrationSet,
    test_working: &Subset,
    test_raw: &Subset,
    spec: Option<&SyntheticSpec>,
) -> Result<MethodPredictions> {
    let n = test_working.len();
    let mut intervals = Vec::with_capacity(n);
    let mut medians = Vec::with_capacity(n);
    match method {
        Method::ConfNn => {
            let cal = cals
                .conf_nn
                .as_ref()
                .ok_or_else(|| Error::Config("missing conf-nn calibration".into()))?;
            let model = models
                .interval
                .as_ref()
                .ok_or_else(|| Error::Config("missing interval model".into()))?;
            for row in test_working.features.iter_rows() {
                let triple = model.predict_triple(row);
                intervals.push(expand_interval(&triple, cal.c_hat)?);
                medians.push(triple.median);
            }
        }
        Method::ConfFw => {
            let cal = cals
                .conf_fw
                .as_ref()
                .ok_or_else(|| Error::Config("missing conf-fw calibration".into()))?;
            let model = models
                .interval
                .as_ref()
                .ok_or_else(|| Error::Config("missing interval model".into()))?;
            for row in test_working.features.iter_rows() {
                let m = model.predict_triple(row).median;
                intervals.push(PiInterval::new(m - cal.half_width, m + cal.half_width)?);
                medians.push(m);
            }
        }
        Method::Pav => {
            let sel = cals
                .pav
                .as_ref()
                .ok_or_else(|| Error::Config("missing pav calibration".into()))?;
            if sel.tau_hat == 0.0 {
                let trivial = PiTriple::trivial();
                for _ in 0..n {
                    intervals.push(trivial.interval());
                    medians.push(trivial.median);
                }
            } else {
                let net = models
                    .grid_nets
                    .iter()
                    .find(|(t, _)| *t == sel.tau_hat)
                    .map(|(_, n)| n)
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "no grid network for selected level {}",
                            sel.tau_hat
                        ))
                    })?;
                for row in test_working.features.iter_rows() {
                    let triple = net.predict_triple(row);
                    intervals.push(triple.interval());
                    medians.push(triple.median);
                }
            }
        }
        Method::NegLl => {
            let net = models
                .gaussian
                .as_ref()
                .ok_or_else(|| Error::Config("missing gaussian model".into()))?;
            let z = normal_quantile(1.0 - cfg.alpha / 2.0)?;
            for row in test_working.features.iter_rows() {
                let (mu, var) = net.predict_mean_var(row)?;
                let half = z * var.sqrt();
                intervals.push(PiInterval::new(mu - half, mu + half)?);
                medians.push(mu);
            }
        }
        Method::Oracle => {
            let spec = spec
                .ok_or_else(|| Error::Config("oracle method requires a synthetic source".into()))?;
            for row in test_raw.features.iter_rows() {
                let o = oracle_quantiles(row, spec, cfg.alpha)?;
                intervals.push(PiInterval::new(o.lower, o.upper)?);
                medians.push(o.median);
            }
        }
    }
    Ok(MethodPredictions { intervals, medians })
}

fn method_calibration_artifact(method: Method, cals: &CalibrationSet) -> CalibrationArtifact {
    match method {
        Method::ConfNn => cals
            .conf_nn
            .clone()
            .map_or(CalibrationArtifact::None {}, CalibrationArtifact::ConfNn),
        Method::ConfFw => cals
            .conf_fw
            .clone()
            .map_or(CalibrationArtifact::None {}, CalibrationArtifact::ConfFw),
        Method::Pav => cals
            .pav
            .clone()
            .map_or(CalibrationArtifact::None {}, CalibrationArtifact::Pav),
        Method::NegLl | Method::Oracle => CalibrationArtifact::None {},
    }
}

/// Evaluate every method on the test subset and assemble the replicate
/// report: summary metrics, oracle deviations on synthetic sources, the
/// conditional-coverage curve over the signal index, and coverage binned
/// by the conformal method's interval lengths.
pub fn evaluate_models(
    cfg: &ExperimentConfig,
    models: &ModelSet,
    cals: &CalibrationSet,
    prepared: &PreparedData,
    replicate: usize,
    seed: u64,
) -> Result<ReplicateReport> {
    check_dims(models, prepared.working.dim())?;
    let test_working = prepared.working.subset(Role::Test)?;
    let test_raw = prepared.raw.subset(Role::Test)?;
    if test_working.is_empty() {
        return Err(Error::EmptyData("test subset"));
    }
    let spec = match &cfg.data {
        DataSource::Synthetic {
            dim, signal_dims, ..
        } => Some(SyntheticSpec::new(*dim, *signal_dims, 0)?),
        DataSource::Csv { .. } => None,
    };

    let mut predictions = Vec::new();
    for &method in &cfg.methods {
        predictions.push((
            method,
            predict_method(
                method,
                cfg,
                models,
                cals,
                &test_working,
                &test_raw,
                spec.as_ref(),
            )?,
        ));
    }

    // oracle quantiles and signal index on the original scale
    let oracle_triples = spec.as_ref().map(|s| {
        test_raw
            .features
            .iter_rows()
            .map(|row| oracle_quantiles(row, s, cfg.alpha))
            .collect::<Result<Vec<_>>>()
    });
    let oracle_triples = match oracle_triples {
        Some(r) => Some(r?),
        None => None,
    };
    let index_values: Option<Vec<f64>> = spec.as_ref().map(|s| {
        test_raw
            .features
            .iter_rows()
            .map(|row| s.index(row))
            .collect()
    });

    // reference lengths for the coverage-by-length diagnostic
    let reference = predictions
        .iter()
        .find(|(m, _)| *m == Method::ConfNn)
        .map(|(_, p)| {
            p.intervals
                .iter()
                .map(PiInterval::length)
                .collect::<Vec<f64>>()
        });
    let length_curves = match &reference {
        Some(lengths) if lengths.iter().all(|l| l.is_finite()) => {
            let flags: Vec<(String, Vec<bool>)> = predictions
                .iter()
                .map(|(m, p)| {
                    (
                        m.name().to_string(),
                        p.intervals
                            .iter()
                            .zip(&test_working.responses)
                            .map(|(i, &y)| i.contains(y))
                            .collect(),
                    )
                })
                .collect();
            coverage_by_length(lengths, &flags, 100, 0.01).ok()
        }
        _ => None,
    };

    let mut methods = Vec::new();
    for (method, preds) in &predictions {
        let metrics = interval_metrics(&preds.intervals, &preds.medians, &test_working.responses)?;
        let mad_vs_oracle = match &oracle_triples {
            Some(oracles) => {
                let lowers: Vec<f64> = preds.intervals.iter().map(|i| i.lower).collect();
                let uppers: Vec<f64> = preds.intervals.iter().map(|i| i.upper).collect();
                Some(quantile_mad_vs_oracle_parts(
                    &lowers,
                    &preds.medians,
                    &uppers,
                    oracles,
                )?)
            }
            None => None,
        };
        let index_curve = index_values.as_ref().and_then(|vals| {
            conditional_coverage(
                &preds.intervals,
                &test_working.responses,
                vals,
                cfg.index_bins,
            )
            .ok()
        });
        let length_curve = length_curves.as_ref().and_then(|curves| {
            curves
                .iter()
                .find(|(name, _)| name == method.name())
                .map(|(_, c)| c.clone())
        });
        methods.push(MethodReport {
            method: *method,
            metrics,
            mad_vs_oracle,
            calibration: method_calibration_artifact(*method, cals),
            index_curve,
            length_curve,
        });
    }
    Ok(ReplicateReport {
        replicate,
        seed,
        methods,
    })
}

/// Everything one replicate produces; the staged command line persists the
/// pieces, the end-to-end runner keeps them in memory.
pub struct ReplicateArtifacts {
    pub seed: u64,
    pub data: PreparedData,
    pub models: ModelSet,
    pub calibrations: CalibrationSet,
    pub report: ReplicateReport,
}

/// Run one replicate through every stage.
pub fn run_replicate(cfg: &ExperimentConfig, replicate: usize) -> Result<ReplicateArtifacts> {
    let hash = cfg.hash();
    let seed = replicate_seed(cfg.seed, replicate);
    let raw = build_dataset(cfg, seed).map_err(|e| e.in_stage("simulate", &hash))?;
    let data = prepare(cfg, raw).map_err(|e| e.in_stage("simulate", &hash))?;
    let models = train_models(cfg, &data, seed).map_err(|e| e.in_stage("train", &hash))?;
    let calibrations =
        calibrate_models(cfg, &models, &data).map_err(|e| e.in_stage("calibrate", &hash))?;
    let report = evaluate_models(cfg, &models, &calibrations, &data, replicate, seed)
        .map_err(|e| e.in_stage("evaluate", &hash))?;
    Ok(ReplicateArtifacts {
        seed,
        data,
        models,
        calibrations,
        report,
    })
}

/// Run the configured number of replicates (in parallel) and aggregate.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    let cfg = cfg.clone().validated()?;
    let started = std::time::Instant::now();
    let replicates: Vec<ReplicateReport> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_replicate(&cfg, r).map(|a| a.report))
        .collect::<Result<Vec<_>>>()?;
    let seeds = (0..cfg.replications)
        .map(|r| replicate_seed(cfg.seed, r))
        .collect();
    Ok(RunReport::assemble(
        cfg,
        seeds,
        replicates,
        started.elapsed().as_secs_f64(),
    ))
}

/// Run `r` independent replicates regardless of what the config says.
pub fn run_replications(cfg: &ExperimentConfig, r: usize) -> Result<RunReport> {
    if r == 0 {
        return Err(Error::Domain("replications must be at least 1".into()));
    }
    let mut cfg = cfg.clone();
    cfg.replications = r;
    run_experiment(&cfg)
}
