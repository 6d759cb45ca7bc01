//! Experiment driver for prediction-interval networks.
//!
//! The pipeline stages can run end to end (`run`) or one at a time over
//! serialized artifacts (`simulate` → `train` → `calibrate` → `evaluate`),
//! producing identical results either way. `report` regenerates the CSV
//! outputs from a stored `report.json`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use pinet::data::{read_dataset_csv, write_dataset_csv};
use pinet::experiment::write_report_files;
use pinet::experiment::{
    build_dataset, calibrate_models, evaluate_models, prepare, prepare_with, replicate_seed,
    run_replications, train_models, CalibrationSet, ExperimentConfig, IntervalModel, Method,
    ModelSet, RunReport,
};
use pinet::model_io::{
    load_calibration, load_model, save_calibration, save_model, CalibrationArtifact,
    CalibrationDocument, ModelDocument, ModelEntry, ModelSpec, TrainingMetadata,
};
use pinet::net::TrainConfig;

#[derive(Parser)]
#[command(
    name = "pinet",
    version,
    about = "Prediction-interval network experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory (defaults to `output_dir` from the configuration).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the master seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the method list, comma separated.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Replicate index the staged artifacts belong to.
    #[arg(long, default_value_t = 0)]
    replicate: usize,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory (defaults to `output_dir` from the configuration).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Number of independent replicates (overrides the configuration).
    #[arg(long)]
    replications: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or load the dataset, assign roles, write `dataset.csv`.
    Simulate(StageArgs),
    /// Train the networks the configured methods need.
    Train(StageArgs),
    /// Calibrate trained models on the calibration rows.
    Calibrate(StageArgs),
    /// Evaluate calibrated methods on the test rows and write reports.
    Evaluate(StageArgs),
    /// Regenerate metric and curve CSVs from a stored report.
    Report {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline end to end.
    Run(RunArgs),
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Calibrate(args) => cmd_calibrate(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Report { report, out } => cmd_report(&report, &out),
        Command::Run(args) => cmd_run(&args),
    }
}

fn resolve_out(cfg: &ExperimentConfig, flag: &Option<PathBuf>) -> anyhow::Result<PathBuf> {
    flag.clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| anyhow::anyhow!("no output directory: pass --out or set output_dir"))
}

fn load_config(
    path: &Path,
    seed: Option<u64>,
    methods: &Option<Vec<String>>,
) -> anyhow::Result<ExperimentConfig> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(names) = methods {
        cfg.methods = names
            .iter()
            .map(|n| Method::parse(n))
            .collect::<pinet::Result<_>>()?;
    }
    Ok(cfg.validated()?)
}

fn dataset_path(out: &Path) -> PathBuf {
    out.join("dataset.csv")
}

fn model_path(out: &Path, method: Method) -> PathBuf {
    out.join(format!("model_{}.json", method.name()))
}

fn calibration_path(out: &Path, method: Method) -> PathBuf {
    out.join(format!("calibration_{}.json", method.name()))
}

fn cmd_simulate(args: &StageArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args.config, args.seed, &args.methods)?;
    let out = resolve_out(&cfg, &args.out)?;
    fs::create_dir_all(&out)?;
    let seed = replicate_seed(cfg.seed, args.replicate);
    let data = build_dataset(&cfg, seed)?;
    write_dataset_csv(&data, &dataset_path(&out))?;
    let (n1, n2, n3) = data.role_counts();
    println!(
        "wrote {} ({} rows: {} train / {} calibration / {} test)",
        dataset_path(&out).display(),
        data.n(),
        n1,
        n2,
        n3
    );
    Ok(())
}

fn write_models(
    cfg: &ExperimentConfig,
    models: &ModelSet,
    out: &Path,
    rep_seed: u64,
) -> anyhow::Result<()> {
    let meta = |tau: Option<f64>| {
        let tc = TrainConfig {
            epochs: cfg.train.epochs,
            batch_size: cfg.train.batch_size,
            learning_rate: cfg.train.learning_rate,
            optimizer: cfg.train.optimizer,
            seed: rep_seed,
        };
        TrainingMetadata::from_config(&tc, tau)
    };
    for &method in &cfg.methods {
        let doc = match method {
            Method::ConfNn | Method::ConfFw => {
                let tau = cfg.conformal_tau();
                let entry = match models.interval.as_ref() {
                    Some(IntervalModel::Network(net)) => ModelEntry {
                        tau: Some(tau),
                        training: Some(meta(Some(tau))),
                        model: ModelSpec::from_pi_network(net),
                    },
                    Some(IntervalModel::Fixed(t)) => ModelEntry {
                        tau: Some(tau),
                        training: None,
                        model: ModelSpec::FixedTriple {
                            lower: t.lower,
                            median: t.median,
                            upper: t.upper,
                        },
                    },
                    None => bail!("no interval model trained for {}", method.name()),
                };
                Some(ModelDocument::new(
                    vec![entry],
                    models.standardization.clone(),
                ))
            }
            Method::Pav => {
                let entries = models
                    .grid_nets
                    .iter()
                    .map(|(tau, net)| ModelEntry {
                        tau: Some(*tau),
                        training: Some(meta(Some(*tau))),
                        model: ModelSpec::from_pi_network(net),
                    })
                    .collect::<Vec<_>>();
                if entries.is_empty() {
                    bail!("no grid networks trained");
                }
                Some(ModelDocument::new(entries, models.standardization.clone()))
            }
            Method::NegLl => {
                let net = models
                    .gaussian
                    .as_ref()
                    .ok_or_else(|| anyhow::anyhow!("no gaussian model trained"))?;
                Some(ModelDocument::new(
                    vec![ModelEntry {
                        tau: None,
                        training: Some(meta(None)),
                        model: ModelSpec::from_gaussian_network(net),
                    }],
                    models.standardization.clone(),
                ))
            }
            Method::Oracle => None,
        };
        if let Some(doc) = doc {
            let path = model_path(out, method);
            save_model(&doc, &path)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn read_models(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<ModelSet> {
    let mut interval = None;
    let mut grid_nets = Vec::new();
    let mut gaussian = None;
    let mut standardization = None;
    let mut note_stats = |doc: &ModelDocument| {
        if standardization.is_none() {
            standardization = doc.standardization.clone();
        }
    };
    for &method in &cfg.methods {
        match method {
            Method::ConfNn | Method::ConfFw => {
                if interval.is_some() {
                    continue;
                }
                let doc = load_model(&model_path(out, method))?;
                note_stats(&doc);
                let entry = doc
                    .entries
                    .first()
                    .ok_or_else(|| anyhow::anyhow!("empty model document"))?;
                interval = Some(match &entry.model {
                    ModelSpec::FixedTriple { .. } => {
                        IntervalModel::Fixed(entry.model.to_fixed_triple()?)
                    }
                    _ => IntervalModel::Network(entry.model.to_pi_network()?),
                });
            }
            Method::Pav => {
                let doc = load_model(&model_path(out, method))?;
                note_stats(&doc);
                for entry in &doc.entries {
                    let tau = entry
                        .tau
                        .ok_or_else(|| anyhow::anyhow!("grid entry without a level"))?;
                    grid_nets.push((tau, entry.model.to_pi_network()?));
                }
            }
            Method::NegLl => {
                let doc = load_model(&model_path(out, method))?;
                note_stats(&doc);
                let entry = doc
                    .entries
                    .first()
                    .ok_or_else(|| anyhow::anyhow!("empty model document"))?;
                gaussian = Some(entry.model.to_gaussian_network()?);
            }
            Method::Oracle => {}
        }
    }
    Ok(ModelSet {
        interval,
        grid_nets,
        gaussian,
        standardization,
    })
}

fn cmd_train(args: &StageArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args.config, args.seed, &args.methods)?;
    let out = resolve_out(&cfg, &args.out)?;
    let seed = replicate_seed(cfg.seed, args.replicate);
    let raw = read_dataset_csv(&dataset_path(&out))?;
    let prepared = prepare(&cfg, raw)?;
    let models = train_models(&cfg, &prepared, seed)?;
    write_models(&cfg, &models, &out, seed)?;
    Ok(())
}

fn cmd_calibrate(args: &StageArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args.config, args.seed, &args.methods)?;
    let out = resolve_out(&cfg, &args.out)?;
    let raw = read_dataset_csv(&dataset_path(&out))?;
    let models = read_models(&cfg, &out)?;
    let prepared = prepare_with(raw, models.standardization.as_ref())?;
    let cals = calibrate_models(&cfg, &models, &prepared)?;
    for &method in &cfg.methods {
        let artifact = match method {
            Method::ConfNn => cals.conf_nn.clone().map(CalibrationArtifact::ConfNn),
            Method::ConfFw => cals.conf_fw.clone().map(CalibrationArtifact::ConfFw),
            Method::Pav => cals.pav.clone().map(CalibrationArtifact::Pav),
            Method::NegLl | Method::Oracle => None,
        };
        if let Some(artifact) = artifact {
            let path = calibration_path(&out, method);
            save_calibration(&CalibrationDocument::new(artifact.clone()), &path)?;
            // the model document carries its calibration once it exists
            let mpath = model_path(&out, method);
            let mut doc = load_model(&mpath)?;
            doc.calibration = Some(artifact);
            save_model(&doc, &mpath)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn read_calibrations(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<CalibrationSet> {
    let mut cals = CalibrationSet::default();
    for &method in &cfg.methods {
        if matches!(method, Method::NegLl | Method::Oracle) {
            continue;
        }
        let doc = load_calibration(&calibration_path(out, method))?;
        match doc.artifact {
            CalibrationArtifact::ConfNn(c) => cals.conf_nn = Some(c),
            CalibrationArtifact::ConfFw(c) => cals.conf_fw = Some(c),
            CalibrationArtifact::Pav(s) => cals.pav = Some(s),
            CalibrationArtifact::None {} => {}
        }
    }
    Ok(cals)
}

fn cmd_evaluate(args: &StageArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args.config, args.seed, &args.methods)?;
    let out = resolve_out(&cfg, &args.out)?;
    let seed = replicate_seed(cfg.seed, args.replicate);
    let raw = read_dataset_csv(&dataset_path(&out))?;
    let models = read_models(&cfg, &out)?;
    let cals = read_calibrations(&cfg, &out)?;
    let prepared = prepare_with(raw, models.standardization.as_ref())?;
    let started = std::time::Instant::now();
    let replicate = evaluate_models(&cfg, &models, &cals, &prepared, args.replicate, seed)?;
    let report = RunReport::assemble(
        cfg,
        vec![seed],
        vec![replicate],
        started.elapsed().as_secs_f64(),
    );
    write_report_files(&report, &out)?;
    println!("wrote {}", out.join("report.json").display());
    println!("wrote {}", out.join("metrics.csv").display());
    Ok(())
}

fn cmd_report(report: &Path, out: &Path) -> anyhow::Result<()> {
    let report = RunReport::load(report)?;
    write_report_files(&report, out)?;
    println!("wrote {}", out.join("metrics.csv").display());
    Ok(())
}

fn cmd_run(args: &RunArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args.config, args.seed, &args.methods)?;
    let out = resolve_out(&cfg, &args.out)?;
    let replications = args.replications.unwrap_or(cfg.replications);
    let report = run_replications(&cfg, replications)?;
    write_report_files(&report, &out)?;
    println!(
        "ran {} replicate(s) in {:.2}s",
        report.replicates.len(),
        report.wall_clock_seconds
    );
    for row in &report.aggregate {
        println!(
            "{:>8}: coverage {:.4} ± {:.4}, length {:.3}, mad {:.3}",
            row.method.name(),
            row.mean.ave_coverage,
            row.std.ave_coverage,
            row.mean.ave_length,
            row.mean.mad
        );
    }
    println!("wrote {}", out.join("report.json").display());
    Ok(())
}
