//! Command-line front end: dataset ingestion, missingness simulation,
//! training, imputation, benchmarking and the property-check suite.

mod config;
mod dataset;
mod manifest;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use config::{ModelOverrides, ResolvedExperiment};
use deepifsac::data::ObservationMask;
use deepifsac::evaluation::{self, BenchmarkConfig, EvaluationReport, Method};
use deepifsac::missingness::{self, MissingKind, MissingnessSpec, MnarDirection};
use deepifsac::model::{ModelConfig, TrainedImputer};
use deepifsac::rng::sub_seed;
use deepifsac::synthetic::{generate, SyntheticSpec};
use manifest::{manifest, write_atomic, write_manifest};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "deepifsac", version, about = "Tabular missing-value imputation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ModelFlags {
    /// Feature-embedding width d.
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Attention heads H.
    #[arg(long)]
    heads: Option<usize>,
    /// Stacked attention blocks L.
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Per-cell CutMix corruption probability.
    #[arg(long)]
    p_cutmix: Option<f64>,
    /// InfoNCE temperature.
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Attention mode: feature, sample or joint.
    #[arg(long)]
    mode: Option<String>,
    /// Weight of the contrastive term (0 disables it).
    #[arg(long)]
    lambda_contrastive: Option<f64>,
}

impl ModelFlags {
    fn overrides(&self) -> ModelOverrides {
        ModelOverrides {
            embed_dim: self.embed_dim,
            heads: self.heads,
            blocks: self.blocks,
            dropout: self.dropout,
            p_cutmix: self.p_cutmix,
            temperature: self.temperature,
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            mode: self.mode.clone(),
            lambda_contrastive: self.lambda_contrastive,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the bundled synthetic dataset as CSV.
    Synth {
        #[arg(long, default_value_t = 500)]
        rows: usize,
        #[arg(long, default_value_t = 10)]
        cols: usize,
        #[arg(long, default_value_t = 3)]
        factors: usize,
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a missingness mask over a complete dataset.
    Simulate {
        /// CSV path or synthetic:ROWSxCOLS[xFACTORS][@SEED].
        #[arg(long)]
        data: String,
        #[arg(long)]
        drop_column: Option<String>,
        /// mcar, mar or mnar.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// MNAR direction: high, low or both.
        #[arg(long, default_value = "high")]
        direction: String,
        #[arg(long, default_value_t = 1.0)]
        steepness: f64,
        /// Fraction of features kept observed as MAR drivers.
        #[arg(long, default_value_t = 0.1)]
        driver_fraction: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train an imputation model and write a checkpoint.
    Train {
        #[arg(long)]
        data: String,
        #[arg(long)]
        drop_column: Option<String>,
        /// Optional 0/1 mask CSV hiding extra cells of the dataset.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Loss-history CSV (defaults next to the checkpoint).
        #[arg(long)]
        loss_history: Option<PathBuf>,
    },
    /// Impute a dataset with a trained checkpoint.
    Impute {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: String,
        #[arg(long)]
        drop_column: Option<String>,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the cross-validation benchmark grid and emit reports.
    Bench {
        /// TOML experiment file; flags below override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset source (replaces the file's datasets).
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        drop_column: Option<String>,
        /// Comma-separated method list.
        #[arg(long)]
        methods: Option<String>,
        /// Comma-separated missing kinds.
        #[arg(long)]
        kinds: Option<String>,
        /// Comma-separated missing rates.
        #[arg(long)]
        rates: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Worker threads (0 = all cores).
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long)]
        knn_k: Option<usize>,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Run the property suite; nonzero exit on any failure.
    Verify,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth { rows, cols, factors, noise, seed, out } => {
            let data = generate(&SyntheticSpec { rows, cols, factors, noise, seed });
            let mut buf = Vec::new();
            data.write_csv(&mut buf)?;
            write_atomic(&out, &buf)?;
            println!("wrote {} ({} rows x {} cols)", out.display(), rows, cols);
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate {
            data,
            drop_column,
            kind,
            rate,
            seed,
            direction,
            steepness,
            driver_fraction,
            out_dir,
        } => cmd_simulate(
            &data,
            drop_column.as_deref(),
            &kind,
            rate,
            seed,
            &direction,
            steepness,
            driver_fraction,
            &out_dir,
        ),
        Command::Train { data, drop_column, mask, seed, model, checkpoint, loss_history } => {
            cmd_train(&data, drop_column.as_deref(), mask, seed, &model, &checkpoint, loss_history)
        }
        Command::Impute { checkpoint, data, drop_column, mask, out } => {
            cmd_impute(&checkpoint, &data, drop_column.as_deref(), mask, &out)
        }
        Command::Bench {
            config,
            data,
            drop_column,
            methods,
            kinds,
            rates,
            seed,
            out_dir,
            parallelism,
            knn_k,
            model,
        } => cmd_bench(BenchArgs {
            config,
            data,
            drop_column,
            methods,
            kinds,
            rates,
            seed,
            out_dir,
            parallelism,
            knn_k,
            model,
        }),
        Command::Verify => cmd_verify(),
    }
}

#[derive(Serialize)]
struct SimulateConfig {
    data: String,
    kind: String,
    rate: f64,
    direction: String,
    steepness: f64,
    driver_fraction: f64,
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    data_spec: &str,
    drop_column: Option<&str>,
    kind: &str,
    rate: f64,
    seed: u64,
    direction: &str,
    steepness: f64,
    driver_fraction: f64,
    out_dir: &Path,
) -> Result<ExitCode> {
    let (_, data) = dataset::load_dataset(data_spec, drop_column)?;
    let kind: MissingKind = kind.parse()?;
    let direction = match direction.to_ascii_lowercase().as_str() {
        "high" => MnarDirection::High,
        "low" => MnarDirection::Low,
        "both" => MnarDirection::Both,
        other => bail!("unknown MNAR direction '{other}'"),
    };
    let spec = MissingnessSpec { kind, rate, seed, driver_fraction, direction, steepness };
    let generated = missingness::generate(&data, &spec)?;

    let masked = data.masked(&generated.mask)?;
    let mut masked_csv = Vec::new();
    masked.write_csv(&mut masked_csv)?;
    let mut mask_csv = Vec::new();
    generated.mask.write_csv(&mut mask_csv)?;
    write_atomic(&out_dir.join("masked.csv"), &masked_csv)?;
    write_atomic(&out_dir.join("mask.csv"), &mask_csv)?;

    let cfg = SimulateConfig {
        data: data_spec.to_string(),
        kind: kind.as_str().to_string(),
        rate,
        direction: format!("{direction:?}").to_lowercase(),
        steepness,
        driver_fraction,
    };
    let m = manifest(
        "simulate",
        seed,
        cfg,
        vec![data_spec.to_string()],
        vec!["masked.csv".into(), "mask.csv".into()],
    )?;
    write_manifest(&out_dir.join("manifest.json"), &m)?;

    println!(
        "simulated {} at target rate {}: realized rate {:.4} over {} cells",
        kind.as_str(),
        rate,
        generated.mask.missing_fraction(),
        data.rows() * data.cols()
    );
    for w in &generated.warnings {
        println!("warning: {w}");
    }
    Ok(ExitCode::SUCCESS)
}

fn model_config_from_flags(seed: u64, flags: &ModelFlags) -> Result<ModelConfig> {
    let mut config = ModelConfig { seed, ..ModelConfig::default() };
    flags.overrides().apply(&mut config)?;
    config.validate()?;
    Ok(config)
}

fn cmd_train(
    data_spec: &str,
    drop_column: Option<&str>,
    mask_path: Option<PathBuf>,
    seed: u64,
    flags: &ModelFlags,
    checkpoint: &Path,
    loss_history: Option<PathBuf>,
) -> Result<ExitCode> {
    let (_, mut data) = dataset::load_dataset(data_spec, drop_column)?;
    let mut inputs = vec![data_spec.to_string()];
    if let Some(path) = &mask_path {
        let mask = ObservationMask::read_csv(path)
            .with_context(|| format!("reading mask {}", path.display()))?;
        data = data.masked(&mask)?;
        inputs.push(path.display().to_string());
    }
    let config = model_config_from_flags(seed, flags)?;
    let imputer = deepifsac::model::train(&data, &config)?;
    for w in &imputer.warnings {
        println!("warning: {w}");
    }

    imputer.save(checkpoint)?;
    let history_path = loss_history.unwrap_or_else(|| checkpoint.with_extension("losses.csv"));
    let mut csv = String::from("epoch,reconstruction,contrastive,total\n");
    for (e, l) in imputer.loss_history.iter().enumerate() {
        csv.push_str(&format!("{},{},{},{}\n", e, l.recon, l.contrastive, l.total));
    }
    write_atomic(&history_path, csv.as_bytes())?;

    let m = manifest(
        "train",
        seed,
        config,
        inputs,
        vec![checkpoint.display().to_string(), history_path.display().to_string()],
    )?;
    write_manifest(&checkpoint.with_extension("manifest.json"), &m)?;

    let last = imputer.loss_history.last().expect("at least one epoch");
    println!(
        "trained {} epochs; final epoch loss {:.6} (reconstruction {:.6}, contrastive {:.6}); eval reconstruction {:.6}",
        config.epochs, last.total, last.recon, last.contrastive, imputer.final_eval_recon
    );
    println!("checkpoint: {}", checkpoint.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_impute(
    checkpoint: &Path,
    data_spec: &str,
    drop_column: Option<&str>,
    mask_path: Option<PathBuf>,
    out: &Path,
) -> Result<ExitCode> {
    let imputer = TrainedImputer::load(checkpoint)?;
    let (_, mut data) = dataset::load_dataset(data_spec, drop_column)?;
    let mut inputs = vec![checkpoint.display().to_string(), data_spec.to_string()];
    if let Some(path) = &mask_path {
        let mask = ObservationMask::read_csv(path)?;
        data = data.masked(&mask)?;
        inputs.push(path.display().to_string());
    }
    let missing = data.mask().missing_count();
    let imputed = imputer.impute(&data)?;
    let mut csv = Vec::new();
    imputed.write_csv(&mut csv)?;
    write_atomic(out, &csv)?;

    let m = manifest(
        "impute",
        imputer.config().seed,
        *imputer.config(),
        inputs,
        vec![out.display().to_string()],
    )?;
    write_manifest(&out.with_extension("manifest.json"), &m)?;
    println!("imputed {missing} missing cells into {}", out.display());
    Ok(ExitCode::SUCCESS)
}

struct BenchArgs {
    config: Option<PathBuf>,
    data: Option<String>,
    drop_column: Option<String>,
    methods: Option<String>,
    kinds: Option<String>,
    rates: Option<String>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    parallelism: Option<usize>,
    knn_k: Option<usize>,
    model: ModelFlags,
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect()
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode> {
    let file = match &args.config {
        Some(path) => config::read_experiment_file(path)?,
        None => Default::default(),
    };

    let mut datasets = file.datasets.clone();
    if let Some(source) = &args.data {
        datasets = vec![config::DatasetEntry {
            source: source.clone(),
            id: None,
            drop_column: args.drop_column.clone(),
        }];
    }

    let mut model_overrides = file.model.unwrap_or_default();
    model_overrides.merge(&args.model.overrides());
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let mut model = ModelConfig { seed, ..ModelConfig::default() };
    model_overrides.apply(&mut model)?;

    let resolved = ResolvedExperiment {
        seed,
        parallelism: args.parallelism.or(file.parallelism).unwrap_or(0),
        methods: args
            .methods
            .as_deref()
            .map(split_list)
            .or(file.methods)
            .unwrap_or_else(|| vec!["median".into(), "knn".into(), "deepifsac".into()]),
        kinds: args
            .kinds
            .as_deref()
            .map(split_list)
            .or(file.kinds)
            .unwrap_or_else(|| vec!["mcar".into()]),
        rates: match args.rates.as_deref() {
            Some(s) => split_list(s)
                .iter()
                .map(|r| r.parse::<f64>().with_context(|| format!("bad rate '{r}'")))
                .collect::<Result<Vec<f64>>>()?,
            None => file.rates.unwrap_or_else(|| vec![0.1, 0.3, 0.5]),
        },
        datasets,
        model,
        knn_k: args.knn_k.or(file.knn.and_then(|k| k.k)).unwrap_or(5),
    };
    resolved.validate()?;

    let out_dir = args
        .out_dir
        .or_else(|| std::env::var_os("DEEPIFSAC_OUT_DIR").map(PathBuf::from))
        .or_else(|| file.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("bench-out"));

    let kinds = resolved.parse_kinds()?;
    let methods: Vec<Method> = resolved
        .methods
        .iter()
        .map(|m| Method::parse(m, &resolved.model, &resolved.knn_config()).map_err(Into::into))
        .collect::<Result<Vec<Method>>>()?;

    let mut all_reports: Vec<EvaluationReport> = Vec::new();
    for entry in &resolved.datasets {
        let (derived_id, data) =
            dataset::load_dataset(&entry.source, entry.drop_column.as_deref())?;
        let id = entry.id.clone().unwrap_or(derived_id);
        println!(
            "benchmarking {} ({} rows x {} cols): {} kinds x {} rates x {} methods",
            id,
            data.rows(),
            data.cols(),
            kinds.len(),
            resolved.rates.len(),
            methods.len()
        );
        let cfg = BenchmarkConfig {
            dataset_id: id.clone(),
            methods: methods.clone(),
            kinds: kinds.clone(),
            rates: resolved.rates.clone(),
            seed: sub_seed(resolved.seed, &format!("dataset/{id}")),
            parallelism: resolved.parallelism,
        };
        let reports = evaluation::run_benchmark(&data, &cfg)?;
        all_reports.extend(reports);
    }

    let summary = evaluation::rank_table(&all_reports)?;
    let table = evaluation::render_rank_table(&summary);

    let mut reports_csv = Vec::new();
    evaluation::write_reports_csv(&all_reports, &mut reports_csv)?;
    let mut summary_json = Vec::new();
    evaluation::write_summary_json(&all_reports, &mut summary_json)?;
    let mut timings_csv = Vec::new();
    evaluation::write_timings_csv(&all_reports, &mut timings_csv)?;

    write_atomic(&out_dir.join("reports.csv"), &reports_csv)?;
    write_atomic(&out_dir.join("summary.json"), &summary_json)?;
    write_atomic(&out_dir.join("rank_table.txt"), table.as_bytes())?;
    write_atomic(&out_dir.join("aux").join("timings.csv"), &timings_csv)?;
    let m = manifest(
        "bench",
        resolved.seed,
        &resolved,
        resolved.datasets.iter().map(|d| d.source.clone()).collect(),
        vec![
            "reports.csv".into(),
            "summary.json".into(),
            "rank_table.txt".into(),
            "aux/timings.csv".into(),
        ],
    )?;
    write_manifest(&out_dir.join("manifest.json"), &m)?;

    print!("{table}");
    for r in &all_reports {
        if let (Some(mean), Some(std)) = (r.mean_nrmse(), r.std_nrmse()) {
            println!(
                "{} {} {:.0}% {}: NRMSE {:.4} ({:.4}) [{:.1}s]",
                r.dataset,
                r.kind.as_str(),
                r.rate * 100.0,
                r.method,
                mean,
                std,
                r.total_seconds()
            );
        }
    }
    println!("reports written to {}", out_dir.display());

    let failures: usize = all_reports
        .iter()
        .flat_map(|r| &r.folds)
        .filter(|f| f.error.is_some())
        .count();
    if failures > 0 {
        eprintln!("{failures} fold runs failed; see reports.csv");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify() -> Result<ExitCode> {
    let checks = deepifsac::verify::run_all();
    let mut failed = 0usize;
    for c in &checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!("{status} {} — {}", c.name, c.detail);
        if !c.passed {
            failed += 1;
        }
    }
    println!("{} checks, {} failed", checks.len(), failed);
    if failed > 0 {
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}
