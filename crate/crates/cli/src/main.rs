//! `bayesmf`: rating-prediction pipeline.
//!
//! Subcommands mirror the experiment stages: `ingest` normalizes a raw ratings
//! file, `split` holds out each user's latest rating, `train` fits a point or
//! variational model, `eval` scores a checkpoint, `sweep` runs a grid of
//! variational fits, and `trace` samples one latent coordinate's marginal.
//!
//! Exit codes: 0 success, 2 bad input or configuration, 3 training divergence,
//! 4 shape mismatch between artifacts.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use bayesmf::baselines::{train_pmf, train_svd, train_svd_bias, SgdConfig};
use bayesmf::checkpoint::{
    code_version, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta,
};
use bayesmf::dataset::{parse_canonical, parse_movielens, write_canonical, RatingsDataset};
use bayesmf::eval::{
    overfit_gap, sweep, trace_parameter, write_elbo_trace, write_objective_trace, write_reports,
    write_trace_report, EntityKind, EvalReport, Predictor,
};
use bayesmf::seeding::{stage, stage_seed};
use bayesmf::split::{leave_latest_out, read_split, sample_validation, write_split, LoadedSplit};
use bayesmf::vi::{fit_vi, PriorSpec, ViConfig};
use bayesmf::{Error, Result};

/// Environment variable that overrides the report output directory of the
/// `eval`, `sweep`, and `trace` commands.
const REPORT_DIR_ENV: &str = "BAYESMF_REPORT_DIR";

#[derive(Parser)]
#[command(
    name = "bayesmf",
    version,
    about = "Latent factor rating models: ingest, split, train, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a raw ratings file into canonical CSV plus a stats sidecar.
    Ingest(IngestArgs),
    /// Hold out each user's latest rating and write a split directory.
    Split(SplitArgs),
    /// Train a model and write a checkpoint plus an objective trace.
    Train(TrainArgs),
    /// Score a checkpoint on a split's test (and validation) interactions.
    Eval(EvalArgs),
    /// Fit and score every variational configuration in a grid file.
    Sweep(SweepArgs),
    /// Sample one latent coordinate's marginal posterior from a checkpoint.
    Trace(TraceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Model {
    Svd,
    Svdbias,
    Pmf,
    Blfm,
    Blfmbias,
}

impl Model {
    fn tag(self) -> &'static str {
        match self {
            Model::Svd => "svd",
            Model::Svdbias => "svdbias",
            Model::Pmf => "pmf",
            Model::Blfm => "blfm",
            Model::Blfmbias => "blfmbias",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EntityArg {
    User,
    Item,
}

#[derive(Args)]
struct IngestArgs {
    /// Ratings file, either `user::item::rating::timestamp` rows or the
    /// canonical CSV.
    #[arg(long)]
    input: PathBuf,
    /// Directory for `canonical.csv` and `stats.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    /// Ratings file to split.
    #[arg(long)]
    data: PathBuf,
    /// Directory for the split CSVs and manifest.
    #[arg(long)]
    out: PathBuf,
    /// Validation interactions to sample from the training set (0 = none).
    #[arg(long, default_value_t = 0)]
    validation_size: usize,
    /// Master seed; the validation sample draws from a seed derived from it.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// JSON file whose fields override the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Model to train.
    #[arg(long, value_enum)]
    model: Model,
    /// Training data: a ratings file or a split directory.
    #[arg(long)]
    data: PathBuf,
    /// Directory for the checkpoint and trace files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// JSON file whose fields override the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Latent dimensions.
    #[arg(long, default_value_t = 8)]
    k: usize,
    /// Epochs for the gradient baselines; ascent steps for variational fits.
    #[arg(long)]
    iters: Option<u64>,
    /// Master seed; the trainer's seed derives from it.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Learning rate (baselines).
    #[arg(long)]
    lr: Option<f64>,
    /// L2 penalty weight (baselines).
    #[arg(long)]
    reg: Option<f64>,
    /// Momentum coefficient (batch baseline only).
    #[arg(long)]
    momentum: Option<f64>,
    /// Ascent step size (variational models).
    #[arg(long)]
    step: Option<f64>,
    /// Prediction sample count stored in the checkpoint config (variational).
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Iterations between objective checkpoints (variational).
    #[arg(long)]
    eval_every: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file to score.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Split directory with test (and optional validation) interactions.
    #[arg(long)]
    split: PathBuf,
    /// Report directory; BAYESMF_REPORT_DIR overrides it.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Base name of the report files.
    #[arg(long, default_value = "eval")]
    stem: String,
    /// JSON file whose fields override the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Monte Carlo prediction samples (posterior checkpoints only).
    #[arg(long, default_value_t = 2000)]
    mc_samples: usize,
    /// Predict with the closed-form posterior mean instead of sampling.
    #[arg(long)]
    analytic: bool,
    /// Master seed for prediction sampling.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Leave predictions unclamped instead of clipping to the rating range.
    #[arg(long)]
    no_clamp: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Split directory supplying train, test, and optional validation sets.
    #[arg(long)]
    split: PathBuf,
    /// JSON array of variational configurations; omitted fields take defaults.
    #[arg(long)]
    grid: PathBuf,
    /// Report directory; BAYESMF_REPORT_DIR overrides it.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Base name of the report files.
    #[arg(long, default_value = "sweep")]
    stem: String,
}

#[derive(Args)]
struct TraceArgs {
    /// Posterior checkpoint to sample from.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Which entity family the traced coordinate belongs to.
    #[arg(long, value_enum, default_value = "user")]
    entity_kind: EntityArg,
    /// Dense entity index.
    #[arg(long, default_value_t = 100)]
    entity: u32,
    /// Factor dimension to trace.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Number of posterior draws.
    #[arg(long, default_value_t = 500)]
    samples: usize,
    /// Master seed for the draws.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Point-model checkpoint whose estimate is included for scale.
    #[arg(long)]
    map_checkpoint: Option<PathBuf>,
    /// Report directory; BAYESMF_REPORT_DIR overrides it.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Base name of the trace files.
    #[arg(long, default_value = "trace")]
    stem: String,
    /// JSON file whose fields override the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(match err {
                Error::Diverged { .. } => 3,
                Error::ShapeMismatch(_)
                | Error::IndexOutOfBounds { .. }
                | Error::NonPositiveVariance(_) => 4,
                _ => 2,
            })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Split(args) => cmd_split(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Trace(args) => cmd_trace(args),
    }
}

fn cmd_ingest(args: &IngestArgs) -> Result<()> {
    let ds = load_ratings(&args.input)?;
    fs::create_dir_all(&args.out)?;

    let mut csv = Vec::new();
    write_canonical(&ds, &mut csv)?;
    fs::write(args.out.join("canonical.csv"), csv)?;

    let stats = ds.stats();
    let sidecar = json!({
        "config": {
            "command": "ingest",
            "input": args.input.display().to_string(),
        },
        "stats": stats,
    });
    fs::write(
        args.out.join("stats.json"),
        serde_json::to_string_pretty(&sidecar)? + "\n",
    )?;

    println!("interactions: {}", group_thousands(stats.count as u64));
    println!("users: {}", group_thousands(u64::from(stats.num_users)));
    println!("items: {}", group_thousands(u64::from(stats.num_items)));
    println!("sparsity: {:.2}%", stats.sparsity * 100.0);
    println!("mean rating: {:.6}", stats.r_mean);
    println!("rating variance: {:.6}", stats.r_var);
    Ok(())
}

/// Overridable `split` parameters, as accepted in a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitOverrides {
    validation_size: Option<usize>,
    seed: Option<u64>,
}

fn cmd_split(args: &SplitArgs) -> Result<()> {
    let ov: SplitOverrides = load_overrides(args.config.as_deref())?;
    let validation_size = ov.validation_size.unwrap_or(args.validation_size);
    let master_seed = ov.seed.unwrap_or(args.seed);

    let ds = load_ratings(&args.data)?;
    let split = leave_latest_out(&ds)?;
    let (validation, validation_seed) = if validation_size > 0 {
        let vseed = stage_seed(master_seed, stage::SPLIT);
        let sample = sample_validation(&split.train, validation_size, vseed)?;
        (Some(sample), Some(vseed))
    } else {
        (None, None)
    };
    write_split(&args.out, &split, validation.as_deref(), validation_seed)?;

    let config = json!({
        "command": "split",
        "data": args.data.display().to_string(),
        "protocol": split.protocol_tag,
        "validation_size": validation_size,
        "master_seed": master_seed,
    });
    fs::write(
        args.out.join("config.json"),
        serde_json::to_string_pretty(&config)? + "\n",
    )?;

    println!(
        "split {}: train={} test={} validation={}",
        split.protocol_tag,
        split.train.interactions().len(),
        split.test.len(),
        validation.as_ref().map_or(0, Vec::len),
    );
    Ok(())
}

/// Overridable `train` parameters, as accepted in a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainOverrides {
    k: Option<usize>,
    iters: Option<u64>,
    seed: Option<u64>,
    lr: Option<f64>,
    reg: Option<f64>,
    momentum: Option<f64>,
    step: Option<f64>,
    mc_samples: Option<usize>,
    eval_every: Option<u64>,
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let ov: TrainOverrides = load_overrides(args.config.as_deref())?;
    let k = ov.k.unwrap_or(args.k);
    let master_seed = ov.seed.unwrap_or(args.seed);
    let iters = ov.iters.or(args.iters);
    let lr = ov.lr.or(args.lr);
    let reg = ov.reg.or(args.reg);
    let momentum = ov.momentum.or(args.momentum);
    let step = ov.step.or(args.step);
    let mc_samples = ov.mc_samples.or(args.mc_samples);
    let eval_every = ov.eval_every.or(args.eval_every);

    let train = load_train_data(&args.data)?;
    let train_seed = stage_seed(master_seed, stage::TRAIN);
    fs::create_dir_all(&args.out)?;
    let tag = args.model.tag();
    let checkpoint_path = args.out.join("checkpoint.json");

    match args.model {
        Model::Svd | Model::Svdbias | Model::Pmf => {
            let mut cfg = match args.model {
                Model::Pmf => SgdConfig::pmf_defaults(k),
                _ => SgdConfig::svd_defaults(k),
            };
            if let Some(v) = iters {
                cfg.epochs = v as usize;
            }
            if let Some(v) = lr {
                cfg.learning_rate = v;
            }
            if let Some(v) = reg {
                cfg.regularization = v;
            }
            if let Some(v) = momentum {
                cfg.momentum = v;
            }
            cfg.seed = train_seed;

            let result = match args.model {
                Model::Svd => train_svd(&train, &cfg)?,
                Model::Svdbias => train_svd_bias(&train, &cfg)?,
                _ => train_pmf(&train, &cfg)?,
            };
            let meta = CheckpointMeta {
                model_tag: tag.to_string(),
                seed: master_seed,
                code_version: code_version(),
                config: json!({
                    "command": "train",
                    "model": tag,
                    "data": args.data.display().to_string(),
                    "master_seed": master_seed,
                    "trainer": &cfg,
                }),
            };
            save_checkpoint(
                &checkpoint_path,
                &Checkpoint::Factor {
                    meta,
                    model: result.model,
                },
            )?;
            write_objective_trace(
                &args.out.join("objective_trace.csv"),
                &result.objective_trace,
            )?;
            let last = result.objective_trace.last().copied().unwrap_or(f64::NAN);
            println!(
                "trained model={tag} k={k} epochs={} final_objective={last:.6}",
                cfg.epochs
            );
        }
        Model::Blfm | Model::Blfmbias => {
            let mut cfg = ViConfig::defaults(k, args.model == Model::Blfmbias);
            if let Some(v) = iters {
                cfg.iterations = v;
            }
            if let Some(v) = step {
                cfg.step_size = v;
            }
            if let Some(v) = mc_samples {
                cfg.mc_samples = v;
            }
            if let Some(v) = eval_every {
                cfg.eval_every = v;
            }
            cfg.seed = train_seed;

            let prior = PriorSpec::from_mean_rating(train.stats().r_mean)?;
            let fit = fit_vi(&train, &cfg, &prior)?;
            let meta = CheckpointMeta {
                model_tag: tag.to_string(),
                seed: master_seed,
                code_version: code_version(),
                config: json!({
                    "command": "train",
                    "model": tag,
                    "data": args.data.display().to_string(),
                    "master_seed": master_seed,
                    "trainer": &cfg,
                    "prior": &prior,
                }),
            };
            save_checkpoint(
                &checkpoint_path,
                &Checkpoint::Posterior {
                    meta,
                    posterior: fit.posterior,
                },
            )?;
            write_elbo_trace(&args.out.join("elbo_trace.csv"), &fit.trace)?;
            let last = fit.trace.last().map_or(f64::NAN, |t| t.elbo);
            println!(
                "trained model={tag} k={k} iterations={} final_elbo={last:.6}",
                cfg.iterations
            );
        }
    }
    Ok(())
}

/// Overridable `eval` parameters, as accepted in a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalOverrides {
    mc_samples: Option<usize>,
    analytic: Option<bool>,
    seed: Option<u64>,
    no_clamp: Option<bool>,
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let ov: EvalOverrides = load_overrides(args.config.as_deref())?;
    let mc_samples = ov.mc_samples.unwrap_or(args.mc_samples);
    let analytic = ov.analytic.unwrap_or(args.analytic);
    let master_seed = ov.seed.unwrap_or(args.seed);
    let no_clamp = ov.no_clamp.unwrap_or(args.no_clamp);

    let ckpt = load_checkpoint(&args.checkpoint)?;
    let loaded = read_split(&args.split)?;
    check_checkpoint_shape(&ckpt, &loaded)?;

    let stats = loaded.train.stats();
    let clamp = (!no_clamp).then_some((stats.r_min, stats.r_max));
    let predictor = match &ckpt {
        Checkpoint::Factor { model, .. } => Predictor::Map(model),
        Checkpoint::Posterior { posterior, .. } => {
            if analytic {
                Predictor::PosteriorAnalytic(posterior)
            } else {
                Predictor::PosteriorMc {
                    posterior,
                    samples: mc_samples,
                    seed: stage_seed(master_seed, stage::EVAL),
                }
            }
        }
    };

    let started = Instant::now();
    let (rmse_test, rmse_validation, gap) = match &loaded.validation {
        Some(validation) => {
            let g = overfit_gap(&predictor, validation, &loaded.test, clamp)?;
            (g.rmse_test, Some(g.rmse_validation), Some(g.gap))
        }
        None => (predictor.rmse(&loaded.test, clamp)?, None, None),
    };
    let runtime_seconds = started.elapsed().as_secs_f64();

    let meta = ckpt.meta();
    let k = match &ckpt {
        Checkpoint::Factor { model, .. } => model.k,
        Checkpoint::Posterior { posterior, .. } => posterior.k,
    };
    let report = EvalReport {
        model_tag: meta.model_tag.clone(),
        k,
        rmse_test: Some(rmse_test),
        rmse_validation,
        gap,
        error: None,
        config_snapshot: json!({
            "command": "eval",
            "checkpoint": args.checkpoint.display().to_string(),
            "split": args.split.display().to_string(),
            "mc_samples": mc_samples,
            "analytic": analytic,
            "master_seed": master_seed,
            "clamp": clamp.is_some(),
            "training_config": &meta.config,
        }),
        runtime_seconds,
    };
    write_reports(
        &report_dir(&args.out),
        &args.stem,
        std::slice::from_ref(&report),
    )?;

    let mut line = format!("model={} k={k} rmse_test={rmse_test:.6}", meta.model_tag);
    if let (Some(v), Some(g)) = (rmse_validation, gap) {
        line.push_str(&format!(" rmse_validation={v:.6} gap={g:.6}"));
    }
    println!("{line}");
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let text = read_file(&args.grid)?;
    let grid: Vec<ViConfig> = serde_json::from_str(&text).map_err(|e| Error::MalformedFile {
        path: args.grid.display().to_string(),
        message: e.to_string(),
    })?;
    if grid.is_empty() {
        return Err(Error::InvalidConfig("sweep grid is empty".into()));
    }
    for cfg in &grid {
        cfg.validate()?;
    }

    let loaded = read_split(&args.split)?;
    let reports = sweep(
        &loaded.train,
        &loaded.test,
        loaded.validation.as_deref(),
        &grid,
    );
    write_reports(&report_dir(&args.out), &args.stem, &reports)?;

    for r in &reports {
        let iterations = r
            .config_snapshot
            .get("iterations")
            .and_then(serde_json::Value::as_u64)
            .unwrap_or(0);
        match &r.error {
            Some(err) => println!(
                "model={} k={} iterations={iterations} error={err}",
                r.model_tag, r.k
            ),
            None => {
                let mut line = format!(
                    "model={} k={} iterations={iterations} rmse_test={}",
                    r.model_tag,
                    r.k,
                    fmt_opt(r.rmse_test)
                );
                if let (Some(v), Some(g)) = (r.rmse_validation, r.gap) {
                    line.push_str(&format!(" rmse_validation={v:.6} gap={g:.6}"));
                }
                println!("{line}");
            }
        }
    }
    Ok(())
}

/// Overridable `trace` parameters, as accepted in a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceOverrides {
    entity: Option<u32>,
    dim: Option<usize>,
    samples: Option<usize>,
    seed: Option<u64>,
}

fn cmd_trace(args: &TraceArgs) -> Result<()> {
    let ov: TraceOverrides = load_overrides(args.config.as_deref())?;
    let entity = ov.entity.unwrap_or(args.entity);
    let dim = ov.dim.unwrap_or(args.dim);
    let samples = ov.samples.unwrap_or(args.samples);
    let master_seed = ov.seed.unwrap_or(args.seed);

    let ckpt = load_checkpoint(&args.checkpoint)?;
    let Checkpoint::Posterior { posterior, .. } = &ckpt else {
        return Err(Error::InvalidConfig(format!(
            "{} holds a point model; tracing needs a posterior checkpoint",
            args.checkpoint.display()
        )));
    };

    let map_ckpt = args
        .map_checkpoint
        .as_deref()
        .map(load_checkpoint)
        .transpose()?;
    let map_model = match &map_ckpt {
        None => None,
        Some(Checkpoint::Factor { model, .. }) => Some(model),
        Some(Checkpoint::Posterior { .. }) => {
            return Err(Error::InvalidConfig(
                "the reference checkpoint must hold a point model".into(),
            ));
        }
    };

    let kind = match args.entity_kind {
        EntityArg::User => EntityKind::User,
        EntityArg::Item => EntityKind::Item,
    };
    let report = trace_parameter(
        posterior,
        kind,
        entity,
        dim,
        samples,
        stage_seed(master_seed, stage::TRACE),
        map_model,
    )?;

    let config = json!({
        "command": "trace",
        "checkpoint": args.checkpoint.display().to_string(),
        "entity_kind": kind,
        "entity": entity,
        "dim": dim,
        "samples": samples,
        "master_seed": master_seed,
    });
    write_trace_report(&report_dir(&args.out), &args.stem, &report, &config)?;

    let kind_name = match kind {
        EntityKind::User => "user",
        EntityKind::Item => "item",
    };
    println!(
        "entity_kind={kind_name} entity={entity} dim={dim} posterior_mean={:.6} \
         posterior_std={:.6} sample_mean={:.6}",
        report.posterior_mean, report.posterior_std, report.sample_mean
    );
    Ok(())
}

/// Read a file with the path attached to any I/O failure.
fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

/// Read a ratings file, deciding by content whether it is raw `::` rows or the
/// canonical CSV.
fn load_ratings(path: &Path) -> Result<RatingsDataset> {
    let text = read_file(path)?;
    let looks_raw = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .is_some_and(|l| l.contains("::"));
    let parsed = if looks_raw {
        parse_movielens(text.as_bytes())
    } else {
        parse_canonical(text.as_bytes())
    };
    parsed.map_err(|err| match err {
        Error::Parse { line, message } => Error::MalformedFile {
            path: path.display().to_string(),
            message: format!("line {line}: {message}"),
        },
        other => other,
    })
}

/// Training data is either a split directory (the manifest fixes the
/// vocabulary) or a plain ratings file used whole.
fn load_train_data(path: &Path) -> Result<RatingsDataset> {
    if path.is_dir() {
        if !path.join("manifest.json").is_file() {
            return Err(Error::InvalidConfig(format!(
                "{} is a directory without a manifest.json; pass a split directory or a ratings file",
                path.display()
            )));
        }
        Ok(read_split(path)?.train)
    } else {
        load_ratings(path)
    }
}

/// Deserialize a `--config` override file, or give defaults when absent.
fn load_overrides<T>(path: Option<&Path>) -> Result<T>
where
    T: serde::de::DeserializeOwned + Default,
{
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = read_file(p)?;
            serde_json::from_str(&text).map_err(|e| Error::MalformedFile {
                path: p.display().to_string(),
                message: e.to_string(),
            })
        }
    }
}

fn check_checkpoint_shape(ckpt: &Checkpoint, loaded: &LoadedSplit) -> Result<()> {
    let (m, n) = match ckpt {
        Checkpoint::Factor { model, .. } => (model.num_users, model.num_items),
        Checkpoint::Posterior { posterior, .. } => (posterior.num_users, posterior.num_items),
    };
    let (sm, sn) = (
        loaded.manifest.num_users as usize,
        loaded.manifest.num_items as usize,
    );
    if (m, n) != (sm, sn) {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint holds {m} users x {n} items, split has {sm} x {sn}"
        )));
    }
    Ok(())
}

fn report_dir(flag: &Path) -> PathBuf {
    env::var_os(REPORT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| flag.to_path_buf())
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"))
}

fn group_thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}
