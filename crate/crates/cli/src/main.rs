//! `usd3` command-line driver: synthetic data, training, generation,
//! evaluation and the oracle equivalence suite.
//!
//! Exit codes: 0 on success, 1 on invalid input, 2 on numerical failure.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use usd3::checkpoint::Checkpoint;
use usd3::config::Config;
use usd3::data::{make_data, DataKind, Dataset, Split};
use usd3::metrics::{diverse_edit_distance, ngram_hellinger, ngram_outliers, parroting_ratio};
use usd3::sampler::{generate_many, GridSpacing, TimeGrid};
use usd3::trainer::{train, TraceRow};
use usd3::verify::{format_table, run_suite, DEFAULT_INSTANCES};
use usd3::{Error, Result};

#[derive(Parser)]
#[command(
    name = "usd3",
    version,
    about = "Unified discrete diffusion for categorical sequences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    MakeData {
        /// markov1, iid or two-mode.
        #[arg(long)]
        kind: DataKind,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// CSV of per-epoch loss components.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `train.epochs`.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Sample sequences from a checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Supplies `[sample]` defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        num_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, value_enum)]
        spacing: Option<SpacingArg>,
        /// Corrector rounds per application; 0 disables the corrector.
        #[arg(long)]
        mcmc_steps: Option<usize>,
        #[arg(long)]
        mcmc_dt: Option<f64>,
        /// Apply the corrector during the last S steps.
        #[arg(long)]
        mcmc_start: Option<usize>,
        /// Sample from the EMA weights.
        #[arg(long)]
        ema: bool,
    },
    /// Score generated sequences against train and test sets.
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        ngrams: Vec<usize>,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the closed-form equivalence suite.
    Verify {
        #[arg(long, default_value_t = DEFAULT_INSTANCES)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SpacingArg {
    Uniform,
    Geometric,
}

fn write_file(path: &PathBuf, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })
}

fn load_config(path: Option<&PathBuf>) -> Result<Config> {
    path.map_or_else(|| Ok(Config::default()), Config::read)
}

fn cmd_train(
    config: Option<PathBuf>,
    data: PathBuf,
    out: PathBuf,
    trace: Option<PathBuf>,
    seed: Option<u64>,
    epochs: Option<usize>,
) -> Result<()> {
    let mut cfg = load_config(config.as_ref())?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    let ds = Dataset::read(&data, Split::Train)?;
    if ds.k != cfg.data.k || ds.d != cfg.data.d {
        return Err(Error::Config(format!(
            "dataset has K={} D={} but the config says K={} D={}",
            ds.k, ds.d, cfg.data.k, cfg.data.d
        )));
    }
    let tc = cfg.train_config()?;
    let result = train(&tc, &ds.sequences)?;
    Checkpoint::new(&tc, &result.state, cfg.digest()?).save(&out)?;
    if let Some(path) = trace {
        let mut csv = format!("{}\n", TraceRow::CSV_HEADER);
        for row in &result.trace {
            csv.push_str(&row.to_csv());
            csv.push('\n');
        }
        write_file(&path, &csv)?;
    }
    if let Some(last) = result.trace.last() {
        eprintln!(
            "trained {} epochs, final loss {:.6}",
            last.epoch, last.total
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_generate(
    checkpoint: PathBuf,
    out: PathBuf,
    config: Option<PathBuf>,
    num_samples: usize,
    seed: u64,
    steps: Option<usize>,
    spacing: Option<SpacingArg>,
    mcmc_steps: Option<usize>,
    mcmc_dt: Option<f64>,
    mcmc_start: Option<usize>,
    ema: bool,
) -> Result<()> {
    let cfg = load_config(config.as_ref())?;
    let ck = Checkpoint::load(&checkpoint)?;
    let params = if ema || cfg.sample.use_ema {
        ck.ema_params()?
    } else {
        ck.model_params()?
    };
    let spacing = match spacing {
        Some(SpacingArg::Uniform) => GridSpacing::Uniform,
        Some(SpacingArg::Geometric) => GridSpacing::Geometric,
        None => cfg.sample.spacing,
    };
    let grid = TimeGrid::for_schedule(&ck.schedule, steps.unwrap_or(cfg.sample.steps), spacing)?;
    let mut mcmc = cfg.mcmc();
    if let Some(n) = mcmc_steps {
        mcmc.steps = n;
        mcmc.enabled = n > 0;
    }
    if let Some(dn) = mcmc_dt {
        mcmc.dn = dn;
    }
    if let Some(s) = mcmc_start {
        mcmc.start_step = s;
    }
    let (samples, stats) = generate_many(
        &params,
        &grid,
        &ck.schedule,
        &ck.m,
        &mcmc,
        num_samples,
        seed,
    )?;
    Dataset::new(ck.k, ck.d, samples, Split::Test)?.write(&out)?;
    if mcmc.enabled {
        eprintln!(
            "corrector rounds {}, clipped updates {}",
            stats.corrector_rounds, stats.clipped
        );
    }
    Ok(())
}

fn cmd_eval(
    generated: PathBuf,
    train: PathBuf,
    test: PathBuf,
    ngrams: Vec<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let gen = Dataset::read(&generated, Split::Test)?;
    let tr = Dataset::read(&train, Split::Train)?;
    let ts = Dataset::read(&test, Split::Test)?;
    let mut csv = String::from("metric,n,value\n");
    for &n in &ngrams {
        // Distance to held-out data is `tr`, distance to training data `ts`.
        let dist_tr = ngram_hellinger(&gen.sequences, &ts.sequences, n)?;
        let dist_ts = ngram_hellinger(&gen.sequences, &tr.sequences, n)?;
        let _ = writeln!(csv, "hellinger_test,{n},{dist_tr}");
        let _ = writeln!(csv, "hellinger_train,{n},{dist_ts}");
        let _ = writeln!(
            csv,
            "outliers,{n},{}",
            ngram_outliers(&gen.sequences, &tr.sequences, n)?
        );
        let _ = writeln!(
            csv,
            "parroting_ratio,{n},{}",
            parroting_ratio(dist_tr, dist_ts)?
        );
    }
    let (mean, std) = diverse_edit_distance(&gen.sequences)?;
    let _ = writeln!(csv, "edit_distance_mean,,{mean}");
    let _ = writeln!(csv, "edit_distance_std,,{std}");
    match out {
        Some(path) => write_file(&path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cmd_verify(instances: usize, seed: u64) -> Result<()> {
    let results = run_suite(instances, seed)?;
    print!("{}", format_table(&results));
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name)
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::OracleDeviation(failed.join(", ")))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MakeData {
            kind,
            k,
            d,
            count,
            seed,
            split,
            out,
        } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            make_data(kind, k, d, count, seed, split)?.write(&out)
        }
        Command::Train {
            config,
            data,
            out,
            trace,
            seed,
            epochs,
        } => cmd_train(config, data, out, trace, seed, epochs),
        Command::Generate {
            checkpoint,
            out,
            config,
            num_samples,
            seed,
            steps,
            spacing,
            mcmc_steps,
            mcmc_dt,
            mcmc_start,
            ema,
        } => cmd_generate(
            checkpoint,
            out,
            config,
            num_samples,
            seed,
            steps,
            spacing,
            mcmc_steps,
            mcmc_dt,
            mcmc_start,
            ema,
        ),
        Command::Eval {
            generated,
            train,
            test,
            ngrams,
            out,
        } => cmd_eval(generated, train, test, ngrams, out),
        Command::Verify { instances, seed } => cmd_verify(instances, seed),
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(value) = std::env::var("USD3_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| format!("USD3_THREADS must be a positive integer, got {value:?}"))?;
    if n == 0 {
        return Err("USD3_THREADS must be positive".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
