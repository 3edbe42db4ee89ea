//! `uqbench`: generate synthetic slide datasets, train the uncertainty
//! methods, and evaluate selective classification and calibration.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/validation error.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use uqbench_cli::config::ExperimentConfig;
use uqbench_cli::{compare, evaluate, pipeline, rank, suites};

#[derive(Parser)]
#[command(
    name = "uqbench",
    version,
    about = "Uncertainty benchmark on synthetic whole-slide data"
)]
struct Cli {
    /// Experiment config JSON; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Concurrent trial jobs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the dataset files (tiles, slides, split manifest).
    Generate,
    /// Train all configured methods over all trials and write predictions.
    Run,
    /// Evaluate a finished run directory, or an external prediction CSV.
    Evaluate {
        /// Run directory produced by `run`.
        #[arg(long)]
        run: Option<PathBuf>,
        /// External prediction CSV (schema: sample_id,slide_id,center_id,label,draw,p0,...).
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Method tag for external predictions.
        #[arg(long, default_value = "external")]
        tag: String,
        /// Calibration bins for external evaluation.
        #[arg(long, default_value_t = 10)]
        ece_bins: usize,
    },
    /// Run the four label-noise dataset variants and compare them.
    NoiseSuite,
    /// Rank methods across the five leave-one-out runs.
    Rank {
        /// The five run directories (comma separated or repeated).
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        runs: Vec<PathBuf>,
        /// Report directory.
        #[arg(long, default_value = "rank_report")]
        report: PathBuf,
    },
    /// Compare confidence, entropy and variance as rejection orderings.
    CompareMeasures {
        #[arg(long)]
        run: PathBuf,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(1);
        }
    };
    std::process::exit(match dispatch(cli) {
        Ok(()) => 0,
        Err(Exit::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            1
        }
        Err(Exit::Data(err)) => {
            eprintln!("error: {err}");
            2
        }
    });
}

enum Exit {
    Usage(String),
    Data(uqbench_core::Error),
}

impl From<uqbench_core::Error> for Exit {
    fn from(e: uqbench_core::Error) -> Self {
        Exit::Data(e)
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Exit> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.data.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), Exit> {
    match &cli.cmd {
        Cmd::Generate => {
            let cfg = load_config(&cli)?;
            let dir = pipeline::cmd_generate(&cfg)?;
            println!("dataset written to {}", dir.display());
        }
        Cmd::Run => {
            let cfg = load_config(&cli)?;
            let dir = pipeline::cmd_run(&cfg, cli.jobs)?;
            println!("run written to {}", dir.display());
        }
        Cmd::Evaluate {
            run,
            predictions,
            tag,
            ece_bins,
        } => match (run, predictions) {
            (Some(run), None) => {
                let out = evaluate::cmd_evaluate(run)?;
                println!("reports written to {}", out.reports_dir.display());
            }
            (None, Some(pred)) => {
                let out_dir = cli
                    .out
                    .clone()
                    .unwrap_or_else(|| PathBuf::from("external_report"));
                let out = evaluate::cmd_evaluate_external(pred, tag, *ece_bins, &out_dir)?;
                println!("reports written to {}", out.reports_dir.display());
            }
            _ => {
                return Err(Exit::Usage(
                    "evaluate needs exactly one of --run or --predictions".into(),
                ))
            }
        },
        Cmd::NoiseSuite => {
            let cfg = load_config(&cli)?;
            let out = suites::cmd_noise_suite(&cfg, cli.jobs)?;
            println!("noise suite written to {}", out.dir.display());
        }
        Cmd::Rank { runs, report } => {
            if runs.is_empty() {
                return Err(Exit::Usage("rank needs --runs".into()));
            }
            let out = rank::cmd_rank(runs, report)?;
            println!("rank tables written to {}", out.dir.display());
        }
        Cmd::CompareMeasures { run } => {
            let out = compare::cmd_compare_measures(run)?;
            println!("measure comparison written to {}", out.dir.display());
            for note in &out.notes {
                println!("note: {note}");
            }
        }
    }
    Ok(())
}
