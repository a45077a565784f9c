//! `lacforest`: data preparation, training, evaluation, parameter sweeps
//! and numerical self-checks for augmented-class learning.

mod commands;
mod config;
mod data;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lacforest::dataset::ShiftSplitConfig;

use crate::commands::{CheckSettings, Which};
use crate::config::{Axis, Mode, RunConfig, SweepBlock};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "lacforest", version, about = "Augmented-class learning with LACForest")]
struct Cli {
    /// Worker threads for training and prediction (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate labeled/unlabeled/test CSVs from a Gaussian cluster spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the generator seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample labeled/unlabeled/test CSVs from a labeled source under class shift.
    Split(SplitArgs),
    /// Train a model from a run config.
    Train(RunArgs),
    /// Evaluate a trained model on a labeled test CSV.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value = "label")]
        label_column: String,
        /// Also write report.json, predictions.csv and a run manifest here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Count tied (augmented, known) score pairs as misordered.
        #[arg(long)]
        strict_ties: bool,
    },
    /// Train and evaluate over a grid of one parameter.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        axis: Option<Axis>,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// Seeds per grid value.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Run numerical self-checks; exits 1 when any fails.
    Check {
        which: Which,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Monte Carlo trials per sample size (convergence).
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Random distributions tested (simplex-lemma).
        #[arg(long, default_value_t = 500)]
        points: usize,
        /// Random nodes tested (oracle-splits).
        #[arg(long, default_value_t = 1000)]
        nodes: usize,
        /// Random network configurations tested (gradients).
        #[arg(long, default_value_t = 20)]
        configs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true, default_value_t = 0.0)]
        inject_gradient_error: f64,
    },
    /// Print the JSON schema of run configs.
    Schema,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long, default_value = "label")]
    label_column: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    #[arg(long, default_value_t = 500)]
    n_l: usize,
    #[arg(long, default_value_t = 1000)]
    n_u: usize,
    #[arg(long, default_value_t = 100)]
    n_test: usize,
    /// Share of source classes held out as the augmented class.
    #[arg(long, default_value_t = 0.5)]
    augmented_class_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Run config file plus flag overrides; flags win.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    labeled: Option<PathBuf>,
    #[arg(long)]
    unlabeled: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long)]
    label_column: Option<String>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    num_trees: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lambda_ce: Option<f64>,
    #[arg(long)]
    lr_initial: Option<f64>,
    #[arg(long)]
    lr_final: Option<f64>,
    /// Validate and print the effective config without running.
    #[arg(long)]
    dry_run: bool,
}

impl RunArgs {
    fn resolve(self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { c.$($field).+ = v.into(); })*
            };
        }
        set!(
            mode => mode,
            labeled => labeled,
            unlabeled => unlabeled,
            test => test,
            source => source,
            label_column => label_column,
            theta => theta,
            m => m,
            tau => tau,
            gamma => gamma,
            seed => seed,
            out => out,
            num_trees => neural.num_trees,
            depth => neural.depth,
            epochs => neural.epochs,
            lambda_ce => neural.lambda_ce,
            lr_initial => neural.lr_initial,
            lr_final => neural.lr_final,
        );
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    match cli.command {
        Command::Synth { spec, out, seed } => commands::synth(&spec, &out, seed),
        Command::Split(a) => {
            let cfg = ShiftSplitConfig {
                augmented_class_fraction: a.augmented_class_fraction,
                theta: a.theta,
                n_l: a.n_l,
                n_u: a.n_u,
                n_test: a.n_test,
                seed: a.seed,
            };
            commands::split(&a.source, &a.label_column, &cfg, &a.out)
        }
        Command::Train(a) => {
            let dry_run = a.dry_run;
            let cfg = a.resolve()?;
            if dry_run {
                return commands::show_config(&cfg);
            }
            commands::train(&cfg)
        }
        Command::Eval {
            model,
            test,
            label_column,
            out,
            strict_ties,
        } => commands::eval(&model, &test, &label_column, out.as_deref(), strict_ties),
        Command::Sweep { run, axis, grid, seeds } => {
            let dry_run = run.dry_run;
            let mut cfg = run.resolve()?;
            match (&mut cfg.sweep, axis, grid) {
                (Some(s), axis, grid) => {
                    if let Some(a) = axis {
                        s.axis = a;
                    }
                    if let Some(g) = grid {
                        s.grid = g;
                    }
                }
                (None, Some(axis), Some(grid)) => {
                    cfg.sweep = Some(SweepBlock { axis, grid, seeds: 1 });
                }
                (None, _, _) => return Err(CliError::config("sweep needs --axis and --grid or a \"sweep\" block")),
            }
            if let (Some(s), Some(n)) = (&mut cfg.sweep, seeds) {
                s.seeds = n;
            }
            if dry_run {
                return commands::show_config(&cfg);
            }
            commands::sweep(&cfg)
        }
        Command::Check {
            which,
            seed,
            trials,
            points,
            nodes,
            configs,
            out,
            inject_gradient_error,
        } => {
            let settings = CheckSettings {
                which,
                seed,
                trials,
                points,
                nodes,
                configs,
                inject_gradient_error,
            };
            commands::check(&settings, out.as_deref())
        }
        Command::Schema => {
            print!("{}", config::schema_json());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
