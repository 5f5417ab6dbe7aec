use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lga_cli::{
    cmd_compare, cmd_dump_masks, cmd_eval, cmd_gen_data, cmd_gradcheck, cmd_train, parse_range,
    CliError, CompareArgs, DumpMasksArgs, EvalArgs, GenDataArgs, GradcheckArgs, TrainArgs,
};

#[derive(Parser)]
#[command(
    name = "lga",
    version,
    about = "Loss-guided Gaussian attention experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file plus overrides; later assignments win.
#[derive(Args)]
struct ConfigArgs {
    /// key = value file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key (repeatable), e.g. --set epochs=5
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl ConfigArgs {
    fn overrides(&self) -> Vec<String> {
        let mut v = self.sets.clone();
        if let Some(s) = self.seed {
            v.push(format!("seed={s}"));
        }
        if let Some(e) = self.epochs {
            v.push(format!("epochs={e}"));
        }
        v
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Number of instances (default: n_train)
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write its weights and a metrics CSV
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Optional validation dataset, tracked per epoch
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out_model: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Evaluate a saved model on a dataset
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        metrics_out: PathBuf,
    },
    /// Export combined masks as PGM images plus predicted parameters
    DumpMasks {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Half-open index range, e.g. 0..8
        #[arg(long)]
        index_range: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Check every op and the full loss against finite differences
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Paired attention-vs-baseline ablation over several seeds
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Comma-separated seeds, e.g. 1,2,3,4,5
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let stdout = &mut std::io::stdout();
    match cli.command {
        Command::GenData { cfg, n, out } => cmd_gen_data(
            &GenDataArgs {
                config: cfg.config.clone(),
                sets: cfg.overrides(),
                seed: cfg.seed,
                n,
                out,
            },
            stdout,
        ),
        Command::Train {
            cfg,
            data,
            val,
            out_model,
            metrics,
        } => cmd_train(
            &TrainArgs {
                config: cfg.config.clone(),
                sets: cfg.overrides(),
                data,
                val,
                out_model,
                metrics,
            },
            stdout,
        ),
        Command::Eval {
            model,
            data,
            metrics_out,
        } => cmd_eval(
            &EvalArgs {
                model,
                data,
                metrics_out,
            },
            stdout,
        ),
        Command::DumpMasks {
            model,
            data,
            index_range,
            out_dir,
        } => cmd_dump_masks(
            &DumpMasksArgs {
                model,
                data,
                range: parse_range(&index_range)?,
                out_dir,
            },
            stdout,
        ),
        Command::Gradcheck { seed, tolerance } => {
            cmd_gradcheck(&GradcheckArgs { seed, tolerance }, stdout)
        }
        Command::Compare {
            config,
            sets,
            seeds,
            out,
        } => cmd_compare(
            &CompareArgs {
                config,
                sets,
                seeds,
                out,
            },
            stdout,
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
