//! `trd`: fetch data, train, evaluate and audit resolution-decrement runs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "trd", version, about = "Epoch-wise resolution decrement training engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Dotted override, e.g. `--set schedule.p=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Download dataset files listed in a checksum manifest.
    Fetch {
        /// Base URL; each file is fetched from `<base>/<path>`. `file://` works.
        #[arg(long)]
        base_url: String,
        /// Lines of `<sha256> <relative path>`.
        #[arg(long)]
        manifest: PathBuf,
        /// Destination directory (default: `<cache>/<name>`).
        #[arg(long)]
        dest: Option<PathBuf>,
        /// Dataset name under the cache directory.
        #[arg(long, default_value = "fashion-mnist")]
        name: String,
    },
    /// Train one experiment.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Suppress per-epoch progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a finished run at one or more resolutions.
    Eval {
        /// Run directory holding manifest.json and checkpoints.
        #[arg(long)]
        run: PathBuf,
        /// e.g. `28` or `28x28`; default: the native resolution.
        #[arg(long = "resolution", value_delimiter = ',')]
        resolutions: Vec<String>,
        #[arg(long, default_value = "best")]
        checkpoint: String,
        /// `nearest` or `bilinear`; default: the config's eval mode.
        #[arg(long)]
        resize_mode: Option<String>,
        /// Load even if the checkpoint's config hash differs.
        #[arg(long)]
        force: bool,
    },
    /// Compare a TRD run with a baseline across test resolutions.
    Stress {
        #[arg(long)]
        trd: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        /// Default: the TRD config's eval_resolutions, else min..=native.
        #[arg(long, value_delimiter = ',')]
        resolutions: Vec<String>,
        /// Also write the report as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// FLOPs per resolution and schedule-weighted mFLOPs.
    Flops {
        #[arg(long, required_unless_present = "closed_form")]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Closed form from a baseline cost alone; needs --fbase --r --lambda --p.
        #[arg(long = "paper-table", requires_all = ["fbase", "r", "lambda", "p"])]
        closed_form: bool,
        #[arg(long)]
        fbase: Option<f64>,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        p: Option<f64>,
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Train a lambda x P x seed grid and write one aggregate CSV.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        ps: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        /// Cells run at once; above 1 needs deterministic = false.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// CSV path (default: `<output_dir>/sweep.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export class activation maps for validation images of a run.
    Cam {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Default: `<run>/cam`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize finished runs.
    Report {
        /// Run directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Baseline run to compare against.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fetch {
            base_url,
            manifest,
            dest,
            name,
        } => commands::fetch(&base_url, &manifest, dest, &name),
        Command::Train { config, quiet } => commands::train(&config, quiet),
        Command::Eval {
            run,
            resolutions,
            checkpoint,
            resize_mode,
            force,
        } => commands::eval(&run, &resolutions, &checkpoint, resize_mode.as_deref(), force),
        Command::Stress {
            trd,
            baseline,
            resolutions,
            out,
        } => commands::stress(&trd, &baseline, &resolutions, out.as_deref()),
        Command::Flops {
            config,
            overrides,
            closed_form,
            fbase,
            r,
            lambda,
            p,
            json,
        } => {
            if closed_form {
                commands::closed_form_table(fbase.unwrap_or_default(), r.unwrap_or_default(), lambda.unwrap_or_default(), p.unwrap_or_default(), json)
            } else {
                commands::flops(&ConfigArgs {
                    config: config.unwrap_or_default(),
                    overrides,
                }, json)
            }
        }
        Command::Sweep {
            config,
            lambdas,
            ps,
            seeds,
            parallel,
            out,
        } => commands::sweep(&config, &lambdas, &ps, &seeds, parallel, out),
        Command::Cam { run, count, out } => commands::cam(&run, count, out),
        Command::Report { runs, baseline } => commands::report(&runs, baseline.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
