//! `ems`: command-line driver for feature extraction, MIC analysis, model
//! training, prediction, cross-validated evaluation and synthetic data.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Failure;
use crate::config::Overrides;

#[derive(Debug, Parser)]
#[command(name = "ems", version, about = "Epistemic mental state intensity modelling from facial features")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// key=value settings file; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "EMS_OUT_DIR", default_value = "ems-out")]
    out: PathBuf,
    /// Seed for fold assignment, forest bootstrap and synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    state: Option<String>,
    /// Override any config key.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Landmark CSV to the twelve-channel feature CSV.
    Features {
        #[arg(long)]
        landmarks: PathBuf,
        /// Neutral reference shape; the built-in one is used when omitted.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// MIC between every feature channel and each trace.
    Mic(PairArgs),
    /// Pearson correlation between every feature channel and each trace.
    Pearson(PairArgs),
    /// Train a region-gated model on session directories.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Fail with exit code 3 if any regressor stopped before converging.
        #[arg(long)]
        strict: bool,
    },
    /// Predict a trace from a feature CSV with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
    },
    /// k-fold cross-validation, with the region ablation unless disabled.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        no_ablation: bool,
    },
    /// Cross-validated CoERR at several window sizes.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        windows: Vec<usize>,
    },
    /// Write synthetic session directories.
    Synth {
        /// key=value synthetic manifest.
        #[arg(long, conflicts_with = "preset")]
        manifest: Option<PathBuf>,
        /// `region` or `window` benchmark.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        sessions: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct PairArgs {
    #[arg(long)]
    features: PathBuf,
    /// Trace file, as STATE=PATH; repeat for several states.
    #[arg(long = "trace", value_name = "STATE=PATH", required = true)]
    traces: Vec<String>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// A session directory, or a directory of session directories.
    #[arg(long = "data", required = true)]
    data: Vec<PathBuf>,
    #[arg(long)]
    window: Option<usize>,
}

fn overrides(g: &Global, cmd: &Command) -> Result<Overrides, Failure> {
    let mut o = Overrides::default();
    if let Some(path) = &g.config {
        o.merge_file(path)?;
    }
    for pair in &g.set {
        o.merge_pair(pair)?;
    }
    if let Some(seed) = g.seed {
        o.set("seed", seed.to_string())?;
    }
    if let Some(state) = &g.state {
        o.set("state", state.as_str())?;
    }
    let data = match cmd {
        Command::Train { data, .. } | Command::Eval { data, .. } | Command::Sweep { data, .. } => Some(data),
        _ => None,
    };
    if let Some(w) = data.and_then(|d| d.window) {
        o.set("window", w.to_string())?;
    }
    match cmd {
        Command::Eval { k: Some(k), .. } | Command::Sweep { k: Some(k), .. } => o.set("k", k.to_string())?,
        Command::Mic(PairArgs { alpha: Some(a), .. }) => o.set("mic.alpha", a.to_string())?,
        _ => {}
    }
    if let Command::Sweep { windows, .. } = cmd {
        if !windows.is_empty() {
            let list: Vec<String> = windows.iter().map(usize::to_string).collect();
            o.set("sweep.windows", list.join(","))?;
        }
    }
    Ok(o)
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Failure::Other(e.to_string()))?;
    }
    let o = overrides(&cli.global, &cli.command)?;
    let cfg = config::RunConfig::resolve(&o)?;
    let out = &cli.global.out;
    match &cli.command {
        Command::Features { landmarks, reference } => commands::features(out, &cfg, landmarks, reference.as_deref()),
        Command::Mic(a) => commands::mic(out, &cfg, &a.features, &a.traces),
        Command::Pearson(a) => commands::pearson(out, &cfg, &a.features, &a.traces),
        Command::Train { data, strict } => commands::train(out, &cfg, &data.data, *strict),
        Command::Predict { model, features } => commands::predict(out, &cfg, model, features),
        Command::Eval { data, no_ablation, .. } => commands::eval(out, &cfg, &data.data, !no_ablation),
        Command::Sweep { data, .. } => commands::sweep(out, &cfg, &data.data),
        Command::Synth { manifest, preset, sessions } => {
            commands::synth(out, &cfg, manifest.as_deref(), preset.as_deref(), *sessions, cli.global.seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
