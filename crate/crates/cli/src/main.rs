use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use se2p::{Ablation, ConfigClass};
use se2p_cli::commands::TrainOptions;
use se2p_cli::{cmd_bench, cmd_params, cmd_preprocess, cmd_train, cmd_wl_demo, CliError, RunConfigFile};

#[derive(Parser)]
#[command(
    name = "se2p",
    version,
    about = "Graph classification with precomputed perturbations and diffusion"
)]
struct Cli {
    /// Worker threads for preprocessing and cross-validation.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Preprocess a dataset and write the diffusion cache.
    Preprocess(RunArgs),
    /// Cross-validate a configuration and write curves and a summary.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Save every fold's final model.
        #[arg(long)]
        checkpoints: bool,
    },
    /// Time preprocessing and training epochs.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        /// Number of repetitions; the summary reports medians.
        #[arg(long, default_value_t = 1)]
        repeat: usize,
    },
    /// Parameter counts of every configuration class.
    Params(RunArgs),
    /// 1-WL test on the 6-cycle and two triangles, with node deletions.
    WlDemo {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON run configuration; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    /// Directory containing `<dataset>/<dataset>_A.txt` (falls back to SE2P_DATA_DIR).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, value_parser = parse_class)]
    config_class: Option<ConfigClass>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_ablation)]
    ablation: Option<Ablation>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Node drop probability.
    #[arg(long)]
    p: Option<f64>,
    /// Number of perturbations.
    #[arg(long)]
    r: Option<usize>,
    /// Diffusion depth.
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    n_final: Option<usize>,
    #[arg(long)]
    n_pool: Option<usize>,
    #[arg(long)]
    n_merge_inner: Option<usize>,
    #[arg(long)]
    n_merge_outer: Option<usize>,
    #[arg(long)]
    n_comb_inner: Option<usize>,
    #[arg(long)]
    n_comb_outer: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
}

fn parse_class(s: &str) -> Result<ConfigClass, String> {
    s.parse().map_err(|e: se2p::Error| e.to_string())
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: se2p::Error| e.to_string())
}

impl RunArgs {
    /// Flags layered over the config file, if any.
    fn resolve(&self) -> Result<RunConfigFile, CliError> {
        let flags = RunConfigFile {
            dataset: self.dataset.clone(),
            data_dir: self.data_dir.clone(),
            config_class: self.config_class,
            ablation: self.ablation,
            seed: self.seed,
            out: self.out.clone(),
            p: self.p,
            r: self.r,
            l: self.l,
            hidden: self.hidden,
            n_final: self.n_final,
            n_pool: self.n_pool,
            n_merge_inner: self.n_merge_inner,
            n_merge_outer: self.n_merge_outer,
            n_comb_inner: self.n_comb_inner,
            n_comb_outer: self.n_comb_outer,
            dropout: self.dropout,
            batch_size: self.batch_size,
            epochs: self.epochs,
            folds: self.folds,
        };
        match &self.config {
            Some(path) => Ok(flags.layer(&RunConfigFile::load(path)?)),
            None => Ok(flags),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(CliError::internal)?;
    }
    match cli.command {
        Command::Preprocess(args) => cmd_preprocess(&args.resolve()?).map(drop),
        Command::Train { run, checkpoints } => cmd_train(&run.resolve()?, TrainOptions { checkpoints }).map(drop),
        Command::Bench { run, repeat } => {
            let cfg = run.resolve()?;
            let classes: Vec<ConfigClass> = cfg.config_class.into_iter().collect();
            cmd_bench(&cfg, &classes, repeat).map(drop)
        }
        Command::Params(args) => cmd_params(&args.resolve()?).map(drop),
        Command::WlDemo { out } => cmd_wl_demo(out.as_deref()).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
