use std::path::PathBuf;
use std::process::ExitCode;

use ccfdm_core::contrastive::SimilarityKind;
use ccfdm_core::envs::EnvKind;
use ccfdm_core::harness::{checkpoint, evaluate, export_curves, random_policy_baseline, Algorithm, TrainConfig, Trainer};
use ccfdm_core::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ccfdm", version, about = "Train, evaluate and plot pixel-based control agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent (or continue a checkpointed run).
    Train(TrainArgs),
    /// Evaluate the deterministic policy stored in a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Returns of a uniform random policy, the reference for learning curves.
    Baseline {
        #[arg(long)]
        env: EnvKind,
        #[arg(long, default_value_t = 30)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional key=value file, for image size, episode length and the like.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Plot evaluation return against environment steps.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        /// PNG path; the series is written next to it with a .csv extension.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// key=value file applied before any flag.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    env: Option<EnvKind>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    intrinsic_weight: Option<f64>,
    #[arg(long)]
    intrinsic_decay: Option<f64>,
    #[arg(long)]
    ema_tau: Option<f64>,
    #[arg(long)]
    momentum_freq: Option<u64>,
    #[arg(long)]
    similarity: Option<SimilarityKind>,
    #[arg(long)]
    no_contrastive: bool,
    #[arg(long)]
    no_curiosity: bool,
    #[arg(long)]
    no_augment: bool,
    /// Output directory for metrics, config echo and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint; only --steps may change the run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::from_file(p)?,
            None => TrainConfig::default(),
        };
        for kv in &self.set {
            cfg.apply_text(kv)?;
        }
        macro_rules! over {
            ($($f:ident),*) => {$(
                if let Some(v) = self.$f.clone() {
                    cfg.$f = v;
                }
            )*};
        }
        over!(algorithm, env, steps, seed, batch_size, intrinsic_weight, intrinsic_decay, ema_tau, momentum_freq, similarity);
        cfg.no_contrastive |= self.no_contrastive;
        cfg.no_curiosity |= self.no_curiosity;
        cfg.no_augment |= self.no_augment;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let trainer = match &args.resume {
                Some(path) => {
                    let snap = checkpoint::load(path)?;
                    log::info!("resuming {} at step {}", path.display(), snap.progress.env_step);
                    Trainer::resume(snap, &args.out, args.steps)?
                }
                None => Trainer::new(args.config()?, &args.out)?,
            };
            let summary = trainer.run()?;
            println!(
                "trained {} steps ({} updates, {} episodes)",
                summary.env_steps, summary.updates, summary.episodes
            );
            if let Some(row) = summary.last_row {
                println!("{}", ccfdm_core::harness::HEADER);
                println!("{}", row.to_csv());
            }
        }
        Command::Eval {
            checkpoint: path,
            episodes,
            seed,
        } => {
            let snap = checkpoint::load(&path)?;
            let res = evaluate(&snap.agent, &snap.cfg.env_config(), episodes, seed)?;
            println!("mean={} std={} episodes={}", res.mean, res.std, res.returns.len());
        }
        Command::Baseline {
            env,
            episodes,
            seed,
            config,
        } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::from_file(&p)?,
                None => TrainConfig::default(),
            };
            cfg.env = env;
            let res = random_policy_baseline(&cfg.env_config(), episodes, seed)?;
            println!("mean={} std={} episodes={}", res.mean, res.std, res.returns.len());
        }
        Command::Plot { metrics, out } => {
            let series = export_curves(&metrics, &out)?;
            println!("{} evaluation points written to {}", series.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
