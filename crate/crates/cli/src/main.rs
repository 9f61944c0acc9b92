use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use farfield::config::{PipelineConfig, Preset};
use farfield::pipeline;
use farfield::sv::SvsScheme;

/// Far-field speaker verification with feature-domain enhancement.
#[derive(Parser, Debug)]
#[command(name = "farfield", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML run configuration.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Root seed (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory (overrides the configuration).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Enhancement preset: SEN1..SEN5, UEN or DAN.
    #[arg(long, global = true)]
    preset: Option<Preset>,
    /// Embedder training recipe: SVS1, SVS2 or SVS3.
    #[arg(long, global = true)]
    scheme: Option<SvsScheme>,
    /// Number of enhancement training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the effective configuration as TOML.
    Config,
    /// Build the clean, far-field and additive-noise corpora.
    Simulate {
        /// Report what would be generated without writing anything.
        #[arg(long)]
        dry_run: bool,
    },
    /// Compute log-mel features for every corpus.
    Extract,
    /// Train the enhancement networks of the preset.
    Train {
        /// Continue from the last completed epoch.
        #[arg(long)]
        resume: bool,
    },
    /// Enhance the evaluation and training features.
    Enhance {
        /// Generator checkpoint to use instead of the preset's.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Build enrollment segments and the trial list.
    Trials,
    /// Train the speaker embedder and score all trials.
    Score,
    /// Report EER and minDCF with and without enhancement.
    Evaluate,
    /// Run every supervised preset and tabulate the results.
    Ablate,
}

fn load_config(g: &Global) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(path) => {
            PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?
        }
        None => {
            let (Some(seed), Some(out)) = (g.seed, &g.out_dir) else {
                return Err(farfield::Error::Config(
                    "without --config, both --seed and --out-dir are required".into(),
                )
                .into());
            };
            PipelineConfig::new(seed, out)
        }
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &g.out_dir {
        cfg.out_dir = out.clone();
    }
    if let Some(p) = g.preset {
        cfg.preset = p;
    }
    if g.scheme.is_some() {
        cfg.sv.scheme = g.scheme;
    }
    if let Some(e) = g.epochs {
        cfg.schedule.epochs = e;
        cfg.schedule.constant_epochs = cfg.schedule.constant_epochs.min(e.saturating_sub(1));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli, cfg: PipelineConfig) -> anyhow::Result<()> {
    let preset = cfg.preset;
    match cli.command {
        Command::Config => print!("{}", cfg.to_toml()?),
        Command::Simulate { dry_run } => {
            cfg.check_inputs()?;
            println!("{}", pipeline::simulate(&cfg, dry_run)?);
        }
        Command::Extract => println!("{}", pipeline::extract(&cfg)?),
        Command::Train { resume } => println!("{}", pipeline::train(&cfg, preset, resume)?),
        Command::Enhance { checkpoint } => {
            for c in pipeline::enhance(&cfg, preset, checkpoint.as_deref())? {
                println!(
                    "{}: {} records, {} epochs",
                    c.scheme,
                    c.records.len(),
                    c.epochs
                );
            }
        }
        Command::Trials => println!("{}", pipeline::build_trial_list(&cfg)?),
        Command::Score => println!("{}", pipeline::score(&cfg, preset)?),
        Command::Evaluate => print!("{}", pipeline::evaluate(&cfg, preset)?),
        Command::Ablate => {
            pipeline::ablate(&cfg)?;
            let table = pipeline::RunLayout::new(&cfg.out_dir)
                .ablation_dir()
                .join("table.txt");
            print!(
                "{}",
                std::fs::read_to_string(&table).with_context(|| table.display().to_string())?
            );
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use farfield::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::Config(_)) => 1,
        Some(E::Numerical { .. }) => 3,
        Some(_) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let cfg = match load_config(&cli.global) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    match run(cli, cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
