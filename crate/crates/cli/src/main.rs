use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mnd_cli::commands::{self, Method, Workspace};
use mnd_cli::config::ExperimentConfig;
use mnd_core::losses::AttackMode;

/// Quality-preserving adversarial image generation against a locally
/// trained classifier.
#[derive(Parser)]
#[command(name = "mnd", version, about)]
struct Cli {
    /// JSON experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override every seed-like field in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "non-targeted")]
    NonTargeted,
    Targeted,
}

impl From<ModeArg> for AttackMode {
    fn from(m: ModeArg) -> AttackMode {
        match m {
            ModeArg::NonTargeted => AttackMode::NonTargeted,
            ModeArg::Targeted => AttackMode::Targeted,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train and held-out datasets.
    GenData,
    /// Train the classifier and write a checkpoint plus a training report.
    Train,
    /// Attack the held-out suite with the selected methods.
    Attack {
        /// Comma list of methods, or `all`, `ablation`, `baselines`.
        #[arg(long, default_value = "all")]
        methods: String,
        #[arg(long, value_enum, default_value = "non-targeted")]
        mode: ModeArg,
    },
    /// Score stored attack outputs and emit per-image and aggregate CSVs.
    Evaluate {
        #[arg(long, value_enum, default_value = "non-targeted")]
        mode: ModeArg,
    },
    /// Run the full pipeline: gen-data, train, attack (all methods, both
    /// modes), evaluate, and write an ordering summary.
    Reproduce,
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.dataset.seed = seed;
        config.dataset.test_seed = seed.wrapping_add(1);
        config.classifier.init_seed = seed.wrapping_add(2);
        config.classifier.train_seed = seed.wrapping_add(3);
        config.attack.seed = seed.wrapping_add(4);
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = load_config(&cli)?;
    let ws = Workspace::new(&cli.out)?;
    match cli.command {
        Command::GenData => {
            let (train, test) = commands::cmd_gen_data(&config, &ws)?;
            println!(
                "wrote {} train and {} held-out images under {}",
                train.len(),
                test.len(),
                ws.root.join("dataset").display()
            );
        }
        Command::Train => {
            let outcome = commands::cmd_train(&config, &ws)?;
            let last = outcome.report.epochs.last().expect("at least one epoch");
            println!(
                "trained {} epochs in {:.1?}; final loss {:.4}, accuracy {:.3}; checkpoint at {}",
                outcome.report.epochs.len(),
                outcome.duration,
                last.mean_loss,
                last.accuracy,
                ws.checkpoint().display()
            );
        }
        Command::Attack { methods, mode } => {
            let mode = mode.into();
            let methods = Method::parse_list(&methods, mode)?;
            let outcome = commands::cmd_attack(&config, &ws, mode, &methods)?;
            println!(
                "attacked {} images with {} methods in {:.1?}; {} misclassified cleans skipped",
                outcome.selected.len(),
                outcome.per_method.len(),
                outcome.duration,
                outcome.skipped.len()
            );
            for (method, records) in &outcome.per_method {
                let successes = records.iter().filter(|r| r.success).count();
                println!("  {:>8}: {successes}/{} successful", method.label(), records.len());
            }
        }
        Command::Evaluate { mode } => {
            let mode = mode.into();
            let outcome = commands::cmd_evaluate(&config, &ws, mode)?;
            println!(
                "evaluated {} records; reports under {}",
                outcome.records.len(),
                ws.eval_dir(mode).display()
            );
            for m in &outcome.report.methods {
                println!(
                    "  {:>8}: success {:.0}%  psnr {:.2} dB  ssim {:.4}",
                    m.method,
                    m.success_rate * 100.0,
                    m.mean_psnr,
                    m.mean_ssim
                );
            }
        }
        Command::Reproduce => {
            let outcome = commands::cmd_reproduce(&config, &ws)?;
            println!(
                "pipeline complete: train {:.1?}, attacks {:.1?} + {:.1?}",
                outcome.train.duration,
                outcome.nontargeted_attacks.duration,
                outcome.targeted_attacks.duration
            );
            let holds = outcome.verdicts.iter().filter(|v| v.holds).count();
            println!(
                "ordering verdicts: {holds}/{} hold; details in {}",
                outcome.verdicts.len(),
                ws.summary().display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
