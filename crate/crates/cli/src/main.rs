use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lednet_core::pipeline::{
    cmd_classify_train, cmd_compare_report, cmd_evaluate, cmd_localize_train, cmd_overlay, cmd_report, Arm,
    ExperimentConfig,
};
use lednet_core::Result;

#[derive(Parser)]
#[command(
    name = "lednet",
    version,
    about = "Lung localization and overlay classification experiment"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file (`section.key=value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Generate synthetic data instead of reading the configured corpora.
    #[arg(long, global = true)]
    synthetic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train the lung localizer.
    LocalizeTrain,
    /// Predict masks and write overlay images for every frontal record.
    Overlay,
    /// Train the classifier for one arm.
    ClassifyTrain {
        #[arg(long)]
        arm: Arm,
    },
    /// Score a trained arm on its test partition.
    Evaluate {
        #[arg(long)]
        arm: Arm,
    },
    /// Join both arms into the table and plots.
    CompareReport,
    /// Render the table and plots from whichever arms are present.
    Report,
    /// Train and evaluate both arms, then join them.
    Compare,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if common.synthetic {
        config.synthetic.enabled = true;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli.common)?;
    match cli.command {
        Command::LocalizeTrain => {
            let ck = cmd_localize_train(&config)?;
            if let Some(last) = ck.history.last() {
                println!(
                    "localizer epoch {}: val loss {:.4}, accuracy {:.4}",
                    last.epoch, last.loss, last.accuracy
                );
            }
        }
        Command::Overlay => {
            let rows = cmd_overlay(&config)?;
            let skipped = rows.iter().filter(|r| !r.skipped_reason.is_empty()).count();
            println!("overlaid {} records, skipped {skipped}", rows.len() - skipped);
        }
        Command::ClassifyTrain { arm } => {
            let ck = cmd_classify_train(&config, arm)?;
            if let Some(last) = ck.history.last() {
                println!(
                    "{arm} epoch {}: val loss {:.4}, accuracy {:.4}",
                    last.epoch, last.loss, last.accuracy
                );
            }
        }
        Command::Evaluate { arm } => {
            let r = cmd_evaluate(&config, arm)?;
            println!("{arm} test loss {:.4}, accuracy {:.4}", r.loss, r.accuracy);
        }
        Command::CompareReport => {
            cmd_compare_report(&config.paths.report_dir)?;
            println!("report written to {}", config.paths.report_dir.display());
        }
        Command::Report => {
            cmd_report(&config.paths.report_dir)?;
            println!("report written to {}", config.paths.report_dir.display());
        }
        Command::Compare => {
            for arm in Arm::BOTH {
                cmd_classify_train(&config, arm)?;
                let r = cmd_evaluate(&config, arm)?;
                println!("{arm} test loss {:.4}, accuracy {:.4}", r.loss, r.accuracy);
            }
            cmd_compare_report(&config.paths.report_dir)?;
            println!("report written to {}", config.paths.report_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
