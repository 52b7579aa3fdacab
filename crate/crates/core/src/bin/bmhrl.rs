use std::path::PathBuf;
use std::process::ExitCode;

use bmhrl::harness::{
    compare_divergence, evaluate, gen_dataset, run_training_on, CompareConfig, Dataset, ExperimentConfig,
    HarnessError, Split,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(version, about = "Synthetic captioning experiments with METEOR-guided training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (dataset file for gen-data, directory otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from the config's [grammar] section.
    GenData(Common),
    /// Warm-start and fine-tune a model.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Greedy-decode a split with a checkpoint and report metrics.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
    },
    /// Per-token standard vs biased divergence for one caption pair.
    CompareDiv(Common),
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SplitArg {
    Train,
    Val,
    All,
}

fn experiment(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::GenData(common) => {
            let cfg = experiment(&common)?;
            let out = common.out.unwrap_or_else(|| cfg.dataset.clone());
            let data = gen_dataset(&cfg.grammar, cfg.seed)?;
            data.save(&out)?;
            println!("wrote {} samples to {}", data.samples.len(), out.display());
        }
        Command::Train { common, resume } => {
            let mut cfg = experiment(&common)?;
            if let Some(out) = common.out {
                cfg.output_dir = out;
            }
            let data = Dataset::load(&cfg.dataset)?;
            let outcome = run_training_on(&cfg, &data, resume.as_deref(), |r| {
                println!(
                    "epoch {:>3} {:<9} loss {:.4} acc {:.3} | val acc {:.3} bleu3 {:.2} bleu4 {:.2} meteor {:.2} vocab {}",
                    r.epoch, r.phase.name(), r.train_loss, r.train_token_accuracy, r.token_accuracy, r.bleu3, r.bleu4,
                    r.meteor, r.vocab_usage
                );
            })?;
            println!("metrics log: {}", outcome.log_path.display());
        }
        Command::Eval { common, checkpoint, split } => {
            let cfg = experiment(&common)?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Val => Split::Val,
                SplitArg::All => Split::All,
            };
            let report = evaluate(&cfg, &checkpoint, split)?;
            let out = common.out.unwrap_or_else(|| cfg.output_dir.clone());
            std::fs::create_dir_all(&out)?;
            let mut w = csv::Writer::from_path(out.join("eval.csv"))?;
            w.serialize(report)?;
            w.flush()?;
            println!(
                "bleu3 {:.2} bleu4 {:.2} meteor {:.2} vocab {} token acc {:.3} ({} samples)",
                report.bleu3, report.bleu4, report.meteor, report.vocab_usage, report.token_accuracy, report.samples
            );
        }
        Command::CompareDiv(common) => {
            let text = std::fs::read_to_string(&common.config)?;
            let cfg: CompareConfig = toml::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?;
            let cmp = compare_divergence(&cfg)?;
            let out = common.out.unwrap_or_else(|| PathBuf::from("compare"));
            cmp.write_csv(&out)?;
            if cfg.plot {
                cmp.render_plot(&out.join("divergence.png"))?;
            }
            for r in &cmp.rows {
                println!("{:>2} {:>12} {:>12}  standard {:.4}  biased {:.4}", r.t, r.gt, r.pred, r.standard_kl, r.biased_kl);
            }
            println!("normalized: standard {:.4}, biased {:.4}", cmp.standard_total, cmp.biased_total);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
