use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sepxfer::datapipe::{make_synthetic_corpus, Recipe, StemCorpus, SynthParams};
use sepxfer::evaluation::{compare_files, evaluate_system, MaskSystem};
use sepxfer::manifest::ExperimentManifest;
use sepxfer::network::{ChimeraModel, Regime};
use sepxfer::signal::REFERENCE_SAMPLE_RATE;
use sepxfer::training::{finetune, pretrain, Init};

#[derive(Parser)]
#[command(
    name = "sepxfer",
    version,
    about = "Pretrain, fine-tune and evaluate source separation models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Oracle {
    IdealBinary,
    AllOnes,
}

#[derive(Subcommand)]
enum Command {
    /// Write a procedurally generated stem corpus.
    MakeCorpus {
        #[arg(long)]
        recipe: Recipe,
        #[arg(long, default_value_t = 10)]
        songs: usize,
        #[arg(long, default_value_t = 30.0)]
        seconds: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = REFERENCE_SAMPLE_RATE)]
        sample_rate: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain with the deep clustering loss only.
    Pretrain { manifest: PathBuf },
    /// Fine-tune a checkpoint (or train from scratch) on the target corpus.
    Finetune {
        manifest: PathBuf,
        /// Checkpoint path, or `scratch`.
        #[arg(long)]
        init: Init,
        #[arg(long, default_value = "whole")]
        regime: Regime,
    },
    /// Score a checkpoint (or an oracle) on test mixtures; writes a results CSV.
    Evaluate {
        #[arg(long, required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, conflicts_with = "checkpoint")]
        oracle: Option<Oracle>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Test mixture length.
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired one-sided Wilcoxon test of "A beats B" on two results CSVs.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Directory for comparison.csv and report.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> sepxfer::Result<()> {
    match cli.command {
        Command::MakeCorpus {
            recipe,
            songs,
            seconds,
            seed,
            sample_rate,
            out,
        } => {
            let params = SynthParams {
                songs,
                seconds,
                sample_rate,
            };
            let corpus = make_synthetic_corpus(recipe, &params, seed, &out)?;
            println!(
                "wrote {} songs ({:.1} s per source) to {}",
                corpus.songs().len(),
                corpus.duration_seconds_per_source(),
                out.display()
            );
        }
        Command::Pretrain { manifest } => {
            let m = ExperimentManifest::load(&manifest)?;
            let outcome = pretrain(&m)?;
            println!("{}", outcome.checkpoint.display());
        }
        Command::Finetune { manifest, init, regime } => {
            let m = ExperimentManifest::load(&manifest)?;
            let outcome = finetune(&m, &init, regime)?;
            println!("{}", outcome.checkpoint.display());
        }
        Command::Evaluate {
            checkpoint,
            oracle,
            corpus,
            n,
            seed,
            seconds,
            out,
        } => {
            let corpus = StemCorpus::load(&corpus)?;
            let model;
            let system = match (oracle, checkpoint) {
                (Some(Oracle::IdealBinary), _) => MaskSystem::IdealBinary,
                (Some(Oracle::AllOnes), _) => MaskSystem::AllOnes,
                (None, Some(path)) => {
                    model = ChimeraModel::<f32>::load(&path)?;
                    MaskSystem::Model(&model)
                }
                (None, None) => unreachable!("clap requires one of them"),
            };
            let eval = evaluate_system(system, &corpus, n, seed, seconds)?;
            eval.write_csv(&out)?;
            println!("mean SI-SDR over {n} examples: {:.3} dB", eval.mean());
        }
        Command::Compare { a, b, out } => {
            let report = compare_files(&a, &b)?;
            let text = report.report_text();
            print!("{text}");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| sepxfer::Error::Io {
                    path: dir.clone(),
                    source: e,
                })?;
                for (name, body) in [("comparison.csv", report.to_csv()), ("report.txt", text)] {
                    let path = dir.join(name);
                    std::fs::write(&path, body).map_err(|e| sepxfer::Error::Io { path, source: e })?;
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
