//! Command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flowsvc::nn::gradcheck::check_all_ops;
use flowsvc::pipeline::embeddings::write_csv;
use flowsvc::pipeline::{self, DecoderChoice, PipelineConfig};
use flowsvc::Result;

#[derive(Parser)]
#[command(name = "flowsvc", version, about = "Flow-based singing voice conversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract and cache features for every WAV in a directory.
    ExtractFeatures { config: PathBuf, wav_dir: PathBuf },
    /// Train the model on a directory of WAVs.
    Train {
        config: PathBuf,
        dataset_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a source recording toward the voice of a target recording.
    Convert {
        config: PathBuf,
        checkpoint: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure the real-time factor of the waveform decoders.
    BenchmarkRtf {
        config: PathBuf,
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
        #[arg(long, default_value = "both")]
        decoder: String,
        #[arg(long, default_value_t = 5)]
        runs: usize,
    },
    /// Check analytic gradients of every autodiff op against finite differences.
    Gradcheck {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write one speaker embedding per WAV to a CSV file.
    ExportEmbeddings {
        config: PathBuf,
        checkpoint: PathBuf,
        wav_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the synthetic two-speaker dataset.
    ToyDataset {
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        clips: usize,
        #[arg(long, default_value_t = 2.0)]
        seconds: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn config(path: &Path) -> Result<PipelineConfig> {
    PipelineConfig::load(path)
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::ExtractFeatures { config: c, wav_dir } => {
            let report = pipeline::extract_features(&config(&c)?, &wav_dir)?;
            println!(
                "{} records ({} computed, {} cached), {} errors",
                report.records.len(),
                report.computed,
                report.cache_hits,
                report.errors.len()
            );
            for (path, e) in &report.errors {
                eprintln!("{}: {e}", path.display());
            }
            Ok(if report.is_partial() { 2 } else { 0 })
        }
        Command::Train { config: c, dataset_dir, out } => {
            let summary = pipeline::train(&config(&c)?, &dataset_dir, &out)?;
            if let Some(m) = summary.metrics.last() {
                println!("final step {}: L_total {:.4}", m.step, m.total);
            }
            println!("checkpoint: {}", summary.final_checkpoint().display());
            Ok(0)
        }
        Command::Convert {
            config: c,
            checkpoint,
            source,
            target,
            out,
        } => {
            let conv = pipeline::convert(&config(&c)?, &checkpoint, &source, &target, &out)?;
            println!(
                "wrote {} ({:.2} s{})",
                out.display(),
                conv.audio.duration_seconds(),
                if conv.normalized { ", peak-normalized" } else { "" }
            );
            Ok(0)
        }
        Command::BenchmarkRtf {
            config: c,
            checkpoint,
            seconds,
            decoder,
            runs,
        } => {
            let cfg = config(&c)?;
            let choice = DecoderChoice::parse(&decoder)?;
            let (model, _) = pipeline::load_model(&cfg, &checkpoint)?;
            println!("{}", pipeline::benchmark_rtf(&model, seconds, choice, runs, cfg.seed)?);
            Ok(0)
        }
        Command::Gradcheck { config: c, seed } => {
            config(&c)?;
            let report = check_all_ops(seed, None);
            print!("{report}");
            Ok(if report.all_passed() { 0 } else { 3 })
        }
        Command::ExportEmbeddings {
            config: c,
            checkpoint,
            wav_dir,
            out,
        } => {
            let cfg = config(&c)?;
            let (model, _) = pipeline::load_model(&cfg, &checkpoint)?;
            let export = pipeline::export_embeddings(&cfg, &model, &wav_dir)?;
            write_csv(&export, &out)?;
            println!("{} embeddings, {} errors", export.rows.len(), export.errors.len());
            for (path, e) in &export.errors {
                eprintln!("{}: {e}", path.display());
            }
            Ok(if export.errors.is_empty() { 0 } else { 2 })
        }
        Command::ToyDataset {
            out,
            clips,
            seconds,
            seed,
        } => {
            let speakers = pipeline::toy::default_speakers();
            let files = pipeline::toy::generate_dataset(&out, &speakers, clips, seconds, seed)?;
            println!("wrote {} clips to {}", files.len(), out.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
