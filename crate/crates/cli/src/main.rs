//! `ppk`: command-line front end of the panoptic perception toolkit.

mod data;
mod error;
mod manifest;
mod model;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use error::{CliError, Result};
use manifest::Manifest;

#[derive(Parser, Debug)]
#[command(name = "ppk", version, about = "Panoptic segmentation and captioning toolkit")]
struct Cli {
    /// Worker threads for per-image work; training always runs on one thread.
    #[arg(long, global = true, env = "PPK_THREADS")]
    threads: Option<usize>,

    /// Write the run manifest here instead of the default location.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Log more (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic airport dataset.
    GenSynth(data::GenSynth),
    /// Panoptic Quality of predicted maps against ground truth.
    PqEval(data::PqEval),
    /// BLEU-4 of candidate sentences against one or more reference files.
    Bleu(data::Bleu),
    /// Caption count claims checked against panoptic instances.
    Consistency(data::Consistency),
    /// Minimum-cost assignment for a square cost matrix.
    Match(data::Match),
    /// How often the matching cost minimizer also minimizes the segmentation loss.
    AuditMatching(data::AuditMatching),
    /// Train the joint toy model.
    TrainToy(model::TrainToy),
    /// Train and evaluate once per caption-loss weight.
    Ablate(model::Ablate),
    /// Caption one image with beam search.
    Beam(model::Beam),
    /// Channel-mean saliency map of the shared features as a PGM image.
    Saliency(model::Saliency),
}

/// What a command leaves behind besides its own outputs.
pub struct Outcome {
    pub manifest: Manifest,
    /// Where the manifest goes when `--manifest` is not given; `None` prints it to
    /// stderr.
    pub manifest_path: Option<PathBuf>,
}

/// Writes `text` to `path`, or to stdout without one.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            }
            std::fs::write(p, text).map_err(|e| CliError::io(p, e))
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| CliError::io("<stdout>", e))
        }
    }
}

/// Default manifest location for a file output: `<file>.manifest.json`.
pub fn beside(path: Option<&Path>) -> Option<PathBuf> {
    path.map(|p| {
        let mut s = p.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    })
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let threads = cli.threads;
    let outcome = match cli.command {
        Command::GenSynth(a) => data::gen_synth(a, threads)?,
        Command::PqEval(a) => data::pq_eval(a, threads)?,
        Command::Bleu(a) => data::bleu(a)?,
        Command::Consistency(a) => data::consistency(a)?,
        Command::Match(a) => data::matching(a)?,
        Command::AuditMatching(a) => data::audit(a)?,
        Command::TrainToy(a) => model::train_toy(a)?,
        Command::Ablate(a) => model::ablate(a)?,
        Command::Beam(a) => model::beam(a)?,
        Command::Saliency(a) => model::saliency(a)?,
    };
    match cli.manifest.or(outcome.manifest_path) {
        Some(p) => outcome.manifest.write(&p),
        None => {
            eprintln!("manifest: {}", outcome.manifest.to_line()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
