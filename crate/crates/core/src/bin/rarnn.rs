use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rarnn::config::RunConfig;
use rarnn::formats::Split;
use rarnn::models::RetrievalMode;
use rarnn::pipeline::{self, Overrides};
use rarnn::train::reports_to_text;

#[derive(Parser)]
#[command(
    name = "rarnn",
    version,
    about = "Retrieval-augmented LSTM captioning and sentiment models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Retrieval mode: off, m0_init, multi_attn or combined.
    #[arg(long)]
    mode: Option<RetrievalMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> rarnn::Result<RunConfig> {
        let o = Overrides {
            mode: self.mode,
            seed: self.seed,
            max_epochs: self.max_epochs,
            run_dir: self.run_dir.clone(),
        };
        pipeline::load_config(&self.config, &o)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Index the training split's retrieval keys.
    BuildIndex(Common),
    /// Train one retrieval mode.
    Train(Common),
    /// Score the best checkpoint on a split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Greedy captions, one JSON line per image.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Defaults to `<run_dir>/<mode>/captions_<split>.jsonl`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Attention weights, one JSON line per example.
    Attend {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        limit: Option<usize>,
        /// Defaults to `<run_dir>/<mode>/attention_<split>.jsonl`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train and test all four retrieval modes.
    Ablate(Common),
    /// Write the synthetic benchmark.
    Synth {
        /// Synth spec (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `out_dir` in the spec.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn default_output(cfg: &RunConfig, stem: &str, split: Split) -> PathBuf {
    let split = format!("{split:?}").to_lowercase();
    cfg.mode_dir(cfg.model.retrieval)
        .join(format!("{stem}_{split}.jsonl"))
}

fn run(cli: Cli) -> rarnn::Result<()> {
    match cli.command {
        Command::BuildIndex(c) => {
            let path = pipeline::build_index(&c.load()?)?;
            println!("wrote {}", path.display());
        }
        Command::Train(c) => {
            let s = pipeline::train(&c.load()?)?;
            print!("{}", reports_to_text(&s.reports));
            println!(
                "best epoch {} ({:.4}), {}",
                s.best_epoch,
                s.best_metric,
                s.checkpoint.display()
            );
        }
        Command::Evaluate { common, split } => {
            let s = pipeline::evaluate(&common.load()?, split)?;
            println!("{}", serde_json::to_string(&s)?);
        }
        Command::Generate {
            common,
            split,
            output,
        } => {
            let cfg = common.load()?;
            let out = output.unwrap_or_else(|| default_output(&cfg, "captions", split));
            let gens = pipeline::generate(&cfg, split, Some(&out))?;
            println!("wrote {} captions to {}", gens.len(), out.display());
        }
        Command::Attend {
            common,
            split,
            limit,
            output,
        } => {
            let cfg = common.load()?;
            let out = output.unwrap_or_else(|| default_output(&cfg, "attention", split));
            let traces = pipeline::attend(&cfg, split, limit, Some(&out))?;
            println!("wrote {} traces to {}", traces.len(), out.display());
        }
        Command::Ablate(c) => {
            let table = pipeline::ablate(&c.load()?)?;
            print!("{}", table.to_text());
        }
        Command::Synth { config, out, seed } => {
            let mut spec = pipeline::load_synth_spec(&config)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let dir = out
                .or_else(|| spec.out_dir.clone())
                .unwrap_or_else(|| config.parent().unwrap_or(Path::new(".")).join("synth"));
            let files = pipeline::synth(&spec, &dir)?;
            println!("wrote {} files under {}", files.len(), dir.display());
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
