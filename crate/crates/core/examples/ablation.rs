//! All four retrieval modes on one synthetic sentiment benchmark.

use rarnn::config::{RunConfig, TaskKind};
use rarnn::pipeline;
use rarnn::synth::{self, SynthSpec};

fn main() -> rarnn::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let spec = SynthSpec {
        train: 300,
        val: 80,
        test: 80,
        ..SynthSpec::new(TaskKind::Sentiment, 48, 12, 0.3, 2)
    };
    synth::generate(&spec)?.write(dir.path())?;
    let mut cfg = RunConfig::load(&dir.path().join("config.json"))?;
    cfg.train.max_epochs = Some(8);

    let table = pipeline::ablate(&cfg)?;
    print!("{}", table.to_text());
    print!("{}", table.to_jsonl());
    Ok(())
}
