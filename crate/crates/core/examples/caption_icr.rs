//! Trains the retrieval-augmented captioner on a small synthetic benchmark
//! and prints a few generated captions next to their retrieved neighbours.

use rarnn::config::{RunConfig, TaskKind};
use rarnn::formats::Split;
use rarnn::pipeline;
use rarnn::synth::{self, SynthSpec};

fn main() -> rarnn::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let spec = SynthSpec {
        train: 128,
        val: 32,
        test: 16,
        ..SynthSpec::new(TaskKind::Caption, 32, 16, 0.4, 7)
    };
    synth::generate(&spec)?.write(dir.path())?;
    let mut cfg = RunConfig::load(&dir.path().join("config.json"))?;
    cfg.train.max_epochs = Some(15);

    pipeline::build_index(&cfg)?;
    let summary = pipeline::train(&cfg)?;
    println!(
        "best epoch {} with BLEU-1 {:.3}",
        summary.best_epoch, summary.best_metric
    );

    let test = pipeline::evaluate(&cfg, Split::Test)?;
    println!("test {:?}", test.metrics);
    for g in pipeline::generate(&cfg, Split::Test, None)?.iter().take(5) {
        let neighbour = g.neighbor_id.map_or("-".to_string(), |n| n.to_string());
        println!(
            "image {:>4}  neighbour {neighbour:>4}  \"{}\"",
            g.id, g.caption
        );
    }
    Ok(())
}
