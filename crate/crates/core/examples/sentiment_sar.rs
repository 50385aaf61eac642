//! Sentiment with and without the retrieved label as initial memory.

use rarnn::config::{RunConfig, TaskKind};
use rarnn::formats::Split;
use rarnn::models::RetrievalMode;
use rarnn::pipeline;
use rarnn::synth::{self, SynthSpec};

fn main() -> rarnn::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let spec = SynthSpec {
        train: 400,
        val: 100,
        test: 100,
        ..SynthSpec::new(TaskKind::Sentiment, 64, 16, 0.3, 9)
    };
    synth::generate(&spec)?.write(dir.path())?;
    let mut cfg = RunConfig::load(&dir.path().join("config.json"))?;
    cfg.train.max_epochs = Some(10);
    pipeline::build_index(&cfg)?;

    for mode in [RetrievalMode::Off, RetrievalMode::M0Init] {
        cfg.model.retrieval = mode;
        pipeline::train(&cfg)?;
        let eval = pipeline::evaluate(&cfg, Split::Test)?;
        println!(
            "{:<8} accuracy {:.3}  f-score {:.3}",
            mode.as_str(),
            eval.metrics["accuracy"],
            eval.metrics["f_score"]
        );
    }
    let traces = pipeline::attend(&cfg, Split::Test, Some(1), None)?;
    println!("{}", serde_json::to_string(&traces[0]).expect("serializes"));
    Ok(())
}
