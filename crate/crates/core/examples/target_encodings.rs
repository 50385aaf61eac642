//! The ways a retrieved target becomes a vector.

use rarnn::target::{
    avg_embedding, norm_weighted_avg, CaptionEncoder, EmbeddingTable, EncoderMode, LabeledSentence,
    SentimentEncoder, TargetEncoderConfig,
};

fn main() -> rarnn::Result<()> {
    let mut table = EmbeddingTable::new(3);
    table.insert("good", vec![1.0, 0.5, 0.0])?;
    table.insert("movie", vec![0.0, 0.1, 0.1])?;
    table.insert("awful", vec![-1.0, -0.4, 0.2])?;

    // unknown words are skipped
    let caption = ["good", "movie", "unseen"];
    println!("average        {:?}", avg_embedding(&caption, &table)?);
    println!("norm-weighted  {:?}", norm_weighted_avg(&caption, &table)?);
    let enc = CaptionEncoder::new(EncoderMode::Weighted, &table, None)?;
    println!("caption encoder width {}", enc.encode_dim());

    let pos: Vec<String> = ["good", "movie"].map(String::from).to_vec();
    let neg: Vec<String> = ["awful", "movie"].map(String::from).to_vec();
    let corpus = [
        LabeledSentence {
            id: 1,
            tokens: &pos,
            label: 1,
        },
        LabeledSentence {
            id: 2,
            tokens: &neg,
            label: 0,
        },
    ];
    for mode in [
        EncoderMode::PlusMinus,
        EncoderMode::ClassAvg,
        EncoderMode::ClassWeighted,
    ] {
        let cfg = TargetEncoderConfig { mode, lstm_dim: 3 };
        let enc = SentimentEncoder::new(cfg, &corpus, Some(&table), None)?;
        println!(
            "{mode:?}: negative {:?}, positive {:?}",
            enc.encode(0)?,
            enc.encode(1)?
        );
    }
    Ok(())
}
