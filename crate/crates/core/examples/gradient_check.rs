//! Finite-difference check of a small captioner's gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rarnn::gradcheck::check_gradients;
use rarnn::models::{CaptionModel, CaptionModelConfig, RetrievalMode};
use rarnn::target::EncoderMode;
use rarnn::Tensor;

fn main() -> rarnn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = CaptionModelConfig {
        vocab_size: 8,
        embed_dim: 3,
        hidden_dim: 4,
        feat_dim: 3,
        regions: 2,
        attn_dim: 3,
        retrieval: RetrievalMode::Combined,
        encoder: EncoderMode::Avg,
        encode_dim: 3,
        dropout: 0.0,
        fine_tune_embeddings: true,
    };
    let emb = rarnn::params::uniform(&[8, 3], 3, &mut rng);
    let model = CaptionModel::new(cfg, emb, &mut rng)?;
    let features = Tensor::matrix(2, 3, vec![0.3, -0.1, 0.8, 0.5, 0.2, -0.4])?;
    let retrieved = [0.2, -0.7, 0.1];

    let report = check_gradients(&model.params, 1e-6, |tape, store| {
        let mut m = model.clone();
        m.params = store.clone();
        m.loss(tape, &features, Some(&retrieved), &[4, 6, 5], None)
    })?;
    println!(
        "checked {} entries, max relative error {:.2e} (worst: {})",
        report.checked, report.max_relative_error, report.worst_param
    );
    Ok(())
}
