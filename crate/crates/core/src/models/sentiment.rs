use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{check_retrieved, embed, special, RetrievalMode};
use crate::attention::{self, AdditiveAttnParams, MultiLevelAttnParams};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{self, Linear, LstmParams};
use crate::params::{ParamId, ParamStore};
use crate::target::{self, EncoderMode, Projection};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentimentModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attn_dim: usize,
    pub retrieval: RetrievalMode,
    pub encoder: EncoderMode,
    pub encode_dim: usize,
    pub dropout: f64,
    #[serde(default)]
    pub fine_tune_embeddings: bool,
}

impl SentimentModelConfig {
    pub fn validate(&self) -> Result<()> {
        nn::check_dropout_rate(self.dropout)?;
        if self.vocab_size <= special::COUNT {
            return Err(Error::Config(
                "sentiment vocabulary holds only special tokens".into(),
            ));
        }
        if self.retrieval.uses_retrieval() && !self.encoder.for_sentiment() {
            return Err(Error::Config(format!(
                "{:?} is not a sentiment encoder mode",
                self.encoder
            )));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.attn_dim == 0 || self.encode_dim == 0
        {
            return Err(Error::Config(
                "sentiment model dimensions must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SentimentModel {
    pub config: SentimentModelConfig,
    pub params: ParamStore,
    pub embeddings: ParamId,
    pub lstm: LstmParams,
    pub target_proj: Option<Projection>,
    pub attention: AdditiveAttnParams,
    pub multi_level: Option<MultiLevelAttnParams>,
    pub output: Linear,
}

#[derive(Clone, Debug)]
pub struct SentimentOutput {
    /// Positive-class probability, shape `[1]`.
    pub prob: Var,
    /// Attention over the hidden states.
    pub alpha: Var,
    /// `(α̂₁, α̂₂)` when multi-level attention is active.
    pub alpha_hat: Option<Var>,
}

impl SentimentModel {
    pub fn new<R: Rng + ?Sized>(
        config: SentimentModelConfig,
        embeddings: Tensor,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let c = &config;
        if embeddings.shape() != [c.vocab_size, c.embed_dim] {
            return Err(Error::dim(
                "sentiment embeddings",
                embeddings.shape(),
                &[c.vocab_size, c.embed_dim],
            ));
        }
        let d = c.hidden_dim;
        let mut store = ParamStore::new();
        let emb = store.insert("embeddings", embeddings)?;
        let lstm = LstmParams::register(&mut store, "lstm", c.embed_dim, d, rng)?;
        let target_proj = if c.retrieval.uses_retrieval() {
            Some(Projection::register(
                &mut store,
                "target_proj",
                c.encode_dim,
                d,
                true,
                rng,
            )?)
        } else {
            None
        };
        let attention =
            AdditiveAttnParams::register(&mut store, "attention", d, d, c.attn_dim, rng)?;
        let multi_level = if c.retrieval.uses_multi_level() {
            Some(MultiLevelAttnParams::register(
                &mut store,
                "multi_level",
                d,
                d,
                c.attn_dim,
                rng,
            )?)
        } else {
            None
        };
        let output = Linear::register(&mut store, "output", d, 1, true, rng)?;
        Ok(SentimentModel {
            config,
            params: store,
            embeddings: emb,
            lstm,
            target_proj,
            attention,
            multi_level,
            output,
        })
    }

    /// Zero initial states for the baseline; with memory injection `m_0` is
    /// the projected encoding of the retrieved label.
    pub fn forward(
        &self,
        tape: &mut Tape,
        tokens: &[u32],
        retrieved: Option<&[f64]>,
        rng: Option<&mut (dyn RngCore + '_)>,
    ) -> Result<SentimentOutput> {
        if tokens.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        check_retrieved(self.config.retrieval, retrieved, self.config.encode_dim)?;
        let p = &self.params;
        let d = self.config.hidden_dim;
        let r = match (retrieved, &self.target_proj) {
            (Some(r), Some(proj)) => {
                let f = tape.constant(Tensor::vector(r.to_vec()));
                Some(target::project(tape, p, proj, f)?)
            }
            _ => None,
        };
        let h0 = tape.constant(Tensor::zeros(&[d]));
        let m0 = match r {
            Some(r) if self.config.retrieval.injects_memory() => r,
            _ => tape.constant(Tensor::zeros(&[d])),
        };
        let inputs = tokens
            .iter()
            .map(|&t| {
                embed(
                    tape,
                    p,
                    self.embeddings,
                    self.config.fine_tune_embeddings,
                    t,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let (hs, _) = nn::lstm_sequence(tape, p, &self.lstm, &inputs, h0, m0)?;
        let last = *hs.last().expect("non-empty");
        let hidden = tape.stack_rows(&hs)?;
        let (context, alpha, alpha_hat) = match &self.multi_level {
            Some(ml) => {
                let r = r.expect("checked above");
                let params = attention::SentimentAttnParams {
                    inner: self.attention,
                    outer: *ml,
                };
                let (mixed, alpha, hat) =
                    attention::sentiment_attention(tape, p, &params, hidden, last, r)?;
                (mixed, alpha, Some(hat))
            }
            None => {
                let (c, alpha) =
                    attention::additive_attention(tape, p, &self.attention, hidden, last)?;
                (c, alpha, None)
            }
        };
        let dropped = nn::dropout(tape, context, self.config.dropout, rng)?;
        let logit = self.output.forward(tape, p, dropped)?;
        let prob = tape.sigmoid(logit);
        Ok(SentimentOutput {
            prob,
            alpha,
            alpha_hat,
        })
    }

    pub fn loss(
        &self,
        tape: &mut Tape,
        tokens: &[u32],
        retrieved: Option<&[f64]>,
        label: u8,
        rng: Option<&mut (dyn RngCore + '_)>,
    ) -> Result<Var> {
        let out = self.forward(tape, tokens, retrieved, rng)?;
        tape.binary_cross_entropy(out.prob, label)
    }

    /// Evaluation-mode probability of the positive class.
    pub fn predict(&self, tokens: &[u32], retrieved: Option<&[f64]>) -> Result<f64> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, tokens, retrieved, None)?;
        Ok(tape.value(out.prob).item())
    }

    pub fn param_store(&self) -> &ParamStore {
        &self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(mode: RetrievalMode) -> SentimentModel {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cfg = SentimentModelConfig {
            vocab_size: 8,
            embed_dim: 3,
            hidden_dim: 4,
            attn_dim: 3,
            retrieval: mode,
            encoder: EncoderMode::PlusMinus,
            encode_dim: 4,
            dropout: 0.5,
            fine_tune_embeddings: false,
        };
        let emb = crate::params::uniform(&[8, 3], 1, &mut rng);
        SentimentModel::new(cfg, emb, &mut rng).unwrap()
    }

    #[test]
    fn rigged_bias_saturates_probability() {
        let mut m = model(RetrievalMode::Off);
        let w = Tensor::zeros(&[1, 4]);
        m.params.set(m.output.weight, w).unwrap();
        for (bias, expected) in [(f64::INFINITY, 1.0), (f64::NEG_INFINITY, 0.0)] {
            m.params
                .set(m.output.bias.unwrap(), Tensor::vector(vec![bias]))
                .unwrap();
            assert_eq!(m.predict(&[4, 5], None).unwrap(), expected);
            let mut tape = Tape::new();
            let loss = m
                .loss(&mut tape, &[4, 5], None, 1 - expected as u8, None)
                .unwrap();
            let l = tape.value(loss).item();
            assert!(l.is_finite() && (l - (-(1e-7f64).ln())).abs() < 1e-6);
        }
    }

    #[test]
    fn single_token_attention_is_trivial() {
        let m = model(RetrievalMode::Off);
        let mut tape = Tape::new();
        let out = m.forward(&mut tape, &[6], None, None).unwrap();
        assert_eq!(tape.value(out.alpha).data(), &[1.0]);
    }

    #[test]
    fn empty_sequence_rejected() {
        let m = model(RetrievalMode::Off);
        assert!(matches!(m.predict(&[], None), Err(Error::Empty(_))));
    }

    #[test]
    fn memory_injection_changes_prediction() {
        let m = model(RetrievalMode::M0Init);
        let a = m.predict(&[4, 5, 6], Some(&[1.0; 4])).unwrap();
        let b = m.predict(&[4, 5, 6], Some(&[-1.0; 4])).unwrap();
        assert_ne!(a, b);
    }
}
