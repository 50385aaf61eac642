use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{argmax, check_retrieved, embed, special, RetrievalMode};
use crate::attention::{self, AdditiveAttnParams, AttnKeys, MultiLevelAttnParams};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{self, Linear, LstmParams};
use crate::params::{ParamId, ParamStore};
use crate::target::{self, EncoderMode, Projection};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub feat_dim: usize,
    pub regions: usize,
    pub attn_dim: usize,
    pub retrieval: RetrievalMode,
    pub encoder: EncoderMode,
    /// Width of the target encoding fed to the projection.
    pub encode_dim: usize,
    pub dropout: f64,
    #[serde(default)]
    pub fine_tune_embeddings: bool,
}

impl CaptionModelConfig {
    pub fn validate(&self) -> Result<()> {
        nn::check_dropout_rate(self.dropout)?;
        if self.vocab_size <= special::COUNT {
            return Err(Error::Config(
                "caption vocabulary holds only special tokens".into(),
            ));
        }
        if self.retrieval.uses_retrieval() && !self.encoder.for_captions() {
            return Err(Error::Config(format!(
                "{:?} is not a caption encoder mode",
                self.encoder
            )));
        }
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("feat_dim", self.feat_dim),
            ("regions", self.regions),
            ("attn_dim", self.attn_dim),
            ("encode_dim", self.encode_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Parameter handles of the caption decoder. Which optional blocks exist
/// depends on the retrieval mode.
#[derive(Clone, Debug)]
pub struct CaptionModel {
    pub config: CaptionModelConfig,
    pub params: ParamStore,
    pub embeddings: ParamId,
    /// Affine map of region features to the attention/target width.
    pub feature_proj: Linear,
    pub init_h: Linear,
    /// `m_0` from pooled features; absent when memory comes from retrieval.
    pub init_m: Option<Linear>,
    pub target_proj: Option<Projection>,
    pub attention: AdditiveAttnParams,
    pub multi_level: Option<MultiLevelAttnParams>,
    pub lstm: LstmParams,
    pub output: Linear,
}

/// Per-image tensors shared by every decoding step.
#[derive(Clone, Copy, Debug)]
pub struct ImageContext {
    pub keys: AttnKeys,
    pub retrieved: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct DecodeState {
    pub h: Var,
    pub m: Var,
    pub step: usize,
    pub emitted: Vec<u32>,
}

/// Attention weights of one step. Without multi-level attention the whole
/// weight sits on the image.
#[derive(Clone, Debug, PartialEq)]
pub struct StepAttention {
    pub regions: Vec<f64>,
    pub image: f64,
    pub retrieved: f64,
}

impl CaptionModel {
    /// `embeddings` is the `[vocab_size, embed_dim]` word-vector matrix.
    pub fn new<R: Rng + ?Sized>(
        config: CaptionModelConfig,
        embeddings: Tensor,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let c = &config;
        if embeddings.shape() != [c.vocab_size, c.embed_dim] {
            return Err(Error::dim(
                "caption embeddings",
                embeddings.shape(),
                &[c.vocab_size, c.embed_dim],
            ));
        }
        let d = c.hidden_dim;
        let mut store = ParamStore::new();
        let emb = store.insert("embeddings", embeddings)?;
        let feature_proj = Linear::register(&mut store, "feature_proj", c.feat_dim, d, true, rng)?;
        let init_h = Linear::register(&mut store, "init_h", c.feat_dim, d, true, rng)?;
        let init_m = if c.retrieval.injects_memory() {
            None
        } else {
            Some(Linear::register(
                &mut store, "init_m", c.feat_dim, d, true, rng,
            )?)
        };
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
        let lstm = LstmParams::register(&mut store, "lstm", c.embed_dim + d, d, rng)?;
        let output = Linear::register(&mut store, "output", d, c.vocab_size, true, rng)?;
        Ok(CaptionModel {
            config,
            params: store,
            embeddings: emb,
            feature_proj,
            init_h,
            init_m,
            target_proj,
            attention,
            multi_level,
            lstm,
            output,
        })
    }

    fn check_features(&self, features: &Tensor) -> Result<()> {
        let s = features.shape();
        if s.len() != 2 || s[0] == 0 || s[1] != self.config.feat_dim {
            return Err(Error::dim(
                "caption features",
                s,
                &[self.config.regions, self.config.feat_dim],
            ));
        }
        Ok(())
    }

    /// Records the per-image tensors: projected region features and the
    /// projected retrieved target.
    pub fn image_context(
        &self,
        tape: &mut Tape,
        features: &Tensor,
        retrieved: Option<&[f64]>,
    ) -> Result<ImageContext> {
        self.check_features(features)?;
        check_retrieved(self.config.retrieval, retrieved, self.config.encode_dim)?;
        let p = &self.params;
        let v = tape.constant(features.clone());
        let w = tape.param(p, self.feature_proj.weight);
        let projected = tape.matmul_bt(v, w)?;
        let projected = match self.feature_proj.bias {
            Some(b) => {
                let b = tape.param(p, b);
                tape.add_rows(projected, b)?
            }
            None => projected,
        };
        let keys = attention::precompute_keys(tape, p, &self.attention, projected)?;
        let retrieved = match (retrieved, &self.target_proj) {
            (Some(r), Some(proj)) => {
                let f = tape.constant(Tensor::vector(r.to_vec()));
                Some(target::project(tape, p, proj, f)?)
            }
            _ => None,
        };
        Ok(ImageContext { keys, retrieved })
    }

    /// `h_0 = W_ih v̄ + b`; `m_0` is either `W_im v̄ + b` or the projected
    /// retrieved target.
    pub fn init_states(
        &self,
        tape: &mut Tape,
        features: &Tensor,
        ctx: &ImageContext,
    ) -> Result<DecodeState> {
        self.check_features(features)?;
        let v_bar = tape.constant(Tensor::vector(mean_rows(features)));
        let h = self.init_h.forward(tape, &self.params, v_bar)?;
        let m = match (&self.init_m, ctx.retrieved) {
            (Some(init_m), _) => init_m.forward(tape, &self.params, v_bar)?,
            (None, Some(r)) => r,
            (None, None) => {
                return Err(Error::Config(
                    "memory injection needs a retrieved target".into(),
                ))
            }
        };
        Ok(DecodeState {
            h,
            m,
            step: 0,
            emitted: Vec::new(),
        })
    }

    /// Feeds `token`, returns vocabulary logits and the next state.
    pub fn step(
        &self,
        tape: &mut Tape,
        ctx: &ImageContext,
        state: &DecodeState,
        token: u32,
        rng: Option<&mut (dyn RngCore + '_)>,
    ) -> Result<(Var, DecodeState, StepAttention)> {
        let p = &self.params;
        let word = embed(
            tape,
            p,
            self.embeddings,
            self.config.fine_tune_embeddings,
            token,
        )?;
        let (visual, alpha) = attention::attend(tape, p, &self.attention, &ctx.keys, state.h)?;
        let (context, mix) = match &self.multi_level {
            Some(ml) => {
                let r = ctx.retrieved.ok_or_else(|| {
                    Error::Config("multi-level attention needs a retrieved target".into())
                })?;
                let (mixed, a) = attention::multi_level_attention(tape, p, ml, visual, r, state.h)?;
                (mixed, Some(a))
            }
            None => (visual, None),
        };
        let x = tape.concat(&[word, context])?;
        let (h, m) = nn::lstm_cell(tape, p, &self.lstm, x, state.h, state.m)?;
        let dropped = nn::dropout(tape, h, self.config.dropout, rng)?;
        let logits = self.output.forward(tape, p, dropped)?;

        let (image, retrieved) = match mix {
            Some(a) => {
                let a = tape.value(a).data();
                (a[0], a[1])
            }
            None => (1.0, 0.0),
        };
        let attn = StepAttention {
            regions: tape.value(alpha).data().to_vec(),
            image,
            retrieved,
        };
        let next = DecodeState {
            h,
            m,
            step: state.step + 1,
            emitted: state.emitted.clone(),
        };
        Ok((logits, next, attn))
    }

    /// Mean cross-entropy of a caption under teacher forcing: inputs are
    /// `BOS, w_1..w_n`, targets `w_1..w_n, EOS`.
    pub fn loss(
        &self,
        tape: &mut Tape,
        features: &Tensor,
        retrieved: Option<&[f64]>,
        caption: &[u32],
        mut rng: Option<&mut (dyn RngCore + '_)>,
    ) -> Result<Var> {
        if caption.is_empty() {
            return Err(Error::Empty("caption"));
        }
        let ctx = self.image_context(tape, features, retrieved)?;
        let mut state = self.init_states(tape, features, &ctx)?;
        let mut input = special::BOS;
        let mut terms = Vec::with_capacity(caption.len() + 1);
        for &target in caption.iter().chain(std::iter::once(&special::EOS)) {
            let (logits, next, _) = self.step(tape, &ctx, &state, input, rng.as_deref_mut())?;
            terms.push(tape.cross_entropy(logits, target as usize)?);
            state = next;
            input = target;
        }
        let total = tape.add_scalars(&terms)?;
        Ok(tape.scale(total, 1.0 / terms.len() as f64))
    }

    /// Greedy decoding from `BOS` until `EOS` or `max_len` tokens.
    pub fn greedy_decode(
        &self,
        features: &Tensor,
        retrieved: Option<&[f64]>,
        max_len: usize,
    ) -> Result<(Vec<u32>, Vec<StepAttention>)> {
        if max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        let mut tape = Tape::new();
        let ctx = self.image_context(&mut tape, features, retrieved)?;
        let mut state = self.init_states(&mut tape, features, &ctx)?;
        let mut token = special::BOS;
        let mut trace = Vec::new();
        while state.emitted.len() < max_len {
            let (logits, mut next, attn) = self.step(&mut tape, &ctx, &state, token, None)?;
            trace.push(attn);
            token = argmax(tape.value(logits).data()) as u32;
            if token == special::EOS {
                break;
            }
            next.emitted.push(token);
            state = next;
        }
        Ok((state.emitted, trace))
    }

    pub fn param_store(&self) -> &ParamStore {
        &self.params
    }
}

pub(crate) fn mean_rows(features: &Tensor) -> Vec<f64> {
    let (k, d) = (features.rows(), features.cols());
    let mut out = vec![0.0; d];
    for i in 0..k {
        for (o, x) in out.iter_mut().zip(features.row(i)) {
            *o += x;
        }
    }
    out.iter_mut().for_each(|o| *o /= k as f64);
    out
}
