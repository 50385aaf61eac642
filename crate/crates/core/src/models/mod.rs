//! The retrieval-augmented caption decoder and sentiment classifier.
//!
//! Both models take the encoded target of the retrieved neighbour as a plain
//! vector `f(y_n)`; the projection to the LSTM width is part of the model.

mod caption;
mod sentiment;

pub use caption::{CaptionModel, CaptionModelConfig, DecodeState, ImageContext, StepAttention};
pub use sentiment::{SentimentModel, SentimentModelConfig, SentimentOutput};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Reserved token ids.
pub mod special {
    pub const PAD: u32 = 0;
    pub const BOS: u32 = 1;
    pub const EOS: u32 = 2;
    pub const UNK: u32 = 3;
    pub const COUNT: usize = 4;
}

/// Where the retrieved target enters the model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    /// Plain baseline, no retrieval.
    #[default]
    Off,
    /// Projected target becomes the initial memory state.
    M0Init,
    /// Projected target is one of the two items of the multi-level attention.
    MultiAttn,
    /// Both, sharing one projected vector.
    Combined,
}

impl RetrievalMode {
    pub const ALL: [RetrievalMode; 4] = [
        RetrievalMode::Off,
        RetrievalMode::M0Init,
        RetrievalMode::MultiAttn,
        RetrievalMode::Combined,
    ];

    pub fn uses_retrieval(self) -> bool {
        self != RetrievalMode::Off
    }

    pub fn injects_memory(self) -> bool {
        matches!(self, RetrievalMode::M0Init | RetrievalMode::Combined)
    }

    pub fn uses_multi_level(self) -> bool {
        matches!(self, RetrievalMode::MultiAttn | RetrievalMode::Combined)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RetrievalMode::Off => "off",
            RetrievalMode::M0Init => "m0_init",
            RetrievalMode::MultiAttn => "multi_attn",
            RetrievalMode::Combined => "combined",
        }
    }
}

impl std::fmt::Display for RetrievalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RetrievalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RetrievalMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown retrieval mode {s:?}")))
    }
}

pub(crate) fn check_retrieved(
    mode: RetrievalMode,
    retrieved: Option<&[f64]>,
    encode_dim: usize,
) -> Result<()> {
    match (mode.uses_retrieval(), retrieved) {
        (false, Some(_)) => Err(Error::Config(format!(
            "retrieval mode {mode} does not take a retrieved target"
        ))),
        (true, None) => Err(Error::Config(format!(
            "retrieval mode {mode} needs a retrieved target"
        ))),
        (true, Some(r)) if r.len() != encode_dim => {
            Err(Error::dim("retrieved encoding", &[encode_dim], &[r.len()]))
        }
        _ => Ok(()),
    }
}

/// Reads row `token` of the embedding matrix. A frozen table is read as a
/// constant and never receives gradient.
pub(crate) fn embed(
    tape: &mut Tape,
    store: &ParamStore,
    table: ParamId,
    trainable: bool,
    token: u32,
) -> Result<Var> {
    let t = store.get(table);
    if token as usize >= t.rows() {
        return Err(Error::OutOfRange {
            what: "token id",
            index: token as usize,
            len: t.rows(),
        });
    }
    if trainable {
        let m = tape.param(store, table);
        tape.row(m, token as usize)
    } else {
        Ok(tape.constant(Tensor::vector(t.row(token as usize).to_vec())))
    }
}

/// Index of the largest value, smallest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
