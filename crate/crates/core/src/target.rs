//! Fixed-length encodings of retrieved targets and their projection to the
//! LSTM width (`r = W_n f(y) + b_n`).

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::nn::Linear;
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownToken {
    /// Tokens missing from the table are ignored.
    #[default]
    Skip,
    Fail,
}

/// Static word vectors keyed by token.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    order: Vec<String>,
    pub unknown: UnknownToken,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            vectors: HashMap::new(),
            order: Vec::new(),
            unknown: UnknownToken::Skip,
        }
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::dim("embedding", &[self.dim], &[vector.len()]));
        }
        let token = token.into();
        if self.vectors.insert(token.clone(), vector).is_none() {
            self.order.push(token);
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn tokens(&self) -> &[String] {
        &self.order
    }

    fn lookup<'a, S: AsRef<str>>(&'a self, tokens: &[S]) -> Result<Vec<&'a [f64]>> {
        let mut out = Vec::with_capacity(tokens.len());
        for t in tokens {
            match (self.get(t.as_ref()), self.unknown) {
                (Some(v), _) => out.push(v),
                (None, UnknownToken::Skip) => {}
                (None, UnknownToken::Fail) => {
                    return Err(Error::Config(format!(
                        "token {:?} not in embedding table",
                        t.as_ref()
                    )))
                }
            }
        }
        if out.is_empty() {
            return Err(Error::Empty("in-vocabulary tokens"));
        }
        Ok(out)
    }

    /// Parses `token v1 .. vD` lines with an optional leading `count dim` line.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .peekable();
        let mut declared = None;
        if let Some((_, first)) = lines.peek() {
            let parts: Vec<&str> = first.split_whitespace().collect();
            if parts.len() == 2 && parts.iter().all(|p| p.parse::<usize>().is_ok()) {
                declared = Some((
                    parts[0].parse::<usize>().unwrap(),
                    parts[1].parse::<usize>().unwrap(),
                ));
                lines.next();
            }
        }
        let mut table: Option<EmbeddingTable> = declared.map(|(_, d)| EmbeddingTable::new(d));
        for (no, line) in lines {
            let mut parts = line.split_whitespace();
            let token = parts.next().expect("non-empty line");
            let vector = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(format!("embedding line {}: {e}", no + 1)))?;
            let t = table.get_or_insert_with(|| EmbeddingTable::new(vector.len()));
            t.insert(token, vector)
                .map_err(|e| Error::format(format!("embedding line {}: {e}", no + 1)))?;
        }
        let table = table.ok_or(Error::Empty("embedding table"))?;
        if table.is_empty() || table.dim == 0 {
            return Err(Error::Empty("embedding table"));
        }
        if let Some((count, _)) = declared {
            if count != table.len() {
                return Err(Error::format(format!(
                    "embedding header declares {count} vectors, found {}",
                    table.len()
                )));
            }
        }
        Ok(table)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim);
        for token in &self.order {
            out.push_str(token);
            for v in &self.vectors[token] {
                out.push(' ');
                out.push_str(&format_float(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fsutil::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_text().as_bytes())
    }
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn format_float(v: f64) -> String {
    format!("{v:?}")
}

/// Arithmetic mean of the in-table token vectors.
pub fn avg_embedding<S: AsRef<str>>(tokens: &[S], table: &EmbeddingTable) -> Result<Vec<f64>> {
    let vecs = table.lookup(tokens)?;
    let mut out = vec![0.0; table.dim()];
    for v in &vecs {
        for (o, x) in out.iter_mut().zip(*v) {
            *o += x;
        }
    }
    let n = vecs.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

/// `Σ ‖e‖ e / Σ ‖e‖` over the in-table token vectors.
pub fn norm_weighted_avg<S: AsRef<str>>(tokens: &[S], table: &EmbeddingTable) -> Result<Vec<f64>> {
    let vecs = table.lookup(tokens)?;
    let mut out = vec![0.0; table.dim()];
    let mut total = 0.0;
    for v in &vecs {
        let w = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        total += w;
        for (o, x) in out.iter_mut().zip(*v) {
            *o += w * x;
        }
    }
    if total == 0.0 {
        return Err(Error::Config(
            "all token vectors are zero, weights sum to 0".into(),
        ));
    }
    out.iter_mut().for_each(|o| *o /= total);
    Ok(out)
}

/// Precomputed sentence vectors keyed by example id.
///
/// Text form: a `#dim D` header, then `id<TAB>v1 v2 ... vD` per line.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextualEmbeddings {
    dim: usize,
    vectors: HashMap<u64, Vec<f64>>,
    order: Vec<u64>,
}

impl ContextualEmbeddings {
    pub fn new(dim: usize) -> Self {
        ContextualEmbeddings {
            dim,
            vectors: HashMap::new(),
            order: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.order
    }

    pub fn insert(&mut self, id: u64, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::dim(
                "sentence embedding",
                &[self.dim],
                &[vector.len()],
            ));
        }
        if self.vectors.insert(id, vector).is_some() {
            return Err(Error::DuplicateId(id));
        }
        self.order.push(id);
        Ok(())
    }

    pub fn get(&self, id: u64) -> Result<&[f64]> {
        self.vectors
            .get(&id)
            .map(Vec::as_slice)
            .ok_or(Error::Missing {
                what: "contextual embedding",
                id,
            })
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let dim = loop {
            match lines.next() {
                Some((_, l)) if l.trim().is_empty() => continue,
                Some((_, l)) => {
                    let d = l
                        .trim()
                        .strip_prefix("#dim")
                        .and_then(|d| d.trim().parse::<usize>().ok())
                        .ok_or_else(|| {
                            Error::format("sentence embeddings must start with `#dim D`")
                        })?;
                    break d;
                }
                None => return Err(Error::format("sentence embedding file is empty")),
            }
        };
        let mut out = ContextualEmbeddings::new(dim);
        for (no, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |m: String| Error::format(format!("sentence embedding line {}: {m}", no + 1));
            let (id, rest) = line
                .split_once('\t')
                .ok_or_else(|| bad("missing tab".into()))?;
            let id = id.trim().parse::<u64>().map_err(|e| bad(e.to_string()))?;
            let v = rest
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(e.to_string()))?;
            out.insert(id, v).map_err(|e| bad(e.to_string()))?;
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("#dim {}\n", self.dim);
        for id in &self.order {
            out.push_str(&id.to_string());
            out.push('\t');
            let parts: Vec<String> = self.vectors[id].iter().map(|v| format_float(*v)).collect();
            out.push_str(&parts.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fsutil::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_text().as_bytes())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    Avg,
    Weighted,
    Contextual,
    PlusMinus,
    ClassAvg,
    ClassWeighted,
    ClassContextual,
}

impl EncoderMode {
    pub fn for_captions(self) -> bool {
        matches!(
            self,
            EncoderMode::Avg | EncoderMode::Weighted | EncoderMode::Contextual
        )
    }

    pub fn for_sentiment(self) -> bool {
        !self.for_captions()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetEncoderConfig {
    pub mode: EncoderMode,
    pub lstm_dim: usize,
}

/// Encodes a retrieved caption.
#[derive(Clone, Debug)]
pub struct CaptionEncoder<'a> {
    pub mode: EncoderMode,
    pub table: &'a EmbeddingTable,
    pub contextual: Option<&'a ContextualEmbeddings>,
}

impl<'a> CaptionEncoder<'a> {
    pub fn new(
        mode: EncoderMode,
        table: &'a EmbeddingTable,
        contextual: Option<&'a ContextualEmbeddings>,
    ) -> Result<Self> {
        if !mode.for_captions() {
            return Err(Error::Config(format!(
                "{mode:?} is not a caption encoder mode"
            )));
        }
        if mode == EncoderMode::Contextual && contextual.is_none() {
            return Err(Error::Config(
                "contextual mode needs a sentence embedding file".into(),
            ));
        }
        Ok(CaptionEncoder {
            mode,
            table,
            contextual,
        })
    }

    pub fn encode_dim(&self) -> usize {
        match (self.mode, self.contextual) {
            (EncoderMode::Contextual, Some(c)) => c.dim(),
            _ => self.table.dim(),
        }
    }

    /// `example_id` identifies the retrieved example whose caption this is;
    /// only the contextual mode reads it.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S], example_id: u64) -> Result<Vec<f64>> {
        match self.mode {
            EncoderMode::Avg => avg_embedding(tokens, self.table),
            EncoderMode::Weighted => norm_weighted_avg(tokens, self.table),
            EncoderMode::Contextual => Ok(self
                .contextual
                .expect("checked in new")
                .get(example_id)?
                .to_vec()),
            _ => unreachable!("validated in new"),
        }
    }
}

/// One training sentence used to build class means.
#[derive(Clone, Debug)]
pub struct LabeledSentence<'a> {
    pub id: u64,
    pub tokens: &'a [String],
    pub label: u8,
}

/// Encodes a retrieved sentiment label.
#[derive(Clone, Debug, PartialEq)]
pub struct SentimentEncoder {
    pub mode: EncoderMode,
    negative: Vec<f64>,
    positive: Vec<f64>,
}

impl SentimentEncoder {
    /// For the class modes, `corpus` must be the training split only.
    pub fn new(
        cfg: TargetEncoderConfig,
        corpus: &[LabeledSentence<'_>],
        table: Option<&EmbeddingTable>,
        contextual: Option<&ContextualEmbeddings>,
    ) -> Result<Self> {
        let mode = cfg.mode;
        if !mode.for_sentiment() {
            return Err(Error::Config(format!(
                "{mode:?} is not a sentiment encoder mode"
            )));
        }
        if mode == EncoderMode::PlusMinus {
            return Ok(SentimentEncoder {
                mode,
                negative: vec![-1.0; cfg.lstm_dim],
                positive: vec![1.0; cfg.lstm_dim],
            });
        }
        let sentence = |s: &LabeledSentence<'_>| -> Result<Vec<f64>> {
            match mode {
                EncoderMode::ClassAvg => avg_embedding(s.tokens, need_table(table)?),
                EncoderMode::ClassWeighted => norm_weighted_avg(s.tokens, need_table(table)?),
                EncoderMode::ClassContextual => Ok(contextual
                    .ok_or_else(|| {
                        Error::Config("class_contextual needs sentence embeddings".into())
                    })?
                    .get(s.id)?
                    .to_vec()),
                _ => unreachable!(),
            }
        };
        let mut sums: [Option<Vec<f64>>; 2] = [None, None];
        let mut counts = [0usize; 2];
        for s in corpus {
            if s.label > 1 {
                return Err(Error::OutOfRange {
                    what: "label",
                    index: s.label as usize,
                    len: 2,
                });
            }
            let v = match sentence(s) {
                Ok(v) => v,
                // sentences with no in-table token contribute nothing
                Err(Error::Empty(_)) => continue,
                Err(e) => return Err(e),
            };
            let c = s.label as usize;
            match &mut sums[c] {
                Some(acc) => acc.iter_mut().zip(&v).for_each(|(a, x)| *a += x),
                slot @ None => *slot = Some(v),
            }
            counts[c] += 1;
        }
        let mean = |c: usize| -> Result<Vec<f64>> {
            let acc = sums[c].clone().ok_or(Error::Empty(if c == 1 {
                "positive class in training corpus"
            } else {
                "negative class in training corpus"
            }))?;
            Ok(acc.into_iter().map(|x| x / counts[c] as f64).collect())
        };
        Ok(SentimentEncoder {
            mode,
            negative: mean(0)?,
            positive: mean(1)?,
        })
    }

    pub fn encode_dim(&self) -> usize {
        self.positive.len()
    }

    pub fn encode(&self, label: u8) -> Result<&[f64]> {
        match label {
            0 => Ok(&self.negative),
            1 => Ok(&self.positive),
            l => Err(Error::OutOfRange {
                what: "label",
                index: l as usize,
                len: 2,
            }),
        }
    }
}

fn need_table(table: Option<&EmbeddingTable>) -> Result<&EmbeddingTable> {
    table.ok_or_else(|| Error::Config("class mean modes need an embedding table".into()))
}

/// Maps an encoding of width `encode_dim` to the LSTM width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Projection {
    pub linear: Linear,
    pub encode_dim: usize,
    pub lstm_dim: usize,
}

impl Projection {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        encode_dim: usize,
        lstm_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Projection {
            linear: Linear::register(store, name, encode_dim, lstm_dim, bias, rng)?,
            encode_dim,
            lstm_dim,
        })
    }
}

pub fn project(
    tape: &mut Tape,
    store: &ParamStore,
    proj: &Projection,
    encoding: Var,
) -> Result<Var> {
    let len = tape.value(encoding).len();
    if len != proj.encode_dim {
        return Err(Error::dim("project", &[proj.encode_dim], &[len]));
    }
    proj.linear.forward(tape, store, encoding)
}
