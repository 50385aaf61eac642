//! In-memory datasets, vocabulary and retrieval keys.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bleu::tokenize;
use crate::error::{Error, Result};
use crate::formats::{DatasetRecord, FeatureFile, RecordPayload, Split};
use crate::fsutil;
use crate::knn::{ExampleStore, Metric, TargetPayload};
use crate::models::special;
use crate::target::{ContextualEmbeddings, EmbeddingTable};
use crate::tensor::Tensor;

pub const SPECIAL_TOKENS: [&str; special::COUNT] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::format(format!("vocabulary lists {t:?} twice")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Special tokens first, then every token seen at least `min_count`
    /// times, by descending count then lexicographically.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a [String]>, min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for t in s {
                *counts.entry(t.as_str()).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count.max(1) && !SPECIAL_TOKENS.contains(t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(t, _)| t.to_string()))
            .collect();
        Self::from_tokens(tokens).expect("unique by construction")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(special::UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens
            .get(id as usize)
            .map_or(SPECIAL_TOKENS[special::UNK as usize], String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// Manifest form: one token per line, line index = id.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < special::COUNT || tokens[..special::COUNT] != SPECIAL_TOKENS {
            return Err(Error::format(
                "vocabulary manifest must start with the special tokens",
            ));
        }
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fsutil::read_to_string(path)?)
    }

    /// `[len, dim]` matrix of word vectors. Tokens missing from `table`
    /// (including the special tokens) get seeded uniform vectors in ±0.1.
    pub fn embedding_matrix(&self, table: &EmbeddingTable, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = table.dim();
        let mut data = Vec::with_capacity(self.len() * dim);
        for t in &self.tokens {
            match table.get(t) {
                Some(v) => data.extend_from_slice(v),
                None => {
                    let v = crate::params::uniform(&[dim], 100, &mut rng);
                    data.extend_from_slice(v.data());
                }
            }
        }
        Tensor::matrix(self.len(), dim, data).expect("consistent dims")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionExample {
    pub id: u64,
    pub split: Split,
    pub features: Tensor,
    /// Retrieval key: the pooled feature vector.
    pub key: Vec<f32>,
    pub captions: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentimentExample {
    pub id: u64,
    pub split: Split,
    pub tokens: Vec<String>,
    pub label: u8,
    /// Retrieval key: the precomputed sentence embedding.
    pub key: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct CaptionDataset {
    pub examples: Vec<CaptionExample>,
}

#[derive(Clone, Debug)]
pub struct SentimentDataset {
    pub examples: Vec<SentimentExample>,
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

impl CaptionDataset {
    /// Feature paths are resolved relative to `base`.
    pub fn from_records(records: &[DatasetRecord], base: &Path) -> Result<Self> {
        let mut examples = Vec::with_capacity(records.len());
        let mut shape = None;
        for r in records {
            let RecordPayload::Image {
                feature_path,
                captions,
            } = &r.payload
            else {
                return Err(Error::Config(format!(
                    "record {} is not an image record",
                    r.id
                )));
            };
            let ff = FeatureFile::load(&base.join(feature_path))?;
            match shape {
                None => shape = Some((ff.regions, ff.dim)),
                Some(s) if s != (ff.regions, ff.dim) => {
                    return Err(Error::dim(
                        "feature files",
                        &[s.0, s.1],
                        &[ff.regions, ff.dim],
                    ))
                }
                _ => {}
            }
            examples.push(CaptionExample {
                id: r.id,
                split: r.split,
                key: to_f32(&ff.pooled()),
                features: ff.to_tensor(),
                captions: captions.iter().map(|c| tokenize(c)).collect(),
            });
        }
        Ok(CaptionDataset { examples })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &CaptionExample> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn regions_and_dim(&self) -> Option<(usize, usize)> {
        self.examples
            .first()
            .map(|e| (e.features.rows(), e.features.cols()))
    }

    pub fn vocab(&self, min_count: usize) -> Vocab {
        Vocab::build(
            self.split(Split::Train)
                .flat_map(|e| e.captions.iter().map(Vec::as_slice)),
            min_count,
        )
    }

    /// Store of training keys mapping to each image's first reference caption.
    pub fn build_store(&self, vocab: &Vocab, metric: Metric) -> Result<ExampleStore> {
        let dim = self.regions_and_dim().map_or(0, |(_, d)| d);
        let mut store = ExampleStore::with_metric(dim, metric);
        for e in self.split(Split::Train) {
            store.add(
                e.id,
                &e.key,
                TargetPayload::Caption(vocab.encode(&e.captions[0])),
            )?;
        }
        store.freeze();
        Ok(store)
    }
}

impl SentimentDataset {
    /// Retrieval keys come from `sentence_embeddings`, keyed by record id.
    pub fn from_records(
        records: &[DatasetRecord],
        sentence_embeddings: &ContextualEmbeddings,
    ) -> Result<Self> {
        let mut examples = Vec::with_capacity(records.len());
        for r in records {
            let RecordPayload::Text { text, label } = &r.payload else {
                return Err(Error::Config(format!(
                    "record {} is not a text record",
                    r.id
                )));
            };
            let tokens = tokenize(text);
            if tokens.is_empty() {
                return Err(Error::Config(format!("record {} has empty text", r.id)));
            }
            examples.push(SentimentExample {
                id: r.id,
                split: r.split,
                tokens,
                label: *label,
                key: to_f32(sentence_embeddings.get(r.id)?),
            });
        }
        Ok(SentimentDataset { examples })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SentimentExample> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn vocab(&self, min_count: usize) -> Vocab {
        Vocab::build(
            self.split(Split::Train).map(|e| e.tokens.as_slice()),
            min_count,
        )
    }

    pub fn build_store(&self, metric: Metric) -> Result<ExampleStore> {
        let dim = self.examples.first().map_or(0, |e| e.key.len());
        let mut store = ExampleStore::with_metric(dim, metric);
        for e in self.split(Split::Train) {
            store.add(e.id, &e.key, TargetPayload::Label(e.label))?;
        }
        store.freeze();
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(words: &str) -> Vec<String> {
        tokenize(words)
    }

    #[test]
    fn vocab_threshold_and_order() {
        let sents = [s("a a a b b c"), s("a b d d d d")];
        let v = Vocab::build(sents.iter().map(Vec::as_slice), 2);
        assert_eq!(&v.tokens()[4..], &["a", "d", "b"]);
        assert_eq!(v.id("c"), special::UNK);
        assert_eq!(v.decode(&v.encode(&["d", "zz"])), vec!["d", "<unk>"]);
        let back = Vocab::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert!(Vocab::from_text("a\nb\n").is_err());
    }

    #[test]
    fn embedding_matrix_uses_table_rows() {
        let sents = [s("x y")];
        let v = Vocab::build(sents.iter().map(Vec::as_slice), 1);
        let mut table = EmbeddingTable::new(2);
        table.insert("x", vec![5.0, 6.0]).unwrap();
        let m = v.embedding_matrix(&table, 1);
        assert_eq!(m.shape(), &[6, 2]);
        assert_eq!(m.row(v.id("x") as usize), &[5.0, 6.0]);
        assert!(m.row(v.id("y") as usize).iter().all(|x| x.abs() <= 0.1));
        assert_eq!(m, v.embedding_matrix(&table, 1));
    }
}
