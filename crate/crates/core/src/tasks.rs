//! Caption and sentiment models bound to prepared data.
//!
//! Retrieval happens once, when a split is prepared: each example gets its
//! nearest training neighbour and that neighbour's encoded target.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Gradients, Tape};
use crate::bleu::bleu;
use crate::data::{CaptionDataset, SentimentDataset, Vocab};
use crate::error::{Error, Result};
use crate::formats::Split;
use crate::knn::{ExampleStore, TargetPayload};
use crate::metrics::{accuracy, f_score};
use crate::models::{CaptionModel, SentimentModel, StepAttention};
use crate::params::ParamStore;
use crate::target::{CaptionEncoder, SentimentEncoder};
use crate::tensor::Tensor;
use crate::train::{SelectionMetric, Trainable};

#[derive(Clone, Debug, PartialEq)]
pub struct Retrieved {
    pub neighbor: u64,
    pub encoding: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PreparedImage {
    pub id: u64,
    pub features: Tensor,
    pub references: Vec<Vec<String>>,
    pub caption_ids: Vec<Vec<u32>>,
    pub retrieved: Option<Retrieved>,
}

#[derive(Clone, Debug)]
pub struct PreparedText {
    pub id: u64,
    pub tokens: Vec<u32>,
    pub label: u8,
    pub retrieved: Option<Retrieved>,
}

/// Retrieval inputs shared by every split of a caption run.
#[derive(Clone, Copy, Debug)]
pub struct CaptionRetrieval<'a> {
    pub store: &'a ExampleStore,
    pub encoder: &'a CaptionEncoder<'a>,
}

fn exclusion(exclude_self: bool, split: Split, id: u64) -> Vec<u64> {
    if exclude_self && split == Split::Train {
        vec![id]
    } else {
        Vec::new()
    }
}

pub fn prepare_captions(
    data: &CaptionDataset,
    split: Split,
    vocab: &Vocab,
    retrieval: Option<CaptionRetrieval<'_>>,
    exclude_self: bool,
) -> Result<Vec<PreparedImage>> {
    data.split(split)
        .map(|e| {
            let retrieved = match retrieval {
                None => None,
                Some(r) => {
                    let (hit, payload) = r
                        .store
                        .nearest_target(&e.key, &exclusion(exclude_self, split, e.id))?;
                    let TargetPayload::Caption(ids) = payload else {
                        return Err(Error::Config("caption run over a label store".into()));
                    };
                    let encoding = match r.encoder.encode(&vocab.decode(ids), hit.id) {
                        Ok(v) => v,
                        // no token of the retrieved caption has a vector
                        Err(Error::Empty(_)) => vec![0.0; r.encoder.encode_dim()],
                        Err(e) => return Err(e),
                    };
                    Some(Retrieved {
                        neighbor: hit.id,
                        encoding,
                    })
                }
            };
            Ok(PreparedImage {
                id: e.id,
                features: e.features.clone(),
                caption_ids: e.captions.iter().map(|c| vocab.encode(c)).collect(),
                references: e.captions.clone(),
                retrieved,
            })
        })
        .collect()
}

pub fn prepare_texts(
    data: &SentimentDataset,
    split: Split,
    vocab: &Vocab,
    retrieval: Option<(&ExampleStore, &SentimentEncoder)>,
    exclude_self: bool,
) -> Result<Vec<PreparedText>> {
    data.split(split)
        .map(|e| {
            let retrieved = match retrieval {
                None => None,
                Some((store, enc)) => {
                    let (hit, payload) =
                        store.nearest_target(&e.key, &exclusion(exclude_self, split, e.id))?;
                    let TargetPayload::Label(label) = payload else {
                        return Err(Error::Config("sentiment run over a caption store".into()));
                    };
                    Some(Retrieved {
                        neighbor: hit.id,
                        encoding: enc.encode(*label)?.to_vec(),
                    })
                }
            };
            Ok(PreparedText {
                id: e.id,
                tokens: vocab.encode(&e.tokens),
                label: e.label,
                retrieved,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Generation {
    pub id: u64,
    pub caption: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neighbor_id: Option<u64>,
    #[serde(skip)]
    pub attention: Vec<StepAttention>,
    #[serde(skip)]
    pub tokens: Vec<u32>,
}

pub fn generate_captions(
    model: &CaptionModel,
    images: &[PreparedImage],
    vocab: &Vocab,
    max_len: usize,
) -> Result<Vec<Generation>> {
    images
        .iter()
        .map(|im| {
            let r = im.retrieved.as_ref();
            let (tokens, attention) =
                model.greedy_decode(&im.features, r.map(|r| r.encoding.as_slice()), max_len)?;
            Ok(Generation {
                id: im.id,
                caption: vocab.decode(&tokens).join(" "),
                neighbor_id: r.map(|r| r.neighbor),
                attention,
                tokens,
            })
        })
        .collect()
}

/// Corpus BLEU-1..4 keyed `bleu1`..`bleu4`.
pub fn caption_metrics(
    model: &CaptionModel,
    images: &[PreparedImage],
    vocab: &Vocab,
    max_len: usize,
) -> Result<BTreeMap<String, f64>> {
    let gens = generate_captions(model, images, vocab, max_len)?;
    let candidates: Vec<Vec<String>> = gens.iter().map(|g| vocab.decode(&g.tokens)).collect();
    let references: Vec<Vec<Vec<String>>> = images.iter().map(|i| i.references.clone()).collect();
    let scores = bleu(&candidates, &references, 4)?;
    Ok(scores
        .iter()
        .enumerate()
        .map(|(i, &s)| (format!("bleu{}", i + 1), s))
        .collect())
}

/// Accuracy and macro F-score at threshold 0.5.
pub fn sentiment_metrics(
    model: &SentimentModel,
    texts: &[PreparedText],
) -> Result<BTreeMap<String, f64>> {
    let (preds, labels) = sentiment_predictions(model, texts)?;
    Ok(BTreeMap::from([
        ("accuracy".to_string(), accuracy(&preds, &labels)?),
        ("f_score".to_string(), f_score(&preds, &labels)?),
    ]))
}

pub fn sentiment_predictions(
    model: &SentimentModel,
    texts: &[PreparedText],
) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut preds = Vec::with_capacity(texts.len());
    for t in texts {
        let p = model.predict(
            &t.tokens,
            t.retrieved.as_ref().map(|r| r.encoding.as_slice()),
        )?;
        preds.push(u8::from(p >= 0.5));
    }
    Ok((preds, texts.iter().map(|t| t.label).collect()))
}

/// Captioning: one training item per (image, reference caption) pair.
pub struct CaptionTask {
    pub model: CaptionModel,
    pub vocab: Vocab,
    train: Vec<PreparedImage>,
    items: Vec<(usize, usize)>,
    val: Vec<PreparedImage>,
    selection: SelectionMetric,
    max_len: usize,
}

impl CaptionTask {
    pub fn new(
        model: CaptionModel,
        vocab: Vocab,
        train: Vec<PreparedImage>,
        val: Vec<PreparedImage>,
        selection: SelectionMetric,
        max_len: usize,
    ) -> Result<Self> {
        if val.is_empty() {
            return Err(Error::Empty("validation split"));
        }
        if selection.bleu_order().is_none() {
            return Err(Error::ConfigField {
                pointer: "/train/selection".into(),
                message: "captioning selects on a BLEU order".into(),
            });
        }
        let items = train
            .iter()
            .enumerate()
            .flat_map(|(i, im)| (0..im.caption_ids.len()).map(move |c| (i, c)))
            .collect();
        Ok(CaptionTask {
            model,
            vocab,
            train,
            items,
            val,
            selection,
            max_len,
        })
    }
}

impl Trainable for CaptionTask {
    fn params(&self) -> &ParamStore {
        &self.model.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.model.params
    }

    fn train_len(&self) -> usize {
        self.items.len()
    }

    fn item_loss(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<(f64, Gradients)> {
        let (i, c) = self.items[index];
        let im = &self.train[i];
        let mut tape = Tape::new();
        let loss = self.model.loss(
            &mut tape,
            &im.features,
            im.retrieved.as_ref().map(|r| r.encoding.as_slice()),
            &im.caption_ids[c],
            Some(rng),
        )?;
        let value = tape.value(loss).item();
        Ok((value, tape.backward(loss, &self.model.params)?))
    }

    fn validation_metric(&mut self) -> Result<f64> {
        let m = caption_metrics(&self.model, &self.val, &self.vocab, self.max_len)?;
        Ok(m[self.selection.name()])
    }
}

pub struct SentimentTask {
    pub model: SentimentModel,
    train: Vec<PreparedText>,
    val: Vec<PreparedText>,
}

impl SentimentTask {
    pub fn new(
        model: SentimentModel,
        train: Vec<PreparedText>,
        val: Vec<PreparedText>,
    ) -> Result<Self> {
        if val.is_empty() {
            return Err(Error::Empty("validation split"));
        }
        Ok(SentimentTask { model, train, val })
    }
}

impl Trainable for SentimentTask {
    fn params(&self) -> &ParamStore {
        &self.model.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.model.params
    }

    fn train_len(&self) -> usize {
        self.train.len()
    }

    fn item_loss(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<(f64, Gradients)> {
        let t = &self.train[index];
        let mut tape = Tape::new();
        let loss = self.model.loss(
            &mut tape,
            &t.tokens,
            t.retrieved.as_ref().map(|r| r.encoding.as_slice()),
            t.label,
            Some(rng),
        )?;
        let value = tape.value(loss).item();
        Ok((value, tape.backward(loss, &self.model.params)?))
    }

    fn validation_metric(&mut self) -> Result<f64> {
        let (preds, labels) = sentiment_predictions(&self.model, &self.val)?;
        accuracy(&preds, &labels)
    }
}
