//! Synthetic prototype benchmark.
//!
//! `P` prototype vectors each own a target: a three-token caption or a
//! binary label. Every example is its prototype plus Gaussian noise and
//! copies the prototype's target, so the nearest training neighbour of an
//! example usually reveals its target. Training examples cycle through the
//! prototypes; validation and test examples are fresh draws of them.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{parse_json, TaskKind, CONFIG_VERSION};
use crate::error::{Error, Result};
use crate::formats::{records_to_text, DatasetRecord, FeatureFile, RecordPayload, Split};
use crate::fsutil;
use crate::target::{ContextualEmbeddings, EmbeddingTable};

const SLOT_WORDS: [&[&str]; 3] = [
    &[
        "red", "blue", "green", "black", "white", "brown", "grey", "pink",
    ],
    &[
        "dog", "cat", "bird", "horse", "child", "man", "woman", "boat",
    ],
    &[
        "runs", "sits", "jumps", "swims", "sleeps", "plays", "waits", "eats",
    ],
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default = "default_version")]
    pub version: u32,
    pub task: TaskKind,
    pub prototypes: usize,
    /// Width of feature vectors (caption) or sentence embeddings (sentiment).
    pub dim: usize,
    /// Per-coordinate standard deviation of the example noise.
    pub noise: f64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
    /// Regions per image.
    #[serde(default = "default_regions")]
    pub regions: usize,
    /// Candidate words per caption slot.
    #[serde(default = "default_words_per_slot")]
    pub words_per_slot: usize,
    /// Tokens per synthetic review.
    #[serde(default = "default_text_len")]
    pub text_len: usize,
    /// Size of the review word pool.
    #[serde(default = "default_text_vocab")]
    pub text_vocab: usize,
    /// Words of each review fixed by its prototype; the rest is filler.
    #[serde(default = "default_signature_words")]
    pub signature_words: usize,
    /// Width of the generated word vectors.
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    /// Where the `synth` command writes. Relative to the spec file.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}
fn default_regions() -> usize {
    4
}
fn default_words_per_slot() -> usize {
    6
}
fn default_text_len() -> usize {
    8
}
fn default_text_vocab() -> usize {
    64
}
fn default_signature_words() -> usize {
    2
}
fn default_embed_dim() -> usize {
    16
}

fn field(pointer: &str, message: impl Into<String>) -> Error {
    Error::ConfigField {
        pointer: pointer.to_string(),
        message: message.into(),
    }
}

impl SynthSpec {
    pub fn new(task: TaskKind, prototypes: usize, dim: usize, noise: f64, seed: u64) -> Self {
        SynthSpec {
            version: CONFIG_VERSION,
            task,
            prototypes,
            dim,
            noise,
            train: 4 * prototypes,
            val: prototypes,
            test: prototypes,
            seed,
            regions: default_regions(),
            words_per_slot: default_words_per_slot(),
            text_len: default_text_len(),
            text_vocab: default_text_vocab(),
            signature_words: default_signature_words(),
            embed_dim: default_embed_dim(),
            out_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SynthSpec = parse_json(text)?;
        spec.validate_shape()?;
        Ok(spec)
    }

    /// Checks everything except the separation invariant, which needs the
    /// drawn prototypes.
    pub fn validate_shape(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(field(
                "/version",
                format!("unsupported version {}", self.version),
            ));
        }
        if self.prototypes < 2 {
            return Err(field("/prototypes", "need at least 2 prototypes"));
        }
        if self.dim == 0 {
            return Err(field("/dim", "must be positive"));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(field("/noise", "must be a non-negative number"));
        }
        if self.train < self.prototypes {
            return Err(field("/train", "every prototype needs a training example"));
        }
        if self.val == 0 || self.test == 0 {
            return Err(field(
                "/val",
                "validation and test splits must be non-empty",
            ));
        }
        if self.embed_dim == 0 {
            return Err(field("/embed_dim", "must be positive"));
        }
        match self.task {
            TaskKind::Caption => {
                if self.regions == 0 {
                    return Err(field("/regions", "must be positive"));
                }
                if self.words_per_slot < 2 {
                    return Err(field("/words_per_slot", "need at least 2 words per slot"));
                }
            }
            TaskKind::Sentiment => {
                if self.text_len == 0 || self.signature_words > self.text_len {
                    return Err(field("/signature_words", "must not exceed text_len"));
                }
                if self.text_vocab < 2 {
                    return Err(field("/text_vocab", "need at least 2 words"));
                }
            }
        }
        Ok(())
    }
}

/// Everything a synthetic benchmark consists of, before it hits the disk.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub spec: SynthSpec,
    pub prototypes: Vec<Vec<f64>>,
    /// Minimum pairwise prototype distance.
    pub min_separation: f64,
    pub records: Vec<DatasetRecord>,
    /// Prototype index of each record.
    pub prototype_of: Vec<usize>,
    pub embeddings: EmbeddingTable,
    /// Caption task: one feature file per record, same order.
    pub features: Vec<FeatureFile>,
    /// Sentiment task: retrieval keys.
    pub sentence_embeddings: Option<ContextualEmbeddings>,
    /// Caption task: per-record caption embeddings for the contextual encoder.
    pub caption_embeddings: Option<ContextualEmbeddings>,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn slot_word(slot: usize, j: usize) -> String {
    SLOT_WORDS[slot]
        .get(j)
        .map_or_else(|| format!("{}{j}", SLOT_WORDS[slot][0]), |w| w.to_string())
}

fn min_separation(protos: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..protos.len() {
        for j in i + 1..protos.len() {
            let d: f64 = protos[i]
                .iter()
                .zip(&protos[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            best = best.min(d.sqrt());
        }
    }
    best
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate_shape()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let p = spec.prototypes;
    let prototypes: Vec<Vec<f64>> = (0..p)
        .map(|_| normal_vec(&mut rng, spec.dim, 1.0))
        .collect();
    let sep = min_separation(&prototypes);
    if spec.noise >= sep / 2.0 {
        return Err(field(
            "/noise",
            format!(
                "{} is not below half the minimum prototype separation {:.4}",
                spec.noise,
                sep / 2.0
            ),
        ));
    }

    let mut assignment: Vec<(Split, usize)> =
        (0..spec.train).map(|i| (Split::Train, i % p)).collect();
    for (split, n) in [(Split::Val, spec.val), (Split::Test, spec.test)] {
        for _ in 0..n {
            assignment.push((split, rng.random_range(0..p)));
        }
    }

    let word_scale = 1.0 / (spec.embed_dim as f64).sqrt();
    let mut embeddings = EmbeddingTable::new(spec.embed_dim);
    let mut out = SynthData {
        spec: spec.clone(),
        prototypes: Vec::new(),
        min_separation: sep,
        records: Vec::with_capacity(assignment.len()),
        prototype_of: assignment.iter().map(|a| a.1).collect(),
        embeddings: EmbeddingTable::new(spec.embed_dim),
        features: Vec::new(),
        sentence_embeddings: None,
        caption_embeddings: None,
    };

    match spec.task {
        TaskKind::Caption => {
            for slot in 0..SLOT_WORDS.len() {
                for j in 0..spec.words_per_slot {
                    embeddings.insert(
                        slot_word(slot, j),
                        normal_vec(&mut rng, spec.embed_dim, word_scale),
                    )?;
                }
            }
            let captions: Vec<Vec<String>> = (0..p)
                .map(|_| {
                    (0..SLOT_WORDS.len())
                        .map(|s| slot_word(s, rng.random_range(0..spec.words_per_slot)))
                        .collect()
                })
                .collect();
            let mut ctx = ContextualEmbeddings::new(spec.embed_dim);
            for (id, &(split, proto)) in assignment.iter().enumerate() {
                let mut values = Vec::with_capacity(spec.regions * spec.dim);
                for _ in 0..spec.regions {
                    let n = normal_vec(&mut rng, spec.dim, spec.noise);
                    values.extend(prototypes[proto].iter().zip(n).map(|(a, b)| (a + b) as f32));
                }
                out.features
                    .push(FeatureFile::new(spec.regions, spec.dim, values)?);
                let caption = &captions[proto];
                let mut mean = vec![0.0; spec.embed_dim];
                for w in caption {
                    let v = embeddings.get(w).expect("inserted above");
                    mean.iter_mut()
                        .zip(v)
                        .for_each(|(m, x)| *m += x / caption.len() as f64);
                }
                ctx.insert(id as u64, mean)?;
                out.records.push(DatasetRecord {
                    id: id as u64,
                    split,
                    payload: RecordPayload::Image {
                        feature_path: feature_path(id as u64),
                        captions: vec![caption.join(" ")],
                    },
                });
            }
            out.caption_embeddings = Some(ctx);
        }
        TaskKind::Sentiment => {
            let words: Vec<String> = (0..spec.text_vocab).map(|j| format!("w{j}")).collect();
            for w in &words {
                embeddings.insert(w.clone(), normal_vec(&mut rng, spec.embed_dim, word_scale))?;
            }
            let mut labels: Vec<u8> = (0..p).map(|i| (i % 2) as u8).collect();
            labels.shuffle(&mut rng);
            let signatures: Vec<Vec<usize>> = (0..p)
                .map(|_| {
                    (0..spec.signature_words)
                        .map(|_| rng.random_range(0..spec.text_vocab))
                        .collect()
                })
                .collect();
            let mut keys = ContextualEmbeddings::new(spec.dim);
            for (id, &(split, proto)) in assignment.iter().enumerate() {
                let mut slots: Vec<usize> = (0..spec.text_len).collect();
                slots.shuffle(&mut rng);
                let mut text: Vec<usize> = (0..spec.text_len)
                    .map(|_| rng.random_range(0..spec.text_vocab))
                    .collect();
                for (k, &w) in signatures[proto].iter().enumerate() {
                    text[slots[k]] = w;
                }
                let n = normal_vec(&mut rng, spec.dim, spec.noise);
                keys.insert(
                    id as u64,
                    prototypes[proto]
                        .iter()
                        .zip(n)
                        .map(|(a, b)| a + b)
                        .collect(),
                )?;
                out.records.push(DatasetRecord {
                    id: id as u64,
                    split,
                    payload: RecordPayload::Text {
                        text: text
                            .iter()
                            .map(|&w| words[w].as_str())
                            .collect::<Vec<_>>()
                            .join(" "),
                        label: labels[proto],
                    },
                });
            }
            out.sentence_embeddings = Some(keys);
        }
    }
    out.prototypes = prototypes;
    out.embeddings = embeddings;
    Ok(out)
}

pub fn feature_path(id: u64) -> String {
    format!("features/{id}.rafx")
}

impl SynthData {
    /// A run config that trains on these files with desk-scale dimensions.
    pub fn run_config_json(&self) -> String {
        let (task, data, model, train) = match self.spec.task {
            TaskKind::Caption => (
                "caption",
                serde_json::json!({
                    "dataset": "dataset.jsonl",
                    "embeddings": "embeddings.txt",
                    "contextual_embeddings": "caption_embeddings.tsv",
                    "min_count": 1
                }),
                serde_json::json!({
                    "hidden_dim": 32, "attn_dim": 32, "retrieval": "combined",
                    "encoder": "weighted", "dropout": 0.5
                }),
                serde_json::json!({
                    "lr": 0.01, "max_epochs": 60, "seed": self.spec.seed,
                    "selection": "bleu1", "max_caption_len": 6, "save_every_epoch": false
                }),
            ),
            TaskKind::Sentiment => (
                "sentiment",
                serde_json::json!({
                    "dataset": "dataset.jsonl",
                    "embeddings": "embeddings.txt",
                    "sentence_embeddings": "sentence_embeddings.tsv",
                    "contextual_embeddings": "sentence_embeddings.tsv",
                    "min_count": 1
                }),
                serde_json::json!({
                    "hidden_dim": 32, "attn_dim": 32, "retrieval": "m0_init",
                    "encoder": "class_avg", "dropout": 0.5
                }),
                serde_json::json!({
                    "lr": 0.005, "max_epochs": 30, "seed": self.spec.seed,
                    "save_every_epoch": false
                }),
            ),
        };
        let cfg = serde_json::json!({
            "version": CONFIG_VERSION,
            "task": task,
            "data": data,
            "model": model,
            "train": train,
            "run_dir": "runs"
        });
        serde_json::to_string_pretty(&cfg).expect("json") + "\n"
    }

    /// Writes `dataset.jsonl`, `embeddings.txt`, `config.json` and the
    /// task's feature or key files under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        let mut put = |rel: &str, bytes: &[u8]| -> Result<()> {
            let path = dir.join(rel);
            fsutil::write_atomic(&path, bytes)?;
            written.push(path);
            Ok(())
        };
        put("dataset.jsonl", records_to_text(&self.records).as_bytes())?;
        put("embeddings.txt", self.embeddings.to_text().as_bytes())?;
        put("config.json", self.run_config_json().as_bytes())?;
        for (rec, ff) in self.records.iter().zip(&self.features) {
            put(&feature_path(rec.id), &ff.to_bytes())?;
        }
        if let Some(s) = &self.sentence_embeddings {
            put("sentence_embeddings.tsv", s.to_text().as_bytes())?;
        }
        if let Some(c) = &self.caption_embeddings {
            put("caption_embeddings.tsv", c.to_text().as_bytes())?;
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knn::{ExampleStore, TargetPayload};

    #[test]
    fn one_prototype_is_rejected() {
        let s = SynthSpec::new(TaskKind::Sentiment, 1, 4, 0.0, 1);
        assert!(
            matches!(generate(&s), Err(Error::ConfigField { pointer, .. }) if pointer == "/prototypes")
        );
    }

    #[test]
    fn excessive_noise_is_rejected() {
        let s = SynthSpec::new(TaskKind::Sentiment, 8, 4, 50.0, 1);
        assert!(
            matches!(generate(&s), Err(Error::ConfigField { pointer, .. }) if pointer == "/noise")
        );
    }

    #[test]
    fn same_seed_same_data() {
        let s = SynthSpec::new(TaskKind::Caption, 6, 5, 0.05, 9);
        let (a, b) = (generate(&s).unwrap(), generate(&s).unwrap());
        assert_eq!(a.records, b.records);
        assert_eq!(a.features, b.features);
        assert_eq!(a.embeddings.to_text(), b.embeddings.to_text());
    }

    #[test]
    fn zero_noise_neighbour_shares_prototype() {
        let s = SynthSpec::new(TaskKind::Sentiment, 10, 6, 0.0, 3);
        let d = generate(&s).unwrap();
        let keys = d.sentence_embeddings.as_ref().unwrap();
        let mut store = ExampleStore::new(6);
        for r in d.records.iter().filter(|r| r.split == Split::Train) {
            let RecordPayload::Text { label, .. } = r.payload else {
                unreachable!()
            };
            let k: Vec<f32> = keys.get(r.id).unwrap().iter().map(|&x| x as f32).collect();
            store.add(r.id, &k, TargetPayload::Label(label)).unwrap();
        }
        for r in d.records.iter().filter(|r| r.split == Split::Train) {
            let k: Vec<f32> = keys.get(r.id).unwrap().iter().map(|&x| x as f32).collect();
            let hit = store.search(&k, 1, &[r.id]).unwrap()[0];
            assert_eq!(
                d.prototype_of[hit.id as usize],
                d.prototype_of[r.id as usize]
            );
        }
    }
}
