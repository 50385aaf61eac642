//! Versioned JSON run configuration.
//!
//! ```json
//! {
//!   "version": 1,
//!   "task": "sentiment",
//!   "data": { "dataset": "dataset.jsonl", "embeddings": "embeddings.txt",
//!             "sentence_embeddings": "sentence_embeddings.tsv" },
//!   "model": { "hidden_dim": 32, "retrieval": "m0_init", "encoder": "plus_minus" },
//!   "train": { "max_epochs": 20, "seed": 7 },
//!   "run_dir": "runs/sentiment"
//! }
//! ```
//!
//! Relative paths are resolved against the directory holding the config
//! file. Every malformed field is reported with its JSON pointer.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::knn::Metric;
use crate::models::RetrievalMode;
use crate::target::EncoderMode;
use crate::train::{SelectionMetric, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Caption,
    Sentiment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// JSON-lines records.
    pub dataset: PathBuf,
    /// Word vectors, `token v1 .. vD` per line.
    pub embeddings: PathBuf,
    /// Sentiment retrieval keys, `#dim D` format keyed by record id.
    #[serde(default)]
    pub sentence_embeddings: Option<PathBuf>,
    /// Per-example target embeddings for the contextual encoders.
    #[serde(default)]
    pub contextual_embeddings: Option<PathBuf>,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
}

fn default_min_count() -> usize {
    5
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexConfig {
    /// Defaults to `<run_dir>/index.rknn`.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub metric: Metric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden_dim: usize,
    pub attn_dim: usize,
    pub retrieval: RetrievalMode,
    /// Defaults to `weighted` for captions and `class_avg` for sentiment.
    pub encoder: Option<EncoderMode>,
    pub dropout: f64,
    pub fine_tune_embeddings: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden_dim: 512,
            attn_dim: 512,
            retrieval: RetrievalMode::Off,
            encoder: None,
            dropout: 0.5,
            fine_tune_embeddings: false,
        }
    }
}

/// Overrides on top of the task's default [`TrainConfig`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub patience_stop: Option<usize>,
    pub patience_decay: Option<usize>,
    pub shrink: Option<f64>,
    pub max_epochs: Option<usize>,
    pub seed: Option<u64>,
    pub selection: Option<SelectionMetric>,
    pub exclude_self: Option<bool>,
    pub max_caption_len: Option<usize>,
    pub save_every_epoch: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub task: TaskKind,
    pub data: DataConfig,
    #[serde(default)]
    pub index: IndexConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    pub run_dir: PathBuf,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Deserializes JSON, turning any failure into [`Error::ConfigField`].
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = pointer_of(e.path());
        Error::ConfigField {
            pointer,
            message: e.into_inner().to_string(),
        }
    })
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut s = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => s.push_str(&format!("/{index}")),
            Segment::Map { key } => {
                s.push('/');
                s.push_str(&key.replace('~', "~0").replace('/', "~1"));
            }
            Segment::Enum { variant } => {
                s.push('/');
                s.push_str(variant);
            }
            Segment::Unknown => {}
        }
    }
    s
}

fn field(pointer: &str, message: impl Into<String>) -> Error {
    Error::ConfigField {
        pointer: pointer.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = parse_json(text)?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fsutil::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(field(
                "/version",
                format!(
                    "unsupported version {}, expected {CONFIG_VERSION}",
                    self.version
                ),
            ));
        }
        let m = &self.model;
        if m.hidden_dim == 0 {
            return Err(field("/model/hidden_dim", "must be positive"));
        }
        if m.attn_dim == 0 {
            return Err(field("/model/attn_dim", "must be positive"));
        }
        if !(0.0..1.0).contains(&m.dropout) {
            return Err(field(
                "/model/dropout",
                format!("{} is outside [0, 1)", m.dropout),
            ));
        }
        let enc = self.encoder();
        let ok = match self.task {
            TaskKind::Caption => enc.for_captions(),
            TaskKind::Sentiment => enc.for_sentiment(),
        };
        if !ok {
            return Err(field(
                "/model/encoder",
                format!("{enc:?} does not apply to the {:?} task", self.task),
            ));
        }
        let contextual = matches!(enc, EncoderMode::Contextual | EncoderMode::ClassContextual);
        if contextual && m.retrieval.uses_retrieval() && self.data.contextual_embeddings.is_none() {
            return Err(field(
                "/data/contextual_embeddings",
                "required by the contextual encoders",
            ));
        }
        if self.task == TaskKind::Sentiment && self.data.sentence_embeddings.is_none() {
            return Err(field(
                "/data/sentence_embeddings",
                "sentiment retrieval keys are required",
            ));
        }
        if self.data.min_count == 0 {
            return Err(field("/data/min_count", "must be at least 1"));
        }
        let t = self.train_config();
        if self.task == TaskKind::Caption && t.selection == SelectionMetric::Accuracy {
            return Err(field(
                "/train/selection",
                "captioning selects on a BLEU order",
            ));
        }
        if self.task == TaskKind::Sentiment && t.selection != SelectionMetric::Accuracy {
            return Err(field("/train/selection", "sentiment selects on accuracy"));
        }
        t.validate()
    }

    pub fn encoder(&self) -> EncoderMode {
        self.model.encoder.unwrap_or(match self.task {
            TaskKind::Caption => EncoderMode::Weighted,
            TaskKind::Sentiment => EncoderMode::ClassAvg,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = match self.task {
            TaskKind::Caption => TrainConfig::captioning(),
            TaskKind::Sentiment => TrainConfig::sentiment(),
        };
        let s = &self.train;
        macro_rules! overlay {
            ($($f:ident),*) => { $( if let Some(v) = s.$f { t.$f = v; } )* };
        }
        overlay!(
            lr,
            batch_size,
            patience_stop,
            patience_decay,
            shrink,
            max_epochs,
            seed,
            selection,
            exclude_self,
            max_caption_len,
            save_every_epoch
        );
        t
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.resolve(&self.run_dir)
    }

    pub fn index_path(&self) -> PathBuf {
        match &self.index.path {
            Some(p) => self.resolve(p),
            None => self.run_dir().join("index.rknn"),
        }
    }

    pub fn mode_dir(&self, mode: RetrievalMode) -> PathBuf {
        self.run_dir().join(mode.as_str())
    }
}
