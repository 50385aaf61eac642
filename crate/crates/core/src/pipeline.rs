//! The commands behind the CLI, callable as library functions.
//!
//! Run directory layout:
//!
//! ```text
//! <run_dir>/index.rknn            build-index (unless index.path is set)
//! <run_dir>/vocab.txt             vocabulary manifest
//! <run_dir>/<mode>/best.rafm      best validation checkpoint
//! <run_dir>/<mode>/epoch_<k>.rafm per-epoch checkpoints
//! <run_dir>/<mode>/reports.jsonl  one EpochReport per line, plus reports.txt
//! <run_dir>/<mode>/eval_<split>.json
//! <run_dir>/ablation.jsonl        plus ablation.txt
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{AttnStep, AttnTrace};
use crate::checkpoint::{Model, ModelConfig};
use crate::config::{RunConfig, TaskKind};
use crate::data::{CaptionDataset, SentimentDataset, Vocab};
use crate::error::{Error, Result};
use crate::formats::{load_records, Split};
use crate::fsutil;
use crate::knn::ExampleStore;
use crate::models::{
    CaptionModel, CaptionModelConfig, RetrievalMode, SentimentModel, SentimentModelConfig,
};
use crate::synth::{self, SynthSpec};
use crate::target::{
    CaptionEncoder, ContextualEmbeddings, EmbeddingTable, EncoderMode, LabeledSentence,
    SentimentEncoder, TargetEncoderConfig,
};
use crate::tasks::{self, CaptionRetrieval, CaptionTask, Generation, SentimentTask};
use crate::train::{self, AblationTable, EpochReport, TrainOutcome};

/// Command-line overrides applied on top of a loaded config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub mode: Option<RetrievalMode>,
    pub seed: Option<u64>,
    pub max_epochs: Option<usize>,
    pub run_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(m) = self.mode {
            cfg.model.retrieval = m;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = Some(s);
        }
        if let Some(e) = self.max_epochs {
            cfg.train.max_epochs = Some(e);
        }
        if let Some(d) = &self.run_dir {
            // relative to the working directory, like any CLI path
            cfg.run_dir = std::path::absolute(d).map_err(|e| Error::io(d, e))?;
        }
        cfg.validate()
    }
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    overrides.apply(&mut cfg)?;
    Ok(cfg)
}

/// Loaded inputs of a caption run.
pub struct CaptionInputs {
    pub data: CaptionDataset,
    pub vocab: Vocab,
    pub table: EmbeddingTable,
    pub contextual: Option<ContextualEmbeddings>,
}

/// Loaded inputs of a sentiment run.
pub struct SentimentInputs {
    pub data: SentimentDataset,
    pub vocab: Vocab,
    pub table: EmbeddingTable,
    pub contextual: Option<ContextualEmbeddings>,
}

pub enum Inputs {
    Caption(CaptionInputs),
    Sentiment(SentimentInputs),
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let d = &cfg.data;
    let dataset = cfg.resolve(&d.dataset);
    let records = load_records(&dataset)?;
    let table = EmbeddingTable::load(&cfg.resolve(&d.embeddings))?;
    let contextual = match &d.contextual_embeddings {
        Some(p) => Some(ContextualEmbeddings::load(&cfg.resolve(p))?),
        None => None,
    };
    let base = dataset.parent().unwrap_or(Path::new("."));
    let inputs = match cfg.task {
        TaskKind::Caption => {
            let data = CaptionDataset::from_records(&records, base)?;
            let vocab = data.vocab(d.min_count);
            Inputs::Caption(CaptionInputs {
                data,
                vocab,
                table,
                contextual,
            })
        }
        TaskKind::Sentiment => {
            let keys_path = d.sentence_embeddings.as_ref().expect("validated");
            let keys = ContextualEmbeddings::load(&cfg.resolve(keys_path))?;
            let data = SentimentDataset::from_records(&records, &keys)?;
            let vocab = data.vocab(d.min_count);
            Inputs::Sentiment(SentimentInputs {
                data,
                vocab,
                table,
                contextual,
            })
        }
    };
    for split in [Split::Train, Split::Val] {
        let n = match &inputs {
            Inputs::Caption(c) => c.data.split(split).count(),
            Inputs::Sentiment(s) => s.data.split(split).count(),
        };
        if n == 0 {
            return Err(Error::Empty(if split == Split::Train {
                "training split"
            } else {
                "validation split"
            }));
        }
    }
    Ok(inputs)
}

impl Inputs {
    pub fn vocab(&self) -> &Vocab {
        match self {
            Inputs::Caption(c) => &c.vocab,
            Inputs::Sentiment(s) => &s.vocab,
        }
    }

    pub fn build_store(&self, cfg: &RunConfig) -> Result<ExampleStore> {
        match self {
            Inputs::Caption(c) => c.data.build_store(&c.vocab, cfg.index.metric),
            Inputs::Sentiment(s) => s.data.build_store(cfg.index.metric),
        }
    }
}

impl CaptionInputs {
    pub fn encoder(&self, mode: EncoderMode) -> Result<CaptionEncoder<'_>> {
        CaptionEncoder::new(mode, &self.table, self.contextual.as_ref())
    }

    pub fn model_config(&self, cfg: &RunConfig, mode: RetrievalMode) -> Result<CaptionModelConfig> {
        let (regions, feat_dim) = self
            .data
            .regions_and_dim()
            .ok_or(Error::Empty("caption dataset"))?;
        let encoder = cfg.encoder();
        let encode_dim = if mode.uses_retrieval() {
            self.encoder(encoder)?.encode_dim()
        } else {
            self.table.dim()
        };
        Ok(CaptionModelConfig {
            vocab_size: self.vocab.len(),
            embed_dim: self.table.dim(),
            hidden_dim: cfg.model.hidden_dim,
            feat_dim,
            regions,
            attn_dim: cfg.model.attn_dim,
            retrieval: mode,
            encoder,
            encode_dim,
            dropout: cfg.model.dropout,
            fine_tune_embeddings: cfg.model.fine_tune_embeddings,
        })
    }

    /// Freshly initialized model for `mode`, seeded from the train seed.
    pub fn new_model(&self, cfg: &RunConfig, mode: RetrievalMode) -> Result<CaptionModel> {
        let seed = cfg.train_config().seed;
        let emb = self.vocab.embedding_matrix(&self.table, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CaptionModel::new(self.model_config(cfg, mode)?, emb, &mut rng)
    }

    pub fn prepare(
        &self,
        cfg: &RunConfig,
        mode: RetrievalMode,
        store: Option<&ExampleStore>,
        split: Split,
    ) -> Result<Vec<tasks::PreparedImage>> {
        let encoder = match (mode.uses_retrieval(), store) {
            (false, _) => None,
            (true, Some(_)) => Some(self.encoder(cfg.encoder())?),
            (true, None) => {
                return Err(Error::Config(format!("mode {mode} needs an example store")))
            }
        };
        let retrieval = encoder.as_ref().map(|e| CaptionRetrieval {
            store: store.expect("checked"),
            encoder: e,
        });
        tasks::prepare_captions(
            &self.data,
            split,
            &self.vocab,
            retrieval,
            cfg.train_config().exclude_self,
        )
    }
}

impl SentimentInputs {
    pub fn encoder(&self, cfg: &RunConfig) -> Result<SentimentEncoder> {
        let corpus: Vec<LabeledSentence<'_>> = self
            .data
            .split(Split::Train)
            .map(|e| LabeledSentence {
                id: e.id,
                tokens: &e.tokens,
                label: e.label,
            })
            .collect();
        SentimentEncoder::new(
            TargetEncoderConfig {
                mode: cfg.encoder(),
                lstm_dim: cfg.model.hidden_dim,
            },
            &corpus,
            Some(&self.table),
            self.contextual.as_ref(),
        )
    }

    pub fn model_config(
        &self,
        cfg: &RunConfig,
        mode: RetrievalMode,
    ) -> Result<SentimentModelConfig> {
        let encode_dim = if mode.uses_retrieval() {
            self.encoder(cfg)?.encode_dim()
        } else {
            cfg.model.hidden_dim
        };
        Ok(SentimentModelConfig {
            vocab_size: self.vocab.len(),
            embed_dim: self.table.dim(),
            hidden_dim: cfg.model.hidden_dim,
            attn_dim: cfg.model.attn_dim,
            retrieval: mode,
            encoder: cfg.encoder(),
            encode_dim,
            dropout: cfg.model.dropout,
            fine_tune_embeddings: cfg.model.fine_tune_embeddings,
        })
    }

    pub fn new_model(&self, cfg: &RunConfig, mode: RetrievalMode) -> Result<SentimentModel> {
        let seed = cfg.train_config().seed;
        let emb = self.vocab.embedding_matrix(&self.table, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SentimentModel::new(self.model_config(cfg, mode)?, emb, &mut rng)
    }

    pub fn prepare(
        &self,
        cfg: &RunConfig,
        mode: RetrievalMode,
        store: Option<&ExampleStore>,
        split: Split,
    ) -> Result<Vec<tasks::PreparedText>> {
        let encoder = match (mode.uses_retrieval(), store) {
            (false, _) => None,
            (true, Some(_)) => Some(self.encoder(cfg)?),
            (true, None) => {
                return Err(Error::Config(format!("mode {mode} needs an example store")))
            }
        };
        let retrieval = encoder.as_ref().map(|e| (store.expect("checked"), e));
        tasks::prepare_texts(
            &self.data,
            split,
            &self.vocab,
            retrieval,
            cfg.train_config().exclude_self,
        )
    }
}

/// Builds the example store over the training split and writes it along
/// with the vocabulary manifest.
pub fn build_index(cfg: &RunConfig) -> Result<PathBuf> {
    let inputs = load_inputs(cfg)?;
    let store = inputs.build_store(cfg)?;
    let path = cfg.index_path();
    store.save(&path)?;
    inputs.vocab().save(&cfg.run_dir().join("vocab.txt"))?;
    Ok(path)
}

/// The stored index when `mode` retrieves, `None` otherwise.
pub fn load_store(cfg: &RunConfig, mode: RetrievalMode) -> Result<Option<ExampleStore>> {
    if !mode.uses_retrieval() {
        return Ok(None);
    }
    let path = cfg.index_path();
    if !path.exists() {
        return Err(Error::Config(format!(
            "mode {mode} needs the index at {}; run `build-index` first",
            path.display()
        )));
    }
    ExampleStore::load(&path).map(Some)
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub mode: RetrievalMode,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub checkpoint: PathBuf,
    pub reports: Vec<EpochReport>,
}

fn train_with_checkpoints<T: train::Trainable>(
    cfg: &RunConfig,
    mode: RetrievalMode,
    task: &mut T,
    model_config: ModelConfig,
) -> Result<TrainOutcome> {
    let tc = cfg.train_config();
    let dir = cfg.mode_dir(mode);
    let outcome = train::train(task, &tc, |r, params| {
        if tc.save_every_epoch {
            let bytes = crate::checkpoint::encode(&model_config, params);
            fsutil::write_atomic(&dir.join(format!("epoch_{}.rafm", r.epoch)), &bytes)?;
        }
        Ok(())
    })?;
    let bytes = crate::checkpoint::encode(&model_config, &outcome.best_params);
    fsutil::write_atomic(&dir.join("best.rafm"), &bytes)?;
    fsutil::write_atomic(
        &dir.join("reports.jsonl"),
        train::reports_to_jsonl(&outcome.reports).as_bytes(),
    )?;
    fsutil::write_atomic(
        &dir.join("reports.txt"),
        train::reports_to_text(&outcome.reports).as_bytes(),
    )?;
    Ok(outcome)
}

/// Trains `mode` (the config's retrieval mode unless given) on already
/// loaded inputs and writes checkpoints and reports under the mode's dir.
pub fn train_mode(
    cfg: &RunConfig,
    inputs: &Inputs,
    store: Option<&ExampleStore>,
    mode: RetrievalMode,
) -> Result<(Model, TrainSummary)> {
    let tc = cfg.train_config();
    let (model, outcome) = match inputs {
        Inputs::Caption(c) => {
            let model = c.new_model(cfg, mode)?;
            let mc = ModelConfig::Caption(model.config.clone());
            let train = c.prepare(cfg, mode, store, Split::Train)?;
            let val = c.prepare(cfg, mode, store, Split::Val)?;
            let mut task = CaptionTask::new(
                model,
                c.vocab.clone(),
                train,
                val,
                tc.selection,
                tc.max_caption_len,
            )?;
            let outcome = train_with_checkpoints(cfg, mode, &mut task, mc)?;
            (Model::Caption(task.model), outcome)
        }
        Inputs::Sentiment(s) => {
            let model = s.new_model(cfg, mode)?;
            let mc = ModelConfig::Sentiment(model.config.clone());
            let train = s.prepare(cfg, mode, store, Split::Train)?;
            let val = s.prepare(cfg, mode, store, Split::Val)?;
            let mut task = SentimentTask::new(model, train, val)?;
            let outcome = train_with_checkpoints(cfg, mode, &mut task, mc)?;
            (Model::Sentiment(task.model), outcome)
        }
    };
    let summary = TrainSummary {
        mode,
        best_epoch: outcome.best_epoch,
        best_metric: outcome.best_metric,
        checkpoint: cfg.mode_dir(mode).join("best.rafm"),
        reports: outcome.reports,
    };
    Ok((model, summary))
}

pub fn train(cfg: &RunConfig) -> Result<TrainSummary> {
    let mode = cfg.model.retrieval;
    let inputs = load_inputs(cfg)?;
    let store = load_store(cfg, mode)?;
    inputs.vocab().save(&cfg.run_dir().join("vocab.txt"))?;
    Ok(train_mode(cfg, &inputs, store.as_ref(), mode)?.1)
}

/// Loads `<run_dir>/<mode>/best.rafm` and checks it fits the inputs.
pub fn load_checkpoint(cfg: &RunConfig, inputs: &Inputs) -> Result<Model> {
    let mode = cfg.model.retrieval;
    let path = cfg.mode_dir(mode).join("best.rafm");
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path));
    }
    let model = Model::load(&path)?;
    let (retrieval, vocab) = match model.config() {
        ModelConfig::Caption(c) => (c.retrieval, c.vocab_size),
        ModelConfig::Sentiment(c) => (c.retrieval, c.vocab_size),
    };
    let task_matches = matches!(
        (&model, inputs),
        (Model::Caption(_), Inputs::Caption(_)) | (Model::Sentiment(_), Inputs::Sentiment(_))
    );
    if !task_matches || retrieval != mode || vocab != inputs.vocab().len() {
        return Err(Error::Config(format!(
            "checkpoint {} was trained for another task, mode or vocabulary",
            path.display()
        )));
    }
    Ok(model)
}

/// Metrics of `model` on `split`: BLEU-1..4 or accuracy and F-score.
pub fn evaluate_model(
    cfg: &RunConfig,
    inputs: &Inputs,
    store: Option<&ExampleStore>,
    model: &Model,
    split: Split,
) -> Result<BTreeMap<String, f64>> {
    match (inputs, model) {
        (Inputs::Caption(c), Model::Caption(m)) => {
            let images = c.prepare(cfg, m.config.retrieval, store, split)?;
            tasks::caption_metrics(m, &images, &c.vocab, cfg.train_config().max_caption_len)
        }
        (Inputs::Sentiment(s), Model::Sentiment(m)) => {
            let texts = s.prepare(cfg, m.config.retrieval, store, split)?;
            tasks::sentiment_metrics(m, &texts)
        }
        _ => Err(Error::Config(
            "model and inputs are for different tasks".into(),
        )),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalSummary {
    pub mode: RetrievalMode,
    pub split: Split,
    pub metrics: BTreeMap<String, f64>,
}

pub fn evaluate(cfg: &RunConfig, split: Split) -> Result<EvalSummary> {
    let inputs = load_inputs(cfg)?;
    let model = load_checkpoint(cfg, &inputs)?;
    let mode = cfg.model.retrieval;
    let store = load_store(cfg, mode)?;
    let metrics = evaluate_model(cfg, &inputs, store.as_ref(), &model, split)?;
    let summary = EvalSummary {
        mode,
        split,
        metrics,
    };
    let json = serde_json::to_string_pretty(&summary)? + "\n";
    let name = format!("eval_{}.json", split_name(split));
    fsutil::write_atomic(&cfg.mode_dir(mode).join(name), json.as_bytes())?;
    Ok(summary)
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

fn caption_parts<'a>(
    inputs: &'a Inputs,
    model: &'a Model,
) -> Result<(&'a CaptionInputs, &'a CaptionModel)> {
    match (inputs, model) {
        (Inputs::Caption(c), Model::Caption(m)) => Ok((c, m)),
        _ => Err(Error::Config("this command needs a caption run".into())),
    }
}

/// Greedy captions for `split`; written as JSON lines to `out` if given.
pub fn generate(cfg: &RunConfig, split: Split, out: Option<&Path>) -> Result<Vec<Generation>> {
    let inputs = load_inputs(cfg)?;
    let model = load_checkpoint(cfg, &inputs)?;
    let store = load_store(cfg, cfg.model.retrieval)?;
    let (c, m) = caption_parts(&inputs, &model)?;
    let images = c.prepare(cfg, m.config.retrieval, store.as_ref(), split)?;
    let gens = tasks::generate_captions(m, &images, &c.vocab, cfg.train_config().max_caption_len)?;
    if let Some(out) = out {
        let mut text = String::new();
        for g in &gens {
            text.push_str(&serde_json::to_string(g)?);
            text.push('\n');
        }
        fsutil::write_atomic(out, text.as_bytes())?;
    }
    Ok(gens)
}

/// Attention weights of one example.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExampleTrace {
    pub id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neighbor_id: Option<u64>,
    pub trace: AttnTrace,
}

/// Caption runs record one step per emitted token (plus the final `<eos>`
/// step). Sentiment runs record a single step whose region weights are the
/// weights over the hidden states.
pub fn attention_traces(
    cfg: &RunConfig,
    inputs: &Inputs,
    store: Option<&ExampleStore>,
    model: &Model,
    split: Split,
    limit: Option<usize>,
) -> Result<Vec<ExampleTrace>> {
    let limit = limit.unwrap_or(usize::MAX);
    match (inputs, model) {
        (Inputs::Caption(c), Model::Caption(m)) => {
            let images = c.prepare(cfg, m.config.retrieval, store, split)?;
            let images = &images[..images.len().min(limit)];
            let gens =
                tasks::generate_captions(m, images, &c.vocab, cfg.train_config().max_caption_len)?;
            Ok(gens
                .into_iter()
                .map(|g| {
                    let mut tokens = c.vocab.decode(&g.tokens);
                    tokens.resize(g.attention.len(), "<eos>".to_string());
                    let steps = g
                        .attention
                        .into_iter()
                        .zip(tokens)
                        .map(|(a, token)| AttnStep {
                            token,
                            alpha_regions: a.regions,
                            alpha_image: a.image,
                            alpha_retrieved: a.retrieved,
                        })
                        .collect();
                    ExampleTrace {
                        id: g.id,
                        neighbor_id: g.neighbor_id,
                        trace: AttnTrace { steps },
                    }
                })
                .collect())
        }
        (Inputs::Sentiment(s), Model::Sentiment(m)) => {
            let texts = s.prepare(cfg, m.config.retrieval, store, split)?;
            texts
                .iter()
                .take(limit)
                .map(|t| {
                    let mut tape = crate::autodiff::Tape::new();
                    let r = t.retrieved.as_ref();
                    let out =
                        m.forward(&mut tape, &t.tokens, r.map(|r| r.encoding.as_slice()), None)?;
                    let (image, retrieved) = match out.alpha_hat {
                        Some(h) => (tape.value(h).data()[0], tape.value(h).data()[1]),
                        None => (1.0, 0.0),
                    };
                    Ok(ExampleTrace {
                        id: t.id,
                        neighbor_id: r.map(|r| r.neighbor),
                        trace: AttnTrace {
                            steps: vec![AttnStep {
                                token: s.vocab.decode(&t.tokens).join(" "),
                                alpha_regions: tape.value(out.alpha).data().to_vec(),
                                alpha_image: image,
                                alpha_retrieved: retrieved,
                            }],
                        },
                    })
                })
                .collect()
        }
        _ => Err(Error::Config(
            "model and inputs are for different tasks".into(),
        )),
    }
}

pub fn attend(
    cfg: &RunConfig,
    split: Split,
    limit: Option<usize>,
    out: Option<&Path>,
) -> Result<Vec<ExampleTrace>> {
    let inputs = load_inputs(cfg)?;
    let model = load_checkpoint(cfg, &inputs)?;
    let store = load_store(cfg, cfg.model.retrieval)?;
    let traces = attention_traces(cfg, &inputs, store.as_ref(), &model, split, limit)?;
    if let Some(out) = out {
        let mut text = String::new();
        for t in &traces {
            text.push_str(&serde_json::to_string(t)?);
            text.push('\n');
        }
        fsutil::write_atomic(out, text.as_bytes())?;
    }
    Ok(traces)
}

/// Trains every mode from the same seed and evaluates each on `split`.
pub fn ablate_loaded(
    cfg: &RunConfig,
    inputs: &Inputs,
    store: Option<&ExampleStore>,
    modes: &[RetrievalMode],
    split: Split,
) -> Result<AblationTable> {
    let table = train::run_ablation(modes, store, |mode| {
        let mut c = cfg.clone();
        c.model.retrieval = mode;
        let store = if mode.uses_retrieval() { store } else { None };
        let (model, _) = train_mode(&c, inputs, store, mode)?;
        evaluate_model(&c, inputs, store, &model, split)
    })?;
    let dir = cfg.run_dir();
    fsutil::write_atomic(&dir.join("ablation.jsonl"), table.to_jsonl().as_bytes())?;
    fsutil::write_atomic(&dir.join("ablation.txt"), table.to_text().as_bytes())?;
    Ok(table)
}

/// Test-split ablation over all four modes. A missing index is built first.
pub fn ablate(cfg: &RunConfig) -> Result<AblationTable> {
    let inputs = load_inputs(cfg)?;
    let path = cfg.index_path();
    let store = if path.exists() {
        ExampleStore::load(&path)?
    } else {
        let s = inputs.build_store(cfg)?;
        s.save(&path)?;
        s
    };
    inputs.vocab().save(&cfg.run_dir().join("vocab.txt"))?;
    ablate_loaded(cfg, &inputs, Some(&store), &RetrievalMode::ALL, Split::Test)
}

/// Reads a synth spec; `out_dir` in the file is relative to it.
pub fn load_synth_spec(path: &Path) -> Result<SynthSpec> {
    let mut spec = SynthSpec::from_json(&fsutil::read_to_string(path)?)?;
    if let Some(o) = &spec.out_dir {
        if o.is_relative() {
            spec.out_dir = Some(path.parent().unwrap_or(Path::new(".")).join(o));
        }
    }
    Ok(spec)
}

pub fn synth(spec: &SynthSpec, out_dir: &Path) -> Result<Vec<PathBuf>> {
    synth::generate(spec)?.write(out_dir)
}
