//! Mini-batch Adam training with plateau decay and early stopping.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::knn::ExampleStore;
use crate::models::RetrievalMode;
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamStore;

/// Validation quantity used to pick the best epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    Bleu1,
    Bleu2,
    Bleu3,
    Bleu4,
    Accuracy,
}

impl SelectionMetric {
    pub fn bleu_order(self) -> Option<usize> {
        match self {
            SelectionMetric::Bleu1 => Some(1),
            SelectionMetric::Bleu2 => Some(2),
            SelectionMetric::Bleu3 => Some(3),
            SelectionMetric::Bleu4 => Some(4),
            SelectionMetric::Accuracy => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SelectionMetric::Bleu1 => "bleu1",
            SelectionMetric::Bleu2 => "bleu2",
            SelectionMetric::Bleu3 => "bleu3",
            SelectionMetric::Bleu4 => "bleu4",
            SelectionMetric::Accuracy => "accuracy",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub patience_stop: usize,
    pub patience_decay: usize,
    pub shrink: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub selection: SelectionMetric,
    /// Drop the query's own example from retrieval on the training split.
    pub exclude_self: bool,
    /// Greedy decoding limit for caption validation and generation.
    pub max_caption_len: usize,
    /// Keep `epoch_<k>.rafm` for every epoch, not only `best.rafm`.
    pub save_every_epoch: bool,
}

impl TrainConfig {
    pub fn captioning() -> Self {
        TrainConfig {
            lr: 4e-4,
            batch_size: 32,
            patience_stop: 12,
            patience_decay: 5,
            shrink: 0.8,
            max_epochs: 100,
            seed: 0,
            selection: SelectionMetric::Bleu4,
            exclude_self: true,
            max_caption_len: 20,
            save_every_epoch: true,
        }
    }

    pub fn sentiment() -> Self {
        TrainConfig {
            lr: 1e-3,
            selection: SelectionMetric::Accuracy,
            ..Self::captioning()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| Error::ConfigField {
            pointer: format!("/train/{field}"),
            message,
        };
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(bad(
                "lr",
                format!("{} is not a positive learning rate", self.lr),
            ));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be at least 1".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(bad("shrink", format!("{} is outside (0, 1)", self.shrink)));
        }
        if self.patience_decay == 0 || self.patience_decay >= self.patience_stop {
            return Err(bad(
                "patience_decay",
                format!(
                    "{} must be positive and below patience_stop {}",
                    self.patience_decay, self.patience_stop
                ),
            ));
        }
        if self.max_epochs == 0 {
            return Err(bad("max_epochs", "must be at least 1".into()));
        }
        if self.max_caption_len == 0 {
            return Err(bad("max_caption_len", "must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of feeding one validation value to [`PlateauSchedule`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScheduleEvent {
    pub improved: bool,
    pub decayed: bool,
    pub stop: bool,
}

/// Tracks the best validation value. Every `patience_decay` consecutive
/// epochs without a strict improvement shrink the rate; `patience_stop`
/// such epochs end training. The counter is not reset by a decay.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauSchedule {
    lr: f64,
    shrink: f64,
    patience_decay: usize,
    patience_stop: usize,
    best: Option<f64>,
    since_best: usize,
}

impl PlateauSchedule {
    pub fn new(cfg: &TrainConfig) -> Self {
        PlateauSchedule {
            lr: cfg.lr,
            shrink: cfg.shrink,
            patience_decay: cfg.patience_decay,
            patience_stop: cfg.patience_stop,
            best: None,
            since_best: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn observe(&mut self, metric: f64) -> ScheduleEvent {
        let improved = match self.best {
            None => !metric.is_nan(),
            Some(b) => metric > b,
        };
        if improved {
            self.best = Some(metric);
            self.since_best = 0;
            return ScheduleEvent {
                improved: true,
                ..Default::default()
            };
        }
        self.since_best += 1;
        let decayed = self.since_best.is_multiple_of(self.patience_decay);
        if decayed {
            self.lr *= self.shrink;
        }
        ScheduleEvent {
            improved: false,
            decayed,
            stop: self.since_best >= self.patience_stop,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    /// Rate used for this epoch's updates.
    pub lr: f64,
    pub improved: bool,
    pub decayed: bool,
    pub stopped: bool,
}

impl EpochReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

pub fn reports_to_jsonl(reports: &[EpochReport]) -> String {
    reports.iter().map(|r| r.to_json() + "\n").collect()
}

pub fn reports_to_text(reports: &[EpochReport]) -> String {
    let mut s = format!(
        "{:>5}  {:>12}  {:>10}  {:>10}  {}\n",
        "epoch", "train_loss", "val", "lr", "events"
    );
    for r in reports {
        let mut ev = Vec::new();
        if r.improved {
            ev.push("best");
        }
        if r.decayed {
            ev.push("decay");
        }
        if r.stopped {
            ev.push("stop");
        }
        s.push_str(&format!(
            "{:>5}  {:>12.6}  {:>10.6}  {:>10.3e}  {}\n",
            r.epoch,
            r.train_loss,
            r.val_metric,
            r.lr,
            ev.join(",")
        ));
    }
    s
}

/// What the training loop needs from a model plus its data.
pub trait Trainable {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn train_len(&self) -> usize;
    /// Loss and parameter gradients of training item `index`.
    fn item_loss(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<(f64, Gradients)>;
    /// Higher is better.
    fn validation_metric(&mut self) -> Result<f64>;
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub reports: Vec<EpochReport>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub best_params: ParamStore,
}

/// Runs epochs until early stopping or `max_epochs`, then restores the
/// parameters of the best validation epoch. `on_epoch` sees each report
/// with the parameters as they stand after that epoch.
pub fn train<T, F>(task: &mut T, cfg: &TrainConfig, mut on_epoch: F) -> Result<TrainOutcome>
where
    T: Trainable + ?Sized,
    F: FnMut(&EpochReport, &ParamStore) -> Result<()>,
{
    cfg.validate()?;
    let n = task.train_len();
    if n == 0 {
        return Err(Error::Empty("training split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(task.params(), AdamConfig::default());
    let mut schedule = PlateauSchedule::new(cfg);
    let mut order: Vec<usize> = (0..n).collect();
    let mut reports = Vec::new();
    let mut best: Option<(usize, f64, ParamStore)> = None;

    for epoch in 1..=cfg.max_epochs {
        let lr = schedule.lr();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros_like(task.params());
            for &i in batch {
                let (loss, g) = task.item_loss(i, &mut rng)?;
                total += loss;
                grads.accumulate(&g)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(task.params_mut(), &grads, lr)?;
        }
        let metric = task.validation_metric()?;
        let event = schedule.observe(metric);
        if event.improved {
            best = Some((epoch, metric, task.params().clone()));
        }
        let report = EpochReport {
            epoch,
            train_loss: total / n as f64,
            val_metric: metric,
            lr,
            improved: event.improved,
            decayed: event.decayed,
            stopped: event.stop,
        };
        on_epoch(&report, task.params())?;
        reports.push(report);
        if event.stop {
            break;
        }
    }

    let (best_epoch, best_metric, best_params) = match best {
        Some(b) => b,
        None => (0, f64::NAN, task.params().clone()),
    };
    *task.params_mut() = best_params.clone();
    Ok(TrainOutcome {
        reports,
        best_epoch,
        best_metric,
        best_params,
    })
}

/// One row of an ablation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: RetrievalMode,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, mode: RetrievalMode) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
            .collect()
    }

    /// Aligned columns: mode, then every metric name in sorted order.
    pub fn to_text(&self) -> String {
        let mut names: Vec<&String> = self.rows.iter().flat_map(|r| r.metrics.keys()).collect();
        names.sort();
        names.dedup();
        let mut s = format!("{:<12}", "mode");
        for n in &names {
            s.push_str(&format!("  {n:>10}"));
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{:<12}", r.mode.as_str()));
            for n in &names {
                match r.metrics.get(*n) {
                    Some(v) => s.push_str(&format!("  {v:>10.4}")),
                    None => s.push_str(&format!("  {:>10}", "-")),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Trains and evaluates every mode in `modes` through `run_mode`. Modes
/// that retrieve need `store`.
pub fn run_ablation<F>(
    modes: &[RetrievalMode],
    store: Option<&ExampleStore>,
    mut run_mode: F,
) -> Result<AblationTable>
where
    F: FnMut(RetrievalMode) -> Result<BTreeMap<String, f64>>,
{
    if modes.is_empty() {
        return Err(Error::Empty("ablation modes"));
    }
    if let Some(m) = modes.iter().find(|m| m.uses_retrieval()) {
        if store.is_none() {
            return Err(Error::Config(format!("mode {m} needs an example store")));
        }
    }
    let mut rows = Vec::with_capacity(modes.len());
    for &mode in modes {
        rows.push(AblationRow {
            mode,
            metrics: run_mode(mode)?,
        });
    }
    Ok(AblationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    /// Single scalar parameter; validation values come from a script.
    struct Scripted {
        params: ParamStore,
        script: Vec<f64>,
        calls: usize,
    }

    impl Scripted {
        fn new(script: Vec<f64>) -> Self {
            let mut params = ParamStore::new();
            params.insert("w", Tensor::scalar(0.0)).unwrap();
            Scripted {
                params,
                script,
                calls: 0,
            }
        }
    }

    impl Trainable for Scripted {
        fn params(&self) -> &ParamStore {
            &self.params
        }
        fn params_mut(&mut self) -> &mut ParamStore {
            &mut self.params
        }
        fn train_len(&self) -> usize {
            3
        }
        fn item_loss(&self, _: usize, _: &mut ChaCha8Rng) -> Result<(f64, Gradients)> {
            Ok((1.0, Gradients::from_tensors(vec![Tensor::scalar(1.0)])))
        }
        fn validation_metric(&mut self) -> Result<f64> {
            let v = self.script[self.calls.min(self.script.len() - 1)];
            self.calls += 1;
            Ok(v)
        }
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            max_epochs: 50,
            ..TrainConfig::sentiment()
        }
    }

    #[test]
    fn improving_metric_never_decays() {
        let mut t = Scripted::new((0..20).map(f64::from).collect());
        let out = train(
            &mut t,
            &TrainConfig {
                max_epochs: 20,
                ..cfg()
            },
            |_, _| Ok(()),
        )
        .unwrap();
        assert_eq!(out.reports.len(), 20);
        assert!(out
            .reports
            .iter()
            .all(|r| r.lr == 1e-3 && !r.decayed && !r.stopped));
        assert_eq!(out.best_epoch, 20);
    }

    #[test]
    fn frozen_metric_follows_oracle_schedule() {
        let mut t = Scripted::new(vec![0.5]);
        let out = train(&mut t, &cfg(), |_, _| Ok(())).unwrap();
        // epoch 1 sets the best; epochs 2.. are non-improving
        let decays: Vec<usize> = out
            .reports
            .iter()
            .filter(|r| r.decayed)
            .map(|r| r.epoch)
            .collect();
        assert_eq!(decays, vec![6, 11]);
        assert_eq!(out.reports.len(), 13);
        assert!(out.reports.last().unwrap().stopped);
        for r in &out.reports {
            let k = (r.epoch - 1).saturating_sub(1) / 5;
            assert_eq!(
                r.lr,
                (0..k).fold(1e-3, |lr, _| lr * 0.8),
                "epoch {}",
                r.epoch
            );
        }
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn best_parameters_are_restored() {
        let mut t = Scripted::new(vec![0.1, 0.9, 0.2, 0.3]);
        let mut seen = Vec::new();
        let out = train(
            &mut t,
            &TrainConfig {
                max_epochs: 4,
                ..cfg()
            },
            |_, p| {
                seen.push(p.by_name("w").unwrap().item());
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(out.best_epoch, 2);
        assert_eq!(t.params.by_name("w").unwrap().item(), seen[1]);
    }

    #[test]
    fn ties_do_not_count_as_improvement() {
        let mut s = PlateauSchedule::new(&cfg());
        assert!(s.observe(0.5).improved);
        assert!(!s.observe(0.5).improved);
        assert!(s.observe(0.5000001).improved);
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let c = TrainConfig {
            shrink: 1.0,
            ..cfg()
        };
        match c.validate() {
            Err(Error::ConfigField { pointer, .. }) => assert_eq!(pointer, "/train/shrink"),
            other => panic!("{other:?}"),
        }
        let c = TrainConfig {
            patience_decay: 12,
            ..cfg()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn ablation_without_store_is_config_error() {
        let r = run_ablation(&[RetrievalMode::Off, RetrievalMode::M0Init], None, |_| {
            Ok(BTreeMap::new())
        });
        assert!(matches!(r, Err(Error::Config(_))));
        let t = run_ablation(&[RetrievalMode::Off], None, |_| {
            Ok(BTreeMap::from([("accuracy".to_string(), 0.75)]))
        })
        .unwrap();
        assert!(t.to_text().contains("0.7500"));
        assert_eq!(t.to_jsonl().lines().count(), 1);
    }
}
