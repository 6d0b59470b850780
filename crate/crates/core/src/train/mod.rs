//! Fold protocol, optimisation loop, evaluation and ablation harnesses.
//!
//! Every fold trains a fresh model with Adam on its training portion, holds
//! out a seeded share of that portion for validation, reduces the learning
//! rate when the validation loss plateaus, stops early when it stops
//! improving, and reports the best-validation snapshot on the test fold.

mod ablation;
mod metrics;
mod schedule;

pub use ablation::{
    default_grid, parse_grid, rows_to_tsv, run_ablation, AblationKind, AblationRow, GridPoint,
};
pub use metrics::{ConfusionMatrix, Metrics};
pub use schedule::{EarlyStopping, PlateauScheduler, Verdict};

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::hin::{build_hin, drop_cues, Cue};
use crate::infusion::WalkAggregation;
use crate::model::{objective, prepare_document, Batch, Model, ModelConfig, PreparedDoc, Readout};
use crate::seed;
use crate::tensor::{Adam, AdamConfig, Tape};

pub const THREADS_ENV: &str = "KCD_THREADS";

/// How documents are assigned to folds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldScheme {
    /// The `fold` field of each document.
    #[default]
    Corpus,
    /// A seeded shuffle dealt round-robin into `k_folds` folds.
    Kfold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Weight of the squared L2 norm of all parameters in the loss.
    pub l2: f64,
    pub scheduler_patience: usize,
    pub scheduler_factor: f64,
    pub early_stop: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub readout: Readout,
    pub walk_aggregation: WalkAggregation,
    pub leaky_slope: f64,
    /// Hops per knowledge walk.
    pub walk_length: usize,
    pub walks_per_entity: usize,
    pub seed: u64,
    pub fold_scheme: FoldScheme,
    pub k_folds: usize,
    /// Test folds to run; empty means all.
    pub folds: Vec<usize>,
    pub val_fraction: f64,
    /// Share of each fold's training portion actually used for training.
    pub data_fraction: f64,
    /// Probability of removing each edge of a cue relation.
    pub cue_removal: BTreeMap<Cue, f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            batch_size: 16,
            lr: 1e-3,
            l2: 1e-4,
            scheduler_patience: 20,
            scheduler_factor: 0.1,
            early_stop: 40,
            hidden_dim: 512,
            layers: 2,
            heads: 8,
            dropout: 0.6,
            readout: Readout::PA,
            walk_aggregation: WalkAggregation::Attention,
            leaky_slope: 0.01,
            walk_length: 8,
            walks_per_entity: 1,
            seed: 0,
            fold_scheme: FoldScheme::Corpus,
            k_folds: 10,
            folds: Vec::new(),
            val_fraction: 0.1,
            data_fraction: 1.0,
            cue_removal: BTreeMap::new(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("walk_length", self.walk_length),
            ("walks_per_entity", self.walks_per_entity),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad(format!("l2 must be non-negative, got {}", self.l2));
        }
        if !(self.scheduler_factor > 0.0 && self.scheduler_factor < 1.0) {
            return bad(format!(
                "scheduler_factor must lie in (0, 1), got {}",
                self.scheduler_factor
            ));
        }
        if self.early_stop == 0 {
            return bad("early_stop must be positive".into());
        }
        if self.fold_scheme == FoldScheme::Kfold && self.k_folds < 2 {
            return bad("k_folds must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!(
                "val_fraction must lie in [0, 1), got {}",
                self.val_fraction
            ));
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return bad(format!(
                "data_fraction must lie in (0, 1], got {}",
                self.data_fraction
            ));
        }
        for (cue, p) in &self.cue_removal {
            if !(0.0..=1.0).contains(p) {
                return bad(format!("cue_removal for {cue} must lie in [0, 1], got {p}"));
            }
        }
        // the remaining checks need the input width; any divisor-compatible one will do here
        self.model_config(self.heads.max(1), 2).validate()
    }

    pub fn model_config(&self, input_dim: usize, num_classes: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
            heads: self.heads,
            dropout: self.dropout,
            readout: self.readout,
            walk_aggregation: self.walk_aggregation,
            leaky_slope: self.leaky_slope,
            num_classes,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Worker count from `KCD_THREADS`, defaulting to the available cores.
pub fn thread_limit() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs `f(0..jobs)` on at most `threads` workers; results keep job order.
pub fn par_map<T, F>(jobs: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    if threads <= 1 || jobs <= 1 {
        return (0..jobs).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..jobs).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.min(jobs) {
            s.spawn(|| loop {
                let job = next.fetch_add(1, Ordering::Relaxed);
                if job >= jobs {
                    break;
                }
                let out = f(job);
                slots.lock().expect("worker panicked")[job] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

/// Fold id of every document, in corpus order.
pub fn assign_folds(data: &Dataset, cfg: &TrainConfig) -> Vec<usize> {
    match cfg.fold_scheme {
        FoldScheme::Corpus => data.corpus.docs.iter().map(|d| d.fold).collect(),
        FoldScheme::Kfold => {
            let mut order: Vec<usize> = (0..data.corpus.len()).collect();
            order.shuffle(&mut seed::rng(cfg.seed, "kfold"));
            let mut folds = vec![0; order.len()];
            for (pos, &doc) in order.iter().enumerate() {
                folds[doc] = pos % cfg.k_folds;
            }
            folds
        }
    }
}

/// Document indices of one fold's training, validation and test portions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldSplit {
    pub fn new(folds: &[usize], fold: usize, cfg: &TrainConfig) -> Self {
        let test: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] == fold).collect();
        let mut rest: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] != fold).collect();
        rest.shuffle(&mut seed::rng(cfg.seed, &format!("val:{fold}")));
        let mut n_val = (cfg.val_fraction * rest.len() as f64).round() as usize;
        if cfg.val_fraction > 0.0 && rest.len() >= 2 {
            n_val = n_val.clamp(1, rest.len() - 1);
        }
        let mut val = rest[..n_val].to_vec();
        let mut train = rest[n_val..].to_vec();
        if cfg.data_fraction < 1.0 {
            let keep = ((cfg.data_fraction * train.len() as f64).ceil() as usize).max(1);
            train.shuffle(&mut seed::rng(cfg.seed, &format!("fraction:{fold}")));
            train.truncate(keep);
        }
        train.sort_unstable();
        val.sort_unstable();
        FoldSplit {
            fold,
            train,
            val,
            test,
        }
    }

    /// Rejects any document id shared between test and training or
    /// validation.
    pub fn check_disjoint(&self, docs: &[PreparedDoc]) -> Result<()> {
        let test: HashSet<&str> = self.test.iter().map(|&i| docs[i].doc_id()).collect();
        for &i in self.train.iter().chain(&self.val) {
            if test.contains(docs[i].doc_id()) {
                return Err(Error::Invalid(format!(
                    "fold {}: document `{}` is in both the test and training portions",
                    self.fold,
                    docs[i].doc_id()
                )));
            }
        }
        Ok(())
    }
}

/// Builds every document's graph, applying the configured cue removal.
pub fn prepare_corpus(data: &Dataset, cfg: &TrainConfig) -> Result<Vec<PreparedDoc>> {
    let emb = data.embeddings();
    let drop_seed = seed::derive(cfg.seed, "cue-removal");
    data.corpus
        .docs
        .iter()
        .map(|doc| {
            let mut graph = build_hin(doc, &data.topics, &data.transe.entities)?;
            for (&cue, &p) in &cfg.cue_removal {
                graph = drop_cues(&graph, cue, p, drop_seed)?;
            }
            prepare_document(doc, graph, &emb)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training objective over the epoch's batches, dropout active.
    pub train_loss: f64,
    /// Mean validation cross entropy without dropout.
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_docs: usize,
    pub val_docs: usize,
    pub test_docs: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train: Metrics,
    pub test: Metrics,
    pub loss_curve: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub seed: u64,
    /// Mean test accuracy over folds.
    pub accuracy: f64,
    /// Mean test macro-F1 over folds.
    pub macro_f1: f64,
    pub folds: Vec<FoldReport>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per fold and epoch.
    pub fn loss_curve_tsv(&self) -> String {
        let mut out = String::from("fold\tepoch\ttrain_loss\tval_loss\tlr\n");
        for f in &self.folds {
            for e in &f.loss_curve {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\n",
                    f.fold, e.epoch, e.train_loss, e.val_loss, e.lr
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub threads: usize,
    /// Where to save each fold's selected model as `fold{k}.ckpt`.
    pub checkpoint_dir: Option<PathBuf>,
}

fn batches<'a>(docs: &'a [PreparedDoc], idx: &[usize], size: usize) -> Result<Vec<Batch>> {
    idx.chunks(size)
        .map(|c| {
            let refs: Vec<&'a PreparedDoc> = c.iter().map(|&i| &docs[i]).collect();
            Batch::new(&refs)
        })
        .collect()
}

/// Mean cross entropy over `batches`, without dropout or penalty.
fn mean_cross_entropy(model: &Model, batches: &[Batch]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for b in batches {
        let mut tape = Tape::with_params(&model.params);
        let logits = model.forward(&mut tape, b, None)?;
        let ce = tape.cross_entropy(logits, &b.labels)?;
        total += tape.scalar(ce) * b.len() as f64;
        count += b.len();
    }
    Ok(total / count.max(1) as f64)
}

/// Accuracy and macro-F1 of argmax predictions on `idx`.
pub fn evaluate(model: &Model, docs: &[PreparedDoc], idx: &[usize]) -> Result<Metrics> {
    let mut truth = Vec::with_capacity(idx.len());
    let mut predicted = Vec::with_capacity(idx.len());
    for b in batches(docs, idx, 64)? {
        truth.extend_from_slice(&b.labels);
        predicted.extend(model.predict(&b)?);
    }
    Metrics::compute(&truth, &predicted, model.config.num_classes)
}

/// Trains one fold and returns its report together with the selected model.
pub fn train_fold(
    docs: &[PreparedDoc],
    split: &FoldSplit,
    cfg: &TrainConfig,
    model_config: ModelConfig,
) -> Result<(FoldReport, Model)> {
    split.check_disjoint(docs)?;
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::Invalid(format!(
            "fold {} has {} training and {} test documents",
            split.fold,
            split.train.len(),
            split.test.len()
        )));
    }
    let fold = split.fold;
    let mut model = Model::new(
        model_config,
        seed::derive(cfg.seed, &format!("init:{fold}")),
    )?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &model.params,
    )?;
    let mut scheduler = PlateauScheduler::new(cfg.scheduler_patience, cfg.scheduler_factor);
    let mut stopper = EarlyStopping::new(cfg.early_stop);
    let mut shuffle = seed::rng(cfg.seed, &format!("shuffle:{fold}"));
    let mut dropout = seed::rng(cfg.seed, &format!("dropout:{fold}"));
    let val_batches = batches(docs, &split.val, cfg.batch_size.max(64))?;
    let mut order = split.train.clone();
    let mut best = model.params.clone();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        for batch in batches(docs, &order, cfg.batch_size)? {
            let grads = {
                let mut tape = Tape::with_params(&model.params);
                let logits = model.forward(&mut tape, &batch, Some(&mut dropout))?;
                let loss = objective(&mut tape, logits, &batch.labels, cfg.l2)?;
                loss_sum += tape.scalar(loss) * batch.len() as f64;
                tape.backward(loss)?
            };
            adam.step(&mut model.params, &grads);
        }
        let train_loss = loss_sum / order.len() as f64;
        let val_loss = if val_batches.is_empty() {
            train_loss
        } else {
            mean_cross_entropy(&model, &val_batches)?
        };
        if !val_loss.is_finite() {
            return Err(Error::Invalid(format!(
                "fold {fold}: loss diverged at epoch {epoch}"
            )));
        }
        curve.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr: adam.lr(),
        });
        tracing::debug!(fold, epoch, train_loss, val_loss, lr = adam.lr(), "epoch");
        let verdict = stopper.observe(epoch, val_loss);
        if verdict == Verdict::Improved {
            best.clone_from(&model.params);
        }
        adam.set_lr(scheduler.step(val_loss, adam.lr()))?;
        if verdict == Verdict::Stop {
            tracing::info!(fold, epoch, "early stop");
            break;
        }
    }
    model.params = best;
    let report = FoldReport {
        fold,
        train_docs: split.train.len(),
        val_docs: split.val.len(),
        test_docs: split.test.len(),
        epochs_run: curve.len(),
        best_epoch: stopper.best_epoch().unwrap_or(0),
        best_val_loss: stopper.best(),
        train: evaluate(&model, docs, &split.train)?,
        test: evaluate(&model, docs, &split.test)?,
        loss_curve: curve,
    };
    tracing::info!(
        fold,
        accuracy = report.test.accuracy,
        macro_f1 = report.test.macro_f1,
        best_epoch = report.best_epoch,
        "fold done"
    );
    Ok((report, model))
}

/// Cross-validated training over the configured folds.
pub fn train(data: &Dataset, cfg: &TrainConfig, opts: &TrainOptions) -> Result<EvalReport> {
    cfg.validate()?;
    if data.corpus.is_empty() {
        return Err(Error::Invalid("corpus is empty".into()));
    }
    let docs = prepare_corpus(data, cfg)?;
    train_prepared(data, &docs, cfg, opts)
}

fn train_prepared(
    data: &Dataset,
    docs: &[PreparedDoc],
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<EvalReport> {
    let num_classes = data.corpus.num_classes().max(2);
    let model_config = cfg.model_config(data.dim(), num_classes);
    model_config.validate()?;
    let folds = assign_folds(data, cfg);
    let present: BTreeSet<usize> = folds.iter().copied().collect();
    let run: Vec<usize> = if cfg.folds.is_empty() {
        present.iter().copied().collect()
    } else {
        if let Some(f) = cfg.folds.iter().find(|f| !present.contains(f)) {
            return Err(Error::Config(format!("fold {f} has no documents")));
        }
        cfg.folds.clone()
    };
    if run.len() < 2 && cfg.folds.is_empty() {
        return Err(Error::Invalid(
            "documents span a single fold; nothing to train on".into(),
        ));
    }
    let mut warnings = Vec::new();
    let splits: Vec<FoldSplit> = run
        .iter()
        .map(|&f| FoldSplit::new(&folds, f, cfg))
        .collect();
    for s in &splits {
        let seen: BTreeSet<usize> = s.train.iter().map(|&i| docs[i].label()).collect();
        for c in (0..num_classes).filter(|c| !seen.contains(c)) {
            let msg = format!("fold {}: class {c} absent from the training split", s.fold);
            tracing::warn!("{msg}");
            warnings.push(msg);
        }
    }
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let reports = par_map(splits.len(), opts.threads, |i| {
        let (report, model) = train_fold(docs, &splits[i], cfg, model_config)?;
        if let Some(dir) = &opts.checkpoint_dir {
            model.save(&dir.join(format!("fold{}.ckpt", report.fold)))?;
        }
        Ok(report)
    })?;
    let n = reports.len() as f64;
    Ok(EvalReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        accuracy: reports.iter().map(|r| r.test.accuracy).sum::<f64>() / n,
        macro_f1: reports.iter().map(|r| r.test.macro_f1).sum::<f64>() / n,
        folds: reports,
        warnings,
    })
}

/// Scores a saved model on one fold's test documents, or on every document.
pub fn evaluate_dataset(
    model: &Model,
    data: &Dataset,
    cfg: &TrainConfig,
    fold: Option<usize>,
) -> Result<Metrics> {
    if model.config.input_dim != data.dim() {
        return Err(Error::Invalid(format!(
            "model expects inputs of width {}, data has {}",
            model.config.input_dim,
            data.dim()
        )));
    }
    let docs = prepare_corpus(data, cfg)?;
    let idx: Vec<usize> = match fold {
        Some(f) => {
            let folds = assign_folds(data, cfg);
            (0..docs.len()).filter(|&i| folds[i] == f).collect()
        }
        None => (0..docs.len()).collect(),
    };
    evaluate(model, &docs, &idx)
}
