//! Training loops, validation-based model selection and evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, DatasetSplit, LabelRegistry, VulnRecord};
use crate::engine::{clamp_cvss, severity_band};
use crate::metrics::{
    self, argmax, confusion_matrix, multiclass_accuracy, render_aligned, ConfusionMatrix, MetricsError,
};
use crate::model::{
    forward_classify, forward_detect, forward_regress, init_model, loss_and_grads, Checkpoint, Example, Gradients,
    ModelConfig, ModelError, ModelParams, ParamGroup, Target, TaskSpec,
};
use crate::moo::{
    mgda_step, weighted_sum_step, MooError, MtlLayout, MultiTaskObjective, Optimizer, TaskGradients, TrainStepConfig,
};
use crate::par::par_map;
use crate::tokenizer::{TokenizerError, Vocab};

/// Examples per gradient chunk. Chunking is fixed (not tied to the thread
/// count) so results do not depend on the machine.
const CHUNK: usize = 2;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0} partition is empty")]
    EmptyPartition(&'static str),
    #[error("record {id}: {problem}")]
    Label { id: String, problem: String },
    #[error("tokenizer hash {found} does not match checkpoint ({expected})")]
    VocabMismatch { expected: String, found: String },
    #[error("loss diverged at epoch {epoch}, step {step}")]
    Diverged {
        epoch: usize,
        step: u64,
        last_good: Box<TrainedModel>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Moo(#[from] MooError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Multi-task classifier trained with multiple-gradient descent.
    Moo,
    /// Multi-task classifier on the fixed `W1·L1 + W2·L2` objective.
    WeightedSum,
    Detect,
    Regress,
}

impl TrainMode {
    pub fn task(self) -> TaskSpec {
        match self {
            TrainMode::Moo | TrainMode::WeightedSum => TaskSpec::Multitask,
            TrainMode::Detect => TaskSpec::Detect,
            TrainMode::Regress => TaskSpec::Regress,
        }
    }

    pub fn selection_metric(self) -> &'static str {
        match self {
            TrainMode::Moo | TrainMode::WeightedSum => "mean_accuracy",
            TrainMode::Detect => "accuracy",
            TrainMode::Regress => "mse",
        }
    }

    pub fn higher_is_better(self) -> bool {
        self != TrainMode::Regress
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many epochs without validation improvement.
    pub patience: Option<usize>,
    pub seed: u64,
    pub step: TrainStepConfig,
}

impl TrainConfig {
    /// Settings used for the desk-scale synthetic corpus.
    pub fn desk() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            patience: Some(5),
            seed: 42,
            step: TrainStepConfig {
                eta: 3e-3,
                ..TrainStepConfig::default()
            },
        }
    }

    /// Fine-tuning settings for a pretrained-size encoder: constant 2e-5.
    pub fn paper() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            patience: None,
            seed: 42,
            step: TrainStepConfig {
                eta: 2e-5,
                ..TrainStepConfig::default()
            },
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss per task over the epoch's steps.
    pub train_loss: Vec<f64>,
    /// Mean min-norm weights over the epoch (MGDA runs only).
    pub mean_alpha: Option<[f64; 2]>,
    pub val_metric: f64,
    pub val: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    EarlyStopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub step: TrainStepConfig,
    pub selection_metric: String,
    pub higher_is_better: bool,
    pub best_epoch: Option<usize>,
    pub best_metric: Option<f64>,
    pub stop: StopReason,
    pub history: Vec<EpochRecord>,
}

impl TrainRun {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.history {
            out.push_str(&serde_json::to_string(e).expect("epoch record serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub checkpoint: Checkpoint,
    pub run: TrainRun,
}

/// Encode records into examples for `task`. Multi-task and regression
/// examples require the corresponding labels.
pub fn build_examples(
    records: &[VulnRecord],
    vocab: &Vocab,
    registry: &LabelRegistry,
    task: TaskSpec,
    max_seq_len: usize,
) -> Result<Vec<Example>, TrainError> {
    records
        .iter()
        .map(|r| {
            let problem = |p: &str| TrainError::Label {
                id: r.id.clone(),
                problem: p.to_string(),
            };
            let target = match task {
                TaskSpec::Multitask => {
                    let id = r.cwe_id.as_deref().ok_or_else(|| problem("missing CWE-ID"))?;
                    let ty = r.cwe_type.as_deref().ok_or_else(|| problem("missing CWE-Type"))?;
                    Target::Multitask {
                        cwe_id: registry
                            .id_index(id)
                            .ok_or_else(|| problem(&format!("CWE-ID {id} not in registry")))?,
                        cwe_type: registry
                            .type_index(ty)
                            .ok_or_else(|| problem(&format!("CWE-Type {ty} not in registry")))?,
                    }
                }
                TaskSpec::Detect => Target::Detect(r.vulnerable),
                TaskSpec::Regress => Target::Regress(r.cvss.ok_or_else(|| problem("missing CVSS"))?),
            };
            Ok(Example {
                seq: vocab.encode(&r.code, task.mode(), max_seq_len),
                target,
            })
        })
        .collect()
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Batch-mean losses and gradients, computed chunk-parallel. With a dropout
/// seed, chunk `c` samples its masks from a stream derived from
/// `(seed, c)`.
pub fn batch_gradients(
    params: &ModelParams,
    batch: &[Example],
    task: TaskSpec,
    dropout_seed: Option<u64>,
) -> Result<Gradients, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let chunks: Vec<&[Example]> = batch.chunks(CHUNK).collect();
    let parts = par_map(&chunks, |c, chunk| {
        let mut rng = dropout_seed.map(|s| ChaCha8Rng::seed_from_u64(mix_seed(s, c as u64, 0)));
        loss_and_grads(params, chunk, task, rng.as_mut()).map(|g| (chunk.len(), g))
    });
    let n = batch.len() as f64;
    let mut acc: Option<Gradients> = None;
    for part in parts {
        let (len, g) = part?;
        let w = len as f64 / n;
        acc = Some(match (acc, g) {
            (None, g) => scale(g, w),
            (Some(a), g) => add_scaled(a, g, w),
        });
    }
    Ok(acc.expect("non-empty batch"))
}

fn scale(g: Gradients, w: f64) -> Gradients {
    match g {
        Gradients::Multitask {
            loss_id,
            loss_type,
            mut grad_id,
            mut grad_type,
        } => {
            grad_id.iter_mut().for_each(|v| *v *= w);
            grad_type.iter_mut().for_each(|v| *v *= w);
            Gradients::Multitask {
                loss_id: loss_id * w,
                loss_type: loss_type * w,
                grad_id,
                grad_type,
            }
        }
        Gradients::Single { loss, mut grad } => {
            grad.iter_mut().for_each(|v| *v *= w);
            Gradients::Single { loss: loss * w, grad }
        }
    }
}

fn axpy(dst: &mut [f64], src: &[f64], w: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += w * s;
    }
}

fn add_scaled(acc: Gradients, g: Gradients, w: f64) -> Gradients {
    match (acc, g) {
        (
            Gradients::Multitask {
                loss_id,
                loss_type,
                mut grad_id,
                mut grad_type,
            },
            Gradients::Multitask {
                loss_id: l1,
                loss_type: l2,
                grad_id: g1,
                grad_type: g2,
            },
        ) => {
            axpy(&mut grad_id, &g1, w);
            axpy(&mut grad_type, &g2, w);
            Gradients::Multitask {
                loss_id: loss_id + w * l1,
                loss_type: loss_type + w * l2,
                grad_id,
                grad_type,
            }
        }
        (Gradients::Single { loss, mut grad }, Gradients::Single { loss: l, grad: g }) => {
            axpy(&mut grad, &g, w);
            Gradients::Single {
                loss: loss + w * l,
                grad,
            }
        }
        _ => unreachable!("one task per batch"),
    }
}

/// One mini-batch of the multi-task classifier as a two-task objective.
struct BatchObjective<'a> {
    scratch: ModelParams,
    batch: &'a [Example],
    dropout_seed: Option<u64>,
}

impl MultiTaskObjective for BatchObjective<'_> {
    fn layout(&self) -> MtlLayout {
        let l = &self.scratch.layout;
        MtlLayout {
            shared: l.group(ParamGroup::Shared),
            head1: l.group(ParamGroup::HeadId),
            head2: l.group(ParamGroup::HeadType),
        }
    }

    fn task_gradients(&mut self, params: &[f64]) -> Result<TaskGradients, MooError> {
        self.scratch.data.copy_from_slice(params);
        let g = batch_gradients(&self.scratch, self.batch, TaskSpec::Multitask, self.dropout_seed)
            .map_err(|e| MooError::Objective(e.to_string()))?;
        Ok(g.task_gradients(&self.scratch).expect("multitask gradients"))
    }
}

/// Predicted (CWE-ID index, CWE-Type index) per example.
pub fn predict_classes(params: &ModelParams, examples: &[Example]) -> Result<Vec<(usize, usize)>, ModelError> {
    par_map(examples, |_, ex| {
        forward_classify(params, &ex.seq).map(|o| (argmax(&o.logits_id), argmax(&o.logits_type)))
    })
    .into_iter()
    .collect()
}

pub fn predict_vulnerable(params: &ModelParams, examples: &[Example]) -> Result<Vec<f64>, ModelError> {
    par_map(examples, |_, ex| {
        forward_detect(params, &ex.seq).map(|o| o.p_vulnerable)
    })
    .into_iter()
    .collect()
}

/// Clamped severity scores.
pub fn predict_severity(params: &ModelParams, examples: &[Example]) -> Result<Vec<f64>, ModelError> {
    par_map(examples, |_, ex| forward_regress(params, &ex.seq).map(clamp_cvss))
        .into_iter()
        .collect()
}

fn validation_metrics(
    mode: TrainMode,
    params: &ModelParams,
    val: &[Example],
) -> Result<(f64, BTreeMap<String, f64>), TrainError> {
    let mut m = BTreeMap::new();
    let metric = match mode {
        TrainMode::Moo | TrainMode::WeightedSum => {
            let preds = predict_classes(params, val)?;
            let (mut ids, mut types) = (Vec::new(), Vec::new());
            for ex in val {
                if let Target::Multitask { cwe_id, cwe_type } = ex.target {
                    ids.push(cwe_id);
                    types.push(cwe_type);
                }
            }
            let p_id: Vec<usize> = preds.iter().map(|p| p.0).collect();
            let p_ty: Vec<usize> = preds.iter().map(|p| p.1).collect();
            let a1 = multiclass_accuracy(&p_id, &ids)?;
            let a2 = multiclass_accuracy(&p_ty, &types)?;
            m.insert("accuracy_id".into(), a1);
            m.insert("accuracy_type".into(), a2);
            (a1 + a2) / 2.0
        }
        TrainMode::Detect => {
            let preds: Vec<bool> = predict_vulnerable(params, val)?.iter().map(|&p| p >= 0.5).collect();
            let labels: Vec<bool> = val.iter().map(|e| matches!(e.target, Target::Detect(true))).collect();
            multiclass_accuracy(&preds, &labels)?
        }
        TrainMode::Regress => {
            let preds = predict_severity(params, val)?;
            let y = regress_targets(val);
            m.insert("mae".into(), metrics::mae(&preds, &y)?);
            metrics::mse(&preds, &y)?
        }
    };
    m.insert(mode.selection_metric().into(), metric);
    Ok((metric, m))
}

fn regress_targets(examples: &[Example]) -> Vec<f64> {
    examples
        .iter()
        .map(|e| match e.target {
            Target::Regress(y) => y,
            _ => f64::NAN,
        })
        .collect()
}

fn single_task_step(
    params: &mut ModelParams,
    batch: &[Example],
    task: TaskSpec,
    head: ParamGroup,
    optimizer: &mut Optimizer,
    dropout_seed: u64,
) -> Result<f64, TrainError> {
    let g = batch_gradients(params, batch, task, Some(dropout_seed))?;
    let Gradients::Single { loss, grad } = g else {
        unreachable!("single-task gradients")
    };
    if !loss.is_finite() || !grad.iter().all(|v| v.is_finite()) {
        return Err(MooError::NonFinite {
            what: "single-task gradient",
        }
        .into());
    }
    optimizer.begin_step();
    for group in [ParamGroup::Shared, head] {
        let r = params.layout.group(group);
        optimizer.apply(&mut params.data, r.clone(), &grad[r]);
    }
    Ok(loss)
}

/// Core loop shared by every mode: seeded shuffling, per-epoch validation,
/// best-epoch retention and early stopping.
#[allow(clippy::too_many_arguments)]
fn run_training(
    mode: TrainMode,
    mut params: ModelParams,
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
    registry: &LabelRegistry,
    vocab_hash: &str,
) -> Result<TrainedModel, TrainError> {
    if cfg.batch_size == 0 {
        return Err(MooError::InvalidConfig("batch_size must be >= 1".into()).into());
    }
    let task = mode.task();
    let mut optimizer = Optimizer::new(cfg.step, params.data.len())?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let better = |a: f64, b: f64| if mode.higher_is_better() { a > b } else { a < b };

    let make = |params: &ModelParams| Checkpoint::new(task, params.clone(), registry.clone(), vocab_hash.to_string());
    let mut run = TrainRun {
        mode,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        step: cfg.step,
        selection_metric: mode.selection_metric().to_string(),
        higher_is_better: mode.higher_is_better(),
        best_epoch: None,
        best_metric: None,
        stop: StopReason::Completed,
        history: Vec::new(),
    };
    let mut best = make(&params);
    let mut since_best = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = vec![0.0; if task == TaskSpec::Multitask { 2 } else { 1 }];
        let mut alpha_sum = [0.0; 2];
        let mut steps = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = idx.iter().map(|&i| train[i].clone()).collect();
            let dropout_seed = mix_seed(cfg.seed, epoch as u64, optimizer.steps() + 1);
            let outcome: Result<Vec<f64>, TrainError> = match mode {
                TrainMode::Moo | TrainMode::WeightedSum => {
                    let mut obj = BatchObjective {
                        scratch: params.clone(),
                        batch: &batch,
                        dropout_seed: Some(dropout_seed),
                    };
                    let report = if mode == TrainMode::Moo {
                        mgda_step(&mut params.data, &mut obj, &mut optimizer)
                    } else {
                        weighted_sum_step(&mut params.data, &mut obj, &mut optimizer)
                    };
                    report.map_err(TrainError::from).map(|r| {
                        alpha_sum[0] += r.alpha[0];
                        alpha_sum[1] += r.alpha[1];
                        r.losses.to_vec()
                    })
                }
                TrainMode::Detect => single_task_step(
                    &mut params,
                    &batch,
                    task,
                    ParamGroup::HeadDetect,
                    &mut optimizer,
                    dropout_seed,
                )
                .map(|l| vec![l]),
                TrainMode::Regress => single_task_step(
                    &mut params,
                    &batch,
                    task,
                    ParamGroup::HeadRegress,
                    &mut optimizer,
                    dropout_seed,
                )
                .map(|l| vec![l]),
            };
            let losses = match outcome {
                Ok(l) if params.is_finite() => l,
                Ok(_) | Err(TrainError::Moo(MooError::NonFinite { .. })) => {
                    return Err(TrainError::Diverged {
                        epoch,
                        step: optimizer.steps(),
                        last_good: Box::new(TrainedModel { checkpoint: best, run }),
                    });
                }
                Err(e) => return Err(e),
            };
            for (s, l) in loss_sum.iter_mut().zip(&losses) {
                *s += l;
            }
            steps += 1;
        }

        let (metric, val_metrics) = validation_metrics(mode, &params, val)?;
        let steps_f = steps.max(1) as f64;
        run.history.push(EpochRecord {
            epoch,
            train_loss: loss_sum.iter().map(|s| s / steps_f).collect(),
            mean_alpha: (mode == TrainMode::Moo).then(|| [alpha_sum[0] / steps_f, alpha_sum[1] / steps_f]),
            val_metric: metric,
            val: val_metrics,
        });
        if run.best_metric.is_none_or(|b| better(metric, b)) {
            run.best_metric = Some(metric);
            run.best_epoch = Some(epoch);
            best = make(&params);
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                run.stop = StopReason::EarlyStopped;
                break;
            }
        }
    }
    Ok(TrainedModel { checkpoint: best, run })
}

fn require(records: &[VulnRecord], name: &'static str) -> Result<(), TrainError> {
    if records.is_empty() {
        Err(TrainError::EmptyPartition(name))
    } else {
        Ok(())
    }
}

fn encode_split(
    split: &DatasetSplit,
    vocab: &Vocab,
    registry: &LabelRegistry,
    task: TaskSpec,
    max_seq_len: usize,
) -> Result<(Vec<Example>, Vec<Example>), TrainError> {
    require(&split.train, "train")?;
    require(&split.validation, "validation")?;
    Ok((
        build_examples(&split.train, vocab, registry, task, max_seq_len)?,
        build_examples(&split.validation, vocab, registry, task, max_seq_len)?,
    ))
}

/// Records usable by the multi-task classifier and the regressor.
pub fn vulnerable_only(split: &DatasetSplit) -> DatasetSplit {
    split.filter(|r| r.vulnerable)
}

/// Train the CWE-ID/CWE-Type classifier on the vulnerable records of
/// `split`, selecting the epoch with the best mean validation accuracy.
pub fn train_classifier(
    split: &DatasetSplit,
    vocab: &Vocab,
    registry: &LabelRegistry,
    model: &ModelConfig,
    cfg: &TrainConfig,
    mode: TrainMode,
) -> Result<TrainedModel, TrainError> {
    if !matches!(mode, TrainMode::Moo | TrainMode::WeightedSum) {
        return Err(MooError::InvalidConfig(format!("{mode:?} is not a classifier mode")).into());
    }
    let split = vulnerable_only(split);
    let (train, val) = encode_split(&split, vocab, registry, TaskSpec::Multitask, model.max_seq_len)?;
    let params = init_model(model)?;
    run_training(mode, params, &train, &val, cfg, registry, &vocab.hash())
}

pub fn train_detector(
    split: &DatasetSplit,
    vocab: &Vocab,
    registry: &LabelRegistry,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainedModel, TrainError> {
    let (train, val) = encode_split(split, vocab, registry, TaskSpec::Detect, model.max_seq_len)?;
    let params = init_model(model)?;
    run_training(TrainMode::Detect, params, &train, &val, cfg, registry, &vocab.hash())
}

/// Train the severity regressor on vulnerable records. The output layer
/// starts as the constant mean training target (zero weights, mean bias).
pub fn train_regressor(
    split: &DatasetSplit,
    vocab: &Vocab,
    registry: &LabelRegistry,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainedModel, TrainError> {
    let split = vulnerable_only(split);
    let (train, val) = encode_split(&split, vocab, registry, TaskSpec::Regress, model.max_seq_len)?;
    let mut params = init_model(model)?;
    let targets = regress_targets(&train);
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let head = params.layout.head_regress.clone();
    head.w.of_mut(&mut params.data).fill(0.0);
    head.b.of_mut(&mut params.data)[0] = mean;
    run_training(TrainMode::Regress, params, &train, &val, cfg, registry, &vocab.hash())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEval {
    pub n: usize,
    pub accuracy_id: f64,
    pub accuracy_type: f64,
    /// Share of CWE-ID errors whose CWE-Type was still right; `None` without
    /// CWE-ID errors.
    pub type_consistent_rate: Option<f64>,
    pub confusion_id: ConfusionMatrix,
    pub confusion_type: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorEval {
    pub n: usize,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub mean_p_vulnerable: Option<f64>,
    pub mean_p_clean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorEval {
    pub n: usize,
    pub mse: f64,
    pub mae: f64,
    /// Share of records whose predicted severity band equals the true band.
    pub band_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum EvalReport {
    Classifier(ClassifierEval),
    Detector(DetectorEval),
    Regressor(RegressorEval),
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".to_string(), |x| format!("{x:.4}"))
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match self {
            EvalReport::Classifier(c) => {
                let _ = writeln!(s, "records            {}", c.n);
                let _ = writeln!(s, "CWE-ID accuracy    {:.4}", c.accuracy_id);
                let _ = writeln!(s, "CWE-Type accuracy  {:.4}", c.accuracy_type);
                let _ = writeln!(s, "type-consistent    {}", fmt_opt(c.type_consistent_rate));
                let _ = writeln!(s, "\nCWE-ID confusion (rows = truth)\n{}", c.confusion_id.to_text());
                let _ = writeln!(s, "CWE-ID per class\n{}", c.confusion_id.per_class_table().to_text());
                let _ = writeln!(s, "CWE-Type confusion (rows = truth)\n{}", c.confusion_type.to_text());
                let _ = write!(
                    s,
                    "CWE-Type per class\n{}",
                    c.confusion_type.per_class_table().to_text()
                );
            }
            EvalReport::Detector(d) => {
                let _ = writeln!(s, "records     {}", d.n);
                let _ = writeln!(s, "accuracy    {:.4}", d.accuracy);
                let _ = writeln!(s, "precision   {}", fmt_opt(d.precision));
                let _ = writeln!(s, "recall      {}", fmt_opt(d.recall));
                let _ = writeln!(s, "f1          {}", fmt_opt(d.f1));
                let _ = writeln!(s, "mean p(vulnerable) on vulnerable  {}", fmt_opt(d.mean_p_vulnerable));
                let _ = writeln!(s, "mean p(vulnerable) on clean       {}", fmt_opt(d.mean_p_clean));
            }
            EvalReport::Regressor(r) => {
                let _ = writeln!(s, "records        {}", r.n);
                let _ = writeln!(s, "MSE            {:.4}", r.mse);
                let _ = writeln!(s, "MAE            {:.4}", r.mae);
                let _ = writeln!(s, "band accuracy  {:.4}", r.band_accuracy);
            }
        }
        s
    }
}

/// Classifier metrics from index predictions.
pub fn classifier_report(
    registry: &LabelRegistry,
    pred: &[(usize, usize)],
    truth: &[(usize, usize)],
) -> Result<ClassifierEval, TrainError> {
    if truth.is_empty() {
        return Err(MetricsError::Empty.into());
    }
    let (p_id, p_ty): (Vec<usize>, Vec<usize>) = pred.iter().copied().unzip();
    let (t_id, t_ty): (Vec<usize>, Vec<usize>) = truth.iter().copied().unzip();
    Ok(ClassifierEval {
        n: truth.len(),
        accuracy_id: multiclass_accuracy(&p_id, &t_id)?,
        accuracy_type: multiclass_accuracy(&p_ty, &t_ty)?,
        type_consistent_rate: metrics::type_consistent_rate(&p_id, &t_id, &p_ty, &t_ty)?,
        confusion_id: confusion_matrix(&p_id, &t_id, &registry.cwe_ids)?,
        confusion_type: confusion_matrix(&p_ty, &t_ty, &registry.cwe_types)?,
    })
}

pub fn detector_report(p_vulnerable: &[f64], truth: &[bool], threshold: f64) -> Result<DetectorEval, TrainError> {
    if truth.is_empty() {
        return Err(MetricsError::Empty.into());
    }
    let preds: Vec<bool> = p_vulnerable.iter().map(|&p| p >= threshold).collect();
    let accuracy = multiclass_accuracy(&preds, truth)?;
    let count = |p: bool, t: bool| preds.iter().zip(truth).filter(|&(&a, &b)| a == p && b == t).count() as f64;
    let (tp, fp, fn_) = (count(true, true), count(true, false), count(false, true));
    let precision = (tp + fp > 0.0).then(|| tp / (tp + fp));
    let recall = (tp + fn_ > 0.0).then(|| tp / (tp + fn_));
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    let mean_where = |want: bool| {
        let v: Vec<f64> = p_vulnerable
            .iter()
            .zip(truth)
            .filter(|(_, &t)| t == want)
            .map(|(&p, _)| p)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Ok(DetectorEval {
        n: truth.len(),
        accuracy,
        precision,
        recall,
        f1,
        mean_p_vulnerable: mean_where(true),
        mean_p_clean: mean_where(false),
    })
}

pub fn regressor_report(preds: &[f64], truth: &[f64]) -> Result<RegressorEval, TrainError> {
    let bands_p: Vec<_> = preds.iter().map(|&p| severity_band(p)).collect();
    let bands_t: Vec<_> = truth.iter().map(|&t| severity_band(t)).collect();
    Ok(RegressorEval {
        n: truth.len(),
        mse: metrics::mse(preds, truth)?,
        mae: metrics::mae(preds, truth)?,
        band_accuracy: multiclass_accuracy(&bands_p, &bands_t)?,
    })
}

/// Evaluate a checkpoint on `records`, dispatching on the checkpoint's task.
/// Classifier and regressor checkpoints only see vulnerable records.
pub fn evaluate(checkpoint: &Checkpoint, vocab: &Vocab, records: &[VulnRecord]) -> Result<EvalReport, TrainError> {
    let found = vocab.hash();
    if found != checkpoint.header.vocab_hash {
        return Err(TrainError::VocabMismatch {
            expected: checkpoint.header.vocab_hash.clone(),
            found,
        });
    }
    let task = checkpoint.header.task;
    let registry = &checkpoint.header.registry;
    let params = &checkpoint.params;
    let subset: Vec<VulnRecord> = match task {
        TaskSpec::Detect => records.to_vec(),
        _ => records.iter().filter(|r| r.vulnerable).cloned().collect(),
    };
    require(&subset, "evaluation")?;
    let examples = build_examples(&subset, vocab, registry, task, params.config.max_seq_len)?;
    Ok(match task {
        TaskSpec::Multitask => {
            let pred = predict_classes(params, &examples)?;
            let truth: Vec<(usize, usize)> = examples
                .iter()
                .map(|e| match e.target {
                    Target::Multitask { cwe_id, cwe_type } => (cwe_id, cwe_type),
                    _ => unreachable!(),
                })
                .collect();
            EvalReport::Classifier(classifier_report(registry, &pred, &truth)?)
        }
        TaskSpec::Detect => {
            let p = predict_vulnerable(params, &examples)?;
            let truth: Vec<bool> = subset.iter().map(|r| r.vulnerable).collect();
            EvalReport::Detector(detector_report(&p, &truth, 0.5)?)
        }
        TaskSpec::Regress => {
            let p = predict_severity(params, &examples)?;
            EvalReport::Regressor(regressor_report(&p, &regress_targets(&examples))?)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub arm: String,
    pub accuracy_id: f64,
    pub accuracy_type: f64,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    pub final_loss_id: Option<f64>,
    pub final_loss_type: Option<f64>,
}

/// Test accuracies of the classifier arms under identical seeds and configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    fn cells(&self) -> Vec<Vec<String>> {
        let mut rows = vec![[
            "arm",
            "accuracy_id",
            "accuracy_type",
            "best_epoch",
            "epochs_run",
            "final_loss_id",
            "final_loss_type",
        ]
        .map(String::from)
        .to_vec()];
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.4}"));
        for r in &self.rows {
            rows.push(vec![
                r.arm.clone(),
                format!("{:.4}", r.accuracy_id),
                format!("{:.4}", r.accuracy_type),
                r.best_epoch.map_or(String::new(), |e| e.to_string()),
                r.epochs_run.to_string(),
                opt(r.final_loss_id),
                opt(r.final_loss_type),
            ]);
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        self.cells().iter().map(|r| r.join(",") + "\n").collect()
    }

    pub fn to_text(&self) -> String {
        render_aligned(&self.cells())
    }
}

/// Train the classifier with MGDA and with the weighted-sum baseline and
/// tabulate test accuracy. No ordering between the arms is implied.
pub fn compare_moo_weighted(
    split: &DatasetSplit,
    vocab: &Vocab,
    registry: &LabelRegistry,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(ComparisonTable, Vec<TrainedModel>), TrainError> {
    let mut rows = Vec::new();
    let mut models = Vec::new();
    for (arm, mode) in [("moo", TrainMode::Moo), ("weighted_sum", TrainMode::WeightedSum)] {
        let trained = train_classifier(split, vocab, registry, model, cfg, mode)?;
        let EvalReport::Classifier(eval) = evaluate(&trained.checkpoint, vocab, &split.test)? else {
            unreachable!()
        };
        let last = trained.run.history.last();
        rows.push(ComparisonRow {
            arm: arm.to_string(),
            accuracy_id: eval.accuracy_id,
            accuracy_type: eval.accuracy_type,
            best_epoch: trained.run.best_epoch,
            epochs_run: trained.run.history.len(),
            final_loss_id: last.map(|e| e.train_loss[0]),
            final_loss_type: last.map(|e| e.train_loss[1]),
        });
        models.push(trained);
    }
    Ok((ComparisonTable { rows }, models))
}

pub fn save_run(run: &TrainRun, path: &Path) -> Result<(), TrainError> {
    fs::write(path, serde_json::to_string_pretty(run)? + "\n")?;
    Ok(())
}

pub fn load_run(path: &Path) -> Result<TrainRun, TrainError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
