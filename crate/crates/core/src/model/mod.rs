//! Transformer encoder with task heads, trained from scratch in `f64`.
//!
//! All parameters live in one flat vector. Five contiguous groups partition
//! it: the shared encoder (embeddings and blocks), the CWE-ID head, the
//! CWE-Type head, the binary detector head and the severity regression head.
//! The classifier reads the `[CLS]` position into the CWE-ID head and the
//! `[CLS_TYPE]` position into the CWE-Type head; the two heads share nothing.

mod backward;
mod checkpoint;
mod forward;
mod gradcheck;

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backward::{loss_and_grads, Example, Gradients, Target, TaskSpec};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, CHECKPOINT_VERSION};
pub use forward::{
    classification_loss, forward_classify, forward_detect, forward_regress, regression_loss, Attention, DetectOutput,
    ForwardOutput,
};
pub use gradcheck::{check_gradients, GradCheckReport};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {0} outside the embedding table")]
    TokenOutOfRange(u32),
    #[error("expected a {expected:?} sequence")]
    ModeMismatch { expected: crate::tokenizer::SeqMode },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("target does not match the task")]
    TargetMismatch,
    #[error("empty batch")]
    EmptyBatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden_size: usize,
    pub heads: usize,
    pub ffn_size: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub n_cwe_ids: usize,
    pub n_cwe_types: usize,
    pub head_dropout: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Laptop-sized preset: 2 layers, 64 hidden, 4 heads.
    pub fn desk(vocab_size: usize, n_cwe_ids: usize, n_cwe_types: usize) -> Self {
        Self {
            layers: 2,
            hidden_size: 64,
            heads: 4,
            ffn_size: 256,
            vocab_size,
            max_seq_len: 128,
            n_cwe_ids,
            n_cwe_types,
            head_dropout: 0.1,
            seed: 42,
        }
    }

    /// Smallest preset, used for gradient verification.
    pub fn tiny(vocab_size: usize, n_cwe_ids: usize, n_cwe_types: usize) -> Self {
        Self {
            layers: 2,
            hidden_size: 32,
            heads: 4,
            ffn_size: 64,
            vocab_size,
            max_seq_len: 32,
            n_cwe_ids,
            n_cwe_types,
            head_dropout: 0.1,
            seed: 7,
        }
    }

    /// 12 blocks, 768 hidden, 12 heads.
    pub fn paper(vocab_size: usize, n_cwe_ids: usize, n_cwe_types: usize) -> Self {
        Self {
            layers: 12,
            hidden_size: 768,
            heads: 12,
            ffn_size: 3072,
            vocab_size,
            max_seq_len: 512,
            n_cwe_ids,
            n_cwe_types,
            head_dropout: 0.1,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let counts = [
            ("layers", self.layers),
            ("hidden_size", self.hidden_size),
            ("heads", self.heads),
            ("ffn_size", self.ffn_size),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
            ("n_cwe_ids", self.n_cwe_ids),
            ("n_cwe_types", self.n_cwe_types),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be >= 1")));
            }
        }
        if self.hidden_size % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "hidden_size {} not divisible by heads {}",
                self.hidden_size, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.head_dropout) {
            return Err(ModelError::Config(format!(
                "head_dropout {} outside [0, 1)",
                self.head_dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Shared,
    HeadId,
    HeadType,
    HeadDetect,
    HeadRegress,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Shared,
        ParamGroup::HeadId,
        ParamGroup::HeadType,
        ParamGroup::HeadDetect,
        ParamGroup::HeadRegress,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

/// A `rows × cols` row-major block of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn of<'a>(&self, data: &'a [f64]) -> &'a [f64] {
        &data[self.range()]
    }

    pub fn of_mut<'a>(&self, data: &'a mut [f64]) -> &'a mut [f64] {
        &mut data[self.range()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Dense → tanh → dense classification head (dropout before each dense).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassHeadLayout {
    pub dense_w: Tensor,
    pub dense_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegressHeadLayout {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub tok_emb: Tensor,
    pub pos_emb: Tensor,
    pub blocks: Vec<BlockLayout>,
    pub lnf_g: Tensor,
    pub lnf_b: Tensor,
    pub head_id: ClassHeadLayout,
    pub head_type: ClassHeadLayout,
    pub head_detect: ClassHeadLayout,
    pub head_regress: RegressHeadLayout,
    groups: [Range<usize>; 5],
    total: usize,
}

struct Alloc(usize);

impl Alloc {
    fn take(&mut self, rows: usize, cols: usize) -> Tensor {
        let t = Tensor {
            offset: self.0,
            rows,
            cols,
        };
        self.0 += rows * cols;
        t
    }

    fn class_head(&mut self, h: usize, classes: usize) -> ClassHeadLayout {
        ClassHeadLayout {
            dense_w: self.take(h, h),
            dense_b: self.take(1, h),
            out_w: self.take(h, classes),
            out_b: self.take(1, classes),
        }
    }
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (h, f) = (cfg.hidden_size, cfg.ffn_size);
        let mut a = Alloc(0);
        let tok_emb = a.take(cfg.vocab_size, h);
        let pos_emb = a.take(cfg.max_seq_len, h);
        let blocks = (0..cfg.layers)
            .map(|_| BlockLayout {
                ln1_g: a.take(1, h),
                ln1_b: a.take(1, h),
                wq: a.take(h, h),
                bq: a.take(1, h),
                wk: a.take(h, h),
                bk: a.take(1, h),
                wv: a.take(h, h),
                bv: a.take(1, h),
                wo: a.take(h, h),
                bo: a.take(1, h),
                ln2_g: a.take(1, h),
                ln2_b: a.take(1, h),
                w1: a.take(h, f),
                b1: a.take(1, f),
                w2: a.take(f, h),
                b2: a.take(1, h),
            })
            .collect();
        let lnf_g = a.take(1, h);
        let lnf_b = a.take(1, h);
        let shared_end = a.0;
        let head_id = a.class_head(h, cfg.n_cwe_ids);
        let id_end = a.0;
        let head_type = a.class_head(h, cfg.n_cwe_types);
        let type_end = a.0;
        let head_detect = a.class_head(h, 2);
        let detect_end = a.0;
        let head_regress = RegressHeadLayout {
            w: a.take(h, 1),
            b: a.take(1, 1),
        };
        let total = a.0;
        Self {
            tok_emb,
            pos_emb,
            blocks,
            lnf_g,
            lnf_b,
            head_id,
            head_type,
            head_detect,
            head_regress,
            groups: [
                0..shared_end,
                shared_end..id_end,
                id_end..type_end,
                type_end..detect_end,
                detect_end..total,
            ],
            total,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn group(&self, g: ParamGroup) -> Range<usize> {
        self.groups[g.index()].clone()
    }

    /// Every tensor with its group, in storage order.
    pub fn tensors(&self) -> Vec<(ParamGroup, &'static str, Tensor)> {
        use ParamGroup::*;
        let mut v = vec![(Shared, "tok_emb", self.tok_emb), (Shared, "pos_emb", self.pos_emb)];
        for b in &self.blocks {
            v.extend([
                (Shared, "ln1_g", b.ln1_g),
                (Shared, "ln1_b", b.ln1_b),
                (Shared, "wq", b.wq),
                (Shared, "bq", b.bq),
                (Shared, "wk", b.wk),
                (Shared, "bk", b.bk),
                (Shared, "wv", b.wv),
                (Shared, "bv", b.bv),
                (Shared, "wo", b.wo),
                (Shared, "bo", b.bo),
                (Shared, "ln2_g", b.ln2_g),
                (Shared, "ln2_b", b.ln2_b),
                (Shared, "w1", b.w1),
                (Shared, "b1", b.b1),
                (Shared, "w2", b.w2),
                (Shared, "b2", b.b2),
            ]);
        }
        v.push((Shared, "lnf_g", self.lnf_g));
        v.push((Shared, "lnf_b", self.lnf_b));
        for (g, head) in [
            (HeadId, &self.head_id),
            (HeadType, &self.head_type),
            (HeadDetect, &self.head_detect),
        ] {
            v.extend([
                (g, "dense_w", head.dense_w),
                (g, "dense_b", head.dense_b),
                (g, "out_w", head.out_w),
                (g, "out_b", head.out_b),
            ]);
        }
        v.push((HeadRegress, "w", self.head_regress.w));
        v.push((HeadRegress, "b", self.head_regress.b));
        v
    }
}

/// Configuration plus the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub data: Vec<f64>,
}

impl ModelParams {
    pub fn group(&self, g: ParamGroup) -> &[f64] {
        &self.data[self.layout.group(g)]
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut [f64] {
        let r = self.layout.group(g);
        &mut self.data[r]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Seeded initialization: matrices uniform in `±√(6/(fan_in+fan_out))`,
/// biases and LayerNorm shifts zero, LayerNorm gains one.
pub fn init_model(config: &ModelConfig) -> Result<ModelParams, ModelError> {
    config.validate()?;
    let layout = ParamLayout::new(config);
    let mut data = vec![0.0; layout.total()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for (_, name, t) in layout.tensors() {
        let slice = t.of_mut(&mut data);
        if name.starts_with("ln") && name.ends_with("_g") {
            slice.fill(1.0);
        } else if t.rows > 1 {
            let bound = (6.0 / (t.rows + t.cols) as f64).sqrt();
            for v in slice {
                *v = rng.random_range(-bound..bound);
            }
        }
    }
    Ok(ModelParams {
        config: config.clone(),
        layout,
        data,
    })
}
