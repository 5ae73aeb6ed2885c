use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{BlockLayout, ClassHeadLayout, ModelError, ModelParams};
use crate::linalg::{matmul_bias, softmax, softmax_in_place};
use crate::tokenizer::{SeqMode, TokenSequence};

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_K: f64 = 0.044_715;

/// Self-attention weights of one forward pass, indexed
/// `[layer][head][query][key]`. Every query row sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub layers: usize,
    pub heads: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl Attention {
    pub fn new(layers: usize, heads: usize, len: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), layers * heads * len * len);
        Self {
            layers,
            heads,
            len,
            data,
        }
    }

    pub fn weight(&self, layer: usize, head: usize, query: usize, key: usize) -> f64 {
        self.data[((layer * self.heads + head) * self.len + query) * self.len + key]
    }

    pub fn row(&self, layer: usize, head: usize, query: usize) -> &[f64] {
        let start = ((layer * self.heads + head) * self.len + query) * self.len;
        &self.data[start..start + self.len]
    }
}

/// Classifier output for one dual-token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits_id: Vec<f64>,
    pub logits_type: Vec<f64>,
    pub probs_id: Vec<f64>,
    pub probs_type: Vec<f64>,
    pub attention: Attention,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectOutput {
    pub logits: [f64; 2],
    pub p_vulnerable: f64,
    pub attention: Attention,
}

pub(crate) struct LnCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub(crate) struct BlockCache {
    pub ln1: LnCache,
    pub a: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// `heads × T × T`
    pub probs: Vec<f64>,
    pub ctx: Vec<f64>,
    pub ln2: LnCache,
    pub b: Vec<f64>,
    pub u: Vec<f64>,
    pub g: Vec<f64>,
}

pub(crate) struct EncoderCache {
    pub len: usize,
    pub blocks: Vec<BlockCache>,
    pub lnf: LnCache,
    pub hidden: Vec<f64>,
}

impl EncoderCache {
    pub fn attention(&self, heads: usize) -> Attention {
        let mut data = Vec::with_capacity(self.blocks.len() * heads * self.len * self.len);
        for b in &self.blocks {
            data.extend_from_slice(&b.probs);
        }
        Attention::new(self.blocks.len(), heads, self.len, data)
    }

    pub fn hidden_row(&self, pos: usize, h: usize) -> &[f64] {
        &self.hidden[pos * h..(pos + 1) * h]
    }
}

pub(crate) fn layer_norm(x: &[f64], g: &[f64], b: &[f64], rows: usize, h: usize) -> (Vec<f64>, LnCache) {
    let mut y = vec![0.0; rows * h];
    let mut xhat = vec![0.0; rows * h];
    let mut rstd = vec![0.0; rows];
    for i in 0..rows {
        let xi = &x[i * h..(i + 1) * h];
        let mean = xi.iter().sum::<f64>() / h as f64;
        let var = xi.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        for j in 0..h {
            let n = (xi[j] - mean) * r;
            xhat[i * h + j] = n;
            y[i * h + j] = g[j] * n + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

pub(crate) fn gelu(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * x * (1.0 + t)
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

fn block_forward(
    data: &[f64],
    l: &BlockLayout,
    x: &mut [f64],
    t: usize,
    h: usize,
    heads: usize,
    f: usize,
) -> BlockCache {
    let (a, ln1) = layer_norm(x, l.ln1_g.of(data), l.ln1_b.of(data), t, h);
    let mut q = vec![0.0; t * h];
    let mut k = vec![0.0; t * h];
    let mut v = vec![0.0; t * h];
    matmul_bias(&a, l.wq.of(data), l.bq.of(data), t, h, h, &mut q);
    matmul_bias(&a, l.wk.of(data), l.bk.of(data), t, h, h, &mut k);
    matmul_bias(&a, l.wv.of(data), l.bv.of(data), t, h, h, &mut v);

    let dh = h / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs = vec![0.0; heads * t * t];
    let mut ctx = vec![0.0; t * h];
    for hd in 0..heads {
        let c0 = hd * dh;
        for qi in 0..t {
            let row = &mut probs[(hd * t + qi) * t..(hd * t + qi + 1) * t];
            let qv = &q[qi * h + c0..qi * h + c0 + dh];
            for (ki, s) in row.iter_mut().enumerate() {
                let kv = &k[ki * h + c0..ki * h + c0 + dh];
                *s = qv.iter().zip(kv).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            softmax_in_place(row);
            let out = &mut ctx[qi * h + c0..qi * h + c0 + dh];
            for (ki, &p) in row.iter().enumerate() {
                let vv = &v[ki * h + c0..ki * h + c0 + dh];
                for (o, &val) in out.iter_mut().zip(vv) {
                    *o += p * val;
                }
            }
        }
    }

    let mut attn_out = vec![0.0; t * h];
    matmul_bias(&ctx, l.wo.of(data), l.bo.of(data), t, h, h, &mut attn_out);
    for (xi, o) in x.iter_mut().zip(&attn_out) {
        *xi += o;
    }

    let (b, ln2) = layer_norm(x, l.ln2_g.of(data), l.ln2_b.of(data), t, h);
    let mut u = vec![0.0; t * f];
    matmul_bias(&b, l.w1.of(data), l.b1.of(data), t, h, f, &mut u);
    let g: Vec<f64> = u.iter().map(|&z| gelu(z)).collect();
    let mut ffn_out = vec![0.0; t * h];
    matmul_bias(&g, l.w2.of(data), l.b2.of(data), t, f, h, &mut ffn_out);
    for (xi, o) in x.iter_mut().zip(&ffn_out) {
        *xi += o;
    }

    BlockCache {
        ln1,
        a,
        q,
        k,
        v,
        probs,
        ctx,
        ln2,
        b,
        u,
        g,
    }
}

pub(crate) fn check_sequence(params: &ModelParams, seq: &TokenSequence, mode: SeqMode) -> Result<(), ModelError> {
    if seq.mode != mode {
        return Err(ModelError::ModeMismatch { expected: mode });
    }
    let cfg = &params.config;
    if seq.len() > cfg.max_seq_len {
        return Err(ModelError::SequenceTooLong {
            len: seq.len(),
            max: cfg.max_seq_len,
        });
    }
    if let Some(&bad) = seq.ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(ModelError::TokenOutOfRange(bad));
    }
    Ok(())
}

/// Pre-LayerNorm encoder over token ids (validated by the caller).
pub(crate) fn encode(params: &ModelParams, ids: &[u32]) -> EncoderCache {
    let cfg = &params.config;
    let (t, h, f) = (ids.len(), cfg.hidden_size, cfg.ffn_size);
    let data = &params.data;
    let lay = &params.layout;
    let tok = lay.tok_emb.of(data);
    let pos = lay.pos_emb.of(data);
    let mut x = vec![0.0; t * h];
    for (i, &id) in ids.iter().enumerate() {
        let row = &mut x[i * h..(i + 1) * h];
        let e = &tok[id as usize * h..(id as usize + 1) * h];
        let p = &pos[i * h..(i + 1) * h];
        for j in 0..h {
            row[j] = e[j] + p[j];
        }
    }
    let blocks = lay
        .blocks
        .iter()
        .map(|b| block_forward(data, b, &mut x, t, h, cfg.heads, f))
        .collect();
    let (hidden, lnf) = layer_norm(&x, lay.lnf_g.of(data), lay.lnf_b.of(data), t, h);
    EncoderCache {
        len: t,
        blocks,
        lnf,
        hidden,
    }
}

/// Inverted-dropout masks for one head application.
#[derive(Debug, Clone)]
pub(crate) struct HeadMasks {
    pub input: Vec<f64>,
    pub inner: Vec<f64>,
}

impl HeadMasks {
    pub fn sample(rng: &mut ChaCha8Rng, rate: f64, h: usize) -> Self {
        let keep = 1.0 / (1.0 - rate);
        let mut mask = || -> Vec<f64> {
            (0..h)
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect()
        };
        let input = mask();
        let inner = mask();
        Self { input, inner }
    }
}

pub(crate) struct HeadCache {
    /// Head input after dropout.
    pub x: Vec<f64>,
    /// tanh activations before dropout.
    pub z: Vec<f64>,
    /// tanh activations after dropout.
    pub zd: Vec<f64>,
}

pub(crate) fn class_head_forward(
    data: &[f64],
    head: &ClassHeadLayout,
    input: &[f64],
    masks: Option<&HeadMasks>,
) -> (Vec<f64>, HeadCache) {
    let h = input.len();
    let x: Vec<f64> = match masks {
        Some(m) => input.iter().zip(&m.input).map(|(a, b)| a * b).collect(),
        None => input.to_vec(),
    };
    let mut pre = vec![0.0; h];
    matmul_bias(&x, head.dense_w.of(data), head.dense_b.of(data), 1, h, h, &mut pre);
    let z: Vec<f64> = pre.iter().map(|v| v.tanh()).collect();
    let zd: Vec<f64> = match masks {
        Some(m) => z.iter().zip(&m.inner).map(|(a, b)| a * b).collect(),
        None => z.clone(),
    };
    let k = head.out_b.len();
    let mut logits = vec![0.0; k];
    matmul_bias(&zd, head.out_w.of(data), head.out_b.of(data), 1, h, k, &mut logits);
    (logits, HeadCache { x, z, zd })
}

pub(crate) fn regress_head_forward(params: &ModelParams, input: &[f64]) -> f64 {
    let lay = &params.layout.head_regress;
    let w = lay.w.of(&params.data);
    let b = lay.b.of(&params.data)[0];
    b + input.iter().zip(w).map(|(a, c)| a * c).sum::<f64>()
}

/// Multi-task classification: `[CLS]` → CWE-ID head, `[CLS_TYPE]` → CWE-Type
/// head.
pub fn forward_classify(params: &ModelParams, seq: &TokenSequence) -> Result<ForwardOutput, ModelError> {
    check_sequence(params, seq, SeqMode::DualCls)?;
    let cache = encode(params, &seq.ids);
    let h = params.config.hidden_size;
    let (logits_id, _) = class_head_forward(&params.data, &params.layout.head_id, cache.hidden_row(0, h), None);
    let (logits_type, _) = class_head_forward(&params.data, &params.layout.head_type, cache.hidden_row(1, h), None);
    Ok(ForwardOutput {
        probs_id: softmax(&logits_id),
        probs_type: softmax(&logits_type),
        logits_id,
        logits_type,
        attention: cache.attention(params.config.heads),
    })
}

/// Binary function-level detection from the `[CLS]` position.
pub fn forward_detect(params: &ModelParams, seq: &TokenSequence) -> Result<DetectOutput, ModelError> {
    check_sequence(params, seq, SeqMode::SingleCls)?;
    let cache = encode(params, &seq.ids);
    let h = params.config.hidden_size;
    let (logits, _) = class_head_forward(&params.data, &params.layout.head_detect, cache.hidden_row(0, h), None);
    let probs = softmax(&logits);
    Ok(DetectOutput {
        logits: [logits[0], logits[1]],
        p_vulnerable: probs[1],
        attention: cache.attention(params.config.heads),
    })
}

/// Severity score from the `[CLS]` position through one linear layer.
/// Unbounded; callers clamp.
pub fn forward_regress(params: &ModelParams, seq: &TokenSequence) -> Result<f64, ModelError> {
    check_sequence(params, seq, SeqMode::SingleCls)?;
    let cache = encode(params, &seq.ids);
    Ok(regress_head_forward(
        params,
        cache.hidden_row(0, params.config.hidden_size),
    ))
}

/// Cross-entropy `-log q(true class)` of both heads.
pub fn classification_loss(output: &ForwardOutput, y_id: usize, y_type: usize) -> Result<(f64, f64), ModelError> {
    Ok((
        cross_entropy(&output.logits_id, y_id)?,
        cross_entropy(&output.logits_type, y_type)?,
    ))
}

/// `-log softmax(logits)[label]`, computed with log-sum-exp.
pub(crate) fn cross_entropy(logits: &[f64], label: usize) -> Result<f64, ModelError> {
    if label >= logits.len() {
        return Err(ModelError::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[label])
}

/// Mean squared error between predictions and targets.
pub fn regression_loss(preds: &[f64], targets: &[f64]) -> Result<f64, ModelError> {
    if preds.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if preds.len() != targets.len() {
        return Err(ModelError::TargetMismatch);
    }
    Ok(preds.iter().zip(targets).map(|(p, t)| (t - p) * (t - p)).sum::<f64>() / preds.len() as f64)
}
