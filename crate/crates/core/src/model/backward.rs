//! Reverse-mode gradients of the three training losses.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{
    check_sequence, class_head_forward, cross_entropy, encode, gelu_grad, regress_head_forward, EncoderCache,
    HeadCache, HeadMasks, LnCache,
};
use super::{ClassHeadLayout, ModelError, ModelParams, ParamGroup};
use crate::linalg::{col_sum_acc, matmul_nt_acc, matmul_tn_acc, softmax};
use crate::moo::TaskGradients;
use crate::tokenizer::{SeqMode, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSpec {
    /// CWE-ID and CWE-Type cross-entropy, kept as two separate losses.
    Multitask,
    /// Binary cross-entropy of the detector.
    Detect,
    /// Squared error of the severity regressor.
    Regress,
}

impl TaskSpec {
    pub fn mode(self) -> SeqMode {
        match self {
            TaskSpec::Multitask => SeqMode::DualCls,
            TaskSpec::Detect | TaskSpec::Regress => SeqMode::SingleCls,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Multitask { cwe_id: usize, cwe_type: usize },
    Detect(bool),
    Regress(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub seq: TokenSequence,
    pub target: Target,
}

/// Mean batch losses with full-length gradient vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum Gradients {
    /// `grad_id`/`grad_type` are gradients of the CWE-ID and CWE-Type losses
    /// over the whole parameter vector.
    Multitask {
        loss_id: f64,
        loss_type: f64,
        grad_id: Vec<f64>,
        grad_type: Vec<f64>,
    },
    Single {
        loss: f64,
        grad: Vec<f64>,
    },
}

impl Gradients {
    /// Split the multi-task gradients into shared and head blocks.
    pub fn task_gradients(&self, params: &ModelParams) -> Option<TaskGradients> {
        let Gradients::Multitask {
            loss_id,
            loss_type,
            grad_id,
            grad_type,
        } = self
        else {
            return None;
        };
        let lay = &params.layout;
        let shared = lay.group(ParamGroup::Shared);
        Some(TaskGradients {
            loss1: *loss_id,
            loss2: *loss_type,
            g1: grad_id[shared.clone()].to_vec(),
            g2: grad_type[shared].to_vec(),
            h1: grad_id[lay.group(ParamGroup::HeadId)].to_vec(),
            h2: grad_type[lay.group(ParamGroup::HeadType)].to_vec(),
        })
    }

    pub fn losses(&self) -> Vec<f64> {
        match self {
            Gradients::Multitask { loss_id, loss_type, .. } => vec![*loss_id, *loss_type],
            Gradients::Single { loss, .. } => vec![*loss],
        }
    }
}

fn ln_backward(
    cache: &LnCache,
    gamma: &[f64],
    dy: &[f64],
    rows: usize,
    h: usize,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
    dx: &mut [f64],
) {
    for i in 0..rows {
        let dyi = &dy[i * h..(i + 1) * h];
        if dyi.iter().all(|&v| v == 0.0) {
            continue;
        }
        let xh = &cache.xhat[i * h..(i + 1) * h];
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for j in 0..h {
            let d = dyi[j] * gamma[j];
            dgamma[j] += dyi[j] * xh[j];
            dbeta[j] += dyi[j];
            mean_d += d;
            mean_dx += d * xh[j];
        }
        mean_d /= h as f64;
        mean_dx /= h as f64;
        let r = cache.rstd[i];
        for j in 0..h {
            let d = dyi[j] * gamma[j];
            dx[i * h + j] += r * (d - mean_d - xh[j] * mean_dx);
        }
    }
}

/// Backpropagate `dhidden` (gradient w.r.t. the final hidden states) through
/// the encoder into `grad`.
fn encoder_backward(params: &ModelParams, ids: &[u32], cache: &EncoderCache, dhidden: &[f64], grad: &mut [f64]) {
    let cfg = &params.config;
    let (t, h, f, heads) = (cache.len, cfg.hidden_size, cfg.ffn_size, cfg.heads);
    let dh = h / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let data = &params.data;
    let lay = &params.layout;

    let mut dx = vec![0.0; t * h];
    {
        let (g_range, b_range) = (lay.lnf_g.range(), lay.lnf_b.range());
        let mut dg = vec![0.0; h];
        let mut db = vec![0.0; h];
        ln_backward(&cache.lnf, lay.lnf_g.of(data), dhidden, t, h, &mut dg, &mut db, &mut dx);
        add(&mut grad[g_range], &dg);
        add(&mut grad[b_range], &db);
    }

    for (bl, bc) in lay.blocks.iter().zip(&cache.blocks).rev() {
        // Feed-forward sublayer: x_out = x_mid + W2·gelu(W1·LN2(x_mid)).
        matmul_tn_acc(&bc.g, &dx, t, f, h, bl.w2.of_mut(grad));
        col_sum_acc(&dx, t, h, bl.b2.of_mut(grad));
        let mut dg = vec![0.0; t * f];
        matmul_nt_acc(&dx, bl.w2.of(data), t, f, h, &mut dg);
        for (d, &u) in dg.iter_mut().zip(&bc.u) {
            *d *= gelu_grad(u);
        }
        matmul_tn_acc(&bc.b, &dg, t, h, f, bl.w1.of_mut(grad));
        col_sum_acc(&dg, t, f, bl.b1.of_mut(grad));
        let mut db = vec![0.0; t * h];
        matmul_nt_acc(&dg, bl.w1.of(data), t, h, f, &mut db);
        {
            let mut dgam = vec![0.0; h];
            let mut dbet = vec![0.0; h];
            ln_backward(&bc.ln2, bl.ln2_g.of(data), &db, t, h, &mut dgam, &mut dbet, &mut dx);
            add(bl.ln2_g.of_mut(grad), &dgam);
            add(bl.ln2_b.of_mut(grad), &dbet);
        }

        // Attention sublayer: x_mid = x_in + Wo·attn(LN1(x_in)).
        matmul_tn_acc(&bc.ctx, &dx, t, h, h, bl.wo.of_mut(grad));
        col_sum_acc(&dx, t, h, bl.bo.of_mut(grad));
        let mut dctx = vec![0.0; t * h];
        matmul_nt_acc(&dx, bl.wo.of(data), t, h, h, &mut dctx);

        let mut dq = vec![0.0; t * h];
        let mut dk = vec![0.0; t * h];
        let mut dv = vec![0.0; t * h];
        let mut dp = vec![0.0; t];
        for hd in 0..heads {
            let c0 = hd * dh;
            for qi in 0..t {
                let dctx_q = &dctx[qi * h + c0..qi * h + c0 + dh];
                if dctx_q.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let p = &bc.probs[(hd * t + qi) * t..(hd * t + qi + 1) * t];
                let mut weighted = 0.0;
                for ki in 0..t {
                    let vv = &bc.v[ki * h + c0..ki * h + c0 + dh];
                    let d: f64 = dctx_q.iter().zip(vv).map(|(a, b)| a * b).sum();
                    dp[ki] = d;
                    weighted += d * p[ki];
                    let dvk = &mut dv[ki * h + c0..ki * h + c0 + dh];
                    for (o, &g) in dvk.iter_mut().zip(dctx_q) {
                        *o += p[ki] * g;
                    }
                }
                let qv = &bc.q[qi * h + c0..qi * h + c0 + dh];
                for ki in 0..t {
                    let ds = p[ki] * (dp[ki] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kv = &bc.k[ki * h + c0..ki * h + c0 + dh];
                    let dqq = &mut dq[qi * h + c0..qi * h + c0 + dh];
                    for (o, &kk) in dqq.iter_mut().zip(kv) {
                        *o += ds * kk;
                    }
                    let dkk = &mut dk[ki * h + c0..ki * h + c0 + dh];
                    for (o, &qq) in dkk.iter_mut().zip(qv) {
                        *o += ds * qq;
                    }
                }
            }
        }

        let mut da = vec![0.0; t * h];
        for (w, b, d) in [(bl.wq, bl.bq, &dq), (bl.wk, bl.bk, &dk), (bl.wv, bl.bv, &dv)] {
            matmul_tn_acc(&bc.a, d, t, h, h, w.of_mut(grad));
            col_sum_acc(d, t, h, b.of_mut(grad));
            matmul_nt_acc(d, w.of(data), t, h, h, &mut da);
        }
        let mut dgam = vec![0.0; h];
        let mut dbet = vec![0.0; h];
        ln_backward(&bc.ln1, bl.ln1_g.of(data), &da, t, h, &mut dgam, &mut dbet, &mut dx);
        add(bl.ln1_g.of_mut(grad), &dgam);
        add(bl.ln1_b.of_mut(grad), &dbet);
    }

    let tok = lay.tok_emb.range().start;
    let pos = lay.pos_emb.range().start;
    for (i, &id) in ids.iter().enumerate() {
        let d = &dx[i * h..(i + 1) * h];
        add(&mut grad[tok + id as usize * h..tok + (id as usize + 1) * h], d);
        add(&mut grad[pos + i * h..pos + (i + 1) * h], d);
    }
}

fn add(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Backward through a classification head. Returns the gradient w.r.t. the
/// head input (before dropout).
fn class_head_backward(
    data: &[f64],
    head: &ClassHeadLayout,
    cache: &HeadCache,
    masks: Option<&HeadMasks>,
    dlogits: &[f64],
    grad: &mut [f64],
) -> Vec<f64> {
    let h = cache.x.len();
    let k = dlogits.len();
    add(head.out_b.of_mut(grad), dlogits);
    matmul_tn_acc(&cache.zd, dlogits, 1, h, k, head.out_w.of_mut(grad));
    let mut dzd = vec![0.0; h];
    matmul_nt_acc(dlogits, head.out_w.of(data), 1, h, k, &mut dzd);
    let mut dpre: Vec<f64> = dzd.iter().zip(&cache.z).map(|(d, z)| d * (1.0 - z * z)).collect();
    if let Some(m) = masks {
        for (d, mask) in dpre.iter_mut().zip(&m.inner) {
            *d *= mask;
        }
    }
    add(head.dense_b.of_mut(grad), &dpre);
    matmul_tn_acc(&cache.x, &dpre, 1, h, h, head.dense_w.of_mut(grad));
    let mut dx = vec![0.0; h];
    matmul_nt_acc(&dpre, head.dense_w.of(data), 1, h, h, &mut dx);
    if let Some(m) = masks {
        for (d, mask) in dx.iter_mut().zip(&m.input) {
            *d *= mask;
        }
    }
    dx
}

/// d(CE)/d(logits) scaled by `1/n`.
fn ce_logit_grad(logits: &[f64], label: usize, n: f64) -> Vec<f64> {
    let mut p = softmax(logits);
    p[label] -= 1.0;
    for v in p.iter_mut() {
        *v /= n;
    }
    p
}

/// Mean batch losses without gradients, in the order of
/// [`Gradients::losses`].
pub(crate) fn batch_losses(params: &ModelParams, batch: &[Example], task: TaskSpec) -> Result<Vec<f64>, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let n = batch.len() as f64;
    let h = params.config.hidden_size;
    let mut out = match task {
        TaskSpec::Multitask => vec![0.0; 2],
        _ => vec![0.0; 1],
    };
    for ex in batch {
        check_sequence(params, &ex.seq, task.mode())?;
        let cache = encode(params, &ex.seq.ids);
        let data = &params.data;
        let lay = &params.layout;
        match (task, ex.target) {
            (TaskSpec::Multitask, Target::Multitask { cwe_id, cwe_type }) => {
                let (l1, _) = class_head_forward(data, &lay.head_id, cache.hidden_row(0, h), None);
                let (l2, _) = class_head_forward(data, &lay.head_type, cache.hidden_row(1, h), None);
                out[0] += cross_entropy(&l1, cwe_id)? / n;
                out[1] += cross_entropy(&l2, cwe_type)? / n;
            }
            (TaskSpec::Detect, Target::Detect(v)) => {
                let (l, _) = class_head_forward(data, &lay.head_detect, cache.hidden_row(0, h), None);
                out[0] += cross_entropy(&l, v as usize)? / n;
            }
            (TaskSpec::Regress, Target::Regress(y)) => {
                let pred = regress_head_forward(params, cache.hidden_row(0, h));
                out[0] += (pred - y) * (pred - y) / n;
            }
            _ => return Err(ModelError::TargetMismatch),
        }
    }
    Ok(out)
}

/// Mean loss over `batch` and its exact gradient w.r.t. every parameter.
///
/// With `dropout` supplied, head dropout masks are sampled from it
/// (training); otherwise the network is deterministic.
pub fn loss_and_grads(
    params: &ModelParams,
    batch: &[Example],
    task: TaskSpec,
    mut dropout: Option<&mut ChaCha8Rng>,
) -> Result<Gradients, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let cfg = &params.config;
    let h = cfg.hidden_size;
    let n = batch.len() as f64;
    let total = params.data.len();
    let data = &params.data;
    let lay = &params.layout;
    let rate = cfg.head_dropout;
    let sample_masks = |rng: &mut Option<&mut ChaCha8Rng>| -> Option<HeadMasks> {
        match rng {
            Some(r) if rate > 0.0 => Some(HeadMasks::sample(r, rate, h)),
            _ => None,
        }
    };

    for ex in batch {
        check_sequence(params, &ex.seq, task.mode())?;
        let ok = matches!(
            (task, ex.target),
            (TaskSpec::Multitask, Target::Multitask { .. })
                | (TaskSpec::Detect, Target::Detect(_))
                | (TaskSpec::Regress, Target::Regress(_))
        );
        if !ok {
            return Err(ModelError::TargetMismatch);
        }
    }

    match task {
        TaskSpec::Multitask => {
            let mut grad_id = vec![0.0; total];
            let mut grad_type = vec![0.0; total];
            let (mut loss_id, mut loss_type) = (0.0, 0.0);
            for ex in batch {
                let Target::Multitask { cwe_id, cwe_type } = ex.target else {
                    unreachable!()
                };
                let cache = encode(params, &ex.seq.ids);
                let t = cache.len;
                for (head, pos, label, loss, grad) in [
                    (&lay.head_id, 0usize, cwe_id, &mut loss_id, &mut grad_id),
                    (&lay.head_type, 1usize, cwe_type, &mut loss_type, &mut grad_type),
                ] {
                    let masks = sample_masks(&mut dropout);
                    let (logits, hc) = class_head_forward(data, head, cache.hidden_row(pos, h), masks.as_ref());
                    *loss += cross_entropy(&logits, label)? / n;
                    let dlogits = ce_logit_grad(&logits, label, n);
                    let dh_row = class_head_backward(data, head, &hc, masks.as_ref(), &dlogits, grad);
                    let mut dhidden = vec![0.0; t * h];
                    dhidden[pos * h..(pos + 1) * h].copy_from_slice(&dh_row);
                    encoder_backward(params, &ex.seq.ids, &cache, &dhidden, grad);
                }
            }
            Ok(Gradients::Multitask {
                loss_id,
                loss_type,
                grad_id,
                grad_type,
            })
        }
        TaskSpec::Detect => {
            let mut grad = vec![0.0; total];
            let mut loss = 0.0;
            for ex in batch {
                let Target::Detect(vulnerable) = ex.target else {
                    unreachable!()
                };
                let label = vulnerable as usize;
                let cache = encode(params, &ex.seq.ids);
                let masks = sample_masks(&mut dropout);
                let head = &lay.head_detect;
                let (logits, hc) = class_head_forward(data, head, cache.hidden_row(0, h), masks.as_ref());
                loss += cross_entropy(&logits, label)? / n;
                let dlogits = ce_logit_grad(&logits, label, n);
                let dh_row = class_head_backward(data, head, &hc, masks.as_ref(), &dlogits, &mut grad);
                let mut dhidden = vec![0.0; cache.len * h];
                dhidden[..h].copy_from_slice(&dh_row);
                encoder_backward(params, &ex.seq.ids, &cache, &dhidden, &mut grad);
            }
            Ok(Gradients::Single { loss, grad })
        }
        TaskSpec::Regress => {
            let mut grad = vec![0.0; total];
            let mut loss = 0.0;
            let w = lay.head_regress.w;
            let b = lay.head_regress.b;
            for ex in batch {
                let Target::Regress(y) = ex.target else { unreachable!() };
                let cache = encode(params, &ex.seq.ids);
                let x = cache.hidden_row(0, h);
                let pred = regress_head_forward(params, x);
                loss += (pred - y) * (pred - y) / n;
                let dpred = 2.0 * (pred - y) / n;
                grad[b.range()][0] += dpred;
                for (g, &xi) in grad[w.range()].iter_mut().zip(x) {
                    *g += dpred * xi;
                }
                let mut dhidden = vec![0.0; cache.len * h];
                for (d, &wi) in dhidden[..h].iter_mut().zip(w.of(data)) {
                    *d = dpred * wi;
                }
                encoder_backward(params, &ex.seq.ids, &cache, &dhidden, &mut grad);
            }
            Ok(Gradients::Single { loss, grad })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};
    use crate::tokenizer::{CLS, CLS_TYPE, SEP};
    use rand::SeedableRng;

    fn dual(ids: &[u32]) -> TokenSequence {
        let mut all = vec![CLS, CLS_TYPE];
        all.extend_from_slice(ids);
        all.push(SEP);
        TokenSequence {
            line_of: vec![1; all.len()],
            ids: all,
            mode: SeqMode::DualCls,
            truncated: false,
        }
    }

    fn batch() -> Vec<Example> {
        vec![
            Example {
                seq: dual(&[11, 12, 13]),
                target: Target::Multitask { cwe_id: 1, cwe_type: 0 },
            },
            Example {
                seq: dual(&[40, 41]),
                target: Target::Multitask { cwe_id: 3, cwe_type: 1 },
            },
        ]
    }

    #[test]
    fn other_head_blocks_are_exactly_zero() {
        let p = init_model(&ModelConfig::tiny(300, 4, 2)).unwrap();
        let g = loss_and_grads(&p, &batch(), TaskSpec::Multitask, None).unwrap();
        let Gradients::Multitask { grad_id, grad_type, .. } = &g else {
            panic!()
        };
        let lay = &p.layout;
        for other in [ParamGroup::HeadType, ParamGroup::HeadDetect, ParamGroup::HeadRegress] {
            assert!(grad_id[lay.group(other)].iter().all(|v| v.to_bits() == 0));
        }
        for other in [ParamGroup::HeadId, ParamGroup::HeadDetect, ParamGroup::HeadRegress] {
            assert!(grad_type[lay.group(other)].iter().all(|v| v.to_bits() == 0));
        }
        assert!(grad_id.iter().chain(grad_type).all(|v| v.is_finite()));
        let tg = g.task_gradients(&p).unwrap();
        assert_eq!(tg.g1.len(), lay.group(ParamGroup::Shared).len());
    }

    #[test]
    fn batch_loss_is_mean_of_examples() {
        let p = init_model(&ModelConfig::tiny(300, 4, 2)).unwrap();
        let b = batch();
        let g = loss_and_grads(&p, &b, TaskSpec::Multitask, None).unwrap();
        let mut sum = (0.0, 0.0);
        for ex in &b {
            let out = crate::model::forward_classify(&p, &ex.seq).unwrap();
            let Target::Multitask { cwe_id, cwe_type } = ex.target else {
                panic!()
            };
            let (a, c) = crate::model::classification_loss(&out, cwe_id, cwe_type).unwrap();
            sum.0 += a;
            sum.1 += c;
        }
        let losses = g.losses();
        assert!((losses[0] - sum.0 / 2.0).abs() < 1e-12);
        assert!((losses[1] - sum.1 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn mismatches_rejected() {
        let p = init_model(&ModelConfig::tiny(300, 4, 2)).unwrap();
        assert!(matches!(
            loss_and_grads(&p, &batch(), TaskSpec::Detect, None),
            Err(ModelError::ModeMismatch { .. })
        ));
        assert!(matches!(
            loss_and_grads(&p, &[], TaskSpec::Detect, None),
            Err(ModelError::EmptyBatch)
        ));
        let mut b = batch();
        b[0].target = Target::Detect(true);
        assert!(matches!(
            loss_and_grads(&p, &b, TaskSpec::Multitask, None),
            Err(ModelError::TargetMismatch)
        ));
    }

    #[test]
    fn dropout_is_seeded() {
        let p = init_model(&ModelConfig::tiny(300, 4, 2)).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            loss_and_grads(&p, &batch(), TaskSpec::Multitask, Some(&mut rng)).unwrap()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), loss_and_grads(&p, &batch(), TaskSpec::Multitask, None).unwrap());
    }
}
