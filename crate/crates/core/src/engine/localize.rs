use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::Attention;

#[derive(Debug, Error, PartialEq)]
pub enum LocalizeError {
    #[error("empty token line map")]
    EmptyMap,
    #[error("line map covers {map} tokens but attention has {attention}")]
    LengthMismatch { map: usize, attention: usize },
}

/// Attention mass received by each token: `Σ_layer Σ_head Σ_query A[l,h,q,k]`.
pub fn token_scores(attention: &Attention) -> Vec<f64> {
    let t = attention.len;
    let mut scores = vec![0.0; t];
    for row in attention.data.chunks(t.max(1)) {
        for (s, &a) in scores.iter_mut().zip(row) {
            *s += a;
        }
    }
    scores
}

/// Rank lines by the received attention of their tokens.
///
/// `line_of[k]` is the line of token `k`, or negative for special tokens,
/// which are excluded. Lines sort by descending score, ties to the lower line
/// number. At most `top_k` entries are returned (all when `None`).
pub fn localize_lines(
    attention: &Attention,
    line_of: &[i32],
    top_k: Option<usize>,
) -> Result<Vec<(u32, f64)>, LocalizeError> {
    if line_of.is_empty() {
        return Err(LocalizeError::EmptyMap);
    }
    if line_of.len() != attention.len {
        return Err(LocalizeError::LengthMismatch {
            map: line_of.len(),
            attention: attention.len,
        });
    }
    let mut per_line: BTreeMap<u32, f64> = BTreeMap::new();
    for (&line, score) in line_of.iter().zip(token_scores(attention)) {
        if line > 0 {
            *per_line.entry(line as u32).or_insert(0.0) += score;
        }
    }
    let mut ranked: Vec<(u32, f64)> = per_line.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if let Some(k) = top_k {
        ranked.truncate(k);
    }
    Ok(ranked)
}
