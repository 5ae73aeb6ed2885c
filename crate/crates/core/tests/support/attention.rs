//! Random attention tensors and a direct per-line summation.

use rand::Rng;
use vulnhunter::model::Attention;

/// Row-stochastic tensor with random shape, and a token-to-line map whose
/// first and last entries are specials.
pub fn random_case<R: Rng>(rng: &mut R) -> (Attention, Vec<i32>) {
    let (layers, heads, len) = (rng.random_range(1..4), rng.random_range(1..5), rng.random_range(3..24));
    let mut data = Vec::with_capacity(layers * heads * len * len);
    for _ in 0..layers * heads * len {
        let row: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
        let z: f64 = row.iter().sum();
        data.extend(row.iter().map(|x| x / z));
    }
    let mut line_of: Vec<i32> = (0..len).map(|_| rng.random_range(1..6)).collect();
    line_of[0] = -1;
    line_of[len - 1] = -1;
    (Attention::new(layers, heads, len, data), line_of)
}

/// Per-line sums computed entry by entry, ranked by score then line.
pub fn brute_force(att: &Attention, line_of: &[i32]) -> Vec<(u32, f64)> {
    let mut lines: Vec<u32> = line_of.iter().filter(|&&l| l > 0).map(|&l| l as u32).collect();
    lines.sort_unstable();
    lines.dedup();
    let mut out: Vec<(u32, f64)> = lines
        .into_iter()
        .map(|line| {
            let mut s = 0.0;
            for l in 0..att.layers {
                for h in 0..att.heads {
                    for q in 0..att.len {
                        for k in 0..att.len {
                            if line_of[k] == line as i32 {
                                s += att.weight(l, h, q, k);
                            }
                        }
                    }
                }
            }
            (line, s)
        })
        .collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    out
}

/// Mass that lands on real lines: every query row sums to one, minus what
/// the specials receive.
pub fn expected_mass(att: &Attention, line_of: &[i32]) -> f64 {
    let rows = att.layers * att.heads * att.len;
    let mut special = 0.0;
    for r in 0..rows {
        for (k, &l) in line_of.iter().enumerate() {
            if l <= 0 {
                special += att.data[r * att.len + k];
            }
        }
    }
    rows as f64 - special
}
