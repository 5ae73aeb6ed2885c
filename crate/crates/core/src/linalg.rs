//! Dense row-major kernels over `f64` slices.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `out = x · w + bias` with `x: n×k`, `w: k×m`, `out: n×m`.
pub fn matmul_bias(x: &[f64], w: &[f64], bias: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    debug_assert_eq!(x.len(), n * k);
    debug_assert_eq!(w.len(), k * m);
    debug_assert_eq!(out.len(), n * m);
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        row.copy_from_slice(bias);
        let xi = &x[i * k..(i + 1) * k];
        for (p, &xv) in xi.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wp = &w[p * m..(p + 1) * m];
            for (o, &wv) in row.iter_mut().zip(wp) {
                *o += xv * wv;
            }
        }
    }
}

/// `dw += xᵀ · dy` with `x: n×k`, `dy: n×m`, `dw: k×m`.
pub fn matmul_tn_acc(x: &[f64], dy: &[f64], n: usize, k: usize, m: usize, dw: &mut [f64]) {
    for i in 0..n {
        let dyi = &dy[i * m..(i + 1) * m];
        if dyi.iter().all(|&v| v == 0.0) {
            continue;
        }
        let xi = &x[i * k..(i + 1) * k];
        for (p, &xv) in xi.iter().enumerate() {
            let row = &mut dw[p * m..(p + 1) * m];
            for (o, &g) in row.iter_mut().zip(dyi) {
                *o += xv * g;
            }
        }
    }
}

/// `dx += dy · wᵀ` with `dy: n×m`, `w: k×m`, `dx: n×k`.
pub fn matmul_nt_acc(dy: &[f64], w: &[f64], n: usize, k: usize, m: usize, dx: &mut [f64]) {
    for i in 0..n {
        let dyi = &dy[i * m..(i + 1) * m];
        if dyi.iter().all(|&v| v == 0.0) {
            continue;
        }
        let dxi = &mut dx[i * k..(i + 1) * k];
        for (p, o) in dxi.iter_mut().enumerate() {
            *o += dot(dyi, &w[p * m..(p + 1) * m]);
        }
    }
}

/// Column sums of `dy: n×m` accumulated into `db`.
pub fn col_sum_acc(dy: &[f64], n: usize, m: usize, db: &mut [f64]) {
    for i in 0..n {
        for (o, &g) in db.iter_mut().zip(&dy[i * m..(i + 1) * m]) {
            *o += g;
        }
    }
}

/// In-place numerically stable softmax.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}
