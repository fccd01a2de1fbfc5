//! Forward and backward kernels for the transformer building blocks. All
//! matrices are row-major, one row per sequence position.

use crate::config::AttentionKind;
use crate::linalg::{gemm, View, ViewMut};

pub const LN_EPS: f64 = 1e-5;

pub fn positional_encoding(max_len: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; max_len * d];
    for pos in 0..max_len {
        for j in 0..d {
            let freq = 10000f64.powf(-((j / 2 * 2) as f64) / d as f64);
            let angle = pos as f64 * freq;
            pe[pos * d + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

pub struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> (Vec<f64>, LayerNormCache) {
    let d = g.len();
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = s;
        for j in 0..d {
            let h = (row[j] - mean) * s;
            xhat[r * d + j] = h;
            y[r * d + j] = h * g[j] + b[j];
        }
    }
    (y, LayerNormCache { xhat, rstd })
}

/// Returns `dx` and accumulates the gain and bias gradients.
pub fn layer_norm_backward(dy: &[f64], cache: &LayerNormCache, g: &[f64], dg: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let d = g.len();
    let mut dx = vec![0.0; dy.len()];
    for (r, &s) in cache.rstd.iter().enumerate() {
        let span = r * d..(r + 1) * d;
        let (dyr, xh) = (&dy[span.clone()], &cache.xhat[span.clone()]);
        let mut mean_dxh = 0.0;
        let mut mean_dxh_xh = 0.0;
        for j in 0..d {
            let dxh = dyr[j] * g[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
        }
        mean_dxh /= d as f64;
        mean_dxh_xh /= d as f64;
        for j in 0..d {
            dx[r * d + j] = s * (dyr[j] * g[j] - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// `elu(x) + 1`, the positive feature map of linear attention.
pub fn elu1(x: f64) -> f64 {
    if x > 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

fn elu1_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Numerically stable softmax in place.
pub fn softmax(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy)]
pub struct AttnShape<'a> {
    pub kind: AttentionKind,
    pub len: usize,
    pub d: usize,
    pub n_heads: usize,
    pub causal: bool,
    pub key_valid: &'a [bool],
}

impl AttnShape<'_> {
    fn dh(&self) -> usize {
        self.d / self.n_heads
    }

    fn allowed(&self, i: usize, j: usize) -> bool {
        self.key_valid[j] && (!self.causal || j <= i)
    }
}

pub struct AttnCache {
    /// Attention weights, `n_heads` blocks of `len x len`.
    pub probs: Vec<f64>,
    /// Linear attention only: row normalizers and feature-mapped q and k.
    pub z: Vec<f64>,
    pub phi_q: Vec<f64>,
    pub phi_k: Vec<f64>,
}

pub fn attention(s: AttnShape<'_>, q: &[f64], k: &[f64], v: &[f64]) -> (Vec<f64>, AttnCache) {
    let (l, d, dh) = (s.len, s.d, s.dh());
    let mut out = vec![0.0; l * d];
    let mut probs = vec![0.0; s.n_heads * l * l];
    let (mut z, mut phi_q, mut phi_k) = (Vec::new(), Vec::new(), Vec::new());
    if s.kind == AttentionKind::Linear {
        z = vec![0.0; s.n_heads * l];
        phi_q = q.iter().map(|&x| elu1(x)).collect();
        phi_k = k.iter().map(|&x| elu1(x)).collect();
    }
    let scale = 1.0 / (dh as f64).sqrt();
    for h in 0..s.n_heads {
        let p = &mut probs[h * l * l..(h + 1) * l * l];
        match s.kind {
            AttentionKind::Softmax => {
                let qh = View::new(q, l, d).cols(h * dh, dh);
                let kh = View::new(k, l, d).cols(h * dh, dh);
                gemm(scale, qh, kh.t(), 0.0, ViewMut::new(p, l, l));
                for i in 0..l {
                    let row = &mut p[i * l..(i + 1) * l];
                    let mut max = f64::NEG_INFINITY;
                    for (j, &x) in row.iter().enumerate() {
                        if s.allowed(i, j) {
                            max = max.max(x);
                        }
                    }
                    let mut sum = 0.0;
                    for (j, x) in row.iter_mut().enumerate() {
                        *x = if s.allowed(i, j) { (*x - max).exp() } else { 0.0 };
                        sum += *x;
                    }
                    if sum > 0.0 {
                        row.iter_mut().for_each(|x| *x /= sum);
                    }
                }
            }
            AttentionKind::Linear => {
                let qh = View::new(&phi_q, l, d).cols(h * dh, dh);
                let kh = View::new(&phi_k, l, d).cols(h * dh, dh);
                gemm(1.0, qh, kh.t(), 0.0, ViewMut::new(p, l, l));
                for i in 0..l {
                    let row = &mut p[i * l..(i + 1) * l];
                    let mut sum = 0.0;
                    for (j, x) in row.iter_mut().enumerate() {
                        if !s.allowed(i, j) {
                            *x = 0.0;
                        }
                        sum += *x;
                    }
                    z[h * l + i] = sum;
                    if sum > 0.0 {
                        row.iter_mut().for_each(|x| *x /= sum);
                    }
                }
            }
        }
        let vh = View::new(v, l, d).cols(h * dh, dh);
        gemm(1.0, View::new(p, l, l), vh, 0.0, ViewMut::new(&mut out, l, d).cols(h * dh, dh));
    }
    (out, AttnCache { probs, z, phi_q, phi_k })
}

/// Gradients with respect to q, k and v.
pub fn attention_backward(
    s: AttnShape<'_>,
    cache: &AttnCache,
    q: &[f64],
    k: &[f64],
    v: &[f64],
    d_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (l, d, dh) = (s.len, s.d, s.dh());
    let mut dq = vec![0.0; l * d];
    let mut dk = vec![0.0; l * d];
    let mut dv = vec![0.0; l * d];
    let mut ds = vec![0.0; l * l];
    let scale = 1.0 / (dh as f64).sqrt();
    for h in 0..s.n_heads {
        let p = &cache.probs[h * l * l..(h + 1) * l * l];
        let doh = View::new(d_out, l, d).cols(h * dh, dh);
        gemm(1.0, View::new(p, l, l).t(), doh, 0.0, ViewMut::new(&mut dv, l, d).cols(h * dh, dh));
        gemm(1.0, doh, View::new(v, l, d).cols(h * dh, dh).t(), 0.0, ViewMut::new(&mut ds, l, l));
        for i in 0..l {
            let (pr, dr) = (&p[i * l..(i + 1) * l], &mut ds[i * l..(i + 1) * l]);
            let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
            match s.kind {
                AttentionKind::Softmax => {
                    for j in 0..l {
                        dr[j] = pr[j] * (dr[j] - dot);
                    }
                }
                AttentionKind::Linear => {
                    let zi = cache.z[h * l + i];
                    for (j, x) in dr.iter_mut().enumerate() {
                        *x = if s.allowed(i, j) && zi > 0.0 { (*x - dot) / zi } else { 0.0 };
                    }
                }
            }
        }
        let (qs, ks, alpha) = match s.kind {
            AttentionKind::Softmax => (q, k, scale),
            AttentionKind::Linear => (&cache.phi_q[..], &cache.phi_k[..], 1.0),
        };
        let dsv = View::new(&ds, l, l);
        gemm(alpha, dsv, View::new(ks, l, d).cols(h * dh, dh), 0.0, ViewMut::new(&mut dq, l, d).cols(h * dh, dh));
        gemm(alpha, dsv.t(), View::new(qs, l, d).cols(h * dh, dh), 0.0, ViewMut::new(&mut dk, l, d).cols(h * dh, dh));
    }
    if s.kind == AttentionKind::Linear {
        dq.iter_mut().zip(q).for_each(|(g, &x)| *g *= elu1_grad(x));
        dk.iter_mut().zip(k).for_each(|(g, &x)| *g *= elu1_grad(x));
    }
    (dq, dk, dv)
}

/// Attention of a single query row against cached keys and values, all of
/// which are visible to it.
pub fn attend_one(
    kind: AttentionKind,
    n_heads: usize,
    q: &[f64],
    keys: &[f64],
    values: &[f64],
    key_valid: &[bool],
) -> Vec<f64> {
    let d = q.len();
    let dh = d / n_heads;
    let n = key_valid.len();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; d];
    let mut w = vec![0.0; n];
    for h in 0..n_heads {
        let span = h * dh..(h + 1) * dh;
        for j in 0..n {
            let kj = &keys[j * d + span.start..j * d + span.end];
            w[j] = match kind {
                AttentionKind::Softmax => scale * q[span.clone()].iter().zip(kj).map(|(a, b)| a * b).sum::<f64>(),
                AttentionKind::Linear => q[span.clone()].iter().zip(kj).map(|(&a, &b)| elu1(a) * elu1(b)).sum(),
            };
        }
        let max = (0..n).filter(|&j| key_valid[j]).map(|j| w[j]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in 0..n {
            w[j] = match (key_valid[j], kind) {
                (false, _) => 0.0,
                (true, AttentionKind::Softmax) => (w[j] - max).exp(),
                (true, AttentionKind::Linear) => w[j],
            };
            sum += w[j];
        }
        if sum == 0.0 {
            continue;
        }
        for j in 0..n {
            let p = w[j] / sum;
            for (o, &x) in out[span.clone()].iter_mut().zip(&values[j * d + span.start..j * d + span.end]) {
                *o += p * x;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(row in prop::collection::vec(-50.0f64..50.0, 1..40)) {
            let mut r = row.clone();
            softmax(&mut r);
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(r.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }

        #[test]
        fn layer_norm_standardizes(x in prop::collection::vec(-10.0f64..10.0, 16), shift in -5.0f64..5.0) {
            // a spread of at least 1 keeps eps from shrinking the variance
            let mut x = x;
            x[0] = shift - 2.0;
            x[1] = shift + 2.0;
            let g = vec![1.0; 16];
            let b = vec![0.0; 16];
            let (_, cache) = layer_norm(&x, &g, &b);
            let mean = cache.xhat.iter().sum::<f64>() / 16.0;
            let var = cache.xhat.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            prop_assert!(mean.abs() < 1e-6);
            prop_assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn log_sum_exp_of_uniform_row() {
        assert!((log_sum_exp(&[0.0; 8]) - 8f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for x in [-3.0, -0.5, 0.0, 0.3, 2.0] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn positional_encoding_first_rows() {
        let pe = positional_encoding(2, 4);
        assert_eq!(&pe[..4], &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe[4] - 1f64.sin()).abs() < 1e-15);
        assert!((pe[6] - 0.01f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn causal_softmax_first_row_attends_to_itself() {
        let q = vec![0.3, -0.2, 0.1, 0.5];
        let v = vec![1.0, 2.0, 3.0, 4.0];
        let valid = [true, true];
        let s = AttnShape { kind: AttentionKind::Softmax, len: 2, d: 2, n_heads: 1, causal: true, key_valid: &valid };
        let (out, cache) = attention(s, &q, &q, &v);
        assert_eq!(&out[..2], &[1.0, 2.0]);
        assert_eq!(cache.probs[1], 0.0);
        let p = &cache.probs[2..4];
        assert!((p[0] + p[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn masked_keys_are_ignored() {
        let q = vec![0.3, -0.2, 0.1, 0.5, 0.7, 0.2];
        let v = vec![1.0, 2.0, 3.0, 4.0, 9.0, 9.0];
        for kind in [AttentionKind::Softmax, AttentionKind::Linear] {
            let s = AttnShape { kind, len: 3, d: 2, n_heads: 1, causal: false, key_valid: &[true, true, false] };
            let (out, _) = attention(s, &q, &q, &v);
            let s2 = AttnShape { kind, len: 2, d: 2, n_heads: 1, causal: false, key_valid: &[true, true] };
            let (out2, _) = attention(s2, &q[..4], &q[..4], &v[..4]);
            for (a, b) in out[..4].iter().zip(&out2) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }
}
