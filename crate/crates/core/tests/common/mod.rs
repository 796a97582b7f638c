//! Brute-force oracles shared by the map tests and the acceptance run.

use semjpeg::msroi::{MapMode, RankWeighting};
use semjpeg::Tensor64;

pub fn at(head: &Tensor64, c: usize, d: usize, y: usize, x: usize) -> f64 {
    let s = head.shape();
    head.data()[((c * s[1] + d) * s[2] + y) * s[3] + x]
}

pub fn scores_oracle(head: &Tensor64) -> Vec<f64> {
    let s = head.shape();
    let mut z = vec![0.0; s[0]];
    for (c, zc) in z.iter_mut().enumerate() {
        for d in 0..s[1] {
            for y in 0..s[2] {
                for x in 0..s[3] {
                    *zc += at(head, c, d, y, x);
                }
            }
        }
    }
    z
}

/// Weight per category, by sorting `(score, index)` pairs.
pub fn weights_oracle(z: &[f64], mode: MapMode) -> Vec<f64> {
    match mode {
        MapMode::Threshold(t) => z.iter().map(|&v| if v > t { 1.0 } else { 0.0 }).collect(),
        MapMode::TopK { k, weighting } => {
            let mut order: Vec<(f64, usize)> = z.iter().copied().zip(0..).collect();
            order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let mut w = vec![0.0; z.len()];
            for (rank, &(_, c)) in order.iter().take(k).enumerate() {
                w[c] = match weighting {
                    RankWeighting::Linear => (k + 1 - (rank + 1)) as f64 / k as f64,
                    RankWeighting::Uniform => 1.0,
                };
            }
            w
        }
    }
}

pub fn map_oracle(head: &Tensor64, mode: MapMode) -> Vec<f64> {
    let s = head.shape();
    let weights = weights_oracle(&scores_oracle(head), mode);
    let mut raw = vec![0.0; s[2] * s[3]];
    for y in 0..s[2] {
        for x in 0..s[3] {
            for (c, wt) in weights.iter().enumerate() {
                for d in 0..s[1] {
                    raw[y * s[3] + x] += wt * at(head, c, d, y, x);
                }
            }
        }
    }
    let clamped: Vec<f64> = raw.iter().map(|v| v.max(0.0)).collect();
    let hi = clamped.iter().copied().fold(0.0, f64::max);
    let lo = clamped.iter().copied().fold(f64::INFINITY, f64::min);
    if hi <= 0.0 {
        clamped
    } else if hi == lo {
        vec![1.0; clamped.len()]
    } else {
        clamped.iter().map(|v| (v - lo) / (hi - lo)).collect()
    }
}
