//! Independent reference implementations shared by the integration suites.
#![allow(dead_code)]

/// Fused attention written as plain nested loops over `Vec<Vec<f64>>`.
pub fn scalar_fuse(
    qc: &[Vec<f64>],
    qp: &[Vec<f64>],
    k: &[Vec<f64>],
    v: &[Vec<f64>],
    beta: (f64, f64),
    lambda: f64,
) -> Vec<Vec<f64>> {
    let d = qc[0].len();
    let mut out = Vec::new();
    for i in 0..qc.len() {
        let mut q = vec![0.0; d];
        for c in 0..d {
            q[c] = beta.0 * qc[i][c] + beta.1 * qp[i][c];
        }
        let mut logits = Vec::new();
        for kj in k {
            let mut s = 0.0;
            for c in 0..d {
                s += q[c] * kj[c];
            }
            logits.push(lambda * s / (d as f64).sqrt());
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let mut row = vec![0.0; v[0].len()];
        for (j, vj) in v.iter().enumerate() {
            for c in 0..vj.len() {
                row[c] += e[j] / z * vj[c];
            }
        }
        out.push(row);
    }
    out
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
