//! Greedy prototype selection minimising the squared maximum mean
//! discrepancy between the data and the prototype set under an RBF kernel.

use super::PrototypeSet;
use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmdParams {
    pub gamma: f64,
    pub k: usize,
}

/// `exp(-gamma * ||a - b||^2)` over all row pairs, row-major.
pub fn rbf_kernel_matrix(m: &Matrix, gamma: f64) -> Vec<f64> {
    let n = m.nrows();
    let norms: Vec<f64> = (0..n).map(|i| m.row_sq_norm(i)).collect();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let d2 = (norms[i] + norms[j] - 2.0 * m.row_dot(i, j)).max(0.0);
            let v = (-gamma * d2).exp();
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// Squared MMD between all `n` points and the subset `s`.
pub fn mmd2(kernel: &[f64], n: usize, s: &[usize]) -> f64 {
    let all: f64 = kernel.iter().sum::<f64>() / (n * n) as f64;
    if s.is_empty() {
        return all;
    }
    let m = s.len() as f64;
    let cross: f64 = s.iter().map(|&a| (0..n).map(|j| kernel[a * n + j]).sum::<f64>()).sum();
    let within: f64 = s.iter().map(|&a| s.iter().map(|&b| kernel[a * n + b]).sum::<f64>()).sum();
    (all - 2.0 * cross / (n as f64 * m) + within / (m * m)).max(0.0)
}

pub fn select_from_kernel(kernel: &[f64], n: usize, k: usize) -> Vec<usize> {
    let col_sum: Vec<f64> = (0..n).map(|c| (0..n).map(|j| kernel[c * n + j]).sum()).collect();
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut in_set = vec![false; n];
    // Running sums over the chosen set: cross term and pairwise term.
    let mut cross = 0.0;
    let mut within = 0.0;
    let mut to_chosen = vec![0.0; n];
    while chosen.len() < k {
        let m = (chosen.len() + 1) as f64;
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for c in 0..n {
            if in_set[c] {
                continue;
            }
            let w = within + 2.0 * to_chosen[c] + kernel[c * n + c];
            let j = 2.0 * (cross + col_sum[c]) / (n as f64 * m) - w / (m * m);
            if j > best.0 {
                best = (j, c);
            }
        }
        let c = best.1;
        cross += col_sum[c];
        within += 2.0 * to_chosen[c] + kernel[c * n + c];
        for (j, t) in to_chosen.iter_mut().enumerate() {
            *t += kernel[c * n + j];
        }
        in_set[c] = true;
        chosen.push(c);
    }
    chosen
}

pub fn mmd_critic_explain(ds: &Dataset, params: MmdParams, _seed: u64) -> Result<PrototypeSet> {
    let n = ds.n();
    if params.k == 0 || params.k > n {
        return Err(Error::Explainer {
            explainer: "mmd_critic".into(),
            reason: format!("k = {} but subset has {n} rows", params.k),
        });
    }
    let kernel = rbf_kernel_matrix(ds.observations(), params.gamma);
    Ok(PrototypeSet::unweighted(select_from_kernel(&kernel, n, params.k)))
}
