//! Weighted prototype selection: greedy gradient-based choice of the next
//! prototype, nonnegative weights refit by projected gradient.

use serde::{Deserialize, Serialize};

use super::mmd::rbf_kernel_matrix;
use super::PrototypeSet;
use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};

pub const NNLS_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Gaussian,
    Linear,
}

impl Kernel {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gaussian" => Some(Kernel::Gaussian),
            "linear" => Some(Kernel::Linear),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtodashParams {
    pub kernel: Kernel,
    pub sigma: f64,
    pub k: usize,
}

pub fn kernel_matrix(m: &Matrix, kernel: Kernel, sigma: f64) -> Vec<f64> {
    match kernel {
        Kernel::Gaussian => rbf_kernel_matrix(m, 1.0 / (2.0 * sigma * sigma)),
        Kernel::Linear => {
            let n = m.nrows();
            let mut k = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let v = m.row_dot(i, j);
                    k[i * n + j] = v;
                    k[j * n + i] = v;
                }
            }
            k
        }
    }
}

/// `w . mu_S - 0.5 w' K_SS w`.
pub fn objective(kernel: &[f64], n: usize, mu: &[f64], s: &[usize], w: &[f64]) -> f64 {
    let mut v = 0.0;
    for (a, &i) in s.iter().enumerate() {
        v += w[a] * mu[i];
        for (b, &j) in s.iter().enumerate() {
            v -= 0.5 * w[a] * w[b] * kernel[i * n + j];
        }
    }
    v
}

pub fn mean_similarity(kernel: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|c| (0..n).map(|j| kernel[c * n + j]).sum::<f64>() / n as f64).collect()
}

fn refit_weights(kernel: &[f64], n: usize, mu: &[f64], s: &[usize], w: &mut [f64]) {
    let m = s.len();
    let lipschitz = s
        .iter()
        .map(|&i| s.iter().map(|&j| kernel[i * n + j].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if lipschitz <= 0.0 {
        return;
    }
    let step = 1.0 / lipschitz;
    let mut grad = vec![0.0; m];
    for _ in 0..NNLS_ITERATIONS {
        for a in 0..m {
            grad[a] = mu[s[a]] - (0..m).map(|b| kernel[s[a] * n + s[b]] * w[b]).sum::<f64>();
        }
        for a in 0..m {
            w[a] = (w[a] + step * grad[a]).max(0.0);
        }
    }
}

pub fn select_from_kernel(kernel: &[f64], n: usize, k: usize) -> PrototypeSet {
    let mu = mean_similarity(kernel, n);
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut w: Vec<f64> = Vec::with_capacity(k);
    let mut exhausted = false;
    while chosen.len() < k {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for c in (0..n).filter(|c| !chosen.contains(c)) {
            let g = mu[c] - chosen.iter().zip(&w).map(|(&s, ws)| kernel[c * n + s] * ws).sum::<f64>();
            if g > best.0 {
                best = (g, c);
            }
        }
        if best.1 == usize::MAX || best.0 <= 0.0 {
            exhausted = true;
            break;
        }
        chosen.push(best.1);
        w.push(0.0);
        refit_weights(kernel, n, &mu, &chosen, &mut w);
    }
    PrototypeSet {
        prototype_indices: chosen,
        prototype_weights: Some(w),
        exhausted,
    }
}

pub fn protodash_explain(ds: &Dataset, params: ProtodashParams, _seed: u64) -> Result<PrototypeSet> {
    let n = ds.n();
    if params.k == 0 || params.k > n {
        return Err(Error::Explainer {
            explainer: "protodash".into(),
            reason: format!("k = {} but subset has {n} rows", params.k),
        });
    }
    let kernel = kernel_matrix(ds.observations(), params.kernel, params.sigma);
    Ok(select_from_kernel(&kernel, n, params.k))
}
