//! Zero-mean Gaussian process with an isotropic squared-exponential kernel,
//! length-scale picked from a fixed grid by marginal likelihood.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const LENGTH_SCALES: [f64; 6] = [0.05, 0.1, 0.2, 0.4, 0.8, 1.6];
pub const BASE_JITTER: f64 = 1e-6;
const MAX_JITTER: f64 = 1e-2;
const REFINE_STEPS: usize = 2;

#[derive(Debug, Clone)]
pub struct GpPosterior {
    pub inputs: Vec<Vec<f64>>,
    /// Targets after averaging duplicates and standardizing.
    pub targets: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
    pub length_scale: f64,
    pub signal_variance: f64,
    pub jitter: f64,
    /// Log marginal likelihood per grid length-scale (None when the
    /// factorization failed even at the largest jitter).
    pub grid_lml: Vec<(f64, Option<f64>)>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub mean: f64,
    pub std: f64,
}

fn kernel(a: &[f64], b: &[f64], ell: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * ell * ell)).exp()
}

fn factorize(x: &[Vec<f64>], ell: f64) -> Option<(Cholesky<f64, Dyn>, f64)> {
    let n = x.len();
    let base = DMatrix::from_fn(n, n, |i, j| kernel(&x[i], &x[j], ell));
    let mut jitter = BASE_JITTER;
    while jitter <= MAX_JITTER * (1.0 + 1e-9) {
        let mut k = base.clone();
        for i in 0..n {
            k[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(k) {
            return Some((c, jitter));
        }
        jitter *= 10.0;
    }
    None
}

fn log_marginal(chol: &Cholesky<f64, Dyn>, y: &DVector<f64>) -> (f64, DVector<f64>) {
    let alpha = chol.solve(y);
    let n = y.len() as f64;
    let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    (-0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln(), alpha)
}

/// Averages targets of identical inputs, keeping first-seen order.
fn dedupe(x: &[Vec<f64>], y: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for (xi, &yi) in x.iter().zip(y) {
        match xs.iter().position(|p| p == xi) {
            Some(k) => {
                sums[k].0 += yi;
                sums[k].1 += 1;
            }
            None => {
                xs.push(xi.clone());
                sums.push((yi, 1));
            }
        }
    }
    (xs, sums.into_iter().map(|(s, c)| s / c as f64).collect())
}

pub fn fit_gp(x: &[Vec<f64>], y: &[f64]) -> Result<GpPosterior> {
    fit(x, y, &LENGTH_SCALES)
}

pub fn fit_gp_with_length_scale(x: &[Vec<f64>], y: &[f64], ell: f64) -> Result<GpPosterior> {
    fit(x, y, &[ell])
}

fn fit(x: &[Vec<f64>], y: &[f64], grid: &[f64]) -> Result<GpPosterior> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "a GP fit needs at least 2 matching observations, got {} inputs and {} targets",
            x.len(),
            y.len()
        )));
    }
    let (inputs, raw) = dedupe(x, y);
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = if var.sqrt() < 1e-12 { 1.0 } else { var.sqrt() };
    let targets: Vec<f64> = raw.iter().map(|v| (v - mean) / std).collect();
    let yv = DVector::from_vec(targets.clone());
    let mut best: Option<(f64, f64, Cholesky<f64, Dyn>, f64, DVector<f64>)> = None;
    let mut grid_lml = Vec::with_capacity(grid.len());
    for &ell in grid {
        match factorize(&inputs, ell) {
            Some((chol, jitter)) => {
                let (lml, alpha) = log_marginal(&chol, &yv);
                grid_lml.push((ell, Some(lml)));
                if best.as_ref().map_or(true, |b| lml > b.0) {
                    best = Some((lml, ell, chol, jitter, alpha));
                }
            }
            None => grid_lml.push((ell, None)),
        }
    }
    let (_, length_scale, chol, jitter, mut alpha) =
        best.ok_or_else(|| Error::Numerical("GP covariance not positive definite at any length-scale".into()))?;
    // The jitter only stabilizes the factorization; refinement against the
    // exact kernel matrix restores interpolation of the targets.
    let m = inputs.len();
    let exact = DMatrix::from_fn(m, m, |i, j| kernel(&inputs[i], &inputs[j], length_scale));
    for _ in 0..REFINE_STEPS {
        let residual = &yv - &exact * &alpha;
        alpha += chol.solve(&residual);
    }
    Ok(GpPosterior {
        inputs,
        targets,
        target_mean: mean,
        target_std: std,
        length_scale,
        signal_variance: 1.0,
        jitter,
        grid_lml,
        chol,
        alpha,
    })
}

impl GpPosterior {
    /// Prediction in standardized target units.
    pub fn predict_standardized(&self, z: &[f64]) -> Prediction {
        let k: DVector<f64> = DVector::from_iterator(
            self.inputs.len(),
            self.inputs.iter().map(|x| kernel(x, z, self.length_scale)),
        );
        let mean = k.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&k).unwrap_or_else(|| DVector::zeros(k.len()));
        let var = (self.signal_variance - v.dot(&v)).max(0.0);
        Prediction { mean, std: var.sqrt() }
    }

    /// Prediction in the original target units.
    pub fn predict(&self, z: &[f64]) -> Prediction {
        let p = self.predict_standardized(z);
        Prediction {
            mean: self.target_mean + self.target_std * p.mean,
            std: self.target_std * p.std,
        }
    }

    pub fn best_standardized(&self) -> f64 {
        self.targets.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Expected improvement over `best` for a maximization problem.
pub fn expected_improvement(p: Prediction, best: f64, xi: f64) -> f64 {
    let gain = p.mean - best - xi;
    if p.std < 1e-12 {
        return gain.max(0.0);
    }
    let z = gain / p.std;
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    (gain * n.cdf(z) + p.std * n.pdf(z)).max(0.0)
}
