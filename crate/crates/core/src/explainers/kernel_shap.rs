//! Kernel SHAP: Shapley-kernel weighted least squares over feature
//! coalitions with the efficiency constraint enforced exactly, optional
//! L1 path feature selection scored by AIC/BIC, then magnitude truncation.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::lime::top_by_magnitude;
use super::FeatureAttribution;
use crate::data::{Dataset, DenseMatrix};
use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::models::{ExplainedOutput, PredictiveFunction};
use crate::rng::rng_for;

/// Weight attached to the empty and full coalitions. The elimination used
/// below satisfies both anchors exactly, so the value only documents the
/// equivalent soft formulation.
pub const ANCHOR_WEIGHT: f64 = 1e6;

const MAX_FEATURES: usize = 62;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum L1Mode {
    Auto,
    Aic,
    Bic,
}

impl L1Mode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "auto" => Some(L1Mode::Auto),
            "aic" => Some(L1Mode::Aic),
            "bic" => Some(L1Mode::Bic),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Criterion {
    Aic,
    Bic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapParams {
    pub num_features: usize,
    pub num_coalitions: usize,
    pub l1_mode: L1Mode,
}

/// Number of coalitions strictly between empty and full.
fn interior_coalitions(d: usize) -> u64 {
    (1u64 << d) - 2
}

pub fn uses_full_enumeration(d: usize, num_coalitions: usize) -> bool {
    d <= 20 && num_coalitions as u64 >= interior_coalitions(d)
}

/// `auto` selects with AIC when coalitions are subsampled, never under full
/// enumeration.
fn resolve(mode: L1Mode, full: bool) -> Option<Criterion> {
    match mode {
        L1Mode::Auto if full => None,
        L1Mode::Auto | L1Mode::Aic => Some(Criterion::Aic),
        L1Mode::Bic => Some(Criterion::Bic),
    }
}

pub fn shapley_kernel_weight(d: usize, size: usize) -> f64 {
    let binom = binomial(d, size);
    (d as f64 - 1.0) / (binom * size as f64 * (d - size) as f64)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn coalitions(d: usize, budget: usize, stream_seed: u64) -> (Vec<u64>, bool) {
    if uses_full_enumeration(d, budget) {
        return ((1..=interior_coalitions(d)).collect(), true);
    }
    // Sizes are drawn in proportion to their total kernel mass; each draw
    // also contributes its complement.
    let mut rng = rng_for(stream_seed, &[0x5a4b]);
    let mass: Vec<f64> = (1..d).map(|s| (d as f64 - 1.0) / (s * (d - s)) as f64).collect();
    let total: f64 = mass.iter().sum();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(budget);
    let mut attempts = 0;
    while out.len() < budget && attempts < budget * 20 {
        attempts += 1;
        let mut u = rng.gen::<f64>() * total;
        let mut size = d - 1;
        for (i, m) in mass.iter().enumerate() {
            if u < *m {
                size = i + 1;
                break;
            }
            u -= m;
        }
        let mask = sample(&mut rng, d, size)
            .iter()
            .fold(0u64, |acc, j| acc | (1u64 << j));
        let full = (1u64 << d) - 1;
        for m in [mask, full & !mask] {
            if out.len() < budget && seen.insert(m) {
                out.push(m);
            }
        }
    }
    out.sort_unstable();
    (out, false)
}

/// Constrained weighted least squares over `features` (others fixed at 0):
/// minimizes sum_z w(z) (v(z) - sum_j z_j phi_j)^2 subject to
/// sum_j phi_j = total.
fn constrained_wls(masks: &[u64], values: &[f64], weights: &[f64], features: &[usize], total: f64, d: usize) -> Vec<f64> {
    let mut phi = vec![0.0; d];
    match features {
        [] => return phi,
        [only] => {
            phi[*only] = total;
            return phi;
        }
        _ => {}
    }
    let last = *features.last().unwrap();
    let free = &features[..features.len() - 1];
    let k = free.len();
    let mut ata = DMatrix::zeros(k, k);
    let mut atb = DVector::zeros(k);
    let bit = |m: u64, j: usize| ((m >> j) & 1) as f64;
    let mut row = vec![0.0; k];
    for ((&m, &v), &w) in masks.iter().zip(values).zip(weights) {
        let z_last = bit(m, last);
        for (r, &j) in free.iter().enumerate() {
            row[r] = bit(m, j) - z_last;
        }
        let target = v - z_last * total;
        for a in 0..k {
            if row[a] == 0.0 {
                continue;
            }
            atb[a] += w * row[a] * target;
            for b in a..k {
                ata[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            ata[(a, b)] = ata[(b, a)];
        }
    }
    let sol = solve_spd(&ata, &atb).unwrap_or_else(|| DVector::zeros(k));
    let mut rest = total;
    for (r, &j) in free.iter().enumerate() {
        phi[j] = sol[r];
        rest -= sol[r];
    }
    phi[last] = rest;
    phi
}

/// Weighted lasso path by coordinate descent; returns the support chosen by
/// the information criterion.
fn l1_select(masks: &[u64], y: &[f64], weights: &[f64], d: usize, criterion: Criterion) -> Vec<usize> {
    let n = masks.len();
    let wsum: f64 = weights.iter().sum();
    let w: Vec<f64> = weights.iter().map(|v| v / wsum).collect();
    let bit = |i: usize, j: usize| (masks[i] >> j) & 1 == 1;
    // Coordinate descent runs on the weighted Gram matrix; residual sums are
    // taken from the design directly.
    let mut gram = vec![0.0; d * d];
    let mut xty = vec![0.0; d];
    for i in 0..n {
        for j in (0..d).filter(|&j| bit(i, j)) {
            xty[j] += w[i] * y[i];
            for k in (0..d).filter(|&k| bit(i, k)) {
                gram[j * d + k] += w[i];
            }
        }
    }
    let lambda_max = xty.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut beta = vec![0.0; d];
    let mut g_beta = vec![0.0; d];
    let steps = 40;
    let mut best: Option<(f64, Vec<usize>)> = None;
    let ln_n = (n as f64).ln();
    let mean_y: f64 = (0..n).map(|i| w[i] * y[i]).sum();
    // Residuals below this are numerical noise; flooring keeps exact fits
    // from rewarding spurious extra features.
    let rss_floor = 1e-12 * (0..n).map(|i| w[i] * (y[i] - mean_y).powi(2)).sum::<f64>().max(1e-300);
    for s in 0..=steps {
        let lambda = if s == steps {
            0.0
        } else {
            lambda_max * 10f64.powf(-4.0 * s as f64 / (steps - 1) as f64)
        };
        for _sweep in 0..1000 {
            let mut max_delta: f64 = 0.0;
            for j in 0..d {
                let gjj = gram[j * d + j];
                if gjj == 0.0 {
                    continue;
                }
                let rho = xty[j] - g_beta[j] + gjj * beta[j];
                let new = soft_threshold(rho, lambda) / gjj;
                let delta = new - beta[j];
                if delta != 0.0 {
                    for k in 0..d {
                        g_beta[k] += delta * gram[k * d + j];
                    }
                    beta[j] = new;
                    max_delta = max_delta.max(delta.abs());
                }
            }
            if max_delta < 1e-10 {
                break;
            }
        }
        let scale = beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        let support: Vec<usize> = (0..d).filter(|&j| beta[j].abs() > 1e-8 * scale).collect();
        let rss: f64 = (0..n)
            .map(|i| {
                let fit: f64 = support.iter().filter(|&&j| bit(i, j)).map(|&j| beta[j]).sum();
                w[i] * (y[i] - fit).powi(2)
            })
            .sum::<f64>()
            .max(rss_floor);
        let df = support.len() as f64;
        let penalty = match criterion {
            Criterion::Aic => 2.0 * df,
            Criterion::Bic => ln_n * df,
        };
        let score = n as f64 * rss.ln() + penalty;
        if best.as_ref().map_or(true, |(b, _)| score < *b) {
            best = Some((score, support));
        }
    }
    best.map(|b| b.1).unwrap_or_default()
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Attribution of `x` against `background`.
pub fn shap_weights(
    output: &ExplainedOutput,
    x: &[f64],
    background: &[f64],
    params: ShapParams,
    stream_seed: u64,
) -> Result<Vec<f64>> {
    let d = x.len();
    let fail = |reason: String| Error::Explainer {
        explainer: "kernel_shap".into(),
        reason,
    };
    if d < 2 || d > MAX_FEATURES {
        return Err(fail(format!("needs 2..={MAX_FEATURES} features, got {d}")));
    }
    if params.num_features == 0 || params.num_features > d {
        return Err(fail(format!("num_features {} not in [1, {d}]", params.num_features)));
    }
    let (masks, full) = coalitions(d, params.num_coalitions, stream_seed);
    let mut rows = Vec::with_capacity(masks.len() * d);
    for &m in &masks {
        for j in 0..d {
            rows.push(if (m >> j) & 1 == 1 { x[j] } else { background[j] });
        }
    }
    let values = output.values(&DenseMatrix::new(masks.len(), d, rows))?;
    let fx = output.value(x)?;
    let fb = output.value(background)?;
    let total = fx - fb;
    let shifted: Vec<f64> = values.iter().map(|v| v - fb).collect();
    let weights: Vec<f64> = masks
        .iter()
        .map(|m| shapley_kernel_weight(d, m.count_ones() as usize))
        .collect();

    let features: Vec<usize> = match resolve(params.l1_mode, full) {
        None => (0..d).collect(),
        Some(c) => l1_select(&masks, &shifted, &weights, d, c),
    };
    let phi = constrained_wls(&masks, &shifted, &weights, &features, total, d);
    if params.num_features >= d {
        return Ok(phi);
    }
    let keep = top_by_magnitude(&phi, params.num_features);
    Ok((0..d).map(|j| if keep.contains(&j) { phi[j] } else { 0.0 }).collect())
}

pub fn kernel_shap_explain(
    model: &PredictiveFunction,
    ds: &Dataset,
    params: ShapParams,
    targets: &[usize],
    seed: u64,
) -> Result<Vec<FeatureAttribution>> {
    let background = ds.column_means();
    targets
        .iter()
        .map(|&t| {
            let x = ds.row(t);
            let output = ExplainedOutput::at(model, &x)?;
            let w = shap_weights(&output, &x, &background, params, super::target_seed(seed, t))?;
            Ok(FeatureAttribution::from_dense(t, w))
        })
        .collect()
}
