//! Local surrogate attributions: Gaussian perturbations around the
//! instance, exponential proximity kernel, ridge fit, top-|coef| selection
//! and a refit on the selected features.

use rand_distr::{Distribution, StandardNormal};

use super::FeatureAttribution;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::WeightedMoments;
use crate::models::{ExplainedOutput, PredictiveFunction};
use crate::data::DenseMatrix;
use crate::rng::rng_for;

pub const RIDGE_PENALTY: f64 = 1.0;
pub const KERNEL_WIDTH_FACTOR: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimeParams {
    pub num_features: usize,
    pub num_perturbations: usize,
}

/// Attribution weights (dense, length d) for the model output at `x`.
/// `scale[j]` is the perturbation standard deviation of feature `j`.
/// Randomness depends only on `stream_seed`, so nearby points explained
/// with the same seed share their perturbation offsets.
pub fn lime_weights(
    output: &ExplainedOutput,
    x: &[f64],
    scale: &[f64],
    params: LimeParams,
    stream_seed: u64,
) -> Result<Vec<f64>> {
    let d = x.len();
    if params.num_features == 0 || params.num_features > d {
        return Err(Error::Explainer {
            explainer: "lime".into(),
            reason: format!("num_features {} not in [1, {d}]", params.num_features),
        });
    }
    let n = params.num_perturbations.max(1);
    let mut rng = rng_for(stream_seed, &[0x11e]);
    let mut samples = Vec::with_capacity(n * d);
    let mut weights = Vec::with_capacity(n);
    let width2 = (KERNEL_WIDTH_FACTOR * (d as f64).sqrt()).powi(2);
    for _ in 0..n {
        let mut dist2 = 0.0;
        for j in 0..d {
            let eps: f64 = StandardNormal.sample(&mut rng);
            let offset = eps * scale[j];
            dist2 += offset * offset;
            samples.push(x[j] + offset);
        }
        weights.push((-dist2 / width2).exp());
    }
    let y = output.values(&DenseMatrix::new(n, d, samples.clone()))?;
    let moments = WeightedMoments::new(&samples, d, &y, &weights);
    let all: Vec<usize> = (0..d).collect();
    let (coef, _) = moments.ridge(&all, RIDGE_PENALTY);
    let selected = top_by_magnitude(&coef, params.num_features);
    let (refit, _) = moments.ridge(&selected, RIDGE_PENALTY);
    Ok(refit)
}

/// Indices of the `k` largest `|v|`, ties broken by lower index.
pub(crate) fn top_by_magnitude(v: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Explains each target row of a standardized dataset.
pub fn lime_explain(
    model: &PredictiveFunction,
    ds: &Dataset,
    params: LimeParams,
    targets: &[usize],
    seed: u64,
) -> Result<Vec<FeatureAttribution>> {
    if targets.is_empty() {
        return Err(Error::Explainer {
            explainer: "lime".into(),
            reason: "no targets".into(),
        });
    }
    let scale = ds.working_scale();
    targets
        .iter()
        .map(|&t| {
            let x = ds.row(t);
            let output = ExplainedOutput::at(model, &x)?;
            let w = lime_weights(&output, &x, &scale, params, super::target_seed(seed, t))?;
            Ok(FeatureAttribution::from_dense(t, w))
        })
        .collect()
}
