//! Infidelity: mean squared gap between the change an attribution predicts
//! for a uniform input perturbation and the change the model shows.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{per_item_result, run_items, AttributionSource, ItemSchedule, MetricId, MetricResult};
use crate::data::{Dataset, DenseMatrix};
use crate::error::{Error, Result};
use crate::models::{ExplainedOutput, PredictiveFunction};
use crate::rng::rng_for;
use crate::strategies::{InfidelityPerturbationCache, PerturbationSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InfidelityParams {
    pub num_perturbations: usize,
    /// Half-width of the uniform noise in units of the feature scale.
    pub noise_half_width: f64,
}

impl Default for InfidelityParams {
    fn default() -> Self {
        Self {
            num_perturbations: 100,
            noise_half_width: 0.5,
        }
    }
}

const TAG: u64 = 0x1f1d;

fn draw(output: &ExplainedOutput, x: &[f64], scale: &[f64], params: InfidelityParams, seed: u64, target: usize) -> Result<PerturbationSet> {
    let d = x.len();
    let m = params.num_perturbations;
    let mut rng = rng_for(seed, &[TAG, target as u64]);
    let mut offsets = Vec::with_capacity(m * d);
    for _ in 0..m {
        for s in scale {
            offsets.push(rng.gen_range(-1.0..=1.0) * params.noise_half_width * s);
        }
    }
    let shifted: Vec<f64> = offsets.iter().enumerate().map(|(k, o)| x[k % d] - o).collect();
    let values = output.values(&DenseMatrix::new(m, d, shifted))?;
    Ok(PerturbationSet { offsets, values })
}

/// Per target: mean over draws `I` of `(I.e - (f(x) - f(x - I)))^2`.
/// Cached perturbations are keyed by (target, seed) and reused verbatim;
/// new sets are stored for evaluated targets once the stream ends.
#[allow(clippy::too_many_arguments)]
pub fn infidelity(
    explanations: &dyn AttributionSource,
    model: &PredictiveFunction,
    ds: &Dataset,
    targets: &[usize],
    params: InfidelityParams,
    seed: u64,
    cache: Option<&InfidelityPerturbationCache>,
    schedule: ItemSchedule,
) -> Result<MetricResult> {
    if params.num_perturbations == 0 {
        return Err(Error::Metric {
            metric: "infidelity".into(),
            reason: "needs at least one perturbation".into(),
        });
    }
    let d = ds.d();
    let scale = ds.working_scale();
    let evaluations = AtomicUsize::new(0);
    let stream = run_items(targets, schedule, |t| {
        let e = explanations.attribution(t)?;
        if e.weights.len() != d {
            return Err(Error::Dimension(format!(
                "explanation of row {t} has {} weights for {d} features",
                e.weights.len()
            )));
        }
        let x = ds.row(t);
        let output = ExplainedOutput::at(model, &x)?;
        let fx = output.value(&x)?;
        let probes = if model.task() == crate::data::Task::Classification { 2 } else { 1 };
        evaluations.fetch_add(probes, Ordering::Relaxed);
        let (set, fresh) = match cache.and_then(|c| c.get(t, seed)) {
            Some(s) => (s, false),
            None => {
                evaluations.fetch_add(params.num_perturbations, Ordering::Relaxed);
                (Arc::new(draw(&output, &x, &scale, params, seed, t)?), true)
            }
        };
        let total: f64 = set
            .offsets
            .chunks(d)
            .zip(&set.values)
            .map(|(i, f_shift)| {
                let predicted: f64 = i.iter().zip(&e.weights).map(|(a, b)| a * b).sum();
                let gap = predicted - (fx - f_shift);
                gap * gap
            })
            .sum();
        Ok((total / set.values.len() as f64, fresh.then_some(set)))
    })?;
    let mut result = per_item_result(MetricId::Infidelity, &stream);
    result.model_evaluations = evaluations.into_inner();
    if let Some(c) = cache {
        for (t, _, set) in stream.items {
            if let Some(set) = set {
                c.put_if_absent(t, seed, set);
            }
        }
    }
    Ok(result)
}
