//! Local Lipschitz estimate of an explanation function: the largest
//! explanation change per unit input change found by randomized search in a
//! per-feature box around each target.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{per_item_result, run_items, ItemSchedule, MetricId, MetricResult};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::explainers::{target_seed, AttributionExplainer};
use crate::rng::rng_for;
use crate::strategies::{Maximum, RobustnessMaximaCache};

/// Explanation function evaluated at arbitrary points.
pub trait PointExplainer: Sync {
    fn explain_at(&self, x: &[f64], stream_seed: u64) -> Result<Vec<f64>>;
}

impl PointExplainer for AttributionExplainer {
    fn explain_at(&self, x: &[f64], stream_seed: u64) -> Result<Vec<f64>> {
        self.weights_at(x, stream_seed)
    }
}

/// Closure-backed explanation function, mostly for calibration checks.
pub struct FnExplainer<F>(pub F);

impl<F: Fn(&[f64]) -> Vec<f64> + Sync> PointExplainer for FnExplainer<F> {
    fn explain_at(&self, x: &[f64], _stream_seed: u64) -> Result<Vec<f64>> {
        Ok((self.0)(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessParams {
    pub candidates_per_point: usize,
    pub refine_rounds: usize,
    pub refine_samples: usize,
    pub shrink: f64,
    /// Fresh candidates when a cached maximum is injected.
    pub warm_candidates: usize,
    pub warm_refine_rounds: usize,
}

impl Default for RobustnessParams {
    fn default() -> Self {
        Self {
            candidates_per_point: 40,
            refine_rounds: 2,
            refine_samples: 10,
            shrink: 0.25,
            warm_candidates: 8,
            warm_refine_rounds: 1,
        }
    }
}

const TAG: u64 = 0x70b5;

struct Probe<'a> {
    explainer: &'a dyn PointExplainer,
    x: &'a [f64],
    e_x: &'a [f64],
    stream: u64,
    calls: usize,
    failures: usize,
    best: Option<Maximum>,
}

impl Probe<'_> {
    fn try_point(&mut self, z: Vec<f64>) {
        let dx = dist(self.x, &z);
        if dx == 0.0 {
            return;
        }
        self.calls += 1;
        match self.explainer.explain_at(&z, self.stream) {
            Ok(e_z) => {
                let ratio = dist(self.e_x, &e_z) / dx;
                if self.best.as_ref().map_or(true, |b| ratio > b.ratio) {
                    self.best = Some(Maximum { point: z, ratio });
                }
            }
            Err(_) => self.failures += 1,
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn uniform_in_box(rng: &mut crate::rng::Rng, center: &[f64], half: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    center
        .iter()
        .zip(half)
        .enumerate()
        .map(|(j, (c, h))| {
            if *h > 0.0 {
                (c + rng.gen_range(-1.0..=1.0) * h).clamp(lo[j], hi[j])
            } else {
                *c
            }
        })
        .collect()
}

/// Mean over targets of the best ratio `||e(x) - e(z)|| / ||x - z||`.
/// With a cache, a stored maximum for (`solution`, target) is tried first and
/// the fresh search uses the smaller warm budget; new maxima are written back
/// for evaluated targets once the stream ends.
#[allow(clippy::too_many_arguments)]
pub fn robustness(
    explainer: &dyn PointExplainer,
    ds: &Dataset,
    targets: &[usize],
    params: RobustnessParams,
    seed: u64,
    cache: Option<(&RobustnessMaximaCache, &str)>,
    schedule: ItemSchedule,
) -> Result<MetricResult> {
    let scale = ds.working_scale();
    let calls = AtomicUsize::new(0);
    let stream = run_items(targets, schedule, |t| {
        let x = ds.row(t);
        let lo: Vec<f64> = x.iter().zip(&scale).map(|(v, s)| v - s).collect();
        let hi: Vec<f64> = x.iter().zip(&scale).map(|(v, s)| v + s).collect();
        let stream_seed = target_seed(seed, t);
        let e_x = explainer.explain_at(&x, stream_seed)?;
        let mut probe = Probe {
            explainer,
            x: &x,
            e_x: &e_x,
            stream: stream_seed,
            calls: 1,
            failures: 0,
            best: None,
        };
        let cached = cache.and_then(|(c, solution)| c.get(solution, t));
        let (fresh, rounds) = match cached {
            Some(m) => {
                probe.try_point(m.point);
                (params.warm_candidates, params.warm_refine_rounds)
            }
            None => (params.candidates_per_point, params.refine_rounds),
        };
        let mut rng = rng_for(seed, &[TAG, t as u64]);
        for _ in 0..fresh {
            let z = uniform_in_box(&mut rng, &x, &scale, &lo, &hi);
            probe.try_point(z);
        }
        let mut half: Vec<f64> = scale.clone();
        for _ in 0..rounds {
            half.iter_mut().for_each(|h| *h *= params.shrink);
            let Some(center) = probe.best.as_ref().map(|b| b.point.clone()) else { break };
            for _ in 0..params.refine_samples {
                let z = uniform_in_box(&mut rng, &center, &half, &lo, &hi);
                probe.try_point(z);
            }
        }
        calls.fetch_add(probe.calls, Ordering::Relaxed);
        let attempted = probe.calls - 1;
        if attempted > 0 && probe.failures * 2 > attempted {
            return Err(Error::Metric {
                metric: "robustness".into(),
                reason: format!("explanation failed on {} of {attempted} probes around row {t}", probe.failures),
            });
        }
        let best = probe.best.unwrap_or(Maximum { point: x.clone(), ratio: 0.0 });
        Ok((best.ratio, best))
    })?;
    let mut result = per_item_result(MetricId::Robustness, &stream);
    result.explainer_calls = calls.into_inner();
    if let Some((c, solution)) = cache {
        for (t, _, best) in stream.items {
            if best.point != ds.row(t) {
                c.put_if_better(solution, t, best);
            }
        }
    }
    Ok(result)
}
