//! Evaluation of one (solution, hyperparameters) pair: explain, then score
//! every shortlisted metric.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{MetricStats, TrialRecord};
use crate::data::{Dataset, Distance};
use crate::error::{Error, Result};
use crate::explainers::{select_prototypes, AttributionExplainer, Explanation, Family, Hyperparameters, Solution};
use crate::metrics::{
    diversity, infidelity, non_representativeness, number_of_features, number_of_prototypes, robustness, AttributionSource,
    InfidelityParams, ItemSchedule, LazyAttributions, MetricId, MetricResult, RobustnessParams,
};
use crate::models::PredictiveFunction;
use crate::strategies::{InfidelityPerturbationCache, RobustnessMaximaCache, StopSettings};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSettings {
    pub robustness: RobustnessParams,
    pub infidelity: InfidelityParams,
    pub prototype_distance: Distance,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self {
            robustness: RobustnessParams::default(),
            infidelity: InfidelityParams::default(),
            prototype_distance: Distance::Euclidean,
        }
    }
}

/// Everything a trial needs besides the solution and its hyperparameters.
pub struct EvalEnv<'a> {
    /// Explained data: the full standardized dataset for attribution
    /// solutions, the selected subset for prototype solutions.
    pub ds: &'a Dataset,
    pub model: Option<&'a PredictiveFunction>,
    pub targets: &'a [usize],
    pub metrics: &'a [MetricId],
    pub settings: MetricSettings,
    pub stop: Option<StopSettings>,
    pub parallel: bool,
    pub maxima: Option<&'a RobustnessMaximaCache>,
    pub perturbations: Option<&'a InfidelityPerturbationCache>,
    pub seed: u64,
}

impl EvalEnv<'_> {
    fn schedule(&self) -> ItemSchedule {
        ItemSchedule {
            stop: self.stop,
            parallel: self.parallel,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub record: TrialRecord,
    pub results: Vec<MetricResult>,
    pub explanation: Option<Explanation>,
}

fn unsupported(solution: Solution, metric: MetricId) -> Error {
    Error::Metric {
        metric: metric.id().into(),
        reason: format!("does not apply to {}", solution.id()),
    }
}

fn attribution_trial(env: &EvalEnv, solution: Solution, h: &Hyperparameters) -> Result<(Vec<MetricResult>, Explanation, f64)> {
    let model = env.model.ok_or_else(|| Error::Explainer {
        explainer: solution.id().into(),
        reason: "a predictive model is required".into(),
    })?;
    if env.targets.is_empty() {
        return Err(Error::Explainer {
            explainer: solution.id().into(),
            reason: "no targets".into(),
        });
    }
    let explainer = AttributionExplainer::new(solution, h, model, env.ds)?;
    let lazy = LazyAttributions::new(&explainer, env.ds, env.targets, env.seed);
    let mut results = Vec::with_capacity(env.metrics.len());
    for &m in env.metrics {
        let r = match m {
            MetricId::Robustness => robustness(
                &explainer,
                env.ds,
                env.targets,
                env.settings.robustness,
                env.seed,
                env.maxima.map(|c| (c, solution.id())),
                env.schedule(),
            )?,
            MetricId::Infidelity => infidelity(
                &lazy,
                model,
                env.ds,
                env.targets,
                env.settings.infidelity,
                env.seed,
                env.perturbations,
                env.schedule(),
            )?,
            MetricId::NumberOfFeatures => number_of_features(&lazy, env.targets, env.schedule())?,
            other => return Err(unsupported(solution, other)),
        };
        results.push(r);
    }
    let mut computed = lazy.computed();
    if computed.is_empty() {
        computed.push(lazy.attribution(env.targets[0])?);
    }
    let size = computed.iter().map(|e| e.size() as f64).sum::<f64>() / computed.len() as f64;
    Ok((results, Explanation::Attributions(computed), size))
}

fn prototype_trial(env: &EvalEnv, solution: Solution, h: &Hyperparameters) -> Result<(Vec<MetricResult>, Explanation, f64)> {
    let set = select_prototypes(solution, env.ds, h, env.seed)?;
    let dist = env.settings.prototype_distance;
    let mut results = Vec::with_capacity(env.metrics.len());
    for &m in env.metrics {
        let r = match m {
            MetricId::NonRepresentativeness => non_representativeness(&set, env.ds, dist)?,
            MetricId::Diversity => diversity(&set, env.ds, dist)?,
            MetricId::NumberOfPrototypes => number_of_prototypes(&set),
            other => return Err(unsupported(solution, other)),
        };
        results.push(r);
    }
    let size = set.len() as f64;
    Ok((results, Explanation::Prototypes(set), size))
}

/// Never fails: errors become a failed record with the reason attached.
pub fn evaluate_trial(env: &EvalEnv, solution: Solution, h: &Hyperparameters, epoch: usize, cold_start: bool) -> TrialOutcome {
    let start = Instant::now();
    let attempt = solution.space(env.ds.d(), env.ds.n()).and_then(|space| {
        let h = space.validate(h)?;
        match solution.family() {
            Family::Attribution => attribution_trial(env, solution, &h),
            Family::Prototype => prototype_trial(env, solution, &h),
        }
    });
    match attempt {
        Ok((results, explanation, size)) => {
            let raw: BTreeMap<MetricId, f64> = results.iter().map(|r| (r.metric, r.aggregate)).collect();
            let bad = raw.iter().find(|(_, v)| !v.is_finite());
            if let Some((m, v)) = bad {
                let reason = format!("{} produced a non-finite score {v}", m.id());
                return TrialOutcome {
                    record: TrialRecord::failed(solution, h.clone(), epoch, cold_start, reason),
                    results,
                    explanation: Some(explanation),
                };
            }
            let metric_stats = results
                .iter()
                .map(|r| {
                    (
                        r.metric,
                        MetricStats {
                            items_evaluated: r.items_evaluated,
                            stopped_early: r.stopped_early,
                            model_evaluations: r.model_evaluations,
                            explainer_calls: r.explainer_calls,
                        },
                    )
                })
                .collect();
            TrialOutcome {
                record: TrialRecord {
                    solution,
                    hyperparameters: h.clone(),
                    epoch,
                    cold_start,
                    raw,
                    scaled: BTreeMap::new(),
                    aggregated: 0.0,
                    explanation_size: size,
                    wall_time: start.elapsed().as_secs_f64(),
                    metric_stats,
                    failure: None,
                },
                results,
                explanation: Some(explanation),
            }
        }
        Err(e) => TrialOutcome {
            record: TrialRecord::failed(solution, h.clone(), epoch, cold_start, e.to_string()),
            results: Vec::new(),
            explanation: None,
        },
    }
}
