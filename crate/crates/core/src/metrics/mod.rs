//! Explanation quality metrics. Per-item metrics (robustness, infidelity,
//! number of features) stream item scores through an optional stop
//! controller; set-level metrics score a whole prototype set.

mod infidelity;
mod prototypes;
mod robustness;

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::explainers::{AttributionExplainer, FeatureAttribution};
use crate::strategies::{Decision, StopController, StopSettings};

pub use infidelity::{infidelity, InfidelityParams};
pub use prototypes::{diversity, non_representativeness, number_of_prototypes};
pub use robustness::{robustness, FnExplainer, PointExplainer, RobustnessParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    Robustness,
    Infidelity,
    NumberOfFeatures,
    NonRepresentativeness,
    Diversity,
    NumberOfPrototypes,
}

pub const ALL_METRICS: [MetricId; 6] = [
    MetricId::Robustness,
    MetricId::Infidelity,
    MetricId::NumberOfFeatures,
    MetricId::NonRepresentativeness,
    MetricId::Diversity,
    MetricId::NumberOfPrototypes,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Continuity,
    Correctness,
    CompactnessSize,
    CompactnessRedundancy,
    Completeness,
}

impl Property {
    pub fn as_str(self) -> &'static str {
        match self {
            Property::Continuity => "continuity",
            Property::Correctness => "correctness",
            Property::CompactnessSize => "compactness_size",
            Property::CompactnessRedundancy => "compactness_redundancy",
            Property::Completeness => "completeness",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Loss,
    Gain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Input {
    Dataset,
    Model,
    ExplainerFunction,
    Explanations,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricDescriptor {
    pub id: MetricId,
    pub property: Property,
    pub orientation: Orientation,
    pub explanan_tag: &'static str,
    pub signature: &'static [Input],
}

impl MetricId {
    pub fn id(self) -> &'static str {
        match self {
            MetricId::Robustness => "robustness",
            MetricId::Infidelity => "infidelity",
            MetricId::NumberOfFeatures => "number_of_features",
            MetricId::NonRepresentativeness => "non_representativeness",
            MetricId::Diversity => "diversity",
            MetricId::NumberOfPrototypes => "number_of_prototypes",
        }
    }

    pub fn parse(id: &str) -> Result<Self> {
        ALL_METRICS
            .into_iter()
            .find(|m| m.id() == id)
            .ok_or_else(|| Error::Unknown { what: "metric", id: id.into() })
    }

    pub fn descriptor(self) -> MetricDescriptor {
        use Input::*;
        let (property, orientation, explanan_tag, signature): (_, _, _, &'static [Input]) = match self {
            MetricId::Robustness => (Property::Continuity, Orientation::Loss, "feature-summary", &[Dataset, ExplainerFunction]),
            MetricId::Infidelity => (Property::Correctness, Orientation::Loss, "feature-summary", &[Dataset, Model, Explanations]),
            MetricId::NumberOfFeatures => (Property::CompactnessSize, Orientation::Loss, "feature-summary", &[Explanations]),
            MetricId::NonRepresentativeness => (Property::Completeness, Orientation::Loss, "data-point", &[Dataset, Explanations]),
            MetricId::Diversity => (Property::CompactnessRedundancy, Orientation::Gain, "data-point", &[Dataset, Explanations]),
            MetricId::NumberOfPrototypes => (Property::CompactnessSize, Orientation::Loss, "data-point", &[Explanations]),
        };
        MetricDescriptor {
            id: self,
            property,
            orientation,
            explanan_tag,
            signature,
        }
    }

    pub fn orientation(self) -> Orientation {
        self.descriptor().orientation
    }

    pub fn is_per_item(self) -> bool {
        matches!(self, MetricId::Robustness | MetricId::Infidelity | MetricId::NumberOfFeatures)
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ItemScore {
    pub target: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricResult {
    pub metric: MetricId,
    pub per_item: Option<Vec<ItemScore>>,
    pub aggregate: f64,
    pub items_evaluated: usize,
    pub stopped_early: bool,
    /// Black-box calls made while computing this metric.
    pub model_evaluations: usize,
    /// Explanation-function calls made while computing this metric.
    pub explainer_calls: usize,
    pub notes: Vec<String>,
}

impl MetricResult {
    fn set_level(metric: MetricId, value: f64) -> Self {
        Self {
            metric,
            per_item: None,
            aggregate: value,
            items_evaluated: 1,
            stopped_early: false,
            model_evaluations: 0,
            explainer_calls: 0,
            notes: Vec::new(),
        }
    }
}

/// How per-item scores are produced and when the stream may stop.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ItemSchedule {
    pub stop: Option<StopSettings>,
    /// Score chunks of items concurrently; results are consumed in target
    /// order, so the outcome matches the sequential schedule.
    pub parallel: bool,
}

pub(crate) struct ItemStream<T> {
    pub items: Vec<(usize, f64, T)>,
    pub stopped_early: bool,
}

pub(crate) fn run_items<T: Send>(
    targets: &[usize],
    schedule: ItemSchedule,
    score: impl Fn(usize) -> Result<(f64, T)> + Sync,
) -> Result<ItemStream<T>> {
    let mut controller = schedule.stop.map(StopController::new).transpose()?;
    let chunk = if schedule.parallel { rayon::current_num_threads().max(1) * 2 } else { 1 };
    let mut items = Vec::with_capacity(targets.len());
    let mut sum = 0.0;
    for block in targets.chunks(chunk) {
        let scored: Vec<Result<(f64, T)>> = if block.len() > 1 {
            block.par_iter().map(|&t| score(t)).collect()
        } else {
            block.iter().map(|&t| score(t)).collect()
        };
        for (&t, r) in block.iter().zip(scored) {
            let (v, extra) = r?;
            sum += v;
            items.push((t, v, extra));
            if let Some(c) = controller.as_mut() {
                if c.observe(sum / items.len() as f64) == Decision::Stop {
                    return Ok(ItemStream {
                        items,
                        stopped_early: true,
                    });
                }
            }
        }
    }
    Ok(ItemStream {
        items,
        stopped_early: false,
    })
}

pub(crate) fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub(crate) fn per_item_result<T>(metric: MetricId, stream: &ItemStream<T>) -> MetricResult {
    MetricResult {
        metric,
        per_item: Some(stream.items.iter().map(|(t, v, _)| ItemScore { target: *t, value: *v }).collect()),
        aggregate: mean(stream.items.iter().map(|i| i.1)),
        items_evaluated: stream.items.len(),
        stopped_early: stream.stopped_early,
        model_evaluations: 0,
        explainer_calls: 0,
        notes: Vec::new(),
    }
}

/// Where per-target attributions come from.
pub trait AttributionSource: Sync {
    fn attribution(&self, target: usize) -> Result<FeatureAttribution>;
}

impl AttributionSource for Vec<FeatureAttribution> {
    fn attribution(&self, target: usize) -> Result<FeatureAttribution> {
        self.iter()
            .find(|e| e.instance_index == target)
            .cloned()
            .ok_or_else(|| Error::Metric {
                metric: "attribution".into(),
                reason: format!("no explanation for row {target}"),
            })
    }
}

/// Explains each target at most once, on first request.
pub struct LazyAttributions<'a> {
    explainer: &'a AttributionExplainer,
    ds: &'a Dataset,
    seed: u64,
    slots: HashMap<usize, OnceLock<std::result::Result<FeatureAttribution, String>>>,
}

impl<'a> LazyAttributions<'a> {
    pub fn new(explainer: &'a AttributionExplainer, ds: &'a Dataset, targets: &[usize], seed: u64) -> Self {
        Self {
            explainer,
            ds,
            seed,
            slots: targets.iter().map(|&t| (t, OnceLock::new())).collect(),
        }
    }

    /// Explanations computed so far, in target order.
    pub fn computed(&self) -> Vec<FeatureAttribution> {
        let mut out: Vec<FeatureAttribution> = self
            .slots
            .values()
            .filter_map(|s| s.get().and_then(|r| r.as_ref().ok()).cloned())
            .collect();
        out.sort_by_key(|e| e.instance_index);
        out
    }
}

impl AttributionSource for LazyAttributions<'_> {
    fn attribution(&self, target: usize) -> Result<FeatureAttribution> {
        let slot = self.slots.get(&target).ok_or_else(|| Error::Metric {
            metric: "attribution".into(),
            reason: format!("row {target} is not a target"),
        })?;
        slot.get_or_init(|| self.explainer.explain_row(self.ds, target, self.seed).map_err(|e| e.to_string()))
            .clone()
            .map_err(|reason| Error::Explainer {
                explainer: "attribution".into(),
                reason,
            })
    }
}

/// Count of nonzero attribution weights per item.
pub fn number_of_features(source: &dyn AttributionSource, targets: &[usize], schedule: ItemSchedule) -> Result<MetricResult> {
    let stream = run_items(targets, schedule, |t| Ok((source.attribution(t)?.size() as f64, ())))?;
    Ok(per_item_result(MetricId::NumberOfFeatures, &stream))
}
