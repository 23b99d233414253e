//! Scoring of trials: orientation, z-scoring against the run's pool of
//! scores, weighted aggregation, and the ranking built from the ledger.

mod trial;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::explainers::{Hyperparameters, Solution};
use crate::metrics::{MetricId, Orientation};

pub use trial::{evaluate_trial, EvalEnv, MetricSettings, TrialOutcome};

/// Metric weights; a metric without an entry weighs 1.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PropertyWeights {
    weights: BTreeMap<MetricId, f64>,
}

impl PropertyWeights {
    pub fn new(weights: BTreeMap<MetricId, f64>) -> Self {
        Self { weights }
    }

    pub fn weight(&self, m: MetricId) -> f64 {
        self.weights.get(&m).copied().unwrap_or(1.0)
    }

    pub fn set(&mut self, m: MetricId, w: f64) {
        self.weights.insert(m, w);
    }
}

pub fn orient(raw: f64, orientation: Orientation) -> f64 {
    match orientation {
        Orientation::Gain => raw,
        Orientation::Loss => -raw,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoolStats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Population mean and standard deviation of oriented scores per metric.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScalingState {
    pools: BTreeMap<MetricId, Vec<f64>>,
}

impl ScalingState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, metric: MetricId, oriented: f64) {
        self.pools.entry(metric).or_default().push(oriented);
    }

    /// Pools rebuilt from every successful trial's raw scores.
    pub fn from_trials(trials: &[TrialRecord]) -> Self {
        let mut s = Self::new();
        for t in trials.iter().filter(|t| t.succeeded()) {
            for (&m, &raw) in &t.raw {
                s.observe(m, orient(raw, m.orientation()));
            }
        }
        s
    }

    pub fn stats(&self, metric: MetricId) -> Option<PoolStats> {
        let pool = self.pools.get(&metric).filter(|p| !p.is_empty())?;
        let n = pool.len() as f64;
        let mean = pool.iter().sum::<f64>() / n;
        let var = pool.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(PoolStats {
            mean,
            std: var.sqrt(),
            count: pool.len(),
        })
    }

    pub fn scale(&self, metric: MetricId, oriented: f64) -> Result<f64> {
        let s = self.stats(metric).ok_or_else(|| Error::Metric {
            metric: metric.id().into(),
            reason: "scaling requested before any score was observed".into(),
        })?;
        Ok(if s.std < 1e-12 { 0.0 } else { (oriented - s.mean) / s.std })
    }
}

/// `(1/c') * sum_q w_q * scaled_q` over the metrics with positive weight.
pub fn aggregate(scaled: &BTreeMap<MetricId, f64>, weights: &PropertyWeights) -> Result<f64> {
    let active: Vec<(MetricId, f64)> = scaled
        .iter()
        .map(|(&m, &v)| (m, v))
        .filter(|(m, _)| weights.weight(*m) > 0.0)
        .collect();
    if active.is_empty() {
        return Err(Error::Metric {
            metric: "aggregate".into(),
            reason: "no metric with positive weight".into(),
        });
    }
    let total: f64 = active.iter().map(|(m, v)| weights.weight(*m) * v).sum();
    Ok(total / active.len() as f64)
}

fn null_if_not_finite<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn neg_inf_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub items_evaluated: usize,
    pub stopped_early: bool,
    pub model_evaluations: usize,
    pub explainer_calls: usize,
}

/// One evaluated (solution, hyperparameters) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub solution: Solution,
    pub hyperparameters: Hyperparameters,
    pub epoch: usize,
    pub cold_start: bool,
    pub raw: BTreeMap<MetricId, f64>,
    pub scaled: BTreeMap<MetricId, f64>,
    /// Negative infinity (null in JSON) for failed trials.
    #[serde(serialize_with = "null_if_not_finite", deserialize_with = "neg_inf_if_null")]
    pub aggregated: f64,
    /// Mean selected features per explanation, or the prototype count.
    pub explanation_size: f64,
    pub wall_time: f64,
    #[serde(default)]
    pub metric_stats: BTreeMap<MetricId, MetricStats>,
    #[serde(default)]
    pub failure: Option<String>,
}

impl TrialRecord {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }

    pub fn failed(solution: Solution, hyperparameters: Hyperparameters, epoch: usize, cold_start: bool, reason: String) -> Self {
        Self {
            solution,
            hyperparameters,
            epoch,
            cold_start,
            raw: BTreeMap::new(),
            scaled: BTreeMap::new(),
            aggregated: f64::NEG_INFINITY,
            explanation_size: 0.0,
            wall_time: 0.0,
            metric_stats: BTreeMap::new(),
            failure: Some(reason),
        }
    }
}

/// Recomputes every successful trial's scaled and aggregated scores against
/// the pool of all trials.
pub fn rescore_all(trials: &mut [TrialRecord], weights: &PropertyWeights) -> Result<ScalingState> {
    let state = ScalingState::from_trials(trials);
    for t in trials.iter_mut().filter(|t| t.succeeded()) {
        let mut scaled = BTreeMap::new();
        for (&m, &raw) in &t.raw {
            scaled.insert(m, state.scale(m, orient(raw, m.orientation()))?);
        }
        t.aggregated = aggregate(&scaled, weights)?;
        t.scaled = scaled;
    }
    Ok(state)
}

fn rank_order(a: &TrialRecord, b: &TrialRecord) -> std::cmp::Ordering {
    b.aggregated
        .total_cmp(&a.aggregated)
        .then(a.explanation_size.total_cmp(&b.explanation_size))
        .then(a.solution.id().cmp(b.solution.id()))
        .then(a.epoch.cmp(&b.epoch))
}

/// Successful trials by descending aggregated score; ties go to the smaller
/// explanation, then the solution id. With `per_size_rows`, only the best
/// trial per (solution, rounded explanation size) is kept.
pub fn rank(trials: &[TrialRecord], per_size_rows: bool) -> Vec<TrialRecord> {
    let mut ok: Vec<TrialRecord> = trials.iter().filter(|t| t.succeeded()).cloned().collect();
    ok.sort_by(rank_order);
    if per_size_rows {
        let mut seen = Vec::new();
        ok.retain(|t| {
            let key = (t.solution, t.explanation_size.round() as i64);
            if seen.contains(&key) {
                false
            } else {
                seen.push(key);
                true
            }
        });
    }
    ok
}

fn csv_error(e: impl std::fmt::Display) -> Error {
    Error::Csv {
        path: "<ranking>".into(),
        message: e.to_string(),
    }
}

/// Columns: aggregated, one scaled column per metric, solution, hyperparameters.
pub fn write_ranking_csv(w: impl Write, ranking: &[TrialRecord], metrics: &[MetricId]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["aggregated".to_string()];
    header.extend(metrics.iter().map(|m| format!("scaled_{}", m.id())));
    header.extend(["solution".into(), "hyperparameters".into()]);
    out.write_record(&header).map_err(csv_error)?;
    for t in ranking {
        let mut row = vec![format!("{:.6}", t.aggregated)];
        row.extend(metrics.iter().map(|m| t.scaled.get(m).map_or(String::new(), |v| format!("{v:.6}"))));
        row.extend([t.solution.id().to_string(), t.hyperparameters.joined()]);
        out.write_record(&row).map_err(csv_error)?;
    }
    out.flush().map_err(csv_error)?;
    Ok(())
}

#[derive(Serialize)]
struct RankingRow<'a> {
    rank: usize,
    aggregated: f64,
    scaled: &'a BTreeMap<MetricId, f64>,
    raw: &'a BTreeMap<MetricId, f64>,
    solution: Solution,
    hyperparameters: &'a Hyperparameters,
    hyperparameters_joined: String,
    explanation_size: f64,
    epoch: usize,
    cold_start: bool,
}

pub fn ranking_json(ranking: &[TrialRecord]) -> Result<String> {
    let rows: Vec<RankingRow> = ranking
        .iter()
        .enumerate()
        .map(|(i, t)| RankingRow {
            rank: i + 1,
            aggregated: t.aggregated,
            scaled: &t.scaled,
            raw: &t.raw,
            solution: t.solution,
            hyperparameters: &t.hyperparameters,
            hyperparameters_joined: t.hyperparameters.joined(),
            explanation_size: t.explanation_size,
            epoch: t.epoch,
            cold_start: t.cold_start,
        })
        .collect();
    Ok(serde_json::to_string_pretty(&rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(solution: Solution, epoch: usize, raw: &[(MetricId, f64)], size: f64) -> TrialRecord {
        TrialRecord {
            solution,
            hyperparameters: Hyperparameters::default(),
            epoch,
            cold_start: epoch == 0,
            raw: raw.iter().copied().collect(),
            scaled: BTreeMap::new(),
            aggregated: 0.0,
            explanation_size: size,
            wall_time: 0.0,
            metric_stats: BTreeMap::new(),
            failure: None,
        }
    }

    fn uc1_weights() -> PropertyWeights {
        PropertyWeights::new(
            [(MetricId::Robustness, 1.0), (MetricId::Infidelity, 2.0), (MetricId::NumberOfFeatures, 0.5)]
                .into_iter()
                .collect(),
        )
    }

    #[test]
    fn orientation() {
        assert_eq!(orient(5.29, Orientation::Loss), -5.29);
        assert_eq!(orient(0.4, Orientation::Gain), 0.4);
        assert_eq!(orient(0.0, Orientation::Loss), 0.0);
    }

    #[test]
    fn z_scores() {
        let mut s = ScalingState::new();
        s.observe(MetricId::Diversity, -1.0);
        s.observe(MetricId::Diversity, 1.0);
        assert_eq!(s.scale(MetricId::Diversity, 1.0).unwrap(), 1.0);
        assert_eq!(s.scale(MetricId::Diversity, 0.0).unwrap(), 0.0);
        let mut c = ScalingState::new();
        c.observe(MetricId::Robustness, 3.0);
        c.observe(MetricId::Robustness, 3.0);
        assert_eq!(c.scale(MetricId::Robustness, 17.0).unwrap(), 0.0);
        assert!(c.scale(MetricId::Infidelity, 1.0).is_err());
    }

    #[test]
    fn weighted_mean_over_active_metrics() {
        let scaled: BTreeMap<MetricId, f64> =
            [(MetricId::Robustness, 0.727), (MetricId::Infidelity, 0.833), (MetricId::NumberOfFeatures, 1.351)]
                .into_iter()
                .collect();
        assert!((aggregate(&scaled, &uc1_weights()).unwrap() - 1.023).abs() < 0.0015);
        let zero: BTreeMap<MetricId, f64> = [(MetricId::Robustness, 0.0), (MetricId::Diversity, 0.0)].into_iter().collect();
        assert_eq!(aggregate(&zero, &PropertyWeights::default()).unwrap(), 0.0);
        assert!(aggregate(&BTreeMap::new(), &PropertyWeights::default()).is_err());
    }

    #[test]
    fn rescoring_is_idempotent_and_consistent() {
        let mut trials = vec![
            record(Solution::Lime, 0, &[(MetricId::Robustness, 1.0), (MetricId::Infidelity, 4.0), (MetricId::NumberOfFeatures, 5.0)], 5.0),
            record(Solution::KernelShap, 0, &[(MetricId::Robustness, 3.0), (MetricId::Infidelity, 1.0), (MetricId::NumberOfFeatures, 10.0)], 10.0),
            record(Solution::Lime, 1, &[(MetricId::Robustness, 2.0), (MetricId::Infidelity, 2.5), (MetricId::NumberOfFeatures, 1.0)], 1.0),
        ];
        let w = uc1_weights();
        rescore_all(&mut trials, &w).unwrap();
        let once = trials.clone();
        rescore_all(&mut trials, &w).unwrap();
        assert_eq!(once, trials);
        for t in &trials {
            assert!((aggregate(&t.scaled, &w).unwrap() - t.aggregated).abs() < 1e-9);
        }
        let mut empty: Vec<TrialRecord> = vec![];
        rescore_all(&mut empty, &w).unwrap();
    }

    #[test]
    fn ranking_order_and_per_size_rows() {
        let mut a = record(Solution::Lime, 1, &[], 5.0);
        a.aggregated = 1.0;
        let mut b = record(Solution::KernelShap, 2, &[], 3.0);
        b.aggregated = 1.0;
        let mut c = record(Solution::Lime, 3, &[], 5.0);
        c.aggregated = 0.5;
        let mut d = TrialRecord::failed(Solution::Lime, Hyperparameters::default(), 4, false, "boom".into());
        d.explanation_size = 1.0;
        let trials = vec![a, b, c, d];
        let r = rank(&trials, false);
        assert_eq!(r.iter().map(|t| t.epoch).collect::<Vec<_>>(), vec![2, 1, 3]);
        let r = rank(&trials, true);
        assert_eq!(r.iter().map(|t| t.epoch).collect::<Vec<_>>(), vec![2, 1]);
        let json = serde_json::to_string(&trials[3]).unwrap();
        assert!(json.contains("\"aggregated\":null"));
        let back: TrialRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.aggregated, f64::NEG_INFINITY);
    }

    proptest! {
        /// Zero-weight metrics cannot influence the order: permuting their raw
        /// scores across trials leaves the ranking unchanged.
        #[test]
        fn zero_weight_metric_is_ignored(raws in prop::collection::vec((0.0f64..5.0, 0.0f64..5.0, 0.0f64..5.0), 3..8), rot in 1usize..7) {
            let mut w = uc1_weights();
            w.set(MetricId::Infidelity, 0.0);
            let build = |shift: usize| {
                let n = raws.len();
                let mut trials: Vec<TrialRecord> = raws.iter().enumerate().map(|(i, r)| {
                    let inf = raws[(i + shift) % n].1;
                    record(Solution::Lime, i, &[(MetricId::Robustness, r.0), (MetricId::Infidelity, inf), (MetricId::NumberOfFeatures, r.2)], 1.0)
                }).collect();
                rescore_all(&mut trials, &w).unwrap();
                rank(&trials, false).iter().map(|t| t.epoch).collect::<Vec<_>>()
            };
            prop_assert_eq!(build(0), build(rot));
        }

        #[test]
        fn scaling_is_monotone(pool in prop::collection::vec(-10.0f64..10.0, 2..20), a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let mut s = ScalingState::new();
            for v in &pool { s.observe(MetricId::Robustness, *v); }
            let (sa, sb) = (s.scale(MetricId::Robustness, a).unwrap(), s.scale(MetricId::Robustness, b).unwrap());
            if a >= b { prop_assert!(sa >= sb); }
        }
    }
}
