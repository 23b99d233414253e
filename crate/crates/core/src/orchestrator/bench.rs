//! Timing grid for the evaluation shortcuts on one attribution solution:
//! no shortcut, early stopping, shared intermediate results, and both.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use super::{prepare, AtStage, RunConfig, RunError, Stage};
use crate::error::{Error, Result};
use crate::explainers::{AttributionExplainer, FeatureAttribution, Family, Solution};
use crate::metrics::{infidelity, robustness, ItemSchedule, MetricId, MetricResult};
use crate::rng::{derive_seed, str_tag};
use crate::strategies::{sample_targets, InfidelityPerturbationCache, RobustnessMaximaCache};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub solution: Solution,
    /// The trial whose evaluation is timed.
    pub measured_hp: String,
    /// An earlier trial that fills the shared caches.
    pub prior_hp: String,
    pub sampling_fraction: f64,
    pub repeats: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            solution: Solution::Lime,
            measured_hp: String::new(),
            prior_hp: "num_features=5,num_perturbations=2000".into(),
            sampling_fraction: 1.0,
            repeats: 1,
        }
    }
}

pub const STRATEGIES: [&str; 4] = ["none", "early_stopping", "information_sharing", "both"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub metric: MetricId,
    pub strategy: &'static str,
    pub repeat: usize,
    pub seconds: f64,
    /// Oriented so that higher is better.
    pub score: f64,
    pub items_evaluated: usize,
    pub model_evaluations: usize,
    pub explainer_calls: usize,
    pub per_item: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub solution: Solution,
    pub targets: usize,
    pub rows: Vec<BenchRow>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    s / n.max(1) as f64
}

impl BenchReport {
    pub fn rows_for(&self, metric: MetricId, strategy: &str) -> impl Iterator<Item = &BenchRow> {
        let strategy = strategy.to_string();
        self.rows.iter().filter(move |r| r.metric == metric && r.strategy == strategy)
    }

    pub fn mean_seconds(&self, metric: MetricId, strategy: &str) -> f64 {
        mean(self.rows_for(metric, strategy).map(|r| r.seconds))
    }

    pub fn mean_score(&self, metric: MetricId, strategy: &str) -> f64 {
        mean(self.rows_for(metric, strategy).map(|r| r.score))
    }

    pub fn mean_model_evaluations(&self, metric: MetricId, strategy: &str) -> f64 {
        mean(self.rows_for(metric, strategy).map(|r| r.model_evaluations as f64))
    }

    /// Fraction of the no-shortcut time saved.
    pub fn time_saved(&self, metric: MetricId, strategy: &str) -> f64 {
        1.0 - self.mean_seconds(metric, strategy) / self.mean_seconds(metric, "none")
    }

    pub fn score_drift(&self, metric: MetricId, strategy: &str) -> f64 {
        let base = self.mean_score(metric, "none");
        (self.mean_score(metric, strategy) - base).abs() / base.abs().max(1e-12)
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        let _ = writeln!(md, "{} on {} targets\n", self.solution.id(), self.targets);
        let _ = writeln!(md, "| metric | strategy | time (s) | saved | score | drift | model calls | explainer calls |");
        let _ = writeln!(md, "|---|---|---|---|---|---|---|---|");
        for m in [MetricId::Robustness, MetricId::Infidelity] {
            for s in STRATEGIES {
                let rows: Vec<&BenchRow> = self.rows_for(m, s).collect();
                if rows.is_empty() {
                    continue;
                }
                let _ = writeln!(
                    md,
                    "| {} | {s} | {:.3} | {:.2}% | {:.4} | {:.2}% | {:.0} | {:.0} |",
                    m.id(),
                    self.mean_seconds(m, s),
                    100.0 * self.time_saved(m, s),
                    self.mean_score(m, s),
                    100.0 * self.score_drift(m, s),
                    self.mean_model_evaluations(m, s),
                    mean(rows.iter().map(|r| r.explainer_calls as f64)),
                );
            }
        }
        md
    }
}

fn row(metric: MetricId, strategy: &'static str, repeat: usize, seconds: f64, r: MetricResult) -> BenchRow {
    BenchRow {
        metric,
        strategy,
        repeat,
        seconds,
        score: -r.aggregate,
        items_evaluated: r.items_evaluated,
        model_evaluations: r.model_evaluations,
        explainer_calls: r.explainer_calls,
        per_item: r.per_item.unwrap_or_default().iter().map(|s| s.value).collect(),
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(f64, T)> {
    let start = Instant::now();
    let out = f()?;
    Ok((start.elapsed().as_secs_f64(), out))
}

/// Uses the config's data, model, seed and metric settings; early stopping
/// uses the config's metric stop settings whether or not the run enables it.
pub fn bench_strategies(config: &RunConfig, options: &BenchOptions) -> std::result::Result<BenchReport, RunError> {
    if options.solution.family() != Family::Attribution {
        return Err(Error::Config("the benchmark times attribution metrics".into())).at(Stage::Config);
    }
    let mut config = config.clone();
    config.strategies.sampling_fraction = 1.0;
    let prepared = prepare(&config)?;
    let ds = &prepared.explained;
    let model = prepared
        .model
        .as_ref()
        .ok_or_else(|| Error::Config("the benchmark needs a model".into()))
        .at(Stage::Config)?;
    let solution = options.solution;
    let space = solution.space(ds.d(), ds.n()).at(Stage::Config)?;
    let measured_h = space.parse_assignment(&options.measured_hp).at(Stage::Config)?;
    let prior_h = space.parse_assignment(&options.prior_hp).at(Stage::Config)?;
    let targets = sample_targets(ds.n(), options.sampling_fraction, derive_seed(config.seed, &[str_tag("targets")])).at(Stage::Config)?;
    let measured = AttributionExplainer::new(solution, &measured_h, model, ds).at(Stage::Config)?;
    let prior = AttributionExplainer::new(solution, &prior_h, model, ds).at(Stage::Config)?;
    let seed = config.seed;
    let rp = config.metrics.robustness;
    let ip = config.metrics.infidelity;
    let plain = ItemSchedule::default();
    let stopping = ItemSchedule {
        stop: Some(config.strategies.metric_stop),
        parallel: false,
    };
    let id = solution.id();

    let explain_all = |e: &AttributionExplainer| -> Result<Vec<FeatureAttribution>> {
        targets.iter().map(|&t| e.explain_row(ds, t, seed)).collect()
    };
    let measured_explanations = explain_all(&measured).at(Stage::Optimization)?;
    let prior_explanations = explain_all(&prior).at(Stage::Optimization)?;

    let mut rows = Vec::new();
    let mut work = || -> Result<()> {
        for repeat in 0..options.repeats.max(1) {
            let rob = MetricId::Robustness;
            let (t, r) = timed(|| robustness(&measured, ds, &targets, rp, seed, None, plain))?;
            rows.push(row(rob, "none", repeat, t, r));
            let (t, r) = timed(|| robustness(&measured, ds, &targets, rp, seed, None, stopping))?;
            rows.push(row(rob, "early_stopping", repeat, t, r));
            let cache = RobustnessMaximaCache::default();
            robustness(&prior, ds, &targets, rp, seed, Some((&cache, id)), plain)?;
            let (t, r) = timed(|| robustness(&measured, ds, &targets, rp, seed, Some((&cache, id)), plain))?;
            rows.push(row(rob, "information_sharing", repeat, t, r));
            let cache = RobustnessMaximaCache::default();
            robustness(&prior, ds, &targets, rp, seed, Some((&cache, id)), stopping)?;
            let (t, r) = timed(|| robustness(&measured, ds, &targets, rp, seed, Some((&cache, id)), stopping))?;
            rows.push(row(rob, "both", repeat, t, r));

            let inf = MetricId::Infidelity;
            let (t, r) = timed(|| infidelity(&measured_explanations, model, ds, &targets, ip, seed, None, plain))?;
            rows.push(row(inf, "none", repeat, t, r));
            let (t, r) = timed(|| infidelity(&measured_explanations, model, ds, &targets, ip, seed, None, stopping))?;
            rows.push(row(inf, "early_stopping", repeat, t, r));
            let cache = InfidelityPerturbationCache::default();
            infidelity(&prior_explanations, model, ds, &targets, ip, seed, Some(&cache), plain)?;
            let (t, r) = timed(|| infidelity(&measured_explanations, model, ds, &targets, ip, seed, Some(&cache), plain))?;
            rows.push(row(inf, "information_sharing", repeat, t, r));
            let cache = InfidelityPerturbationCache::default();
            infidelity(&prior_explanations, model, ds, &targets, ip, seed, Some(&cache), stopping)?;
            let (t, r) = timed(|| infidelity(&measured_explanations, model, ds, &targets, ip, seed, Some(&cache), stopping))?;
            rows.push(row(inf, "both", repeat, t, r));
        }
        Ok(())
    };
    work().at(Stage::Optimization)?;
    Ok(BenchReport {
        solution,
        targets: targets.len(),
        rows,
    })
}
