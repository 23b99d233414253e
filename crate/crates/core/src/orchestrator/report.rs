use std::fmt::Write as _;

use serde::Serialize;

use super::{ModelSpec, Prepared, RunConfig, RunReport};
use crate::data::SPARSE_DENSITY_THRESHOLD;
use crate::error::{Error, Result};
use crate::explainers::lime::{KERNEL_WIDTH_FACTOR, RIDGE_PENALTY};
use crate::explainers::protodash::NNLS_ITERATIONS;
use crate::explainers::Family;
use crate::hpo::gp::{BASE_JITTER, LENGTH_SCALES};
use crate::hpo::{EI_XI, LOCAL_CANDIDATES, LOCAL_SIGMA, RANDOM_CANDIDATES, RANDOM_EPOCHS};
use crate::metrics::MetricId;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionEntry {
    pub key: String,
    pub value: String,
}

fn entry(key: &str, value: impl Into<String>) -> DecisionEntry {
    DecisionEntry {
        key: key.into(),
        value: value.into(),
    }
}

/// Every behavioural default in effect for this run.
pub(super) fn decision_log(config: &RunConfig, prepared: &Prepared) -> Vec<DecisionEntry> {
    let s = &config.strategies;
    let r = &config.metrics.robustness;
    let i = &config.metrics.infidelity;
    let families: Vec<Family> = prepared.shortlist.explainers.iter().map(|e| e.family()).collect();
    let mut log = vec![
        entry("seed", config.seed.to_string()),
        entry(
            "stage order",
            "context resolved first; the model is loaded or trained only when a shortlisted solution needs it",
        ),
        entry("tabular preprocessing", "z-scores from raw column statistics; zero-variance columns map to 0"),
        entry("text preprocessing", "raw term counts times ln(n/df) without smoothing, rows L2-normalized"),
        entry("sparse storage", format!("used when density < {SPARSE_DENSITY_THRESHOLD}")),
        entry(
            "classifier output explained",
            "probability of the class predicted at the unperturbed point",
        ),
    ];
    if let ModelSpec::Mlp(m) = &config.model {
        let c = m.to_config(config.seed);
        log.push(entry(
            "mlp",
            format!(
                "one ReLU layer of width {}, Adam step {}, batch {}, {} max epochs, early stop after {} epochs on a {} validation split, Glorot-uniform init, seed {}",
                c.hidden_width, c.learning_rate, c.batch_size, c.max_epochs, c.patience, c.validation_fraction, c.seed
            ),
        ));
    }
    if config.subset.is_some() {
        log.push(entry("confusion split", "class 1 is positive; probabilities thresholded at 0.5"));
    }
    if families.contains(&Family::Attribution) {
        log.extend([
            entry(
                "lime",
                format!(
                    "Gaussian perturbations with per-feature std, exponential kernel width {KERNEL_WIDTH_FACTOR}*sqrt(d), ridge penalty {RIDGE_PENALTY}, refit on the top features"
                ),
            ),
            entry(
                "kernel shap",
                "background = feature means; base and full coalitions enforced as an exact constraint; auto l1 = none under full enumeration (coalitions >= 2^d - 2), aic otherwise",
            ),
            entry(
                "explainer randomness",
                "one stream per target, shared across trials and across robustness probes of that target",
            ),
            entry(
                "robustness",
                format!(
                    "max of |e(x)-e(z)|/|x-z| over a box of one feature scale: {} random candidates, {} refine rounds of {} samples shrinking by {}; {} candidates and {} refine rounds when a shared maximum is injected",
                    r.candidates_per_point, r.refine_rounds, r.refine_samples, r.shrink, r.warm_candidates, r.warm_refine_rounds
                ),
            ),
            entry(
                "infidelity",
                format!(
                    "{} uniform perturbations of half-width {} feature scales per target, seeded by (run seed, target)",
                    i.num_perturbations, i.noise_half_width
                ),
            ),
            entry("number of features", "count of nonzero weights in the explanation"),
            entry("per-item aggregation", "mean over explained targets"),
        ]);
    }
    if families.contains(&Family::Prototype) {
        log.extend([
            entry(
                "k-medoids",
                "pam is a best-improvement swap local search from the chosen init; alternate reassigns and recenters",
            ),
            entry("mmd-critic", "greedy prototype selection with an RBF kernel"),
            entry(
                "protodash",
                format!("greedy gradient selection, non-negative weights by {NNLS_ITERATIONS} projected-gradient steps"),
            ),
            entry("prototype distance", config.metrics.prototype_distance.as_str()),
            entry("diversity of a single prototype", "0"),
        ]);
    }
    log.extend([
        entry("score orientation", "loss metrics are negated so that higher is better"),
        entry(
            "scaling",
            "z-score against every successful trial so far, all trials rescored after each new one",
        ),
        entry("aggregation", "weighted mean of scaled scores over the shortlisted metrics"),
        entry(
            "ranking ties",
            "smaller mean explanation size first, then solution id, then epoch",
        ),
        entry(
            "per-size rows",
            if config.per_size_rows {
                "best row per solution and rounded explanation size"
            } else {
                "every successful trial"
            },
        ),
        entry(
            "optimizer",
            format!(
                "GP with squared-exponential kernel (length scale from {LENGTH_SCALES:?} by marginal likelihood, jitter {BASE_JITTER}), expected improvement xi={EI_XI} over {RANDOM_CANDIDATES} random and {LOCAL_CANDIDATES} local (sigma {LOCAL_SIGMA}) candidates; first {RANDOM_EPOCHS} epochs random; failed trials excluded from the fit"
            ),
        ),
        entry("epochs per solution", config.epochs.to_string()),
        entry("sampling fraction", format!("{}", s.sampling_fraction)),
        entry(
            "metric early stopping",
            if s.metric_early_stopping {
                format!(
                    "on: running mean, relative change < {} for {} items after {}",
                    s.metric_stop.relative_threshold, s.metric_stop.patience, s.metric_stop.min_samples
                )
            } else {
                "off".into()
            },
        ),
        entry(
            "optimizer early stopping",
            if s.hpo_early_stopping {
                format!(
                    "on: incumbent best, relative change < {} for {} epochs after {}",
                    s.hpo_stop.relative_threshold, s.hpo_stop.patience, s.hpo_stop.min_samples
                )
            } else {
                "off".into()
            },
        ),
        entry(
            "shared robustness maxima",
            if s.share_robustness_maxima {
                "on: keyed by (solution, target), injected as search candidates"
            } else {
                "off"
            },
        ),
        entry(
            "shared infidelity perturbations",
            if s.share_infidelity_perturbations {
                "on: keyed by (target, seed), model values reused"
            } else {
                "off"
            },
        ),
    ]);
    log
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionSummary {
    pub trial: usize,
    pub metric: MetricId,
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Five-number summaries of the per-item scores of every trial.
pub fn summarize(report: &RunReport) -> Vec<DistributionSummary> {
    let mut out = Vec::new();
    for line in &report.per_item {
        for &m in &report.shortlist.metrics {
            let mut v: Vec<f64> = line.per_item.iter().filter(|r| r.metric == m).map(|r| r.value).collect();
            if v.is_empty() {
                continue;
            }
            v.sort_by(f64::total_cmp);
            out.push(DistributionSummary {
                trial: line.trial,
                metric: m,
                count: v.len(),
                min: v[0],
                q1: quantile(&v, 0.25),
                median: quantile(&v, 0.5),
                q3: quantile(&v, 0.75),
                max: v[v.len() - 1],
            });
        }
    }
    out
}

pub fn render_report(report: &RunReport) -> String {
    let c = &report.config;
    let mut md = String::new();
    let _ = writeln!(md, "# Explainer recommendation\n");
    let _ = writeln!(md, "## Context\n");
    let _ = writeln!(md, "- question: `{}`", c.explanandum);
    let _ = writeln!(md, "- answer form: `{}`", c.explanan);
    let _ = writeln!(
        md,
        "- data: {} rows, {} features; {} rows explained",
        report.n_rows, report.n_features, report.explained_rows
    );
    if let Some(t) = &report.training {
        let last = t.train_loss.last().copied().unwrap_or(f64::NAN);
        let _ = writeln!(md, "- model: trained {} epochs, final training loss {last:.5}", t.epochs_run);
    }
    let ids: Vec<&str> = report.shortlist.explainers.iter().map(|s| s.id()).collect();
    let _ = writeln!(md, "- shortlisted solutions: {}", ids.join(", "));
    let weights: Vec<String> = report
        .shortlist
        .metrics
        .iter()
        .map(|m| format!("{} {}", m.id(), c.weights.get(m.id()).copied().unwrap_or(1.0)))
        .collect();
    let _ = writeln!(md, "- metric weights: {}", weights.join(", "));
    let _ = writeln!(md, "- trials: {} in {:.1} s\n", report.trials.len(), report.wall_seconds);

    let _ = writeln!(md, "## Ranking\n");
    let mut header = vec!["rank".to_string(), "aggregated".into()];
    header.extend(report.shortlist.metrics.iter().map(|m| format!("scaled {}", m.id())));
    header.extend(["solution".into(), "hyperparameters".into(), "size".into()]);
    let _ = writeln!(md, "| {} |", header.join(" | "));
    let _ = writeln!(md, "|{}", "---|".repeat(header.len()));
    for (i, t) in report.ranking.iter().enumerate() {
        let mut row = vec![(i + 1).to_string(), format!("{:.3}", t.aggregated)];
        row.extend(
            report
                .shortlist
                .metrics
                .iter()
                .map(|m| t.scaled.get(m).map_or(String::new(), |v| format!("{v:.3}"))),
        );
        row.extend([
            t.solution.id().to_string(),
            t.hyperparameters.joined(),
            format!("{:.2}", t.explanation_size),
        ]);
        let _ = writeln!(md, "| {} |", row.join(" | "));
    }
    let _ = writeln!(md);

    let summaries = summarize(report);
    if !summaries.is_empty() {
        let _ = writeln!(md, "## Score distributions\n");
        let _ = writeln!(md, "| trial | solution | metric | n | min | q1 | median | q3 | max |");
        let _ = writeln!(md, "|---|---|---|---|---|---|---|---|---|");
        for s in &summaries {
            let solution = report.trials[s.trial].solution.id();
            let _ = writeln!(
                md,
                "| {} | {solution} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |",
                s.trial,
                s.metric.id(),
                s.count,
                s.min,
                s.q1,
                s.median,
                s.q3,
                s.max
            );
        }
        let _ = writeln!(md);
    }

    let s = &report.strategy;
    let _ = writeln!(md, "## Strategy statistics\n");
    let _ = writeln!(
        md,
        "- sampling: {} of {} rows (fraction {})",
        s.targets_used, s.targets_available, s.sampling_fraction
    );
    let _ = writeln!(
        md,
        "- metric early stopping: {} of {} per-item evaluations stopped early; {} of {} items scored; about {:.1} s saved",
        s.early_stopped_evaluations, s.per_item_evaluations, s.items_evaluated, s.items_scheduled, s.estimated_seconds_saved
    );
    for (solution, stop) in &s.hpo_stops {
        match stop {
            Some(e) => {
                let _ = writeln!(md, "- optimizer for {} stopped at epoch {e}", solution.id());
            }
            None => {
                let _ = writeln!(md, "- optimizer for {} ran every epoch", solution.id());
            }
        }
    }
    let _ = writeln!(
        md,
        "- robustness maxima cache: {} hits, {} misses, {} stored",
        s.robustness_maxima.hits, s.robustness_maxima.misses, s.robustness_maxima.stored
    );
    let _ = writeln!(
        md,
        "- infidelity perturbation cache: {} hits, {} misses, {} stored; {} model evaluations avoided",
        s.infidelity_perturbations.hits, s.infidelity_perturbations.misses, s.infidelity_perturbations.stored, s.model_evaluations_avoided
    );
    let _ = writeln!(
        md,
        "- metric cost: {} model evaluations, {} explainer calls, {:.1} s in trials",
        s.model_evaluations, s.explainer_calls, s.trial_seconds
    );
    if s.reused_trials > 0 {
        let _ = writeln!(md, "- resumed: {} trials replayed from an earlier ledger", s.reused_trials);
    }
    let _ = writeln!(md);

    let failures: Vec<_> = report.trials.iter().enumerate().filter(|(_, t)| !t.succeeded()).collect();
    if !failures.is_empty() || !report.excluded.is_empty() {
        let _ = writeln!(md, "## Failures\n");
        for (solution, reason) in &report.excluded {
            let _ = writeln!(md, "- {} excluded after its cold start failed: {reason}", solution.id());
        }
        for (i, t) in failures {
            let _ = writeln!(
                md,
                "- trial {i} ({} {}): {}",
                t.solution.id(),
                t.hyperparameters.joined(),
                t.failure.as_deref().unwrap_or("")
            );
        }
        let _ = writeln!(md);
    }

    let _ = writeln!(md, "## Decision log\n");
    for d in &report.decision_log {
        let _ = writeln!(md, "- {}: {}", d.key, d.value);
    }
    md
}

/// A report needs a ranking section and a non-empty decision log.
pub fn validate_report(md: &str) -> Result<()> {
    if !md.lines().any(|l| l.trim() == "## Ranking") {
        return Err(Error::Config("report has no ranking section".into()));
    }
    let log = md
        .split("\n## Decision log\n")
        .nth(1)
        .ok_or_else(|| Error::Config("report has no decision log".into()))?;
    let entries = log
        .lines()
        .take_while(|l| !l.starts_with("## "))
        .filter(|l| l.starts_with("- "))
        .count();
    if entries == 0 {
        return Err(Error::Config("decision log is empty".into()));
    }
    Ok(())
}
