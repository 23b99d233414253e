//! Acceptance checks. Each test prints one `PASS`/`FAIL` line to the real
//! stdout (not the captured one) and then asserts.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use xairec::context::{shortlist, Registry, ShortlistOutcome};
use xairec::data::{standardize, Dataset, Distance, Task};
use xairec::evaluator::{rank, rescore_all, aggregate, PropertyWeights, TrialRecord};
use xairec::explainers::kernel_shap::shap_weights;
use xairec::explainers::kmedoids::kmedoids_fit;
use xairec::explainers::{
    Algorithm, FeatureAttribution, HyperparameterSpace, Hyperparameters, Init, KMedoidsParams, L1Mode, ParamSpec,
    PrototypeSet, ShapParams, Solution,
};
use xairec::hpo::{run_hpo, HpoSettings, Objective, RANDOM_EPOCHS};
use xairec::metrics::{
    diversity, infidelity, non_representativeness, robustness, FnExplainer, ItemSchedule, MetricId, RobustnessParams,
};
use xairec::models::{analytic_gradient, ExplainedOutput, FnModel, LinearModel, PredictiveFunction};
use xairec::orchestrator::{bench_strategies, bundled_config, run, BenchOptions, RunConfig, RunOptions};
use xairec::rng::rng_for;
use xairec::strategies::StopSettings;

/// Heavy checks time themselves; run one at a time.
static SERIAL: Mutex<()> = Mutex::new(());

fn verdict(n: usize, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "\nacceptance {n:>2} {name}: {} ({detail})\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "{}", line.trim_end());
}

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

// ---------------------------------------------------------------- 1

/// (aggregated, scaled_1, scaled_2, scaled_3) as printed in two reference
/// rankings: an attribution run weighted 1/2/0.5 and a prototype run
/// weighted 2/1/2. Three decimals each.
const ATTRIBUTION_ROWS: [[f64; 4]; 6] = [
    [1.023, 0.727, 0.833, 1.351],
    [1.019, 0.703, 0.991, 0.745],
    [0.963, 0.682, 1.068, 0.139],
    [-0.287, 0.310, -0.924, 1.351],
    [-0.633, -0.319, -0.975, 0.745],
    [-0.639, 0.014, -1.000, 0.139],
];
const PROTOTYPE_ROWS: [[f64; 4]; 6] = [
    [0.483, 0.904, 0.248, -0.303],
    [0.466, 0.463, 0.412, 0.030],
    [0.384, 0.224, 0.201, 0.251],
    [0.367, -0.660, 0.589, 0.917],
    [0.331, -0.444, 0.048, 0.917],
    [0.255, -0.580, 0.092, 0.917],
];
/// A second attribution ranking with the same weights.
const EXTRA_ATTRIBUTION_ROWS: [[f64; 4]; 6] = [
    [1.412, 0.744, 1.435, 1.243],
    [1.282, 0.575, 1.325, 1.243],
    [0.361, 0.633, 0.117, 0.430],
    [0.176, 0.339, -0.014, 0.430],
    [0.070, 0.262, 0.070, -0.383],
    [-0.185, 0.599, -0.481, -0.383],
];

fn worst_row_error(rows: &[[f64; 4]], metrics: [MetricId; 3], w: [f64; 3]) -> f64 {
    let weights = PropertyWeights::new(metrics.iter().copied().zip(w).collect());
    rows.iter()
        .map(|r| {
            let scaled: BTreeMap<MetricId, f64> = metrics.iter().copied().zip([r[1], r[2], r[3]]).collect();
            let ours = aggregate(&scaled, &weights).unwrap();
            let by_hand = (w[0] * r[1] + w[1] * r[2] + w[2] * r[3]) / 3.0;
            assert!((ours - by_hand).abs() < 1e-12);
            (ours - r[0]).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn acceptance_01_aggregation_arithmetic() {
    let _g = serial();
    use MetricId::*;
    let attr = [Robustness, Infidelity, NumberOfFeatures];
    let proto = [NonRepresentativeness, Diversity, NumberOfPrototypes];
    let a = worst_row_error(&ATTRIBUTION_ROWS, attr, [1.0, 2.0, 0.5]);
    let p = worst_row_error(&PROTOTYPE_ROWS, proto, [2.0, 1.0, 2.0]);
    let extra = worst_row_error(&EXTRA_ATTRIBUTION_ROWS, attr, [1.0, 2.0, 0.5]);
    let worst = a.max(p);
    verdict(
        1,
        "aggregation arithmetic",
        worst <= 0.0015,
        &format!("12 rows, worst |error| {worst:.5}; 6 further rows {extra:.5}"),
    );
    assert!(extra <= 0.0015);
}

// ---------------------------------------------------------------- 2

/// Shapley values by averaging marginal contributions over every ordering.
fn shapley_by_orderings(f: &dyn Fn(&[f64]) -> f64, x: &[f64], bg: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut perm: Vec<usize> = (0..d).collect();
    let mut phi = vec![0.0; d];
    let mut count = 0usize;
    loop {
        let mut z = bg.to_vec();
        let mut prev = f(&z);
        for &j in &perm {
            z[j] = x[j];
            let now = f(&z);
            phi[j] += now - prev;
            prev = now;
        }
        count += 1;
        // next lexicographic permutation
        let Some(i) = (0..d - 1).rev().find(|&i| perm[i] < perm[i + 1]) else { break };
        let k = (i + 1..d).rev().find(|&k| perm[k] > perm[i]).unwrap();
        perm.swap(i, k);
        perm[i + 1..].reverse();
    }
    phi.iter().map(|v| v / count as f64).collect()
}

#[test]
fn acceptance_02_kernel_shap_exactness() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = rng_for(2024, &[]);
    let mut worst = 0.0f64;
    for case in 0..20 {
        let d = rng.gen_range(2..=5);
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let bg: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync> = if case % 2 == 0 {
            let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let b = rng.gen_range(-1.0..1.0);
            Arc::new(move |z: &[f64]| b + z.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>())
        } else {
            // product over a random subset of at least two features, plus a scale
            let mut members: Vec<usize> = (0..d).filter(|_| rng.gen_bool(0.7)).collect();
            if members.len() < 2 {
                members = vec![0, 1];
            }
            let s = rng.gen_range(0.5..2.0);
            Arc::new(move |z: &[f64]| s * members.iter().map(|&j| z[j]).product::<f64>())
        };
        let g = f.clone();
        let model = FnModel::shared(Task::Regression, move |z: &[f64]| g(z));
        let output = ExplainedOutput::at(&model, &x).unwrap();
        let params = ShapParams {
            num_features: d,
            num_coalitions: 10_000,
            l1_mode: L1Mode::Auto,
        };
        let phi = shap_weights(&output, &x, &bg, params, case).unwrap();
        let oracle = shapley_by_orderings(&*f, &x, &bg);
        for (a, b) in phi.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        2,
        "kernel shap exactness",
        worst <= 1e-6 && secs < 10.0,
        &format!("20 models, worst |error| {worst:.2e}, {secs:.2}s"),
    );
}

// ---------------------------------------------------------------- 3

fn gaussian_data(seed: u64, n: usize, d: usize) -> Dataset {
    let mut rng = rng_for(seed, &[]);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| normal.sample(&mut rng)).collect()).collect();
    standardize(&Dataset::from_rows(&rows, vec![0.0; n], Task::Regression).unwrap())
}

#[test]
fn acceptance_03_infidelity_null_case() {
    let _g = serial();
    let start = Instant::now();
    let ds = gaussian_data(31, 60, 4);
    let model: PredictiveFunction = Arc::new(LinearModel::new(vec![1.5, -2.0, 0.25, 3.0], -0.7));
    let targets: Vec<usize> = (0..ds.n()).collect();
    let explanations: Vec<FeatureAttribution> = targets
        .iter()
        .map(|&t| FeatureAttribution::from_dense(t, analytic_gradient(model.as_ref(), &ds.row(t)).unwrap()))
        .collect();
    let r = infidelity(&explanations, &model, &ds, &targets, Default::default(), 9, None, ItemSchedule::default()).unwrap();
    let worst = r.per_item.unwrap().iter().map(|i| i.value).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        3,
        "infidelity null case",
        worst < 1e-12 && secs < 1.0,
        &format!("{} targets, worst {worst:.2e}, {secs:.3}s", targets.len()),
    );
}

// ---------------------------------------------------------------- 4

#[test]
fn acceptance_04_robustness_calibration() {
    let _g = serial();
    let start = Instant::now();
    let ds = gaussian_data(11, 30, 2);
    let targets: Vec<usize> = (0..10).collect();
    let score = |f: &(dyn Fn(&[f64]) -> Vec<f64> + Sync), candidates: usize| {
        let p = RobustnessParams {
            candidates_per_point: candidates,
            ..Default::default()
        };
        robustness(&FnExplainer(f), &ds, &targets, p, 3, None, ItemSchedule::default())
            .unwrap()
            .per_item
            .unwrap()
            .iter()
            .map(|i| i.value)
            .collect::<Vec<f64>>()
    };
    let identity = score(&|x: &[f64]| x.to_vec(), 40);
    let constant = score(&|_: &[f64]| vec![0.3, -1.0], 40);
    let stretched = score(&|x: &[f64]| vec![3.0 * x[0], x[1]], 200);
    let id_err = identity.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let const_max = constant.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let (lo, hi) = stretched
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let secs = start.elapsed().as_secs_f64();
    let pass = id_err <= 1e-9 && const_max == 0.0 && lo >= 2.5 && hi <= 3.0 + 1e-12 && secs < 5.0;
    verdict(
        4,
        "robustness calibration",
        pass,
        &format!("identity |L-1| {id_err:.1e}, constant {const_max}, diag(3,1) in [{lo:.4}, {hi:.4}], {secs:.2}s"),
    );
}

// ---------------------------------------------------------------- 5

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s.sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if aa == 0.0 && bb == 0.0 {
        0.0
    } else if aa == 0.0 || bb == 0.0 {
        1.0
    } else {
        1.0 - ab / (aa.sqrt() * bb.sqrt())
    }
}

#[test]
fn acceptance_05_prototype_metric_oracles() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = rng_for(505, &[]);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(2..=20);
        let d = rng.gen_range(1..=6);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let ds = Dataset::from_rows(&rows, vec![0.0; n], Task::Classification).unwrap();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let k = rng.gen_range(1..=n);
        let chosen = idx[..k].to_vec();
        let p = PrototypeSet::unweighted(chosen.clone());
        for (distance, dist) in [(Distance::Euclidean, euclid as fn(&[f64], &[f64]) -> f64), (Distance::Cosine, cosine)] {
            let mut nr = 0.0;
            for r in &rows {
                let mut best = f64::INFINITY;
                for &c in &chosen {
                    best = best.min(dist(r, &rows[c]));
                }
                nr += best;
            }
            nr /= n as f64;
            let mut div = 0.0;
            let mut pairs = 0usize;
            for a in 0..k {
                for b in 0..k {
                    if a < b {
                        div += dist(&rows[chosen[a]], &rows[chosen[b]]);
                        pairs += 1;
                    }
                }
            }
            let div = if pairs == 0 { 0.0 } else { div / pairs as f64 };
            worst = worst.max((non_representativeness(&p, &ds, distance).unwrap().aggregate - nr).abs());
            worst = worst.max((diversity(&p, &ds, distance).unwrap().aggregate - div).abs());
        }
    }

    let mut exact = 0;
    let mut misses = Vec::new();
    let instances = 50;
    for case in 0..instances {
        let n = rng.gen_range(3..=8);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]).collect();
        let ds = Dataset::from_rows(&rows, vec![0.0; n], Task::Classification).unwrap();
        let params = KMedoidsParams {
            init: Init::Build,
            max_iter: 300,
            algorithm: Algorithm::Pam,
            metric: Distance::Euclidean,
            k: 2,
        };
        let fit = kmedoids_fit(&ds, params, case).unwrap();
        let pair_cost = |a: usize, b: usize| -> f64 { rows.iter().map(|r| euclid(r, &rows[a]).min(euclid(r, &rows[b]))).sum() };
        let mut best = f64::INFINITY;
        for a in 0..n {
            for b in a + 1..n {
                best = best.min(pair_cost(a, b));
            }
        }
        // Both sides summed by the oracle, so equal sets give equal bits.
        let ours = pair_cost(fit.medoids[0], fit.medoids[1]);
        assert!((ours - fit.cost).abs() <= 1e-9 * ours.max(1.0));
        if ours == best {
            exact += 1;
        } else {
            misses.push(format!("n={n} cost {ours:.6} vs {best:.6}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-9 && exact == instances && secs < 10.0;
    verdict(
        5,
        "prototype metric oracles",
        pass,
        &format!(
            "NR/diversity worst |error| {worst:.1e} on 50 sets x 2 distances; PAM exact on {exact}/{instances}{}; {secs:.2}s",
            if misses.is_empty() { String::new() } else { format!(" [{}]", misses.join("; ")) }
        ),
    );
}

// ---------------------------------------------------------------- 6

struct Parabola {
    trials: Vec<(Hyperparameters, Option<f64>)>,
}

impl Objective for Parabola {
    fn evaluate(&mut self, h: &Hyperparameters, _epoch: usize) -> xairec::Result<()> {
        let x = h.real("x")?;
        self.trials.push((h.clone(), Some(-(x - 0.7) * (x - 0.7))));
        Ok(())
    }
    fn observations(&self) -> Vec<(Hyperparameters, Option<f64>)> {
        self.trials.clone()
    }
}

#[test]
fn acceptance_06_bayesian_optimization_convergence() {
    let _g = serial();
    let start = Instant::now();
    let space = HyperparameterSpace::new(vec![ParamSpec::continuous("x", 0.0, 1.0, 0.5, false)]).unwrap();
    let mut hits = 0;
    let mut max_evals = 0;
    for seed in 0..20 {
        let mut objective = Parabola { trials: Vec::new() };
        objective.evaluate(&space.defaults(), 0).unwrap();
        let settings = HpoSettings {
            epochs: 19,
            random_epochs: RANDOM_EPOCHS,
            stop: None,
        };
        run_hpo(&space, settings, seed, &mut objective).unwrap();
        max_evals = max_evals.max(objective.trials.len());
        let best = objective
            .trials
            .iter()
            .max_by(|a, b| a.1.unwrap().total_cmp(&b.1.unwrap()))
            .unwrap();
        if (best.0.real("x").unwrap() - 0.7).abs() <= 0.05 {
            hits += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        6,
        "bayesian optimization convergence",
        hits >= 18 && max_evals <= 20 && secs < 30.0,
        &format!("{hits}/20 seeds within 0.05 after {max_evals} evaluations, {secs:.2}s"),
    );
}

// ---------------------------------------------------------------- 7

fn files_equal(a: &Path, b: &Path, name: &str) -> bool {
    fs::read(a.join(name)).unwrap() == fs::read(b.join(name)).unwrap()
}

#[test]
fn acceptance_07_end_to_end_determinism() {
    let _g = serial();
    let start = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let base = RunConfig::load(bundled_config("use_case_1")).unwrap();
    assert_eq!(base.epochs, 25);
    assert_eq!(base.explanan, "feature-summary");
    let mut reports = Vec::new();
    for dir in [a.path(), b.path()] {
        let mut c = base.clone();
        c.output_dir = dir.to_path_buf();
        reports.push(run(&c, &RunOptions::default()).unwrap());
    }
    let identical = files_equal(a.path(), b.path(), "ranking.csv") && files_equal(a.path(), b.path(), "ranking.json");
    let report = &reports[0];
    let mut in_domain = true;
    for t in &report.ranking {
        let space = t.solution.space(report.n_features, report.n_rows).unwrap();
        in_domain &= space.validate(&t.hyperparameters).is_ok();
    }
    let sizes = |s: Solution| report.ranking.iter().filter(|t| t.solution == s).count();
    let (lime, shap) = (sizes(Solution::Lime), sizes(Solution::KernelShap));
    let secs = start.elapsed().as_secs_f64();
    verdict(
        7,
        "end-to-end determinism and shape",
        identical && in_domain && lime >= 1 && shap >= 1,
        &format!(
            "{} trials per run, ranking byte-identical: {identical}, hyperparameters in domain: {in_domain}, per-size rows lime {lime} / kernel_shap {shap}, two runs {secs:.0}s",
            report.trials.len()
        ),
    );
}

// ---------------------------------------------------------------- 8

#[test]
fn acceptance_08_time_saving_effectiveness() {
    let _g = serial();
    let start = Instant::now();
    let config = RunConfig::load(bundled_config("use_case_1")).unwrap();
    let report = bench_strategies(&config, &BenchOptions::default()).unwrap();
    use MetricId::{Infidelity, Robustness};
    let early_saved = report.time_saved(Robustness, "early_stopping");
    let early_drift = report.score_drift(Robustness, "early_stopping");
    let both_saved = report.time_saved(Robustness, "both");
    let evals_removed = 1.0
        - report.mean_model_evaluations(Infidelity, "information_sharing") / report.mean_model_evaluations(Infidelity, "none");
    let plain = &report.rows_for(Infidelity, "none").next().unwrap().per_item;
    let shared = &report.rows_for(Infidelity, "information_sharing").next().unwrap().per_item;
    let max_diff = plain
        .iter()
        .zip(shared)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let same_len = plain.len() == shared.len();
    let secs = start.elapsed().as_secs_f64();
    let pass = early_saved >= 0.80 && early_drift <= 0.10 && evals_removed >= 0.90 && same_len && max_diff <= 1e-12 && both_saved >= 0.90;
    verdict(
        8,
        "time-saving effectiveness",
        pass,
        &format!(
            "{} targets; robustness early stopping saves {:.1}% (drift {:.2}%), both save {:.1}%; shared infidelity removes {:.1}% of model calls, max diff {max_diff:.1e}; {secs:.0}s",
            report.targets,
            100.0 * early_saved,
            100.0 * early_drift,
            100.0 * both_saved,
            100.0 * evals_removed
        ),
    );
}

// ---------------------------------------------------------------- 9

fn record(raw: [f64; 3], metrics: [MetricId; 3], size: f64) -> TrialRecord {
    TrialRecord {
        solution: Solution::Lime,
        hyperparameters: Hyperparameters::default(),
        epoch: 0,
        cold_start: false,
        raw: metrics.iter().copied().zip(raw).collect(),
        scaled: BTreeMap::new(),
        aggregated: 0.0,
        explanation_size: size,
        wall_time: 0.0,
        metric_stats: BTreeMap::new(),
        failure: None,
    }
}

#[test]
fn acceptance_09_context_filtering() {
    let _g = serial();
    let start = Instant::now();
    use MetricId::*;
    let registry = Registry::builtin().unwrap();
    let found = |q: &str, a: &str, w: &PropertyWeights| match shortlist(&registry, q, a, w).unwrap() {
        ShortlistOutcome::Found(s) => (s.explainers, s.metrics),
        other => panic!("{other:?}"),
    };
    let ones = PropertyWeights::default();
    let attribution = found("why-this-prediction", "feature-summary", &ones);
    let prototypes = found("what-data-lead", "data-point", &ones);
    let sets_ok = attribution == (vec![Solution::Lime, Solution::KernelShap], vec![Robustness, Infidelity, NumberOfFeatures])
        && prototypes
            == (
                vec![Solution::Kmedoids, Solution::MmdCritic, Solution::Protodash],
                vec![NonRepresentativeness, Diversity, NumberOfPrototypes],
            );

    let mut zeroed = PropertyWeights::default();
    zeroed.set(Diversity, 0.0);
    let filtered = found("what-data-lead", "data-point", &zeroed).1 == vec![NonRepresentativeness, NumberOfPrototypes];

    // Shuffling the zero-weighted metric's raw scores across trials must not
    // move any aggregated score or the ranking.
    let metrics = [NonRepresentativeness, Diversity, NumberOfPrototypes];
    let weights = PropertyWeights::new([(NonRepresentativeness, 2.0), (Diversity, 0.0), (NumberOfPrototypes, 2.0)].into());
    let mut rng = rng_for(909, &[]);
    let mut insensitive = true;
    let mut sensitive_when_weighted = 0;
    for _ in 0..200 {
        let n = rng.gen_range(3..12);
        let mut trials: Vec<TrialRecord> = (0..n)
            .map(|i| record([rng.gen_range(0.0..5.0), rng.gen_range(0.0..2.0), rng.gen_range(2.0..30.0)], metrics, i as f64))
            .collect();
        let mut shuffled = trials.clone();
        let mut column: Vec<f64> = shuffled.iter().map(|t| t.raw[&Diversity]).collect();
        column.shuffle(&mut rng);
        for (t, v) in shuffled.iter_mut().zip(&column) {
            t.raw.insert(Diversity, *v);
        }
        let mut weighted = shuffled.clone();
        rescore_all(&mut trials, &weights).unwrap();
        rescore_all(&mut shuffled, &weights).unwrap();
        let same_scores = trials.iter().zip(&shuffled).all(|(a, b)| a.aggregated.to_bits() == b.aggregated.to_bits());
        let order = |ts: &[TrialRecord]| rank(ts, false).iter().map(|t| t.explanation_size).collect::<Vec<_>>();
        insensitive &= same_scores && order(&trials) == order(&shuffled);
        let mut unit = trials.clone();
        rescore_all(&mut unit, &PropertyWeights::default()).unwrap();
        rescore_all(&mut weighted, &PropertyWeights::default()).unwrap();
        if unit.iter().zip(&weighted).any(|(a, b)| a.aggregated != b.aggregated) {
            sensitive_when_weighted += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        9,
        "context filtering",
        sets_ok && filtered && insensitive && sensitive_when_weighted > 0 && secs < 1.0,
        &format!(
            "shortlists match: {sets_ok}, zero weight drops metric: {filtered}, 200 permutations leave scores unchanged: {insensitive} (changed {sensitive_when_weighted}/200 with weight 1), {secs:.3}s"
        ),
    );
}

// ---------------------------------------------------------------- 10

#[test]
fn acceptance_10_strategies_off_equivalence() {
    let _g = serial();
    let start = Instant::now();
    let base = RunConfig::load(bundled_config("use_case_1")).unwrap();
    let (off_dir, never_dir) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let never = StopSettings {
        relative_threshold: 1e-300,
        patience: usize::MAX,
        min_samples: usize::MAX,
    };

    let mut off = base.clone();
    off.epochs = 6;
    off.output_dir = off_dir.path().to_path_buf();
    off.strategies.metric_early_stopping = false;
    off.strategies.hpo_early_stopping = false;
    off.strategies.share_robustness_maxima = false;
    off.strategies.share_infidelity_perturbations = false;

    let mut armed = off.clone();
    armed.output_dir = never_dir.path().to_path_buf();
    armed.strategies.metric_early_stopping = true;
    armed.strategies.metric_stop = never;
    armed.strategies.hpo_early_stopping = true;
    armed.strategies.hpo_stop = never;
    armed.strategies.share_infidelity_perturbations = true;

    let a = run(&off, &RunOptions::default()).unwrap();
    let b = run(&armed, &RunOptions::default()).unwrap();
    let strip = |ts: &[TrialRecord]| -> Vec<TrialRecord> {
        ts.iter()
            .cloned()
            .map(|mut t| {
                t.wall_time = 0.0;
                t.metric_stats.values_mut().for_each(|s| s.model_evaluations = 0);
                t
            })
            .collect()
    };
    let bitwise = |x: &[TrialRecord], y: &[TrialRecord]| {
        x.len() == y.len()
            && x.iter().zip(y).all(|(p, q)| {
                p.solution == q.solution
                    && p.hyperparameters == q.hyperparameters
                    && p.aggregated.to_bits() == q.aggregated.to_bits()
                    && p.raw.iter().zip(&q.raw).all(|(u, v)| u.0 == v.0 && u.1.to_bits() == v.1.to_bits())
            })
    };
    let trials_same = strip(&a.trials) == strip(&b.trials) && bitwise(&a.trials, &b.trials);
    let files_same = ["ranking.csv", "ranking.json", "per_item_scores.csv"]
        .iter()
        .all(|f| files_equal(off_dir.path(), never_dir.path(), f));
    let never_fired = b.strategy.early_stopped_evaluations == 0 && b.strategy.hpo_stops.iter().all(|(_, s)| s.is_none());
    let secs = start.elapsed().as_secs_f64();
    verdict(
        10,
        "strategies-off equivalence",
        trials_same && files_same && never_fired,
        &format!(
            "{} trials, records identical: {trials_same}, output files identical: {files_same}, no shortcut fired: {never_fired}, {secs:.0}s",
            a.trials.len()
        ),
    );
}
