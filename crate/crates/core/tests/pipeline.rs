use std::fs;
use std::path::Path;

use xairec::evaluator::TrialRecord;
use xairec::explainers::{Explanation, Solution};
use xairec::orchestrator::{
    bench_strategies, bundled_config, explain_with, run, validate_report, BenchOptions, LedgerLine, RunConfig, RunOptions,
    Stage,
};

fn uc2(dir: &Path) -> RunConfig {
    let mut c = RunConfig::load(bundled_config("use_case_2")).unwrap();
    c.output_dir = dir.to_path_buf();
    c
}

/// Use case 1 shrunk to a few seconds.
fn uc1_small(dir: &Path) -> RunConfig {
    let mut c = RunConfig::load(bundled_config("use_case_1")).unwrap();
    c.output_dir = dir.to_path_buf();
    c.epochs = 2;
    c.strategies.sampling_fraction = 0.01;
    c.metrics.robustness.candidates_per_point = 6;
    c.metrics.robustness.refine_rounds = 1;
    c.metrics.robustness.refine_samples = 3;
    c.metrics.infidelity.num_perturbations = 20;
    c
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn use_case_2_ranks_every_prototype_solution() {
    let tmp = tempfile::tempdir().unwrap();
    let report = run(&uc2(tmp.path()), &RunOptions::default()).unwrap();
    for s in [Solution::Kmedoids, Solution::MmdCritic, Solution::Protodash] {
        assert!(report.ranking.iter().any(|t| t.solution == s), "{s:?} missing");
    }
    assert!(report.ranking.windows(2).all(|w| w[0].aggregated >= w[1].aggregated));
    let csv = read(tmp.path(), "ranking.csv");
    assert!(csv.starts_with(
        "aggregated,scaled_non_representativeness,scaled_diversity,scaled_number_of_prototypes,solution,hyperparameters\n"
    ));
    assert_eq!(csv.lines().count(), report.ranking.len() + 1);
    let md = read(tmp.path(), "report.md");
    validate_report(&md).unwrap();
    assert!(md.contains("- prototype distance: cosine"));
    let ledger: Vec<LedgerLine> = read(tmp.path(), "trials.jsonl")
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(ledger.len(), report.trials.len());
    let json: serde_json::Value = serde_json::from_str(&read(tmp.path(), "ranking.json")).unwrap();
    assert_eq!(json.as_array().unwrap().len(), report.ranking.len());
    assert!(tmp.path().join("per_item_scores.csv").exists());
}

#[test]
fn same_config_same_ranking_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(&uc2(a.path()), &RunOptions::default()).unwrap();
    run(&uc2(b.path()), &RunOptions::default()).unwrap();
    assert_eq!(read(a.path(), "ranking.csv"), read(b.path(), "ranking.csv"));
    assert_eq!(read(a.path(), "ranking.json"), read(b.path(), "ranking.json"));
}

#[test]
fn zero_epochs_ranks_cold_starts_only() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = uc2(tmp.path());
    c.epochs = 0;
    let report = run(&c, &RunOptions::default()).unwrap();
    assert_eq!(report.trials.len(), 3);
    assert!(report.ranking.iter().all(|t| t.epoch == 0 && t.cold_start));
}

#[test]
fn small_attribution_run_scores_every_metric() {
    let tmp = tempfile::tempdir().unwrap();
    let c = uc1_small(tmp.path());
    let report = run(&c, &RunOptions::default()).unwrap();
    assert_eq!(report.trials.len(), 2 * 3);
    assert_eq!(report.strategy.targets_used, 5);
    for t in &report.ranking {
        let space = t.solution.space(10, 442).unwrap();
        space.validate(&t.hyperparameters).unwrap();
        assert_eq!(t.scaled.len(), 3);
    }
    let per_item = read(tmp.path(), "per_item_scores.csv");
    let mut lines = per_item.lines();
    assert_eq!(lines.next(), Some("trial,solution,epoch,target_index,metric_id,value"));
    // Three per-item metrics over five targets for six trials.
    assert_eq!(lines.count(), 6 * 3 * 5);
    let md = read(tmp.path(), "report.md");
    assert!(md.contains("## Score distributions"));
    assert!(md.contains("- lime: Gaussian perturbations"));
    assert!(md.contains("- metric early stopping: on"));
}

#[test]
fn resume_replays_the_ledger() {
    let tmp = tempfile::tempdir().unwrap();
    let c = uc2(tmp.path());
    let first = run(&c, &RunOptions::default()).unwrap();
    let csv = read(tmp.path(), "ranking.csv");

    let again = run(&c, &RunOptions { resume: true }).unwrap();
    assert_eq!(again.strategy.reused_trials, first.trials.len());
    assert_eq!(read(tmp.path(), "ranking.csv"), csv);

    // An interrupted ledger: half the lines and a torn last line.
    let text = read(tmp.path(), "trials.jsonl");
    let lines: Vec<&str> = text.lines().collect();
    let keep = lines.len() / 2;
    let mut cut = lines[..keep].join("\n");
    cut.push('\n');
    cut.push_str(&lines[keep][..lines[keep].len() / 2]);
    fs::write(tmp.path().join("trials.jsonl"), cut).unwrap();
    let resumed = run(&c, &RunOptions { resume: true }).unwrap();
    assert_eq!(resumed.strategy.reused_trials, keep);
    assert_eq!(read(tmp.path(), "ranking.csv"), csv);
}

#[test]
fn stage_failures_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();

    let mut c = uc2(tmp.path());
    c.explanandum = "why-not-other".into();
    let e = run(&c, &RunOptions::default()).unwrap_err();
    assert_eq!((e.stage, e.exit_code()), (Stage::Shortlist, 3));

    let mut c = uc2(tmp.path());
    c.weights.insert("robustness".into(), 1.0);
    let e = run(&c, &RunOptions::default()).unwrap_err();
    assert_eq!((e.stage, e.exit_code()), (Stage::Config, 2));

    let mut c = uc2(tmp.path());
    c.explanan = "no-such-form".into();
    assert_eq!(run(&c, &RunOptions::default()).unwrap_err().exit_code(), 2);

    let mut c = uc1_small(tmp.path());
    if let xairec::orchestrator::DatasetSpec::Csv { path, .. } = &mut c.dataset {
        *path = tmp.path().join("missing.csv");
    }
    let e = run(&c, &RunOptions::default()).unwrap_err();
    assert_eq!((e.stage, e.exit_code()), (Stage::Data, 4));
    assert!(e.to_string().starts_with("data stage failed"));
}

#[test]
fn config_schema_rejects_unknown_keys() {
    let good = fs::read_to_string(bundled_config("use_case_2")).unwrap();
    assert!(RunConfig::parse(&good).is_ok());
    let mut v: serde_json::Value = serde_json::from_str(&good).unwrap();
    v["colour"] = serde_json::json!("blue");
    assert!(RunConfig::parse(&v.to_string()).is_err());
    let mut v: serde_json::Value = serde_json::from_str(&good).unwrap();
    v["strategies"]["share_everything"] = serde_json::json!(true);
    assert!(RunConfig::parse(&v.to_string()).is_err());
    let mut v: serde_json::Value = serde_json::from_str(&good).unwrap();
    v["strategies"]["sampling_fraction"] = serde_json::json!(0.0);
    assert!(RunConfig::parse(&v.to_string()).is_err());
    let mut v: serde_json::Value = serde_json::from_str(&good).unwrap();
    v["metrics"]["robustness"] = serde_json::json!({"candidates_per_point": 5, "speed": 2});
    assert!(RunConfig::parse(&v.to_string()).is_err());
}

#[test]
fn explain_single_feature_lime() {
    let tmp = tempfile::tempdir().unwrap();
    let c = uc1_small(tmp.path());
    let out = explain_with(&c, Solution::Lime, "num_features=1,num_perturbations=3656", &[0], None).unwrap();
    match &out.explanation {
        Explanation::Attributions(items) => {
            assert_eq!(items.len(), 1);
            assert_eq!(items[0].selected_features.len(), 1);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(out.json_lines.lines().count(), 1);
    let lines: Vec<&str> = out.text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("row 0 (prediction "));
}

#[test]
fn top_k_renderings_differ_only_in_length() {
    let tmp = tempfile::tempdir().unwrap();
    let c = uc1_small(tmp.path());
    let five = explain_with(&c, Solution::Lime, "", &[3], Some(5)).unwrap();
    let one = explain_with(&c, Solution::Lime, "", &[3], Some(1)).unwrap();
    let (five, one): (Vec<&str>, Vec<&str>) = (five.text.lines().collect(), one.text.lines().collect());
    assert_eq!(five.len(), 6);
    assert_eq!(one.len(), 2);
    assert_eq!(one[..], five[..2]);
}

#[test]
fn out_of_domain_hyperparameters_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let c = uc1_small(tmp.path());
    let e = explain_with(&c, Solution::Lime, "num_features=11", &[0], None).unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn prototype_export_echoes_source_text() {
    let tmp = tempfile::tempdir().unwrap();
    let c = uc2(tmp.path());
    let docs: Vec<String> = fs::read_to_string(xairec::orchestrator::bundled_dir().join("data/toy_sms.txt"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    let out = explain_with(&c, Solution::Kmedoids, "k=2,init=build", &[], None).unwrap();
    let record: serde_json::Value = serde_json::from_str(out.json_lines.trim()).unwrap();
    let protos = record["prototypes"].as_array().unwrap();
    assert_eq!(protos.len(), 2);
    for p in protos {
        let row = p["source_row"].as_u64().unwrap() as usize;
        assert_eq!(p["text"].as_str().unwrap(), docs[row]);
        assert!(out.text.contains(&docs[row]));
    }
}

#[test]
fn bench_grid_shape_and_shared_infidelity() {
    let tmp = tempfile::tempdir().unwrap();
    let c = uc1_small(tmp.path());
    let options = BenchOptions {
        sampling_fraction: 0.02,
        ..BenchOptions::default()
    };
    let report = bench_strategies(&c, &options).unwrap();
    assert_eq!(report.rows.len(), 8);
    use xairec::metrics::MetricId::Infidelity;
    let none: Vec<f64> = report.rows_for(Infidelity, "none").next().unwrap().per_item.clone();
    let shared: Vec<f64> = report.rows_for(Infidelity, "information_sharing").next().unwrap().per_item.clone();
    assert_eq!(none.len(), shared.len());
    for (a, b) in none.iter().zip(&shared) {
        assert!((a - b).abs() <= 1e-12);
    }
    assert!(report.mean_model_evaluations(Infidelity, "information_sharing") < report.mean_model_evaluations(Infidelity, "none"));
    assert!(report.to_markdown().contains("| robustness | both |"));
}

#[test]
fn ledger_lines_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let report = run(&uc2(tmp.path()), &RunOptions::default()).unwrap();
    let text = read(tmp.path(), "trials.jsonl");
    let back: Vec<TrialRecord> = text
        .lines()
        .map(|l| serde_json::from_str::<LedgerLine>(l).unwrap().record)
        .collect();
    assert_eq!(back, report.trials);
}
