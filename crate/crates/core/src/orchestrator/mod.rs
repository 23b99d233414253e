//! Configure-then-run pipeline: context, data, model, cold start, per-solution
//! optimization, ranking and report files.

mod bench;
mod explain;
mod report;
mod wizard;

pub use bench::{bench_strategies, BenchOptions, BenchReport, BenchRow};
pub use explain::{explain_with, render_text, ExplainExport};
pub use report::{render_report, summarize, validate_report, DecisionEntry, DistributionSummary};
pub use wizard::wizard;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::context::{shortlist, validate_weights, Registry, Shortlist, ShortlistOutcome};
use crate::data::{confusion_split, load_csv, read_documents, read_single_column, standardize, tfidf_vectorize, ConfusionCell, Dataset, Task};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate_trial, rank, ranking_json, rescore_all, write_ranking_csv, EvalEnv, MetricSettings, PropertyWeights, TrialRecord};
use crate::explainers::{Family, Hyperparameters, Solution};
use crate::hpo::{run_hpo, HpoReport, HpoSettings, Objective, RANDOM_EPOCHS};
use crate::metrics::MetricId;
use crate::models::{load_model, train_mlp, ExternalPredictions, MlpConfig, PredictiveFunction, TrainingReport};
use crate::rng::{derive_seed, str_tag};
use crate::strategies::{sample_targets, CacheStats, InfidelityPerturbationCache, RobustnessMaximaCache, StopSettings};

/// Directory holding the bundled datasets, registry and example configs.
pub fn bundled_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn bundled_config(name: &str) -> PathBuf {
    bundled_dir().join("configs").join(format!("{name}.json"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Csv {
        path: PathBuf,
        target_column: String,
        task: Task,
    },
    /// One document per line; optional single-column label file.
    Text {
        path: PathBuf,
        #[serde(default)]
        labels: Option<PathBuf>,
        #[serde(default = "one")]
        min_doc_freq: usize,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    #[serde(default = "MlpSpec::hidden")]
    pub hidden_width: usize,
    #[serde(default = "MlpSpec::epochs")]
    pub max_epochs: usize,
    #[serde(default = "MlpSpec::rate")]
    pub learning_rate: f64,
    #[serde(default = "MlpSpec::batch")]
    pub batch_size: usize,
    #[serde(default = "MlpSpec::validation")]
    pub validation_fraction: f64,
    #[serde(default = "MlpSpec::patience")]
    pub patience: usize,
    /// Falls back to the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl MlpSpec {
    fn hidden() -> usize {
        MlpConfig::default().hidden_width
    }
    fn epochs() -> usize {
        MlpConfig::default().max_epochs
    }
    fn rate() -> f64 {
        MlpConfig::default().learning_rate
    }
    fn batch() -> usize {
        MlpConfig::default().batch_size
    }
    fn validation() -> f64 {
        MlpConfig::default().validation_fraction
    }
    fn patience() -> usize {
        MlpConfig::default().patience
    }

    pub fn to_config(&self, run_seed: u64) -> MlpConfig {
        MlpConfig {
            hidden_width: self.hidden_width,
            max_epochs: self.max_epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            validation_fraction: self.validation_fraction,
            patience: self.patience,
            seed: self.seed.unwrap_or(run_seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    #[default]
    None,
    Mlp(MlpSpec),
    /// One-column CSV of predictions aligned to the dataset rows.
    External {
        predictions: PathBuf,
    },
    Saved {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsetSpec {
    pub confusion_cell: ConfusionCell,
}

fn metric_stop() -> StopSettings {
    StopSettings::METRIC
}

fn hpo_stop() -> StopSettings {
    StopSettings::HPO
}

fn full_fraction() -> f64 {
    1.0
}

/// Everything off by default: the naive path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    #[serde(default = "full_fraction")]
    pub sampling_fraction: f64,
    #[serde(default)]
    pub metric_early_stopping: bool,
    #[serde(default = "metric_stop")]
    pub metric_stop: StopSettings,
    #[serde(default)]
    pub hpo_early_stopping: bool,
    #[serde(default = "hpo_stop")]
    pub hpo_stop: StopSettings,
    #[serde(default)]
    pub share_robustness_maxima: bool,
    #[serde(default)]
    pub share_infidelity_perturbations: bool,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            sampling_fraction: 1.0,
            metric_early_stopping: false,
            metric_stop: StopSettings::METRIC,
            hpo_early_stopping: false,
            hpo_stop: StopSettings::HPO,
            share_robustness_maxima: false,
            share_infidelity_perturbations: false,
        }
    }
}

fn default_epochs() -> usize {
    25
}

fn yes() -> bool {
    true
}

fn default_out() -> PathBuf {
    PathBuf::from("xairec-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelSpec,
    /// Restricts prototype solutions to one cell of the confusion matrix.
    #[serde(default)]
    pub subset: Option<SubsetSpec>,
    pub explanandum: String,
    pub explanan: String,
    /// Missing metrics default to weight 1.
    #[serde(default)]
    pub weights: BTreeMap<String, f64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub strategies: StrategyConfig,
    #[serde(default)]
    pub metrics: MetricSettings,
    #[serde(default = "yes")]
    pub per_size_rows: bool,
    #[serde(default)]
    pub parallel: bool,
    #[serde(default)]
    pub registry: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    /// Reads a config file; relative input paths are resolved against the
    /// file's directory, the output directory against the working directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_inputs(base);
        Ok(config)
    }

    pub fn resolve_inputs(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetSpec::Csv { path, .. } => fix(path),
            DatasetSpec::Text { path, labels, .. } => {
                fix(path);
                if let Some(l) = labels {
                    fix(l);
                }
            }
        }
        match &mut self.model {
            ModelSpec::External { predictions } => fix(predictions),
            ModelSpec::Saved { path } => fix(path),
            ModelSpec::None | ModelSpec::Mlp(_) => {}
        }
        if let Some(r) = &mut self.registry {
            fix(r);
        }
    }

    fn check(&self) -> Result<()> {
        let s = &self.strategies;
        if !(s.sampling_fraction > 0.0 && s.sampling_fraction <= 1.0) {
            return Err(Error::Config(format!("sampling_fraction must be in (0, 1], got {}", s.sampling_fraction)));
        }
        s.metric_stop.validate().map_err(|e| Error::Config(format!("metric_stop: {e}")))?;
        s.hpo_stop.validate().map_err(|e| Error::Config(format!("hpo_stop: {e}")))?;
        let r = &self.metrics.robustness;
        if r.candidates_per_point == 0 || !(r.shrink > 0.0 && r.shrink < 1.0) {
            return Err(Error::Config("robustness needs candidates_per_point >= 1 and shrink in (0, 1)".into()));
        }
        let i = &self.metrics.infidelity;
        if i.num_perturbations == 0 || !(i.noise_half_width > 0.0 && i.noise_half_width.is_finite()) {
            return Err(Error::Config("infidelity needs num_perturbations >= 1 and a positive noise_half_width".into()));
        }
        if let ModelSpec::Mlp(m) = &self.model {
            if m.hidden_width == 0 || m.batch_size == 0 || !(m.learning_rate > 0.0) {
                return Err(Error::Config("mlp needs positive hidden_width, batch_size and learning_rate".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Shortlist,
    Data,
    Model,
    ColdStart,
    Optimization,
    Output,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Shortlist => "shortlist",
            Stage::Data => "data",
            Stage::Model => "model",
            Stage::ColdStart => "cold start",
            Stage::Optimization => "optimization",
            Stage::Output => "output",
        }
    }
}

#[derive(Debug)]
pub struct RunError {
    pub stage: Stage,
    pub source: Error,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage.name(), self.source)
    }
}

impl std::error::Error for RunError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl RunError {
    /// 2 for configuration problems, 3 for an empty shortlist, 4 otherwise.
    pub fn exit_code(&self) -> i32 {
        match (&self.stage, &self.source) {
            (_, Error::NoCompatibleSolution { .. }) => 3,
            (Stage::Config | Stage::Shortlist, _) => 2,
            _ => 4,
        }
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, RunError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, RunError> {
        self.map_err(|source| RunError { stage, source })
    }
}

/// Data, model and context resolved from a config, before any trial.
pub struct Prepared {
    pub registry: Registry,
    pub weights: PropertyWeights,
    pub shortlist: Shortlist,
    /// Standardized table or tf-idf matrix over every input row.
    pub full: Dataset,
    /// Rows the explainers see: `full`, or the selected confusion cell.
    pub explained: Dataset,
    /// Maps rows of `explained` back to rows of `full` when a subset is used.
    pub subset_rows: Option<Vec<usize>>,
    pub model: Option<PredictiveFunction>,
    pub training: Option<TrainingReport>,
    /// Attribution targets (rows of `explained`) after sampling.
    pub targets: Vec<usize>,
}

impl Prepared {
    pub fn source_row(&self, explained_row: usize) -> usize {
        self.subset_rows.as_ref().map_or(explained_row, |rows| rows[explained_row])
    }
}

/// Resolves the context, then loads data and the model when one is needed.
pub fn prepare(config: &RunConfig) -> std::result::Result<Prepared, RunError> {
    config.check().at(Stage::Config)?;
    let registry = match &config.registry {
        Some(p) => Registry::load(p),
        None => Registry::builtin(),
    }
    .at(Stage::Config)?;
    let scope = registry.metrics_for(&config.explanan);
    if let Some(key) = config.weights.keys().find(|k| MetricId::parse(k).map_or(true, |m| !scope.contains(&m))) {
        return Err(Error::Config(format!(
            "weight '{key}' is not a metric for answer form '{}'",
            config.explanan
        )))
        .at(Stage::Config);
    }
    let weights = validate_weights(&config.weights, &scope).at(Stage::Config)?;
    let shortlist = match shortlist(&registry, &config.explanandum, &config.explanan, &weights).at(Stage::Shortlist)? {
        ShortlistOutcome::Found(s) => s,
        ShortlistOutcome::NoCompatibleSolution { reason, suggestions } => {
            return Err(Error::NoCompatibleSolution { reason, suggestions }).at(Stage::Shortlist)
        }
    };
    let needs_model = shortlist.explainers.iter().any(|s| s.family() == Family::Attribution);
    if needs_model && matches!(config.model, ModelSpec::None | ModelSpec::External { .. }) {
        return Err(Error::Config(
            "attribution solutions need a model that can score new points (mlp or saved)".into(),
        ))
        .at(Stage::Config);
    }
    if config.subset.is_some() && matches!(config.model, ModelSpec::None) {
        return Err(Error::Config("a confusion-cell subset needs predictions from a model".into())).at(Stage::Config);
    }

    let full = load_dataset(&config.dataset).at(Stage::Data)?;
    let mut model = None;
    let mut training = None;
    match &config.model {
        ModelSpec::None => {}
        ModelSpec::Mlp(spec) => {
            let (mlp, report) = train_mlp(&full, &spec.to_config(config.seed)).at(Stage::Model)?;
            model = Some(std::sync::Arc::new(mlp) as PredictiveFunction);
            training = Some(report);
        }
        ModelSpec::Saved { path } => {
            let m = load_model(path).at(Stage::Model)?;
            if let Some(n_inputs) = probe_width(&m, full.d()) {
                return Err(Error::Dimension(format!("saved model rejects {n_inputs}-feature rows"))).at(Stage::Model);
            }
            model = Some(m);
        }
        ModelSpec::External { predictions } => {
            let values = read_single_column(predictions).at(Stage::Model)?;
            model = Some(std::sync::Arc::new(ExternalPredictions::new(&full, values).at(Stage::Model)?) as PredictiveFunction);
        }
    }

    let (explained, subset_rows) = match config.subset {
        None => (full.clone(), None),
        Some(spec) => {
            let m = model.as_ref().expect("checked above");
            let predicted = predicted_classes(m, &full).at(Stage::Model)?;
            let split = confusion_split(&full, &predicted).at(Stage::Data)?;
            let rows = split.cell(spec.confusion_cell).to_vec();
            if rows.len() < 3 {
                return Err(Error::EmptyDataset(format!(
                    "confusion cell {:?} holds {} rows; at least 3 are needed",
                    spec.confusion_cell,
                    rows.len()
                )))
                .at(Stage::Data);
            }
            (full.subset(&rows).at(Stage::Data)?, Some(rows))
        }
    };
    let targets = if needs_model {
        sample_targets(explained.n(), config.strategies.sampling_fraction, derive_seed(config.seed, &[str_tag("targets")]))
            .at(Stage::Data)?
    } else {
        (0..explained.n()).collect()
    };
    Ok(Prepared {
        registry,
        weights,
        shortlist,
        full,
        explained,
        subset_rows,
        model,
        training,
        targets,
    })
}

fn probe_width(model: &PredictiveFunction, d: usize) -> Option<usize> {
    model.predict_row(&vec![0.0; d]).err().map(|_| d)
}

fn load_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    match spec {
        DatasetSpec::Csv { path, target_column, task } => Ok(standardize(&load_csv(path, target_column, *task)?)),
        DatasetSpec::Text { path, labels, min_doc_freq } => {
            let docs = read_documents(path)?;
            let mut ds = tfidf_vectorize(&docs, *min_doc_freq)?.with_task(Task::Classification);
            if let Some(l) = labels {
                ds = ds.with_labels(read_single_column(l)?)?;
            }
            ds.with_documents(docs)
        }
    }
}

/// Class ids from a model: external predictions are used as given,
/// probabilities are thresholded at 0.5.
fn predicted_classes(model: &PredictiveFunction, ds: &Dataset) -> Result<Vec<f64>> {
    if model.task() != Task::Classification {
        return Err(Error::Config("a confusion-cell subset needs a classification model".into()));
    }
    (0..ds.n())
        .map(|i| {
            let p = model.predict_row(&ds.row(i))?;
            Ok(if p == 0.0 || p == 1.0 {
                p
            } else if p >= 0.5 {
                1.0
            } else {
                0.0
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replays matching trials from an existing `trials.jsonl` instead of
    /// recomputing them.
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRow {
    pub target_index: usize,
    pub metric: MetricId,
    pub value: f64,
}

/// One line of `trials.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerLine {
    pub trial: usize,
    pub record: TrialRecord,
    #[serde(default)]
    pub per_item: Vec<ItemRow>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StrategyStats {
    pub sampling_fraction: f64,
    pub targets_used: usize,
    pub targets_available: usize,
    pub per_item_evaluations: usize,
    pub early_stopped_evaluations: usize,
    pub items_scheduled: usize,
    pub items_evaluated: usize,
    /// Trial time scaled by the share of items early stopping skipped.
    pub estimated_seconds_saved: f64,
    pub hpo_stops: Vec<(Solution, Option<usize>)>,
    pub robustness_maxima: CacheStats,
    pub infidelity_perturbations: CacheStats,
    pub model_evaluations_avoided: usize,
    pub model_evaluations: usize,
    pub explainer_calls: usize,
    pub trial_seconds: f64,
    pub reused_trials: usize,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: RunConfig,
    pub shortlist: Shortlist,
    pub n_rows: usize,
    pub n_features: usize,
    pub explained_rows: usize,
    pub training: Option<TrainingReport>,
    pub trials: Vec<TrialRecord>,
    pub per_item: Vec<LedgerLine>,
    pub ranking: Vec<TrialRecord>,
    pub excluded: Vec<(Solution, String)>,
    pub hpo: Vec<(Solution, HpoReport)>,
    pub strategy: StrategyStats,
    pub decision_log: Vec<DecisionEntry>,
    pub wall_seconds: f64,
}

struct Ledger {
    lines: Vec<LedgerLine>,
    trials: Vec<TrialRecord>,
    replay: Vec<LedgerLine>,
    reused: usize,
    weights: PropertyWeights,
    file: File,
    path: PathBuf,
}

impl Ledger {
    fn open(dir: &Path, resume: bool, weights: PropertyWeights) -> Result<Self> {
        let path = dir.join("trials.jsonl");
        let mut replay = Vec::new();
        if resume && path.exists() {
            let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for line in BufReader::new(f).lines() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                // A line cut short by an interrupted run ends the replay.
                match serde_json::from_str::<LedgerLine>(&line) {
                    Ok(l) => replay.push(l),
                    Err(_) => break,
                }
            }
        }
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            lines: Vec::new(),
            trials: Vec::new(),
            replay,
            reused: 0,
            weights,
            file,
            path,
        })
    }

    fn evaluate(&mut self, env: &EvalEnv, solution: Solution, h: &Hyperparameters, epoch: usize, cold_start: bool) -> Result<()> {
        let reused = self
            .replay
            .iter()
            .position(|l| l.record.solution == solution && l.record.epoch == epoch && l.record.hyperparameters == *h);
        let (record, per_item) = match reused {
            Some(pos) => {
                self.reused += 1;
                let l = self.replay.remove(pos);
                (l.record, l.per_item)
            }
            None => {
                let outcome = evaluate_trial(env, solution, h, epoch, cold_start);
                let rows = outcome
                    .results
                    .iter()
                    .flat_map(|r| {
                        r.per_item.iter().flatten().map(|s| ItemRow {
                            target_index: s.target,
                            metric: r.metric,
                            value: s.value,
                        })
                    })
                    .collect();
                (outcome.record, rows)
            }
        };
        let line = LedgerLine {
            trial: self.lines.len(),
            record: record.clone(),
            per_item,
        };
        writeln!(self.file, "{}", serde_json::to_string(&line)?).map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))?;
        self.lines.push(line);
        self.trials.push(record);
        rescore_all(&mut self.trials, &self.weights)?;
        Ok(())
    }

    fn scores_of(&self, solution: Solution) -> Vec<(Hyperparameters, Option<f64>)> {
        self.trials
            .iter()
            .filter(|t| t.solution == solution)
            .map(|t| (t.hyperparameters.clone(), t.succeeded().then_some(t.aggregated)))
            .collect()
    }

    /// Rewrites the file with final scores.
    fn finish(&mut self) -> Result<()> {
        for (line, t) in self.lines.iter_mut().zip(&self.trials) {
            line.record = t.clone();
        }
        let mut text = String::new();
        for l in &self.lines {
            text.push_str(&serde_json::to_string(l)?);
            text.push('\n');
        }
        write_atomic(&self.path, text.as_bytes())
    }
}

struct SolutionObjective<'l, 'e, 'd> {
    ledger: &'l mut Ledger,
    env: &'e EvalEnv<'d>,
    solution: Solution,
}

impl Objective for SolutionObjective<'_, '_, '_> {
    fn evaluate(&mut self, h: &Hyperparameters, epoch: usize) -> Result<()> {
        self.ledger.evaluate(self.env, self.solution, h, epoch, false)
    }

    fn observations(&self) -> Vec<(Hyperparameters, Option<f64>)> {
        self.ledger.scores_of(self.solution)
    }
}

/// Writes through a sibling temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn run(config: &RunConfig, options: &RunOptions) -> std::result::Result<RunReport, RunError> {
    let start = Instant::now();
    let prepared = prepare(config)?;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e)).at(Stage::Output)?;
    let mut ledger = Ledger::open(out, options.resume, prepared.weights.clone()).at(Stage::Output)?;

    let s = config.strategies;
    let maxima = RobustnessMaximaCache::default();
    let perturbations = InfidelityPerturbationCache::default();
    let env = EvalEnv {
        ds: &prepared.explained,
        model: prepared.model.as_ref(),
        targets: &prepared.targets,
        metrics: &prepared.shortlist.metrics,
        settings: config.metrics,
        stop: s.metric_early_stopping.then_some(s.metric_stop),
        parallel: config.parallel,
        maxima: s.share_robustness_maxima.then_some(&maxima),
        perturbations: s.share_infidelity_perturbations.then_some(&perturbations),
        seed: config.seed,
    };

    let d = prepared.explained.d();
    let n = prepared.explained.n();
    let mut spaces = Vec::new();
    for &solution in &prepared.shortlist.explainers {
        let space = solution.space(d, n).at(Stage::ColdStart)?;
        ledger
            .evaluate(&env, solution, &space.defaults(), 0, true)
            .at(Stage::ColdStart)?;
        spaces.push((solution, space));
    }
    let mut excluded = Vec::new();
    spaces.retain(|(solution, _)| {
        let t = ledger.trials.iter().find(|t| t.solution == *solution).expect("cold start recorded");
        match &t.failure {
            None => true,
            Some(reason) => {
                excluded.push((*solution, reason.clone()));
                false
            }
        }
    });
    if spaces.is_empty() {
        ledger.finish().at(Stage::Output)?;
        let reasons: Vec<String> = excluded.iter().map(|(s, r)| format!("{}: {r}", s.id())).collect();
        return Err(Error::Numerical(format!("every cold-start trial failed ({})", reasons.join("; ")))).at(Stage::ColdStart);
    }

    let mut hpo = Vec::new();
    for (solution, space) in &spaces {
        let settings = HpoSettings {
            epochs: config.epochs,
            random_epochs: RANDOM_EPOCHS,
            stop: s.hpo_early_stopping.then_some(s.hpo_stop),
        };
        let mut objective = SolutionObjective {
            ledger: &mut ledger,
            env: &env,
            solution: *solution,
        };
        let seed = derive_seed(config.seed, &[str_tag("hpo"), str_tag(solution.id())]);
        match run_hpo(space, settings, seed, &mut objective) {
            Ok(r) => hpo.push((*solution, r)),
            Err(e) => {
                ledger.finish().at(Stage::Output)?;
                return Err(e).at(Stage::Optimization);
            }
        }
    }
    ledger.finish().at(Stage::Output)?;

    let ranking = rank(&ledger.trials, config.per_size_rows);
    let strategy = strategy_stats(config, &prepared, &ledger, &hpo, &maxima, &perturbations);
    let report = RunReport {
        config: config.clone(),
        shortlist: prepared.shortlist.clone(),
        n_rows: prepared.full.n(),
        n_features: prepared.full.d(),
        explained_rows: n,
        training: prepared.training.clone(),
        trials: ledger.trials.clone(),
        per_item: ledger.lines.clone(),
        ranking,
        excluded,
        hpo,
        strategy,
        decision_log: report::decision_log(config, &prepared),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    write_outputs(&report).at(Stage::Output)?;
    Ok(report)
}

fn strategy_stats(
    config: &RunConfig,
    prepared: &Prepared,
    ledger: &Ledger,
    hpo: &[(Solution, HpoReport)],
    maxima: &RobustnessMaximaCache,
    perturbations: &InfidelityPerturbationCache,
) -> StrategyStats {
    let mut s = StrategyStats {
        sampling_fraction: config.strategies.sampling_fraction,
        targets_used: prepared.targets.len(),
        targets_available: prepared.explained.n(),
        hpo_stops: hpo.iter().map(|(s, r)| (*s, r.stopped_at)).collect(),
        robustness_maxima: maxima.stats(),
        infidelity_perturbations: perturbations.stats(),
        reused_trials: ledger.reused,
        ..Default::default()
    };
    s.model_evaluations_avoided = s.infidelity_perturbations.hits * config.metrics.infidelity.num_perturbations;
    for t in &ledger.trials {
        s.trial_seconds += t.wall_time;
        let (mut scheduled, mut evaluated) = (0, 0);
        for (m, st) in &t.metric_stats {
            s.model_evaluations += st.model_evaluations;
            s.explainer_calls += st.explainer_calls;
            if m.is_per_item() {
                s.per_item_evaluations += 1;
                s.early_stopped_evaluations += st.stopped_early as usize;
                scheduled += prepared.targets.len();
                evaluated += st.items_evaluated;
            }
        }
        s.items_scheduled += scheduled;
        s.items_evaluated += evaluated;
        if evaluated > 0 && evaluated < scheduled {
            s.estimated_seconds_saved += t.wall_time * (scheduled - evaluated) as f64 / evaluated as f64;
        }
    }
    s
}

fn csv_error(e: impl fmt::Display) -> Error {
    Error::Csv {
        path: "per_item_scores.csv".into(),
        message: e.to_string(),
    }
}

pub fn write_outputs(report: &RunReport) -> Result<()> {
    let out = &report.config.output_dir;
    let mut csv_bytes = Vec::new();
    write_ranking_csv(&mut csv_bytes, &report.ranking, &report.shortlist.metrics)?;
    write_atomic(&out.join("ranking.csv"), &csv_bytes)?;
    write_atomic(&out.join("ranking.json"), ranking_json(&report.ranking)?.as_bytes())?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["trial", "solution", "epoch", "target_index", "metric_id", "value"])
        .map_err(csv_error)?;
    for l in &report.per_item {
        for r in &l.per_item {
            w.write_record([
                l.trial.to_string(),
                l.record.solution.id().to_string(),
                l.record.epoch.to_string(),
                r.target_index.to_string(),
                r.metric.id().to_string(),
                format!("{}", r.value),
            ])
            .map_err(csv_error)?;
        }
    }
    let bytes = w.into_inner().map_err(csv_error)?;
    write_atomic(&out.join("per_item_scores.csv"), &bytes)?;

    let md = render_report(report);
    validate_report(&md)?;
    write_atomic(&out.join("report.md"), md.as_bytes())
}
