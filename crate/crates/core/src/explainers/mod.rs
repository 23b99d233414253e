//! Explanation functions behind one contract: attribution solutions map a
//! model and target rows to signed feature weights, prototype solutions map
//! a data subset to representative rows.

pub mod kernel_shap;
pub mod kmedoids;
pub mod lime;
pub mod mmd;
pub mod protodash;
pub mod space;

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{Dataset, Distance};
use crate::error::{Error, Result};
use crate::models::{ExplainedOutput, PredictiveFunction};
use crate::rng::derive_seed;

pub use kernel_shap::{L1Mode, ShapParams};
pub use kmedoids::{Algorithm, Init, KMedoidsParams};
pub use lime::LimeParams;
pub use mmd::MmdParams;
pub use protodash::{Kernel, ProtodashParams};
pub use space::{HyperparameterSpace, Hyperparameters, ParamKind, ParamSpec, ParamValue};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAttribution {
    pub instance_index: usize,
    /// Dense signed weights; unselected features are exactly 0.
    pub weights: Vec<f64>,
    /// Nonzero features, largest |weight| first.
    pub selected_features: Vec<usize>,
}

impl FeatureAttribution {
    pub fn from_dense(instance_index: usize, weights: Vec<f64>) -> Self {
        let mut selected: Vec<usize> = (0..weights.len()).filter(|&j| weights[j] != 0.0).collect();
        selected.sort_by(|&a, &b| weights[b].abs().total_cmp(&weights[a].abs()).then(a.cmp(&b)));
        Self {
            instance_index,
            weights,
            selected_features: selected,
        }
    }

    pub fn size(&self) -> usize {
        self.selected_features.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub prototype_indices: Vec<usize>,
    pub prototype_weights: Option<Vec<f64>>,
    /// Selection ended before reaching the requested size.
    #[serde(default)]
    pub exhausted: bool,
}

impl PrototypeSet {
    pub fn unweighted(prototype_indices: Vec<usize>) -> Self {
        Self {
            prototype_indices,
            prototype_weights: None,
            exhausted: false,
        }
    }

    pub fn len(&self) -> usize {
        self.prototype_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototype_indices.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Attribution,
    Prototype,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solution {
    Lime,
    KernelShap,
    Kmedoids,
    MmdCritic,
    Protodash,
}

pub const ALL_SOLUTIONS: [Solution; 5] = [
    Solution::Lime,
    Solution::KernelShap,
    Solution::Kmedoids,
    Solution::MmdCritic,
    Solution::Protodash,
];

impl Solution {
    pub fn id(self) -> &'static str {
        match self {
            Solution::Lime => "lime",
            Solution::KernelShap => "kernel_shap",
            Solution::Kmedoids => "kmedoids",
            Solution::MmdCritic => "mmd_critic",
            Solution::Protodash => "protodash",
        }
    }

    pub fn parse(id: &str) -> Result<Self> {
        ALL_SOLUTIONS
            .into_iter()
            .find(|s| s.id() == id)
            .ok_or_else(|| Error::Unknown {
                what: "solution",
                id: id.into(),
            })
    }

    pub fn family(self) -> Family {
        match self {
            Solution::Lime | Solution::KernelShap => Family::Attribution,
            _ => Family::Prototype,
        }
    }

    /// Search space for a dataset with `d` features and `n` rows.
    pub fn space(self, d: usize, n: usize) -> Result<HyperparameterSpace> {
        let d_i = d as i64;
        let k_hi = (n as i64).min(30);
        let k = || ParamSpec::integer("k", 2, k_hi, 8.min(k_hi));
        let params = match self {
            Solution::Lime => vec![
                ParamSpec::integer("num_features", 1, d_i, 10.min(d_i)),
                ParamSpec::integer("num_perturbations", 100, 10_000, 5_000),
            ],
            Solution::KernelShap => vec![
                ParamSpec::integer("num_features", 1, d_i, d_i),
                ParamSpec::integer("num_coalitions", 100, 10_000, (2 * d_i + 2048).min(10_000)),
                ParamSpec::categorical("l1_mode", &["auto", "aic", "bic"], "auto"),
            ],
            Solution::Kmedoids => vec![
                ParamSpec::categorical("init", &["random", "heuristic", "build"], "heuristic"),
                ParamSpec::integer("max_iter", 50, 500, 300),
                ParamSpec::categorical("algorithm", &["pam", "alternate"], "alternate"),
                ParamSpec::categorical("metric", &["euclidean", "cosine"], "euclidean"),
                k(),
            ],
            Solution::MmdCritic => vec![ParamSpec::continuous("gamma", 1e-3, 10.0, 1.0, true), k()],
            Solution::Protodash => vec![
                ParamSpec::categorical("kernel", &["gaussian", "linear"], "gaussian"),
                ParamSpec::continuous("sigma", 0.1, 50.0, 1.0, false),
                k(),
            ],
        };
        HyperparameterSpace::new(params)
    }
}

impl fmt::Display for Solution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplainerDescriptor {
    pub id: String,
    pub explanandum_tags: Vec<String>,
    pub explanan_tag: String,
    pub space: HyperparameterSpace,
    pub family: Family,
}

/// Randomness for one target row, independent of evaluation order.
pub fn target_seed(seed: u64, target: usize) -> u64 {
    derive_seed(seed, &[0x7a72, target as u64])
}

fn positive(h: &Hyperparameters, name: &str) -> Result<usize> {
    let v = h.int(name)?;
    usize::try_from(v).map_err(|_| Error::Domain {
        name: name.into(),
        reason: format!("{v} is negative"),
    })
}

fn parse_cat<T>(h: &Hyperparameters, name: &str, parse: impl Fn(&str) -> Option<T>) -> Result<T> {
    let v = h.cat(name)?;
    parse(v).ok_or_else(|| Error::Domain {
        name: name.into(),
        reason: format!("unknown option {v}"),
    })
}

impl LimeParams {
    pub fn from_hp(h: &Hyperparameters) -> Result<Self> {
        Ok(Self {
            num_features: positive(h, "num_features")?,
            num_perturbations: positive(h, "num_perturbations")?,
        })
    }
}

impl ShapParams {
    pub fn from_hp(h: &Hyperparameters) -> Result<Self> {
        Ok(Self {
            num_features: positive(h, "num_features")?,
            num_coalitions: positive(h, "num_coalitions")?,
            l1_mode: parse_cat(h, "l1_mode", L1Mode::parse)?,
        })
    }
}

impl KMedoidsParams {
    pub fn from_hp(h: &Hyperparameters) -> Result<Self> {
        Ok(Self {
            init: parse_cat(h, "init", Init::parse)?,
            max_iter: positive(h, "max_iter")?,
            algorithm: parse_cat(h, "algorithm", Algorithm::parse)?,
            metric: parse_cat(h, "metric", Distance::parse)?,
            k: positive(h, "k")?,
        })
    }
}

impl MmdParams {
    pub fn from_hp(h: &Hyperparameters) -> Result<Self> {
        Ok(Self {
            gamma: h.real("gamma")?,
            k: positive(h, "k")?,
        })
    }
}

impl ProtodashParams {
    pub fn from_hp(h: &Hyperparameters) -> Result<Self> {
        Ok(Self {
            kernel: parse_cat(h, "kernel", Kernel::parse)?,
            sigma: h.real("sigma")?,
            k: positive(h, "k")?,
        })
    }
}

/// An attribution explainer bound to a model and hyperparameters, usable at
/// arbitrary points (robustness probes explain perturbed inputs).
#[derive(Debug, Clone)]
pub struct AttributionExplainer {
    model: PredictiveFunction,
    method: AttributionMethod,
    scale: Vec<f64>,
    background: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
enum AttributionMethod {
    Lime(LimeParams),
    Shap(ShapParams),
}

impl AttributionExplainer {
    pub fn new(solution: Solution, h: &Hyperparameters, model: &PredictiveFunction, ds: &Dataset) -> Result<Self> {
        let method = match solution {
            Solution::Lime => AttributionMethod::Lime(LimeParams::from_hp(h)?),
            Solution::KernelShap => AttributionMethod::Shap(ShapParams::from_hp(h)?),
            other => {
                return Err(Error::Unsupported {
                    kind: other.id().into(),
                    what: "feature attribution".into(),
                })
            }
        };
        Ok(Self {
            model: model.clone(),
            method,
            scale: ds.working_scale(),
            background: ds.column_means(),
        })
    }

    pub fn model(&self) -> &PredictiveFunction {
        &self.model
    }

    /// Dense weights at `x`, randomness drawn from `stream_seed`.
    pub fn weights_at(&self, x: &[f64], stream_seed: u64) -> Result<Vec<f64>> {
        let output = ExplainedOutput::at(&self.model, x)?;
        match self.method {
            AttributionMethod::Lime(p) => lime::lime_weights(&output, x, &self.scale, p, stream_seed),
            AttributionMethod::Shap(p) => kernel_shap::shap_weights(&output, x, &self.background, p, stream_seed),
        }
    }

    pub fn explain_row(&self, ds: &Dataset, target: usize, seed: u64) -> Result<FeatureAttribution> {
        let w = self.weights_at(&ds.row(target), target_seed(seed, target))?;
        Ok(FeatureAttribution::from_dense(target, w))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Explanation {
    Attributions(Vec<FeatureAttribution>),
    Prototypes(PrototypeSet),
}

/// Prototype selection on a data subset.
pub fn select_prototypes(solution: Solution, ds: &Dataset, h: &Hyperparameters, seed: u64) -> Result<PrototypeSet> {
    match solution {
        Solution::Kmedoids => kmedoids::kmedoids_explain(ds, KMedoidsParams::from_hp(h)?, seed),
        Solution::MmdCritic => mmd::mmd_critic_explain(ds, MmdParams::from_hp(h)?, seed),
        Solution::Protodash => protodash::protodash_explain(ds, ProtodashParams::from_hp(h)?, seed),
        other => Err(Error::Unsupported {
            kind: other.id().into(),
            what: "prototype selection".into(),
        }),
    }
}

/// Runs any solution; attribution solutions need a model and targets.
pub fn explain(
    solution: Solution,
    model: Option<&PredictiveFunction>,
    ds: &Dataset,
    h: &Hyperparameters,
    targets: &[usize],
    seed: u64,
) -> Result<Explanation> {
    match solution.family() {
        Family::Prototype => Ok(Explanation::Prototypes(select_prototypes(solution, ds, h, seed)?)),
        Family::Attribution => {
            let model = model.ok_or_else(|| Error::Explainer {
                explainer: solution.id().into(),
                reason: "a predictive model is required".into(),
            })?;
            if targets.is_empty() {
                return Err(Error::Explainer {
                    explainer: solution.id().into(),
                    reason: "no targets".into(),
                });
            }
            let explainer = AttributionExplainer::new(solution, h, model, ds)?;
            let items = targets
                .iter()
                .map(|&t| explainer.explain_row(ds, t, seed))
                .collect::<Result<_>>()?;
            Ok(Explanation::Attributions(items))
        }
    }
}

/// One JSON object per line: per target for attributions, one record for a
/// prototype set.
pub fn to_json_lines(solution: Solution, h: &Hyperparameters, explanation: &Explanation) -> String {
    let mut out = String::new();
    match explanation {
        Explanation::Attributions(items) => {
            for e in items {
                let weights: serde_json::Map<String, serde_json::Value> = e
                    .selected_features
                    .iter()
                    .map(|&j| (j.to_string(), json!(e.weights[j])))
                    .collect();
                let record = json!({
                    "solution": solution.id(),
                    "hyperparameters": h,
                    "instance_index": e.instance_index,
                    "selected_features": e.selected_features,
                    "weights": weights,
                });
                out.push_str(&record.to_string());
                out.push('\n');
            }
        }
        Explanation::Prototypes(p) => {
            let record = json!({
                "solution": solution.id(),
                "hyperparameters": h,
                "prototype_indices": p.prototype_indices,
                "prototype_weights": p.prototype_weights,
                "exhausted": p.exhausted,
            });
            out.push_str(&record.to_string());
            out.push('\n');
        }
    }
    out
}
