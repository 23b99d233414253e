//! Context registry: the questions a user can ask (explananda), the answer
//! forms (explanans), and which explainers and metrics serve each pairing.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::PropertyWeights;
use crate::explainers::{ExplainerDescriptor, Solution};
use crate::metrics::{MetricId, Property};

pub const BUILTIN_REGISTRY: &str = include_str!("../../data/registry.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Question {
    pub id: String,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerForm {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainerEntry {
    pub id: String,
    pub explananda: Vec<String>,
    pub explanan: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricEntry {
    pub id: String,
    pub explanan: String,
    pub property: Property,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Registry {
    pub explananda: Vec<Question>,
    pub explanans: Vec<AnswerForm>,
    pub explainers: Vec<ExplainerEntry>,
    pub metrics: Vec<MetricEntry>,
}

impl Registry {
    pub fn builtin() -> Result<Self> {
        Self::parse(BUILTIN_REGISTRY)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let r: Registry = serde_json::from_str(text).map_err(|e| Error::Registry(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }

    /// Every tag reference must resolve, ids must be unique and known to the
    /// implementation, and each metric keeps the property it measures.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Registry(msg));
        let q_ids: Vec<&str> = self.explananda.iter().map(|q| q.id.as_str()).collect();
        let a_ids: Vec<&str> = self.explanans.iter().map(|a| a.id.as_str()).collect();
        for (kind, ids) in [
            ("explanandum", q_ids.clone()),
            ("explanan", a_ids.clone()),
            ("explainer", self.explainers.iter().map(|e| e.id.as_str()).collect()),
            ("metric", self.metrics.iter().map(|m| m.id.as_str()).collect()),
        ] {
            for (i, id) in ids.iter().enumerate() {
                if ids[..i].contains(id) {
                    return bad(format!("duplicate {kind} id '{id}'"));
                }
            }
        }
        for e in &self.explainers {
            if Solution::parse(&e.id).is_err() {
                return bad(format!("explainer '{}' has no implementation", e.id));
            }
            if let Some(t) = e.explananda.iter().find(|t| !q_ids.contains(&t.as_str())) {
                return bad(format!("explainer '{}' references unknown explanandum '{t}'", e.id));
            }
            if !a_ids.contains(&e.explanan.as_str()) {
                return bad(format!("explainer '{}' references unknown explanan '{}'", e.id, e.explanan));
            }
        }
        for m in &self.metrics {
            let Ok(id) = MetricId::parse(&m.id) else {
                return bad(format!("metric '{}' has no implementation", m.id));
            };
            if !a_ids.contains(&m.explanan.as_str()) {
                return bad(format!("metric '{}' references unknown explanan '{}'", m.id, m.explanan));
            }
            if id.descriptor().property != m.property {
                return bad(format!(
                    "metric '{}' is labelled {} but measures {}",
                    m.id,
                    m.property.as_str(),
                    id.descriptor().property.as_str()
                ));
            }
        }
        Ok(())
    }

    pub fn list_questions(&self) -> Vec<(&str, &str)> {
        self.explananda.iter().map(|q| (q.id.as_str(), q.question.as_str())).collect()
    }

    pub fn list_explanans(&self) -> Vec<(&str, &str)> {
        self.explanans.iter().map(|a| (a.id.as_str(), a.label.as_str())).collect()
    }

    pub fn explainer(&self, id: &str) -> Option<&ExplainerEntry> {
        self.explainers.iter().find(|e| e.id == id)
    }

    /// Metrics that apply to an answer form, registry order.
    pub fn metrics_for(&self, explanan: &str) -> Vec<MetricId> {
        self.metrics
            .iter()
            .filter(|m| m.explanan == explanan)
            .filter_map(|m| MetricId::parse(&m.id).ok())
            .collect()
    }

    /// (explanandum, explanan) pairs some explainer serves.
    pub fn served_pairs(&self) -> Vec<(String, String)> {
        let mut pairs: Vec<(String, String)> = self
            .explainers
            .iter()
            .flat_map(|e| e.explananda.iter().map(move |q| (q.clone(), e.explanan.clone())))
            .collect();
        pairs.sort();
        pairs.dedup();
        pairs
    }

    fn check_ids(&self, explanandum: &str, explanan: &str) -> Result<()> {
        if !self.explananda.iter().any(|q| q.id == explanandum) {
            return Err(Error::Unknown { what: "explanandum", id: explanandum.into() });
        }
        if !self.explanans.iter().any(|a| a.id == explanan) {
            return Err(Error::Unknown { what: "explanan", id: explanan.into() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Shortlist {
    pub explainers: Vec<Solution>,
    pub metrics: Vec<MetricId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ShortlistOutcome {
    Found(Shortlist),
    NoCompatibleSolution {
        reason: String,
        /// Served pairings, those sharing a tag with the request first.
        suggestions: Vec<(String, String)>,
    },
}

/// Explainers serving the pairing plus the pairing's metrics with nonzero
/// weight, both in registry order.
pub fn shortlist(registry: &Registry, explanandum: &str, explanan: &str, weights: &PropertyWeights) -> Result<ShortlistOutcome> {
    registry.check_ids(explanandum, explanan)?;
    let explainers: Vec<Solution> = registry
        .explainers
        .iter()
        .filter(|e| e.explanan == explanan && e.explananda.iter().any(|q| q == explanandum))
        .map(|e| Solution::parse(&e.id))
        .collect::<Result<_>>()?;
    let metrics: Vec<MetricId> = registry
        .metrics_for(explanan)
        .into_iter()
        .filter(|m| weights.weight(*m) > 0.0)
        .collect();
    let reason = if explainers.is_empty() {
        Some(format!("no registered explainer answers '{explanandum}' with '{explanan}'"))
    } else if metrics.is_empty() {
        Some(format!("every metric for '{explanan}' has weight 0"))
    } else {
        None
    };
    Ok(match reason {
        None => ShortlistOutcome::Found(Shortlist { explainers, metrics }),
        Some(reason) => {
            let mut suggestions = registry.served_pairs();
            suggestions.sort_by_key(|(q, a)| (!(q == explanandum || a == explanan), q.clone(), a.clone()));
            ShortlistOutcome::NoCompatibleSolution { reason, suggestions }
        }
    })
}

/// Missing weights default to 1; negative, non-finite or all-zero weights
/// over `scope` are rejected.
pub fn validate_weights(raw: &BTreeMap<String, f64>, scope: &[MetricId]) -> Result<PropertyWeights> {
    let mut weights = BTreeMap::new();
    for (id, &w) in raw {
        let metric = MetricId::parse(id)?;
        if !w.is_finite() || w < 0.0 {
            return Err(Error::Config(format!("weight for {id} must be a finite value >= 0, got {w}")));
        }
        weights.insert(metric, w);
    }
    for &m in scope {
        weights.entry(m).or_insert(1.0);
    }
    if !scope.is_empty() && scope.iter().all(|m| weights[m] == 0.0) {
        return Err(Error::Config("all weights are zero".into()));
    }
    Ok(PropertyWeights::new(weights))
}

/// Descriptor of a solution: registry tags plus the search space for a
/// `d`-feature, `n`-row dataset.
pub fn describe(registry: &Registry, id: &str, d: usize, n: usize) -> Result<ExplainerDescriptor> {
    let solution = Solution::parse(id)?;
    let entry = registry
        .explainer(id)
        .ok_or_else(|| Error::Unknown { what: "solution", id: id.into() })?;
    Ok(ExplainerDescriptor {
        id: id.into(),
        explanandum_tags: entry.explananda.clone(),
        explanan_tag: entry.explanan.clone(),
        space: solution.space(d, n)?,
        family: solution.family(),
    })
}
