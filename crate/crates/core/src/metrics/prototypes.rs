//! Set-level scores of a prototype selection.

use super::{MetricId, MetricResult};
use crate::data::{Dataset, Distance};
use crate::error::{Error, Result};
use crate::explainers::PrototypeSet;

fn check(p: &PrototypeSet, ds: &Dataset, metric: MetricId) -> Result<()> {
    if let Some(&bad) = p.prototype_indices.iter().find(|&&i| i >= ds.n()) {
        return Err(Error::Metric {
            metric: metric.id().into(),
            reason: format!("prototype row {bad} outside a {}-row subset", ds.n()),
        });
    }
    Ok(())
}

/// Mean distance from each row to its nearest prototype.
pub fn non_representativeness(p: &PrototypeSet, ds: &Dataset, distance: Distance) -> Result<MetricResult> {
    let metric = MetricId::NonRepresentativeness;
    if p.is_empty() {
        return Err(Error::Metric {
            metric: metric.id().into(),
            reason: "empty prototype set".into(),
        });
    }
    check(p, ds, metric)?;
    let m = ds.observations();
    let total: f64 = (0..ds.n())
        .map(|i| {
            p.prototype_indices
                .iter()
                .map(|&j| distance.between_rows(m, i, j))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(MetricResult::set_level(metric, total / ds.n() as f64))
}

/// Mean pairwise distance among prototypes; 0 (noted) for a single one.
pub fn diversity(p: &PrototypeSet, ds: &Dataset, distance: Distance) -> Result<MetricResult> {
    let metric = MetricId::Diversity;
    check(p, ds, metric)?;
    let ix = &p.prototype_indices;
    let l = ix.len();
    if l < 2 {
        let mut r = MetricResult::set_level(metric, 0.0);
        r.notes.push(format!("{l} prototype(s): no pairs, diversity set to 0"));
        return Ok(r);
    }
    let m = ds.observations();
    let mut total = 0.0;
    for a in 0..l {
        for b in (a + 1)..l {
            total += distance.between_rows(m, ix[a], ix[b]);
        }
    }
    Ok(MetricResult::set_level(metric, total / (l * (l - 1) / 2) as f64))
}

pub fn number_of_prototypes(p: &PrototypeSet) -> MetricResult {
    MetricResult::set_level(MetricId::NumberOfPrototypes, p.len() as f64)
}
