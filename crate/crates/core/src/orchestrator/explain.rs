use std::fmt::Write as _;

use serde_json::json;

use super::{prepare, AtStage, Prepared, RunConfig, RunError, Stage};
use crate::error::Error;
use crate::explainers::{explain, to_json_lines, Explanation, Hyperparameters, Solution};

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainExport {
    pub solution: Solution,
    pub hyperparameters: Hyperparameters,
    pub explanation: Explanation,
    pub json_lines: String,
    pub text: String,
}

/// Explains `targets` (rows of the explained data; the first row when empty)
/// with one solution at `hp` (`k=v,...`, unspecified values at defaults).
pub fn explain_with(
    config: &RunConfig,
    solution: Solution,
    hp: &str,
    targets: &[usize],
    top_k: Option<usize>,
) -> std::result::Result<ExplainExport, RunError> {
    let prepared = prepare(config)?;
    let ds = &prepared.explained;
    let space = solution.space(ds.d(), ds.n()).at(Stage::Config)?;
    let h = space.parse_assignment(hp).at(Stage::Config)?;
    let targets: Vec<usize> = if targets.is_empty() { vec![0] } else { targets.to_vec() };
    if let Some(&bad) = targets.iter().find(|&&t| t >= ds.n()) {
        return Err(Error::InvalidArgument(format!("target {bad} outside 0..{}", ds.n()))).at(Stage::Config);
    }
    let explanation = explain(solution, prepared.model.as_ref(), ds, &h, &targets, config.seed).at(Stage::Optimization)?;
    let json_lines = match &explanation {
        Explanation::Attributions(_) => to_json_lines(solution, &h, &explanation),
        Explanation::Prototypes(p) => {
            let items: Vec<serde_json::Value> = p
                .prototype_indices
                .iter()
                .enumerate()
                .map(|(rank, &i)| {
                    let mut item = json!({
                        "source_row": prepared.source_row(i),
                        "weight": p.prototype_weights.as_ref().map(|w| w[rank]),
                    });
                    match ds.documents() {
                        Some(docs) => item["text"] = json!(docs[i]),
                        None => item["values"] = json!(source_values(&prepared, i)),
                    }
                    item
                })
                .collect();
            let record = json!({
                "solution": solution.id(),
                "hyperparameters": h,
                "prototype_indices": p.prototype_indices,
                "prototypes": items,
                "exhausted": p.exhausted,
            });
            format!("{record}\n")
        }
    };
    let text = render_text(&prepared, &explanation, top_k);
    Ok(ExplainExport {
        solution,
        hyperparameters: h,
        explanation,
        json_lines,
        text,
    })
}

/// Row values on the input scale.
fn source_values(prepared: &Prepared, row: usize) -> Vec<(String, f64)> {
    let ds = &prepared.explained;
    let x = ds.row(row);
    ds.feature_names()
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let v = if ds.is_standardized() {
                x[j] * ds.feature_std()[j] + ds.feature_mean()[j]
            } else {
                x[j]
            };
            (name.clone(), v)
        })
        .collect()
}

/// Per target, the `top_k` largest attributions by magnitude (all selected
/// features when `None`); per prototype, its source row.
pub fn render_text(prepared: &Prepared, explanation: &Explanation, top_k: Option<usize>) -> String {
    let ds = &prepared.explained;
    let names = ds.feature_names();
    let mut out = String::new();
    match explanation {
        Explanation::Attributions(items) => {
            for e in items {
                let x = ds.row(e.instance_index);
                let prediction = prepared
                    .model
                    .as_ref()
                    .and_then(|m| m.predict_row(&x).ok())
                    .map_or("n/a".to_string(), |p| format!("{p:.4}"));
                let _ = writeln!(out, "row {} (prediction {prediction})", prepared.source_row(e.instance_index));
                let k = top_k.unwrap_or(e.selected_features.len()).min(e.selected_features.len());
                for (rank, &j) in e.selected_features[..k].iter().enumerate() {
                    let _ = writeln!(out, "  {:>2}. {:<12} {:+.4}", rank + 1, names[j], e.weights[j]);
                }
            }
        }
        Explanation::Prototypes(p) => {
            for (rank, &i) in p.prototype_indices.iter().enumerate() {
                let weight = p
                    .prototype_weights
                    .as_ref()
                    .map_or(String::new(), |w| format!(", weight {:.4}", w[rank]));
                let _ = write!(out, "prototype {} (row {}{weight}): ", rank + 1, prepared.source_row(i));
                match ds.documents() {
                    Some(docs) => {
                        let _ = writeln!(out, "{}", docs[i]);
                    }
                    None => {
                        let values: Vec<String> = source_values(prepared, i)
                            .iter()
                            .map(|(n, v)| format!("{n}={v:.4}"))
                            .collect();
                        let _ = writeln!(out, "{}", values.join(", "));
                    }
                }
            }
        }
    }
    out
}
