use std::collections::HashMap;

use super::{Model, ModelKind};
use crate::data::{Dataset, Task};
use crate::error::{Error, Result};

/// Predictions produced elsewhere, served by exact row lookup against the
/// dataset they were aligned to.
#[derive(Debug, Clone)]
pub struct ExternalPredictions {
    predictions: Vec<f64>,
    by_row: HashMap<Vec<u64>, usize>,
}

impl ExternalPredictions {
    pub fn new(ds: &Dataset, predictions: Vec<f64>) -> Result<Self> {
        if predictions.len() != ds.n() {
            return Err(Error::Dimension(format!(
                "{} predictions for {} rows",
                predictions.len(),
                ds.n()
            )));
        }
        let by_row = (0..ds.n()).map(|i| (row_key(&ds.row(i)), i)).collect();
        Ok(Self {
            predictions,
            by_row,
        })
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        self.predictions.get(index).copied()
    }
}

fn row_key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

impl Model for ExternalPredictions {
    fn kind(&self) -> ModelKind {
        ModelKind::External
    }

    fn task(&self) -> Task {
        Task::Classification
    }

    fn predict_row(&self, x: &[f64]) -> Result<f64> {
        self.by_row
            .get(&row_key(x))
            .map(|&i| self.predictions[i])
            .ok_or_else(|| Error::Unsupported {
                kind: "external".into(),
                what: "prediction for a row outside the aligned dataset".into(),
            })
    }
}
