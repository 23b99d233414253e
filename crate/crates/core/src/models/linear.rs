use serde::{Deserialize, Serialize};

use super::{sigmoid, Model, ModelKind};
use crate::data::Task;
use crate::error::{Error, Result};

fn check_len(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::Dimension(format!(
            "model expects {expected} features, got {}",
            x.len()
        )));
    }
    Ok(())
}

/// `f(x) = w.x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        Self { weights, bias }
    }

    fn score(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

impl Model for LinearModel {
    fn to_persisted(&self) -> Option<super::Persisted> {
        Some(super::Persisted::Linear(self.clone()))
    }

    fn kind(&self) -> ModelKind {
        ModelKind::Linear
    }

    fn task(&self) -> Task {
        Task::Regression
    }

    fn predict_row(&self, x: &[f64]) -> Result<f64> {
        check_len(self.weights.len(), x)?;
        Ok(self.score(x))
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.weights.len(), x)?;
        Ok(self.weights.clone())
    }
}

/// `f(x) = sigmoid(w.x + b)`, the probability of class 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        Self { weights, bias }
    }

    fn score(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

impl Model for LogisticModel {
    fn to_persisted(&self) -> Option<super::Persisted> {
        Some(super::Persisted::Logistic(self.clone()))
    }

    fn kind(&self) -> ModelKind {
        ModelKind::Logistic
    }

    fn task(&self) -> Task {
        Task::Classification
    }

    fn predict_row(&self, x: &[f64]) -> Result<f64> {
        check_len(self.weights.len(), x)?;
        Ok(sigmoid(self.score(x)))
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.weights.len(), x)?;
        let p = sigmoid(self.score(x));
        Ok(self.weights.iter().map(|w| p * (1.0 - p) * w).collect())
    }
}
