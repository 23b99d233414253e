//! Black-box predictive functions: the trait every explainer and metric
//! calls through, plus the concrete models used in the experiments.

mod external;
mod linear;
mod mlp;
mod persist;

use std::fmt::Debug;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use external::ExternalPredictions;
pub use linear::{LinearModel, LogisticModel};
pub use mlp::{train_mlp, Mlp, MlpConfig, TrainingReport};
pub use persist::{load_model, save_model, Persisted, MODEL_FILE_VERSION};

use crate::data::{DenseMatrix, Task};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Linear,
    Logistic,
    External,
    /// Arbitrary closure, used for synthetic black boxes.
    Function,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Linear => "linear",
            ModelKind::Logistic => "logistic",
            ModelKind::External => "external",
            ModelKind::Function => "function",
        }
    }
}

/// A deterministic black box `f: X -> Y`. Classification models return the
/// probability of class 1.
pub trait Model: Send + Sync + Debug {
    fn kind(&self) -> ModelKind;

    fn task(&self) -> Task;

    fn predict_row(&self, x: &[f64]) -> Result<f64>;

    /// Row-wise evaluation; implementations must agree exactly with
    /// `predict_row` on every row.
    fn predict(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        x.rows_iter().map(|r| self.predict_row(r)).collect()
    }

    /// Gradient of the output with respect to the input at `x`.
    fn gradient(&self, _x: &[f64]) -> Result<Vec<f64>> {
        Err(Error::Unsupported {
            kind: self.kind().as_str().into(),
            what: "analytic gradient".into(),
        })
    }

    /// Owned copy for writing to a model file, when the kind supports it.
    fn to_persisted(&self) -> Option<Persisted> {
        None
    }
}

pub type PredictiveFunction = Arc<dyn Model>;

pub fn analytic_gradient(model: &dyn Model, x: &[f64]) -> Result<Vec<f64>> {
    model.gradient(x)
}

/// The scalar an explanation of one instance is about. Regression uses the
/// raw output; classification uses the probability of the class the model
/// predicts at the explained (unperturbed) instance.
#[derive(Debug, Clone)]
pub struct ExplainedOutput {
    model: PredictiveFunction,
    flip: bool,
}

impl ExplainedOutput {
    pub fn at(model: &PredictiveFunction, instance: &[f64]) -> Result<Self> {
        let flip = match model.task() {
            Task::Regression => false,
            Task::Classification => model.predict_row(instance)? < 0.5,
        };
        Ok(Self {
            model: Arc::clone(model),
            flip,
        })
    }

    fn map(&self, p: f64) -> f64 {
        if self.flip {
            1.0 - p
        } else {
            p
        }
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.map(self.model.predict_row(x)?))
    }

    pub fn values(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        Ok(self.model.predict(x)?.into_iter().map(|p| self.map(p)).collect())
    }
}

/// Closure-backed black box.
pub struct FnModel<F> {
    task: Task,
    f: F,
}

impl<F> FnModel<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
{
    pub fn new(task: Task, f: F) -> Self {
        Self { task, f }
    }

    pub fn shared(task: Task, f: F) -> PredictiveFunction {
        Arc::new(Self::new(task, f))
    }
}

impl<F> Debug for FnModel<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnModel").field("task", &self.task).finish()
    }
}

impl<F> Model for FnModel<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn kind(&self) -> ModelKind {
        ModelKind::Function
    }

    fn task(&self) -> Task {
        self.task
    }

    fn predict_row(&self, x: &[f64]) -> Result<f64> {
        Ok((self.f)(x))
    }
}

/// Wraps a model and counts evaluated rows.
#[derive(Debug)]
pub struct CountingModel {
    inner: PredictiveFunction,
    calls: AtomicUsize,
}

impl CountingModel {
    pub fn new(inner: PredictiveFunction) -> Arc<Self> {
        Arc::new(Self {
            inner,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }
}

impl Model for CountingModel {
    fn kind(&self) -> ModelKind {
        self.inner.kind()
    }

    fn task(&self) -> Task {
        self.inner.task()
    }

    fn predict_row(&self, x: &[f64]) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.predict_row(x)
    }

    fn predict(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        self.calls.fetch_add(x.nrows(), Ordering::Relaxed);
        self.inner.predict(x)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.inner.gradient(x)
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
