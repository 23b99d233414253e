//! One-hidden-layer perceptron with ReLU units, trained by mini-batch Adam
//! with validation-based early stopping.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{sigmoid, Model, ModelKind};
use crate::data::{Dataset, Task};
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub(crate) task: Task,
    pub(crate) n_inputs: usize,
    pub(crate) hidden: usize,
    /// `hidden x n_inputs`, row-major by hidden unit.
    pub(crate) w1: Vec<f64>,
    pub(crate) b1: Vec<f64>,
    pub(crate) w2: Vec<f64>,
    pub(crate) b2: f64,
    /// Regression outputs are `target_mean + target_scale * net(x)`.
    pub(crate) target_mean: f64,
    pub(crate) target_scale: f64,
    pub(crate) seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_width: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_width: 100,
            max_epochs: 200,
            learning_rate: 1e-3,
            batch_size: 32,
            validation_fraction: 0.1,
            patience: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Full training-set loss before training and after each epoch.
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
}

impl Mlp {
    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Hidden pre-activations for `x`.
    pub fn hidden_preactivations(&self, x: &[f64]) -> Vec<f64> {
        let (h, d) = (self.hidden, self.n_inputs);
        let mut acc = vec![0.0; h];
        for j in 0..d {
            for k in 0..h {
                acc[k] += self.w1[k * d + j] * x[j];
            }
        }
        acc.iter().zip(&self.b1).map(|(a, b)| b + a).collect()
    }

    /// `w1` as `n_inputs x hidden`, so batch evaluation runs over contiguous
    /// hidden units. Accumulation order matches `hidden_preactivations`.
    fn transposed_w1(&self) -> Vec<f64> {
        let (h, d) = (self.hidden, self.n_inputs);
        let mut t = vec![0.0; h * d];
        for k in 0..h {
            for j in 0..d {
                t[j * h + k] = self.w1[k * d + j];
            }
        }
        t
    }

    fn net_transposed(&self, x: &[f64], w1t: &[f64], acc: &mut [f64]) -> f64 {
        let h = self.hidden;
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (j, xj) in x.iter().enumerate() {
            for (a, w) in acc.iter_mut().zip(&w1t[j * h..(j + 1) * h]) {
                *a += w * xj;
            }
        }
        self.readout(acc)
    }

    fn readout(&self, acc: &[f64]) -> f64 {
        let mut out = self.b2;
        for k in 0..self.hidden {
            let z = self.b1[k] + acc[k];
            if z > 0.0 {
                out += self.w2[k] * z;
            }
        }
        out
    }

    fn net(&self, x: &[f64]) -> f64 {
        let (h, d) = (self.hidden, self.n_inputs);
        let mut acc = vec![0.0; h];
        for j in 0..d {
            for k in 0..h {
                acc[k] += self.w1[k * d + j] * x[j];
            }
        }
        self.readout(&acc)
    }

    fn output(&self, net: f64) -> f64 {
        match self.task {
            Task::Regression => self.target_mean + self.target_scale * net,
            Task::Classification => sigmoid(net),
        }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_inputs {
            return Err(Error::Dimension(format!(
                "mlp expects {} features, got {}",
                self.n_inputs,
                x.len()
            )));
        }
        Ok(())
    }

    pub(crate) fn params_len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }
}

impl Model for Mlp {
    fn to_persisted(&self) -> Option<super::Persisted> {
        Some(super::Persisted::Mlp(self.clone()))
    }

    fn kind(&self) -> ModelKind {
        ModelKind::Mlp
    }

    fn task(&self) -> Task {
        self.task
    }

    fn predict_row(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.output(self.net(x)))
    }

    fn predict(&self, x: &crate::data::DenseMatrix) -> Result<Vec<f64>> {
        if x.ncols() != self.n_inputs {
            return Err(Error::Dimension(format!(
                "mlp expects {} features, got {}",
                self.n_inputs,
                x.ncols()
            )));
        }
        let w1t = self.transposed_w1();
        let mut acc = vec![0.0; self.hidden];
        Ok(x.rows_iter()
            .map(|r| self.output(self.net_transposed(r, &w1t, &mut acc)))
            .collect())
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let z = self.hidden_preactivations(x);
        let net = self.net(x);
        let outer = match self.task {
            Task::Regression => self.target_scale,
            Task::Classification => {
                let p = sigmoid(net);
                p * (1.0 - p)
            }
        };
        let mut g = vec![0.0; self.n_inputs];
        for (k, zk) in z.iter().enumerate() {
            if *zk > 0.0 {
                let row = &self.w1[k * self.n_inputs..(k + 1) * self.n_inputs];
                for (gj, w) in g.iter_mut().zip(row) {
                    *gj += self.w2[k] * w;
                }
            }
        }
        g.iter_mut().for_each(|v| *v *= outer);
        Ok(g)
    }
}

/// Flat parameter layout shared by the optimizer: w1, b1, w2, b2.
struct Grad {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, params: &mut [&mut f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            **p -= self.lr * mhat / (vhat.sqrt() + Self::EPS);
        }
    }
}

fn params_mut(m: &mut Mlp) -> Vec<&mut f64> {
    let mut out: Vec<&mut f64> = Vec::with_capacity(m.params_len());
    out.extend(m.w1.iter_mut());
    out.extend(m.b1.iter_mut());
    out.extend(m.w2.iter_mut());
    out.push(&mut m.b2);
    out
}

/// Loss on the internal (standardized) target scale.
fn loss(m: &Mlp, rows: &[Vec<f64>], targets: &[f64], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let total: f64 = idx
        .iter()
        .map(|&i| {
            let net = m.net(&rows[i]);
            match m.task {
                Task::Regression => (net - targets[i]).powi(2),
                Task::Classification => {
                    let p = sigmoid(net).clamp(1e-12, 1.0 - 1e-12);
                    -(targets[i] * p.ln() + (1.0 - targets[i]) * (1.0 - p).ln())
                }
            }
        })
        .sum();
    total / idx.len() as f64
}

fn batch_gradient(m: &Mlp, rows: &[Vec<f64>], targets: &[f64], batch: &[usize]) -> Grad {
    let (d, h) = (m.n_inputs, m.hidden);
    let mut g = Grad {
        w1: vec![0.0; h * d],
        b1: vec![0.0; h],
        w2: vec![0.0; h],
        b2: 0.0,
    };
    let scale = 1.0 / batch.len() as f64;
    let mut z = vec![0.0; h];
    for &i in batch {
        let x = &rows[i];
        let mut net = m.b2;
        for k in 0..h {
            let row = &m.w1[k * d..(k + 1) * d];
            z[k] = m.b1[k] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            if z[k] > 0.0 {
                net += m.w2[k] * z[k];
            }
        }
        // d loss / d net: MSE gives 2(net - y); log-loss with a sigmoid
        // output gives p - y.
        let delta = match m.task {
            Task::Regression => 2.0 * (net - targets[i]),
            Task::Classification => sigmoid(net) - targets[i],
        } * scale;
        g.b2 += delta;
        for k in 0..h {
            if z[k] > 0.0 {
                g.w2[k] += delta * z[k];
                let dz = delta * m.w2[k];
                g.b1[k] += dz;
                for (gw, v) in g.w1[k * d..(k + 1) * d].iter_mut().zip(x) {
                    *gw += dz * v;
                }
            }
        }
    }
    g
}

/// Trains on the observations as stored (callers standardize first).
pub fn train_mlp(ds: &Dataset, config: &MlpConfig) -> Result<(Mlp, TrainingReport)> {
    if ds.n() < 10 {
        return Err(Error::InvalidArgument(format!(
            "training needs at least 10 rows, got {}",
            ds.n()
        )));
    }
    if config.hidden_width == 0 || config.batch_size == 0 {
        return Err(Error::InvalidArgument("hidden width and batch size must be positive".into()));
    }
    let (d, h) = (ds.d(), config.hidden_width);
    let rows: Vec<Vec<f64>> = (0..ds.n()).map(|i| ds.row(i)).collect();
    let labels = ds.labels();

    let (target_mean, target_scale) = match ds.task() {
        Task::Regression => {
            let mean = labels.iter().sum::<f64>() / labels.len() as f64;
            let var = labels.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / labels.len() as f64;
            let sd = var.sqrt();
            (mean, if sd > 0.0 { sd } else { 1.0 })
        }
        Task::Classification => {
            if let Some(bad) = labels.iter().find(|y| **y != 0.0 && **y != 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "classification labels must be 0/1, found {bad}"
                )));
            }
            (0.0, 1.0)
        }
    };
    let targets: Vec<f64> = labels
        .iter()
        .map(|y| (y - target_mean) / target_scale)
        .collect();

    let mut rng = rng_for(config.seed, &[0x6d6c70]);
    let limit1 = (6.0 / (d + h) as f64).sqrt();
    let limit2 = (6.0 / (h + 1) as f64).sqrt();
    let mut model = Mlp {
        task: ds.task(),
        n_inputs: d,
        hidden: h,
        w1: (0..h * d).map(|_| rng.gen_range(-limit1..=limit1)).collect(),
        b1: vec![0.0; h],
        w2: (0..h).map(|_| rng.gen_range(-limit2..=limit2)).collect(),
        b2: 0.0,
        target_mean,
        target_scale,
        seed: config.seed,
    };

    let mut order: Vec<usize> = (0..ds.n()).collect();
    order.shuffle(&mut rng);
    let n_val = ((ds.n() as f64 * config.validation_fraction).round() as usize).clamp(1, ds.n() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let (val_idx, mut train_idx) = (val_idx.to_vec(), train_idx.to_vec());

    let mut adam = Adam {
        m: vec![0.0; model.params_len()],
        v: vec![0.0; model.params_len()],
        t: 0,
        lr: config.learning_rate,
    };
    let mut report = TrainingReport {
        train_loss: vec![loss(&model, &rows, &targets, &train_idx)],
        ..Default::default()
    };
    let mut best = (loss(&model, &rows, &targets, &val_idx), model.clone(), 0usize);
    let mut stale = 0usize;

    for epoch in 1..=config.max_epochs {
        train_idx.shuffle(&mut rng);
        for batch in train_idx.chunks(config.batch_size) {
            let g = batch_gradient(&model, &rows, &targets, batch);
            let flat: Vec<f64> = g
                .w1
                .iter()
                .chain(&g.b1)
                .chain(&g.w2)
                .copied()
                .chain(std::iter::once(g.b2))
                .collect();
            adam.step(&mut params_mut(&mut model), &flat);
        }
        let train_loss = loss(&model, &rows, &targets, &train_idx);
        let val_loss = loss(&model, &rows, &targets, &val_idx);
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: train_loss,
            });
        }
        report.train_loss.push(train_loss);
        report.validation_loss.push(val_loss);
        report.epochs_run = epoch;
        if val_loss < best.0 {
            best = (val_loss, model.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    report.best_epoch = best.2;
    Ok((best.1, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::standardize;
    use crate::rng::rng_for;
    use rand_distr::{Distribution, Normal};

    fn xor_dataset(seed: u64) -> Dataset {
        let mut rng = rng_for(seed, &[1]);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..50 {
            for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
                rows.push(vec![a + noise.sample(&mut rng), b + noise.sample(&mut rng)]);
                labels.push(if (a == 1.0) != (b == 1.0) { 1.0 } else { 0.0 });
            }
        }
        standardize(&Dataset::from_rows(&rows, labels, Task::Classification).unwrap())
    }

    #[test]
    fn learns_xor() {
        let ds = xor_dataset(3);
        let cfg = MlpConfig {
            max_epochs: 1000,
            patience: 50,
            seed: 11,
            ..Default::default()
        };
        let (m, _) = train_mlp(&ds, &cfg).unwrap();
        let correct = (0..ds.n())
            .filter(|&i| (m.predict_row(&ds.row(i)).unwrap() >= 0.5) == (ds.labels()[i] == 1.0))
            .count();
        assert!(correct as f64 / ds.n() as f64 >= 0.95, "accuracy {correct}/{}", ds.n());
    }

    fn linear_dataset() -> Dataset {
        let mut rng = rng_for(5, &[2]);
        let unit = Normal::new(0.0, 1.0).unwrap();
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..500 {
            let (a, b) = (unit.sample(&mut rng), unit.sample(&mut rng));
            rows.push(vec![a, b]);
            y.push(3.0 * a - 2.0 * b + noise.sample(&mut rng));
        }
        standardize(&Dataset::from_rows(&rows, y, Task::Regression).unwrap())
    }

    #[test]
    fn fits_near_linear_target_and_loss_decreases() {
        let ds = linear_dataset();
        let cfg = MlpConfig {
            max_epochs: 300,
            seed: 2,
            ..Default::default()
        };
        let (m, report) = train_mlp(&ds, &cfg).unwrap();
        let y = ds.labels();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        let ss_res: f64 = (0..ds.n())
            .map(|i| (m.predict_row(&ds.row(i)).unwrap() - y[i]).powi(2))
            .sum();
        let r2 = 1.0 - ss_res / ss_tot;
        assert!(r2 >= 0.99, "r2 = {r2}");
        assert!(report.train_loss.last().unwrap() < &report.train_loss[0]);
    }

    #[test]
    fn training_loss_descends_with_small_transients() {
        let ds = linear_dataset();
        let cfg = MlpConfig {
            max_epochs: 40,
            patience: 40,
            seed: 2,
            ..Default::default()
        };
        let (_, report) = train_mlp(&ds, &cfg).unwrap();
        let losses = &report.train_loss;
        assert_eq!(losses.len(), 41);
        assert!(losses.last().unwrap() < &losses[0]);
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] * 1.05, "loss jumped from {} to {}", w[0], w[1]);
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let ds = linear_dataset();
        let cfg = MlpConfig {
            max_epochs: 5,
            hidden_width: 16,
            seed: 9,
            ..Default::default()
        };
        let a = train_mlp(&ds, &cfg).unwrap().0;
        let b = train_mlp(&ds, &cfg).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_tiny_datasets() {
        let ds = Dataset::from_rows(&vec![vec![0.0]; 5], vec![0.0; 5], Task::Regression).unwrap();
        assert!(train_mlp(&ds, &MlpConfig::default()).is_err());
    }

    #[test]
    fn divergence_reports_epoch() {
        let ds = linear_dataset();
        let cfg = MlpConfig {
            learning_rate: 1e300,
            max_epochs: 3,
            hidden_width: 4,
            ..Default::default()
        };
        match train_mlp(&ds, &cfg) {
            Err(Error::Divergence { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    fn central_difference(m: &Mlp, x: &[f64], step: f64) -> Vec<f64> {
        (0..x.len())
            .map(|j| {
                let mut hi = x.to_vec();
                let mut lo = x.to_vec();
                hi[j] += step;
                lo[j] -= step;
                (m.predict_row(&hi).unwrap() - m.predict_row(&lo).unwrap()) / (2.0 * step)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ds = linear_dataset();
        for task in [Task::Regression, Task::Classification] {
            let ds = if task == Task::Classification {
                let labels = ds.labels().iter().map(|y| if *y > 0.0 { 1.0 } else { 0.0 }).collect();
                ds.clone().with_labels(labels).unwrap().with_task(task)
            } else {
                ds.clone()
            };
            let cfg = MlpConfig {
                max_epochs: 20,
                hidden_width: 32,
                seed: 4,
                ..Default::default()
            };
            let (m, _) = train_mlp(&ds, &cfg).unwrap();
            let mut rng = rng_for(77, &[task as u64]);
            let unit = Normal::new(0.0, 1.5).unwrap();
            let mut checked = 0;
            while checked < 100 {
                let x: Vec<f64> = (0..2).map(|_| unit.sample(&mut rng)).collect();
                // A ReLU kink inside the stencil makes differencing meaningless.
                if m.hidden_preactivations(&x).iter().any(|z| z.abs() < 1e-3) {
                    continue;
                }
                let g = m.gradient(&x).unwrap();
                let fd = central_difference(&m, &x, 1e-4);
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                for (a, b) in g.iter().zip(&fd) {
                    if norm < 1e-2 {
                        assert!((a - b).abs() < 1e-6);
                    } else {
                        assert!((a - b).abs() <= 1e-4 * norm, "{a} vs {b}");
                    }
                }
                checked += 1;
            }
        }
    }

    #[test]
    fn batch_prediction_matches_rows_exactly() {
        let ds = linear_dataset();
        let (m, _) = train_mlp(
            &ds,
            &MlpConfig {
                max_epochs: 3,
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let dense = ds.observations().to_dense();
        let batch = m.predict(&dense).unwrap();
        for (i, v) in batch.iter().enumerate() {
            assert_eq!(*v, m.predict_row(&ds.row(i)).unwrap());
        }
    }
}
