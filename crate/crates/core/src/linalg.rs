//! Small dense solves on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Solves `a x = b` for symmetric positive (semi)definite `a`: Cholesky
/// first, SVD least squares when the factorization fails.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(b));
    }
    a.clone().svd(true, true).solve(b, 1e-12).ok()
}

/// Weighted first and second moments of a design, enough to fit a ridge
/// regression with unpenalized intercept on any column subset.
#[derive(Debug, Clone)]
pub struct WeightedMoments {
    d: usize,
    total_weight: f64,
    mean_x: Vec<f64>,
    mean_y: f64,
    /// Centered weighted Gram matrix, `d x d`.
    gram: DMatrix<f64>,
    /// Centered weighted cross moments with the response.
    cross: Vec<f64>,
}

impl WeightedMoments {
    /// `rows` is row-major `n x d`.
    pub fn new(rows: &[f64], d: usize, y: &[f64], w: &[f64]) -> Self {
        let n = y.len();
        debug_assert_eq!(rows.len(), n * d);
        let total_weight: f64 = w.iter().sum();
        let tw = if total_weight > 0.0 { total_weight } else { 1.0 };
        let mut mean_x = vec![0.0; d];
        let mut mean_y = 0.0;
        for i in 0..n {
            let r = &rows[i * d..(i + 1) * d];
            for (m, v) in mean_x.iter_mut().zip(r) {
                *m += w[i] * v;
            }
            mean_y += w[i] * y[i];
        }
        mean_x.iter_mut().for_each(|m| *m /= tw);
        mean_y /= tw;

        let mut gram = DMatrix::zeros(d, d);
        let mut cross = vec![0.0; d];
        let mut centered = vec![0.0; d];
        for i in 0..n {
            let r = &rows[i * d..(i + 1) * d];
            for j in 0..d {
                centered[j] = r[j] - mean_x[j];
            }
            let yc = y[i] - mean_y;
            for j in 0..d {
                let wj = w[i] * centered[j];
                cross[j] += wj * yc;
                for k in j..d {
                    gram[(j, k)] += wj * centered[k];
                }
            }
        }
        for j in 0..d {
            for k in 0..j {
                gram[(j, k)] = gram[(k, j)];
            }
        }
        Self {
            d,
            total_weight,
            mean_x,
            mean_y,
            gram,
            cross,
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    /// Ridge coefficients for the columns in `subset` (dense length `d`
    /// output, zeros elsewhere) and the intercept.
    pub fn ridge(&self, subset: &[usize], penalty: f64) -> (Vec<f64>, f64) {
        let k = subset.len();
        let mut coef = vec![0.0; self.d];
        if k == 0 {
            return (coef, self.mean_y);
        }
        let a = DMatrix::from_fn(k, k, |r, c| {
            self.gram[(subset[r], subset[c])] + if r == c { penalty } else { 0.0 }
        });
        let b = DVector::from_iterator(k, subset.iter().map(|&j| self.cross[j]));
        let sol = solve_spd(&a, &b).unwrap_or_else(|| DVector::zeros(k));
        for (r, &j) in subset.iter().enumerate() {
            coef[j] = sol[r];
        }
        let intercept = self.mean_y - subset.iter().map(|&j| coef[j] * self.mean_x[j]).sum::<f64>();
        (coef, intercept)
    }
}
