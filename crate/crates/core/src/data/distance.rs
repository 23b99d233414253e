use serde::{Deserialize, Serialize};

use super::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    Euclidean,
    /// `1 - cos(a, b)`; a zero vector is at distance 1 from any nonzero
    /// vector and 0 from another zero vector.
    Cosine,
}

impl Distance {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "euclidean" => Some(Distance::Euclidean),
            "cosine" => Some(Distance::Cosine),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Distance::Euclidean => "euclidean",
            Distance::Cosine => "cosine",
        }
    }

    pub fn between(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Distance::Cosine => {
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for (x, y) in a.iter().zip(b) {
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                cosine_from_parts(dot, na, nb)
            }
        }
    }

    /// Distance between rows `i` and `j` of the same matrix.
    pub fn between_rows(self, m: &Matrix, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let (na, nb, dot) = (m.row_sq_norm(i), m.row_sq_norm(j), m.row_dot(i, j));
        match self {
            Distance::Euclidean => (na + nb - 2.0 * dot).max(0.0).sqrt(),
            Distance::Cosine => cosine_from_parts(dot, na, nb),
        }
    }

    /// Full symmetric pairwise distance matrix, row-major.
    pub fn pairwise(self, m: &Matrix) -> Vec<f64> {
        let n = m.nrows();
        let norms: Vec<f64> = (0..n).map(|i| m.row_sq_norm(i)).collect();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let dot = m.row_dot(i, j);
                let d = match self {
                    Distance::Euclidean => (norms[i] + norms[j] - 2.0 * dot).max(0.0).sqrt(),
                    Distance::Cosine => cosine_from_parts(dot, norms[i], norms[j]),
                };
                out[i * n + j] = d;
                out[j * n + i] = d;
            }
        }
        out
    }
}

fn cosine_from_parts(dot: f64, na: f64, nb: f64) -> f64 {
    match (na > 0.0, nb > 0.0) {
        (false, false) => 0.0,
        (true, true) => (1.0 - dot / (na.sqrt() * nb.sqrt())).max(0.0),
        _ => 1.0,
    }
}
