//! k-medoids over a precomputed distance matrix, with random, heuristic and
//! BUILD initialisation and either PAM swaps or alternating refinement.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::PrototypeSet;
use crate::data::{Dataset, Distance};
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    Random,
    Heuristic,
    Build,
}

impl Init {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random" => Some(Init::Random),
            "heuristic" => Some(Init::Heuristic),
            "build" => Some(Init::Build),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Pam,
    Alternate,
}

impl Algorithm {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pam" => Some(Algorithm::Pam),
            "alternate" => Some(Algorithm::Alternate),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMedoidsParams {
    pub init: Init,
    pub max_iter: usize,
    pub algorithm: Algorithm,
    pub metric: Distance,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMedoidsFit {
    /// Sorted medoid rows.
    pub medoids: Vec<usize>,
    pub cost: f64,
    /// Total cost after initialisation and after every accepted update.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
}

/// Row-major n x n distances.
struct Distances<'a> {
    n: usize,
    d: &'a [f64],
}

impl Distances<'_> {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    fn cost(&self, medoids: &[usize]) -> f64 {
        (0..self.n)
            .map(|i| medoids.iter().map(|&m| self.at(i, m)).fold(f64::INFINITY, f64::min))
            .sum()
    }

    /// Nearest medoid slot per point; ties go to the earlier slot.
    fn assign(&self, medoids: &[usize]) -> Vec<usize> {
        (0..self.n)
            .map(|i| {
                let mut best = 0;
                for s in 1..medoids.len() {
                    if self.at(i, medoids[s]) < self.at(i, medoids[best]) {
                        best = s;
                    }
                }
                best
            })
            .collect()
    }
}

fn init_medoids(dist: &Distances, k: usize, init: Init, seed: u64) -> Vec<usize> {
    let n = dist.n;
    match init {
        Init::Random => {
            let mut rng = rng_for(seed, &[0x4d3d]);
            sample(&mut rng, n, k).into_vec()
        }
        Init::Heuristic => {
            let totals: Vec<f64> = (0..n).map(|i| (0..n).map(|j| dist.at(i, j)).sum()).collect();
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| totals[a].total_cmp(&totals[b]).then(a.cmp(&b)));
            idx.truncate(k);
            idx
        }
        Init::Build => {
            let mut medoids = Vec::with_capacity(k);
            let mut nearest = vec![f64::INFINITY; n];
            for _ in 0..k {
                let mut best = (f64::INFINITY, usize::MAX);
                for c in (0..n).filter(|c| !medoids.contains(c)) {
                    let total: f64 = (0..n).map(|i| nearest[i].min(dist.at(i, c))).sum();
                    if total < best.0 {
                        best = (total, c);
                    }
                }
                medoids.push(best.1);
                for i in 0..n {
                    nearest[i] = nearest[i].min(dist.at(i, best.1));
                }
            }
            medoids
        }
    }
}

fn pam(dist: &Distances, mut medoids: Vec<usize>, max_iter: usize) -> (Vec<usize>, Vec<f64>, usize) {
    let n = dist.n;
    let mut cost = dist.cost(&medoids);
    let mut history = vec![cost];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut best = (cost, usize::MAX, usize::MAX);
        for slot in 0..medoids.len() {
            for c in 0..n {
                if medoids.contains(&c) {
                    continue;
                }
                let old = medoids[slot];
                medoids[slot] = c;
                let trial = dist.cost(&medoids);
                medoids[slot] = old;
                if trial < best.0 - 1e-12 * best.0.abs().max(1.0) {
                    best = (trial, slot, c);
                }
            }
        }
        if best.1 == usize::MAX {
            break;
        }
        medoids[best.1] = best.2;
        cost = best.0;
        history.push(cost);
    }
    (medoids, history, iterations)
}

fn alternate(dist: &Distances, mut medoids: Vec<usize>, max_iter: usize) -> (Vec<usize>, Vec<f64>, usize) {
    let mut history = vec![dist.cost(&medoids)];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let labels = dist.assign(&medoids);
        let mut changed = false;
        for slot in 0..medoids.len() {
            let members: Vec<usize> = (0..dist.n).filter(|&i| labels[i] == slot).collect();
            if members.is_empty() {
                continue;
            }
            let within = |c: usize| members.iter().map(|&i| dist.at(c, i)).sum::<f64>();
            let mut best = (within(medoids[slot]), medoids[slot]);
            for &c in &members {
                let v = within(c);
                if v < best.0 - 1e-12 * best.0.abs().max(1.0) {
                    best = (v, c);
                }
            }
            if best.1 != medoids[slot] {
                medoids[slot] = best.1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        history.push(dist.cost(&medoids));
    }
    (medoids, history, iterations)
}

pub fn fit_from_distances(n: usize, distances: &[f64], params: KMedoidsParams, seed: u64) -> Result<KMedoidsFit> {
    let fail = |reason: String| Error::Explainer {
        explainer: "kmedoids".into(),
        reason,
    };
    if n == 0 {
        return Err(fail("empty subset".into()));
    }
    if params.k == 0 || params.k > n {
        return Err(fail(format!("k = {} but subset has {n} rows", params.k)));
    }
    let dist = Distances { n, d: distances };
    let start = init_medoids(&dist, params.k, params.init, seed);
    let (mut medoids, cost_history, iterations) = match params.algorithm {
        Algorithm::Pam => pam(&dist, start, params.max_iter),
        Algorithm::Alternate => alternate(&dist, start, params.max_iter),
    };
    medoids.sort_unstable();
    Ok(KMedoidsFit {
        cost: dist.cost(&medoids),
        medoids,
        cost_history,
        iterations,
    })
}

pub fn kmedoids_fit(ds: &Dataset, params: KMedoidsParams, seed: u64) -> Result<KMedoidsFit> {
    let distances = params.metric.pairwise(ds.observations());
    fit_from_distances(ds.n(), &distances, params, seed)
}

pub fn kmedoids_explain(ds: &Dataset, params: KMedoidsParams, seed: u64) -> Result<PrototypeSet> {
    let fit = kmedoids_fit(ds, params, seed)?;
    Ok(PrototypeSet::unweighted(fit.medoids))
}
