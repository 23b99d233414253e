//! Bayesian optimization of one solution's hyperparameters: a GP surrogate
//! over the encoded space and expected-improvement proposals.

pub mod encoding;
pub mod gp;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::Result;
use crate::explainers::{HyperparameterSpace, Hyperparameters};
use crate::rng::{rng_for, Rng};
use crate::strategies::{Decision, StopController, StopSettings};

pub use encoding::{decode, encode, encoded_len, snap};
pub use gp::{expected_improvement, fit_gp, fit_gp_with_length_scale, GpPosterior, Prediction};

pub const EI_XI: f64 = 0.01;
pub const RANDOM_CANDIDATES: usize = 512;
pub const LOCAL_CANDIDATES: usize = 32;
pub const LOCAL_SIGMA: f64 = 0.05;
/// Epochs after the cold start that sample uniformly before the GP is used.
pub const RANDOM_EPOCHS: usize = 3;

pub fn random_point(space: &HyperparameterSpace, rng: &mut Rng) -> Vec<f64> {
    let z: Vec<f64> = (0..encoded_len(space)).map(|_| rng.gen::<f64>()).collect();
    snap(space, &z)
}

fn perturb(space: &HyperparameterSpace, z: &[f64], rng: &mut Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, LOCAL_SIGMA).expect("valid sigma");
    let moved: Vec<f64> = z.iter().map(|v| (v + noise.sample(rng)).clamp(0.0, 1.0)).collect();
    snap(space, &moved)
}

pub fn random_proposal(space: &HyperparameterSpace, rng: &mut Rng) -> Hyperparameters {
    decode(space, &random_point(space, rng))
}

/// Expected-improvement argmax over uniform candidates and perturbations of
/// the incumbent. A proposal equal to an already evaluated point (`seen`)
/// is perturbed once more and then accepted.
pub fn propose(posterior: &GpPosterior, space: &HyperparameterSpace, seen: &[Vec<f64>], rng: &mut Rng) -> Hyperparameters {
    let best = posterior.best_standardized();
    let incumbent = posterior
        .inputs
        .iter()
        .zip(&posterior.targets)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(x, _)| x.clone())
        .expect("fitted posterior has inputs");
    let mut candidates: Vec<Vec<f64>> = (0..RANDOM_CANDIDATES).map(|_| random_point(space, rng)).collect();
    candidates.extend((0..LOCAL_CANDIDATES).map(|_| perturb(space, &incumbent, rng)));
    let mut choice = &candidates[0];
    let mut choice_ei = f64::NEG_INFINITY;
    for c in &candidates {
        let ei = expected_improvement(posterior.predict_standardized(c), best, EI_XI);
        if ei > choice_ei {
            choice_ei = ei;
            choice = c;
        }
    }
    let mut z = choice.clone();
    if seen.contains(&z) {
        z = perturb(space, &z, rng);
    }
    decode(space, &z)
}

/// Receives proposals and reports the current scores of this solution's
/// trials (`None` for failures) under the run's latest scaling.
pub trait Objective {
    fn evaluate(&mut self, h: &Hyperparameters, epoch: usize) -> Result<()>;
    fn observations(&self) -> Vec<(Hyperparameters, Option<f64>)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HpoSettings {
    pub epochs: usize,
    pub random_epochs: usize,
    pub stop: Option<StopSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HpoReport {
    pub epochs_run: usize,
    pub stopped_at: Option<usize>,
    pub gp_length_scales: Vec<f64>,
}

const TAG: u64 = 0xb0;

/// Epochs `1..=epochs` after a cold start already in the objective.
pub fn run_hpo(space: &HyperparameterSpace, settings: HpoSettings, seed: u64, objective: &mut dyn Objective) -> Result<HpoReport> {
    let mut stopper = settings.stop.map(StopController::new).transpose()?;
    let mut report = HpoReport {
        epochs_run: 0,
        stopped_at: None,
        gp_length_scales: Vec::new(),
    };
    for epoch in 1..=settings.epochs {
        let mut rng = rng_for(seed, &[TAG, epoch as u64]);
        let obs = objective.observations();
        let encoded: Vec<(Vec<f64>, Option<f64>)> = obs
            .iter()
            .map(|(h, s)| Ok((encode(space, h)?, *s)))
            .collect::<Result<_>>()?;
        let seen: Vec<Vec<f64>> = encoded.iter().map(|e| e.0.clone()).collect();
        let failed: Vec<&Vec<f64>> = encoded.iter().filter(|e| e.1.is_none()).map(|e| &e.0).collect();
        let (xs, ys): (Vec<Vec<f64>>, Vec<f64>) = encoded.iter().filter_map(|(z, s)| s.map(|s| (z.clone(), s))).unzip();
        let mut h = if epoch <= settings.random_epochs || xs.len() < 2 {
            random_proposal(space, &mut rng)
        } else {
            let gp = fit_gp(&xs, &ys)?;
            report.gp_length_scales.push(gp.length_scale);
            propose(&gp, space, &seen, &mut rng)
        };
        for _ in 0..8 {
            if !failed.contains(&&encode(space, &h)?) {
                break;
            }
            h = random_proposal(space, &mut rng);
        }
        objective.evaluate(&h, epoch)?;
        report.epochs_run = epoch;
        if let Some(s) = stopper.as_mut() {
            let incumbent = objective
                .observations()
                .iter()
                .filter_map(|o| o.1)
                .fold(f64::NEG_INFINITY, f64::max);
            if incumbent.is_finite() && s.observe(incumbent) == Decision::Stop {
                report.stopped_at = Some(epoch);
                break;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explainers::ParamSpec;

    struct Quadratic {
        space: HyperparameterSpace,
        trials: Vec<(Hyperparameters, Option<f64>)>,
    }

    impl Objective for Quadratic {
        fn evaluate(&mut self, h: &Hyperparameters, _: usize) -> Result<()> {
            let x = h.real("x")?;
            self.trials.push((h.clone(), Some(-(x - 0.7) * (x - 0.7))));
            Ok(())
        }
        fn observations(&self) -> Vec<(Hyperparameters, Option<f64>)> {
            self.trials.clone()
        }
    }

    fn quadratic() -> Quadratic {
        let space = HyperparameterSpace::new(vec![ParamSpec::continuous("x", 0.0, 1.0, 0.5, false)]).unwrap();
        let mut q = Quadratic { space: space.clone(), trials: vec![] };
        q.evaluate(&space.defaults(), 0).unwrap();
        q
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut hits = 0;
        for seed in 0..20 {
            let mut q = quadratic();
            let space = q.space.clone();
            let settings = HpoSettings {
                epochs: 19,
                random_epochs: RANDOM_EPOCHS,
                stop: None,
            };
            run_hpo(&space, settings, seed, &mut q).unwrap();
            assert_eq!(q.trials.len(), 20);
            let best = q
                .trials
                .iter()
                .max_by(|a, b| a.1.unwrap().total_cmp(&b.1.unwrap()))
                .unwrap();
            if (best.0.real("x").unwrap() - 0.7).abs() <= 0.05 {
                hits += 1;
            }
        }
        assert!(hits >= 18, "{hits}/20");
    }

    #[test]
    fn deterministic_and_in_domain() {
        let run = || {
            let mut q = quadratic();
            let space = q.space.clone();
            let s = HpoSettings {
                epochs: 10,
                random_epochs: 3,
                stop: Some(StopSettings::HPO),
            };
            run_hpo(&space, s, 7, &mut q).unwrap();
            q.trials
        };
        let a = run();
        assert_eq!(a, run());
        let space = quadratic().space;
        for (h, _) in &a {
            space.validate(h).unwrap();
        }
    }

    #[test]
    fn zero_epochs_only_cold_start() {
        let mut q = quadratic();
        let space = q.space.clone();
        let r = run_hpo(&space, HpoSettings { epochs: 0, random_epochs: 3, stop: None }, 0, &mut q).unwrap();
        assert_eq!(r.epochs_run, 0);
        assert_eq!(q.trials.len(), 1);
    }

    #[test]
    fn proposals_fuzz_within_domain() {
        use crate::explainers::Solution;
        let space = Solution::Kmedoids.space(50, 40).unwrap();
        let mut rng = rng_for(3, &[]);
        let xs: Vec<Vec<f64>> = (0..6).map(|_| random_point(&space, &mut rng)).collect();
        let ys: Vec<f64> = (0..6).map(|i| (i as f64).sin()).collect();
        let gp = fit_gp(&xs, &ys).unwrap();
        for _ in 0..20 {
            space.validate(&propose(&gp, &space, &xs, &mut rng)).unwrap();
        }
        for _ in 0..10_000 {
            space.validate(&random_proposal(&space, &mut rng)).unwrap();
        }
    }
}
