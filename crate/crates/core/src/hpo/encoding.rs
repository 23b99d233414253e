//! Unit-hypercube encoding of hyperparameter assignments.

use crate::error::{Error, Result};
use crate::explainers::{HyperparameterSpace, Hyperparameters, ParamKind, ParamSpec, ParamValue};

pub fn encoded_len(space: &HyperparameterSpace) -> usize {
    space
        .params
        .iter()
        .map(|p| match &p.kind {
            ParamKind::Categorical { options } => options.len(),
            _ => 1,
        })
        .sum()
}

fn unit(p: &ParamSpec, v: f64) -> f64 {
    match p.kind {
        ParamKind::Continuous { lo, hi, log: true } => (v.log10() - lo.log10()) / (hi.log10() - lo.log10()),
        ParamKind::Continuous { lo, hi, .. } => (v - lo) / (hi - lo),
        ParamKind::Integer { lo, hi } => (v - lo as f64) / (hi - lo) as f64,
        ParamKind::Categorical { .. } => unreachable!(),
    }
}

pub fn encode(space: &HyperparameterSpace, h: &Hyperparameters) -> Result<Vec<f64>> {
    let h = space.validate(h)?;
    let mut z = Vec::with_capacity(encoded_len(space));
    for (p, (_, v)) in space.params.iter().zip(&h.values) {
        match (&p.kind, v) {
            (ParamKind::Categorical { options }, ParamValue::Cat(c)) => {
                z.extend(options.iter().map(|o| if o == c { 1.0 } else { 0.0 }));
            }
            (ParamKind::Integer { .. }, ParamValue::Int(i)) => z.push(unit(p, *i as f64)),
            (ParamKind::Continuous { .. }, ParamValue::Real(r)) => z.push(unit(p, *r)),
            (_, other) => {
                return Err(Error::Domain {
                    name: p.name.clone(),
                    reason: format!("value {other} has the wrong kind"),
                })
            }
        }
    }
    Ok(z)
}

/// Inverse of [`encode`] for any point of the cube: coordinates are clamped,
/// integers round half up, categoricals take the first maximal entry.
pub fn decode(space: &HyperparameterSpace, z: &[f64]) -> Hyperparameters {
    let mut values = Vec::with_capacity(space.params.len());
    let mut at = 0;
    for p in &space.params {
        let v = match &p.kind {
            ParamKind::Categorical { options } => {
                let block = &z[at..at + options.len()];
                at += options.len();
                let mut best = 0;
                for (i, &b) in block.iter().enumerate() {
                    if b > block[best] {
                        best = i;
                    }
                }
                ParamValue::Cat(options[best].clone())
            }
            kind => {
                let u = z[at].clamp(0.0, 1.0);
                at += 1;
                match *kind {
                    ParamKind::Continuous { lo, hi, log: true } => {
                        let e = lo.log10() + u * (hi.log10() - lo.log10());
                        ParamValue::Real(10f64.powf(e).clamp(lo, hi))
                    }
                    ParamKind::Continuous { lo, hi, .. } => ParamValue::Real((lo + u * (hi - lo)).clamp(lo, hi)),
                    ParamKind::Integer { lo, hi } => {
                        let steps = (u * (hi - lo) as f64 + 0.5).floor() as i64;
                        ParamValue::Int((lo + steps).clamp(lo, hi))
                    }
                    ParamKind::Categorical { .. } => unreachable!(),
                }
            }
        };
        values.push((p.name.clone(), v));
    }
    Hyperparameters { values }
}

/// Projects a cube point onto the encodings of valid assignments.
pub fn snap(space: &HyperparameterSpace, z: &[f64]) -> Vec<f64> {
    encode(space, &decode(space, z)).expect("decoded assignments are valid")
}
