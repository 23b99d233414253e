//! Hyperparameter domains and concrete assignments.

use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ParamKind {
    Continuous {
        lo: f64,
        hi: f64,
        /// Encoded on a log10 scale when set.
        #[serde(default)]
        log: bool,
    },
    Integer {
        lo: i64,
        hi: i64,
    },
    Categorical {
        options: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Real(f64),
    Cat(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Real(v) => f.write_str(&format_significant(*v, 4)),
            ParamValue::Cat(v) => f.write_str(v),
        }
    }
}

/// Fixed-point rendering with `digits` significant digits (1.000, 11.90).
pub fn format_significant(v: f64, digits: i32) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:.3}");
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (digits - 1 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub default: ParamValue,
}

impl ParamSpec {
    pub fn integer(name: &str, lo: i64, hi: i64, default: i64) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Integer { lo, hi },
            default: ParamValue::Int(default),
        }
    }

    pub fn continuous(name: &str, lo: f64, hi: f64, default: f64, log: bool) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Continuous { lo, hi, log },
            default: ParamValue::Real(default),
        }
    }

    pub fn categorical(name: &str, options: &[&str], default: &str) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Categorical {
                options: options.iter().map(|s| s.to_string()).collect(),
            },
            default: ParamValue::Cat(default.into()),
        }
    }

    pub fn contains(&self, v: &ParamValue) -> bool {
        match (&self.kind, v) {
            (ParamKind::Continuous { lo, hi, .. }, ParamValue::Real(x)) => x.is_finite() && lo <= x && x <= hi,
            (ParamKind::Integer { lo, hi }, ParamValue::Int(x)) => lo <= x && x <= hi,
            (ParamKind::Categorical { options }, ParamValue::Cat(x)) => options.contains(x),
            _ => false,
        }
    }

    /// Parses a textual value according to this parameter's kind.
    pub fn parse_value(&self, text: &str) -> Result<ParamValue> {
        let err = |reason: String| Error::Domain {
            name: self.name.clone(),
            reason,
        };
        let value = match &self.kind {
            ParamKind::Continuous { .. } => ParamValue::Real(
                text.trim()
                    .parse()
                    .map_err(|_| err(format!("'{text}' is not a real number")))?,
            ),
            ParamKind::Integer { .. } => ParamValue::Int(
                text.trim()
                    .parse()
                    .map_err(|_| err(format!("'{text}' is not an integer")))?,
            ),
            ParamKind::Categorical { .. } => ParamValue::Cat(text.trim().to_string()),
        };
        if !self.contains(&value) {
            return Err(err(format!("value {value} outside domain {:?}", self.kind)));
        }
        Ok(value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparameterSpace {
    pub params: Vec<ParamSpec>,
}

impl HyperparameterSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        let space = Self { params };
        space.check()?;
        Ok(space)
    }

    fn check(&self) -> Result<()> {
        for (i, p) in self.params.iter().enumerate() {
            let bad = |reason: &str| Error::Domain {
                name: p.name.clone(),
                reason: reason.into(),
            };
            if self.params[..i].iter().any(|q| q.name == p.name) {
                return Err(bad("duplicate name"));
            }
            match &p.kind {
                ParamKind::Continuous { lo, hi, log } => {
                    if !(lo < hi) {
                        return Err(bad("empty range"));
                    }
                    if *log && *lo <= 0.0 {
                        return Err(bad("log scale needs a positive lower bound"));
                    }
                }
                ParamKind::Integer { lo, hi } if lo >= hi => return Err(bad("empty range")),
                ParamKind::Categorical { options } if options.is_empty() => return Err(bad("no options")),
                _ => {}
            }
            if !p.contains(&p.default) {
                return Err(bad("default outside domain"));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn defaults(&self) -> Hyperparameters {
        Hyperparameters {
            values: self
                .params
                .iter()
                .map(|p| (p.name.clone(), p.default.clone()))
                .collect(),
        }
    }

    /// Checks names, order-independent coverage and domains; returns the
    /// assignment reordered to the space's parameter order.
    pub fn validate(&self, h: &Hyperparameters) -> Result<Hyperparameters> {
        let mut values = Vec::with_capacity(self.params.len());
        for p in &self.params {
            let v = h.value(&p.name).ok_or_else(|| Error::Domain {
                name: p.name.clone(),
                reason: "missing".into(),
            })?;
            if !p.contains(v) {
                return Err(Error::Domain {
                    name: p.name.clone(),
                    reason: format!("value {v} outside domain {:?}", p.kind),
                });
            }
            values.push((p.name.clone(), v.clone()));
        }
        if let Some((extra, _)) = h.values.iter().find(|(n, _)| self.get(n).is_none()) {
            return Err(Error::Domain {
                name: extra.clone(),
                reason: "not a parameter of this solution".into(),
            });
        }
        Ok(Hyperparameters { values })
    }

    /// Parses `k=v,k=v`; parameters not mentioned keep their defaults.
    pub fn parse_assignment(&self, text: &str) -> Result<Hyperparameters> {
        let mut h = self.defaults();
        for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (name, value) = part.split_once('=').ok_or_else(|| Error::Domain {
                name: part.into(),
                reason: "expected name=value".into(),
            })?;
            let spec = self.get(name.trim()).ok_or_else(|| Error::Domain {
                name: name.trim().into(),
                reason: "not a parameter of this solution".into(),
            })?;
            h.set(&spec.name, spec.parse_value(value)?);
        }
        Ok(h)
    }
}

/// An ordered assignment of parameter values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Hyperparameters {
    pub values: Vec<(String, ParamValue)>,
}

impl Hyperparameters {
    pub fn value(&self, name: &str) -> Option<&ParamValue> {
        self.values.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn set(&mut self, name: &str, value: ParamValue) {
        match self.values.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = value,
            None => self.values.push((name.to_string(), value)),
        }
    }

    pub fn int(&self, name: &str) -> Result<i64> {
        match self.value(name) {
            Some(ParamValue::Int(v)) => Ok(*v),
            _ => Err(Error::Domain {
                name: name.into(),
                reason: "missing integer value".into(),
            }),
        }
    }

    pub fn real(&self, name: &str) -> Result<f64> {
        match self.value(name) {
            Some(ParamValue::Real(v)) => Ok(*v),
            Some(ParamValue::Int(v)) => Ok(*v as f64),
            _ => Err(Error::Domain {
                name: name.into(),
                reason: "missing real value".into(),
            }),
        }
    }

    pub fn cat(&self, name: &str) -> Result<&str> {
        match self.value(name) {
            Some(ParamValue::Cat(v)) => Ok(v),
            _ => Err(Error::Domain {
                name: name.into(),
                reason: "missing categorical value".into(),
            }),
        }
    }

    /// Semicolon-joined values in assignment order, e.g. `5;5392`.
    pub fn joined(&self) -> String {
        self.values
            .iter()
            .map(|(_, v)| v.to_string())
            .collect::<Vec<_>>()
            .join(";")
    }
}

impl Serialize for Hyperparameters {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.values.len()))?;
        for (k, v) in &self.values {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Hyperparameters {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct Ordered;
        impl<'de> Visitor<'de> for Ordered {
            type Value = Hyperparameters;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of hyperparameter values")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut m: A) -> std::result::Result<Self::Value, A::Error> {
                let mut values = Vec::new();
                while let Some((k, v)) = m.next_entry::<String, ParamValue>()? {
                    values.push((k, v));
                }
                Ok(Hyperparameters { values })
            }
        }
        d.deserialize_map(Ordered)
    }
}
