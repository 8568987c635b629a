use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;

/// A scalar hyperparameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Real(f64),
    Text(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(i) => Some(*i as f64),
            ParamValue::Real(r) => Some(*r),
            ParamValue::Text(_) => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Real(r) => write!(f, "{r}"),
            ParamValue::Text(t) => f.write_str(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extras: BTreeMap<String, ParamValue>,
}

impl HyperParams {
    pub fn extra_f64(&self, key: &str) -> Option<f64> {
        self.extras.get(key).and_then(ParamValue::as_f64)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(HarnessError::InvalidHyperParams(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(HarnessError::InvalidHyperParams("batch_size and epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Where one hyperparameter is drawn from. Ranges are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Uniform { low: f64, high: f64 },
    LogUniform { low: f64, high: f64 },
    IntRange { low: i64, high: i64 },
    Choice { values: Vec<ParamValue> },
}

impl Domain {
    pub fn choice<T: Into<ParamValue>>(values: impl IntoIterator<Item = T>) -> Self {
        Domain::Choice {
            values: values.into_iter().map(Into::into).collect(),
        }
    }

    fn check(&self, name: &str) -> Result<(), HarnessError> {
        let empty = || HarnessError::EmptyDomain(name.to_string());
        match self {
            Domain::Uniform { low, high } if !(low <= high) || !low.is_finite() || !high.is_finite() => Err(empty()),
            Domain::LogUniform { low, high } if !(*low > 0.0 && low <= high && high.is_finite()) => Err(empty()),
            Domain::IntRange { low, high } if low > high => Err(empty()),
            Domain::Choice { values } if values.is_empty() => Err(empty()),
            _ => Ok(()),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamValue {
        match self {
            Domain::Uniform { low, high } => ParamValue::Real(if low == high { *low } else { rng.gen_range(*low..=*high) }),
            Domain::LogUniform { low, high } => ParamValue::Real(if low == high {
                *low
            } else {
                rng.gen_range(low.ln()..=high.ln()).exp().clamp(*low, *high)
            }),
            Domain::IntRange { low, high } => ParamValue::Int(rng.gen_range(*low..=*high)),
            Domain::Choice { values } => values[rng.gen_range(0..values.len())].clone(),
        }
    }
}

impl From<i64> for ParamValue {
    fn from(v: i64) -> Self {
        ParamValue::Int(v)
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Real(v)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Text(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub learning_rate: Domain,
    pub batch_size: Domain,
    pub epochs: Domain,
    #[serde(default)]
    pub extras: BTreeMap<String, Domain>,
}

impl SearchSpace {
    /// Conventional encoder fine-tuning ranges: learning rate log-uniform
    /// in [1e-5, 1e-4], batch size 16 or 32, 2 to 4 epochs.
    pub fn encoder_default() -> Self {
        Self {
            learning_rate: Domain::LogUniform { low: 1e-5, high: 1e-4 },
            batch_size: Domain::choice([16i64, 32]),
            epochs: Domain::choice([2i64, 3, 4]),
            extras: BTreeMap::new(),
        }
    }

    pub fn check(&self) -> Result<(), HarnessError> {
        self.learning_rate.check("learning_rate")?;
        self.batch_size.check("batch_size")?;
        self.epochs.check("epochs")?;
        for (name, domain) in &self.extras {
            domain.check(name)?;
        }
        Ok(())
    }
}

fn positive_int(name: &str, v: ParamValue) -> Result<usize, HarnessError> {
    match v.as_f64() {
        Some(x) if x >= 1.0 && x.fract() == 0.0 => Ok(x as usize),
        _ => Err(HarnessError::InvalidHyperParams(format!("{name} must be a positive integer, got {v}"))),
    }
}

/// Draws every field independently from its domain; the run seed is drawn
/// last from the same generator.
pub fn sample_hyperparams<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> Result<HyperParams, HarnessError> {
    space.check()?;
    let learning_rate = space
        .learning_rate
        .sample(rng)
        .as_f64()
        .ok_or_else(|| HarnessError::InvalidHyperParams("learning_rate must be numeric".into()))?;
    let batch_size = positive_int("batch_size", space.batch_size.sample(rng))?;
    let epochs = positive_int("epochs", space.epochs.sample(rng))?;
    let extras = space.extras.iter().map(|(k, d)| (k.clone(), d.sample(rng))).collect();
    let hp = HyperParams {
        learning_rate,
        batch_size,
        epochs,
        seed: rng.gen::<u32>() as u64,
        extras,
    };
    hp.validate()?;
    Ok(hp)
}
