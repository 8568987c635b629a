//! The labeling codebook: four label axes, their allowed values and
//! definitions, and data-driven validity constraints.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Topic,
    MeasureSupport,
    GovernmentSupport,
    Relevance,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::Topic, Axis::MeasureSupport, Axis::GovernmentSupport, Axis::Relevance];

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Topic => "topic",
            Axis::MeasureSupport => "measure_support",
            Axis::GovernmentSupport => "government_support",
            Axis::Relevance => "relevance",
        }
    }

    /// The value set every codebook version must declare for this axis.
    pub fn canonical_values(self) -> &'static [&'static str] {
        match self {
            Axis::Topic => &TOPICS,
            Axis::MeasureSupport => &MEASURE_SUPPORT,
            Axis::GovernmentSupport => &GOVERNMENT_SUPPORT,
            Axis::Relevance => &RELEVANCE,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Axis {
    type Err = CodebookError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Axis::ALL
            .into_iter()
            .find(|a| a.as_str() == s || a.as_str().replace('_', "-") == s)
            .ok_or_else(|| CodebookError::UnknownAxis(s.to_string()))
    }
}

pub const TOPICS: [&str; 9] = [
    "masks",
    "curfew",
    "quarantine",
    "lockdown",
    "schools",
    "testing",
    "closing-horeca",
    "vaccine",
    "other-measure",
];
pub const MEASURE_SUPPORT: [&str; 4] = ["too-strict", "ok", "too-loose", "not-applicable"];
pub const GOVERNMENT_SUPPORT: [&str; 3] = ["supportive", "unsupportive", "not-applicable"];
pub const RELEVANCE: [&str; 2] = ["relevant", "irrelevant"];

pub const NOT_APPLICABLE: &str = "not-applicable";
pub const RELEVANT: &str = "relevant";
pub const IRRELEVANT: &str = "irrelevant";

#[derive(Debug, Error)]
pub enum CodebookError {
    #[error("unknown axis {0:?}")]
    UnknownAxis(String),
    #[error("codebook parse error: {0}")]
    Parse(String),
    #[error("invalid codebook: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub axis: Axis,
    pub values: Vec<String>,
    /// Whether a record may leave this axis empty.
    #[serde(default)]
    pub optional: bool,
    #[serde(default)]
    pub definitions: BTreeMap<String, String>,
}

/// A test on one axis of a label. Exactly one of `equals` / `absent` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub axis: Axis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equals: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub absent: Option<bool>,
}

impl Condition {
    fn holds(&self, values: &LabelValues) -> bool {
        let value = values.get(self.axis);
        match (&self.equals, self.absent) {
            (Some(expected), _) => value == Some(expected.as_str()),
            (None, Some(absent)) => value.is_none() == absent,
            (None, None) => true,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.equals, self.absent) {
            (Some(v), _) => write!(f, "{}={v}", self.axis),
            (None, Some(true)) => write!(f, "{} absent", self.axis),
            (None, Some(false)) => write!(f, "{} present", self.axis),
            (None, None) => write!(f, "true"),
        }
    }
}

/// `when` holds ⇒ every condition in `then` holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub description: String,
    pub when: Condition,
    pub then: Vec<Condition>,
}

/// Values along the four axes. `topic` is absent for irrelevant posts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelValues {
    #[serde(default)]
    pub topic: Option<String>,
    pub measure_support: String,
    pub government_support: String,
    pub relevance: String,
}

impl LabelValues {
    pub fn get(&self, axis: Axis) -> Option<&str> {
        match axis {
            Axis::Topic => self.topic.as_deref(),
            Axis::MeasureSupport => Some(self.measure_support.as_str()),
            Axis::GovernmentSupport => Some(self.government_support.as_str()),
            Axis::Relevance => Some(self.relevance.as_str()),
        }
        .filter(|v| !v.is_empty())
    }

    /// An irrelevant label: no topic, both support axes not-applicable.
    pub fn irrelevant() -> Self {
        Self {
            topic: None,
            measure_support: NOT_APPLICABLE.into(),
            government_support: NOT_APPLICABLE.into(),
            relevance: IRRELEVANT.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    UnknownValue { axis: Axis, value: String },
    MissingValue { axis: Axis },
    Constraint { rule: String, failed: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownValue { axis, value } => write!(f, "unknown value {value:?} for axis {axis}"),
            Violation::MissingValue { axis } => write!(f, "missing value for axis {axis}"),
            Violation::Constraint { rule, failed } => write!(f, "constraint violated ({rule}): requires {failed}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub version: String,
    pub axes: Vec<AxisSpec>,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
}

pub const DEFAULT_CODEBOOK_TOML: &str = include_str!("../codebook.toml");

impl Default for Codebook {
    fn default() -> Self {
        Self::from_toml(DEFAULT_CODEBOOK_TOML).expect("bundled codebook is valid")
    }
}

impl Codebook {
    pub fn from_toml(src: &str) -> Result<Self, CodebookError> {
        let codebook: Codebook = toml::from_str(src).map_err(|e| CodebookError::Parse(e.to_string()))?;
        codebook.check()?;
        Ok(codebook)
    }

    pub fn load(path: &Path) -> Result<Self, CodebookError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("codebook serializes")
    }

    /// Structural checks: the four axes each exactly once, with their
    /// canonical value sets, and constraints referring only to known values.
    fn check(&self) -> Result<(), CodebookError> {
        if self.version.trim().is_empty() {
            return Err(CodebookError::Invalid("empty version".into()));
        }
        for axis in Axis::ALL {
            let specs: Vec<_> = self.axes.iter().filter(|s| s.axis == axis).collect();
            let [spec] = specs.as_slice() else {
                return Err(CodebookError::Invalid(format!("axis {axis} must be declared exactly once")));
            };
            let declared: BTreeSet<&str> = spec.values.iter().map(String::as_str).collect();
            let canonical: BTreeSet<&str> = axis.canonical_values().iter().copied().collect();
            if declared.len() != spec.values.len() || declared != canonical {
                return Err(CodebookError::Invalid(format!(
                    "axis {axis} must declare exactly {:?}",
                    axis.canonical_values()
                )));
            }
        }
        for c in &self.constraints {
            for cond in std::iter::once(&c.when).chain(&c.then) {
                if let Some(v) = &cond.equals {
                    if !self.allows(cond.axis, v) {
                        return Err(CodebookError::Invalid(format!(
                            "constraint {:?} references unknown value {v:?} on {}",
                            c.description, cond.axis
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn axis(&self, axis: Axis) -> &AxisSpec {
        self.axes.iter().find(|s| s.axis == axis).expect("checked on load")
    }

    pub fn values(&self, axis: Axis) -> &[String] {
        &self.axis(axis).values
    }

    pub fn allows(&self, axis: Axis, value: &str) -> bool {
        self.values(axis).iter().any(|v| v == value)
    }

    pub fn definition(&self, axis: Axis, value: &str) -> Option<&str> {
        self.axis(axis).definitions.get(value).map(String::as_str)
    }

    /// Checks every axis value and every constraint.
    pub fn validate(&self, values: &LabelValues) -> Result<(), Vec<Violation>> {
        let mut violations = Vec::new();
        for axis in Axis::ALL {
            match values.get(axis) {
                Some(v) if !self.allows(axis, v) => violations.push(Violation::UnknownValue {
                    axis,
                    value: v.to_string(),
                }),
                None if !self.axis(axis).optional => violations.push(Violation::MissingValue { axis }),
                _ => {}
            }
        }
        for c in &self.constraints {
            if c.when.holds(values) {
                for cond in c.then.iter().filter(|cond| !cond.holds(values)) {
                    violations.push(Violation::Constraint {
                        rule: c.description.clone(),
                        failed: cond.to_string(),
                    });
                }
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }
}

/// Validates a label against a codebook.
pub fn validate_label(values: &LabelValues, codebook: &Codebook) -> Result<(), Vec<Violation>> {
    codebook.validate(values)
}
