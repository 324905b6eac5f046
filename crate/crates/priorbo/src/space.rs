//! Parameter types and the bijection between native parameter values and the
//! normalized `[0,1]^D` representation used by surrogates, priors, and the
//! acquisition search.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

/// How a single parameter varies.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamKind {
    Continuous { lo: f64, hi: f64, log_scale: bool },
    Ordinal { values: Vec<f64> },
    Categorical { values: Vec<String> },
}

/// One named dimension of the search space.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub kind: ParamKind,
}

impl Parameter {
    pub fn continuous(name: &str, lo: f64, hi: f64) -> Self {
        Parameter {
            name: name.to_string(),
            kind: ParamKind::Continuous {
                lo,
                hi,
                log_scale: false,
            },
        }
    }

    pub fn log_continuous(name: &str, lo: f64, hi: f64) -> Self {
        Parameter {
            name: name.to_string(),
            kind: ParamKind::Continuous {
                lo,
                hi,
                log_scale: true,
            },
        }
    }

    pub fn ordinal(name: &str, values: &[f64]) -> Self {
        Parameter {
            name: name.to_string(),
            kind: ParamKind::Ordinal {
                values: values.to_vec(),
            },
        }
    }

    pub fn categorical(name: &str, values: &[&str]) -> Self {
        Parameter {
            name: name.to_string(),
            kind: ParamKind::Categorical {
                values: values.iter().map(|s| s.to_string()).collect(),
            },
        }
    }

    /// Number of distinct values for discrete kinds, `None` for continuous.
    pub fn cardinality(&self) -> Option<usize> {
        match &self.kind {
            ParamKind::Continuous { .. } => None,
            ParamKind::Ordinal { values } => Some(values.len()),
            ParamKind::Categorical { values } => Some(values.len()),
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, ParamKind::Continuous { .. })
    }

    fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(',') || self.name.contains(char::is_whitespace)
        {
            return Err(Error::InvalidSpace(format!(
                "parameter name `{}` must be non-empty without commas or whitespace",
                self.name
            )));
        }
        match &self.kind {
            ParamKind::Continuous { lo, hi, log_scale } => {
                if !(lo < hi) {
                    return Err(Error::InvalidSpace(format!(
                        "`{}`: lo {lo} must be < hi {hi}",
                        self.name
                    )));
                }
                if *log_scale && *lo <= 0.0 {
                    return Err(Error::InvalidSpace(format!(
                        "`{}`: log scale requires lo > 0, got {lo}",
                        self.name
                    )));
                }
            }
            ParamKind::Ordinal { values } => {
                if values.len() < 2 {
                    return Err(Error::InvalidSpace(format!(
                        "`{}`: ordinal needs >= 2 values",
                        self.name
                    )));
                }
                if !values.windows(2).all(|w| w[0] < w[1]) {
                    return Err(Error::InvalidSpace(format!(
                        "`{}`: ordinal values must be strictly increasing",
                        self.name
                    )));
                }
            }
            ParamKind::Categorical { values } => {
                if values.len() < 2 {
                    return Err(Error::InvalidSpace(format!(
                        "`{}`: categorical needs >= 2 values",
                        self.name
                    )));
                }
                for (i, v) in values.iter().enumerate() {
                    if values[..i].contains(v) {
                        return Err(Error::InvalidSpace(format!(
                            "`{}`: duplicate categorical value `{v}`",
                            self.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A single coordinate of a native point.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamValue {
    Float(f64),
    Text(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Float(v) => Some(*v),
            ParamValue::Text(_) => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Float(v) => write!(f, "{v}"),
            ParamValue::Text(s) => write!(f, "{s}"),
        }
    }
}

/// A point in native parameter units, one value per parameter.
pub type NativePoint = Vec<ParamValue>;

/// A point in the normalized unit cube, one coordinate per parameter.
pub type UnitPoint = Vec<f64>;

/// Ordered collection of parameters; immutable once built.
#[derive(Clone, Debug)]
pub struct SearchSpace {
    parameters: Vec<Parameter>,
}

impl SearchSpace {
    pub fn new(parameters: Vec<Parameter>) -> Result<Self> {
        if parameters.is_empty() {
            return Err(Error::InvalidSpace("need at least one parameter".into()));
        }
        for p in &parameters {
            p.validate()?;
        }
        for (i, p) in parameters.iter().enumerate() {
            if parameters[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::InvalidSpace(format!(
                    "duplicate parameter name `{}`",
                    p.name
                )));
            }
        }
        Ok(SearchSpace { parameters })
    }

    pub fn dim(&self) -> usize {
        self.parameters.len()
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.parameters
    }

    pub fn param(&self, i: usize) -> &Parameter {
        &self.parameters[i]
    }

    pub fn names(&self) -> Vec<&str> {
        self.parameters.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn is_fully_continuous(&self) -> bool {
        self.parameters.iter().all(|p| p.is_continuous())
    }

    pub fn is_fully_discrete(&self) -> bool {
        self.parameters.iter().all(|p| !p.is_continuous())
    }

    /// Product of discrete cardinalities, `None` if any dimension is continuous
    /// or the product overflows.
    pub fn discrete_size(&self) -> Option<usize> {
        let mut n: usize = 1;
        for p in &self.parameters {
            n = n.checked_mul(p.cardinality()?)?;
        }
        Some(n)
    }

    /// Maps a native point into the unit cube.
    ///
    /// Continuous coordinates interpolate linearly (in log space when the
    /// parameter is log-scaled), ordinals map to `rank/(k-1)`, categoricals to
    /// `index/(k-1)`.
    pub fn normalize(&self, x: &NativePoint) -> Result<UnitPoint> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut u = Vec::with_capacity(self.dim());
        for (p, v) in self.parameters.iter().zip(x) {
            u.push(normalize_value(p, v)?);
        }
        Ok(u)
    }

    /// Inverse of [`normalize`](Self::normalize); coordinates are clamped to
    /// `[0,1]` first and discrete coordinates snap to the nearest rank.
    pub fn denormalize(&self, u: &[f64]) -> NativePoint {
        self.parameters
            .iter()
            .zip(u)
            .map(|(p, &ui)| denormalize_value(p, ui.clamp(0.0, 1.0)))
            .collect()
    }

    /// Checks that every coordinate is inside the declared bounds/value sets.
    pub fn validate_point(&self, x: &NativePoint) -> Result<()> {
        self.normalize(x).map(|_| ())
    }

    /// Draws `n` points uniformly: continuous coordinates uniform on the
    /// (log-)range, discrete coordinates uniform over ranks.
    pub fn uniform_sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<NativePoint> {
        (0..n)
            .map(|_| self.denormalize(&self.uniform_sample_unit(rng)))
            .collect()
    }

    /// One uniform draw in unit coordinates (discrete dims land exactly on
    /// rank grid points so every rank is equally likely).
    pub fn uniform_sample_unit<R: Rng + ?Sized>(&self, rng: &mut R) -> UnitPoint {
        self.parameters
            .iter()
            .map(|p| match p.cardinality() {
                None => rng.gen::<f64>(),
                Some(k) => rng.gen_range(0..k) as f64 / (k - 1) as f64,
            })
            .collect()
    }
}

fn normalize_value(p: &Parameter, v: &ParamValue) -> Result<f64> {
    let oob = || Error::OutOfBounds {
        param: p.name.clone(),
        value: v.to_string(),
    };
    match (&p.kind, v) {
        (ParamKind::Continuous { lo, hi, log_scale }, ParamValue::Float(x)) => {
            if !x.is_finite() || x < lo || x > hi {
                return Err(oob());
            }
            if *log_scale {
                Ok((x.ln() - lo.ln()) / (hi.ln() - lo.ln()))
            } else {
                Ok((x - lo) / (hi - lo))
            }
        }
        (ParamKind::Ordinal { values }, ParamValue::Float(x)) => {
            let rank = values
                .iter()
                .position(|v| v == x)
                .ok_or_else(oob)?;
            Ok(rank as f64 / (values.len() - 1) as f64)
        }
        (ParamKind::Categorical { values }, ParamValue::Text(s)) => {
            let idx = values.iter().position(|v| v == s).ok_or_else(oob)?;
            Ok(idx as f64 / (values.len() - 1) as f64)
        }
        _ => Err(oob()),
    }
}

fn denormalize_value(p: &Parameter, u: f64) -> ParamValue {
    match &p.kind {
        ParamKind::Continuous { lo, hi, log_scale } => {
            let x = if *log_scale {
                (lo.ln() + u * (hi.ln() - lo.ln())).exp()
            } else {
                lo + u * (hi - lo)
            };
            ParamValue::Float(x.clamp(*lo, *hi))
        }
        ParamKind::Ordinal { values } => {
            ParamValue::Float(values[snap_rank(u, values.len())])
        }
        ParamKind::Categorical { values } => {
            ParamValue::Text(values[snap_rank(u, values.len())].clone())
        }
    }
}

/// Nearest rank for a unit coordinate over `k` values.
pub fn snap_rank(u: f64, k: usize) -> usize {
    ((u * (k - 1) as f64).round() as usize).min(k - 1)
}

// ---------------------------------------------------------------------------
// JSON schema
// ---------------------------------------------------------------------------

/// Serde form of one parameter in the JSON space schema, including an optional
/// per-dimension prior handled by the priors module.
#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct ParameterSchema {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub log: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior: Option<serde_json::Value>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// Serde form of the whole space: `{"parameters": [...]}`.
#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct SpaceSchema {
    pub parameters: Vec<ParameterSchema>,
}

impl SpaceSchema {
    /// Builds the typed space; prior fields are left for the caller.
    pub fn to_space(&self) -> Result<SearchSpace> {
        let mut params = Vec::new();
        for ps in &self.parameters {
            let kind = match ps.kind.as_str() {
                "continuous" => {
                    let [lo, hi] = ps.range.ok_or_else(|| {
                        Error::InvalidSpace(format!("`{}`: continuous needs `range`", ps.name))
                    })?;
                    ParamKind::Continuous {
                        lo,
                        hi,
                        log_scale: ps.log,
                    }
                }
                "ordinal" => {
                    let vals = ps.values.as_ref().ok_or_else(|| {
                        Error::InvalidSpace(format!("`{}`: ordinal needs `values`", ps.name))
                    })?;
                    let values: Vec<f64> = serde_json::from_value(vals.clone())?;
                    ParamKind::Ordinal { values }
                }
                "categorical" => {
                    let vals = ps.values.as_ref().ok_or_else(|| {
                        Error::InvalidSpace(format!("`{}`: categorical needs `values`", ps.name))
                    })?;
                    let values: Vec<String> = serde_json::from_value(vals.clone())?;
                    ParamKind::Categorical { values }
                }
                other => {
                    return Err(Error::InvalidSpace(format!(
                        "`{}`: unknown parameter type `{other}`",
                        ps.name
                    )))
                }
            };
            params.push(Parameter {
                name: ps.name.clone(),
                kind,
            });
        }
        SearchSpace::new(params)
    }
}
