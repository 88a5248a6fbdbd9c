//! Fuzzy-logic connectives: t-norms, their dual t-conorms, and fuzzy negations.
//!
//! Inputs outside `[0, 1]` are clamped. Calibrated scores can leave the unit
//! interval by a small amount, and the connectives are only defined on it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TNorm {
    /// Gödel: `min(x, y)`.
    Godel,
    /// `x * y`.
    Product,
    /// `max(0, x + y - 1)`.
    Lukasiewicz,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Negation {
    /// `1 - x`.
    Standard,
    /// `(1 + cos(pi x)) / 2`.
    StrictCosine,
}

/// A t-norm together with a fuzzy negation. The t-conorm is always the dual of
/// the t-norm, so it is not stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FuzzySemantics {
    pub tnorm: TNorm,
    pub negation: Negation,
}

impl Default for FuzzySemantics {
    fn default() -> Self {
        Self { tnorm: TNorm::Product, negation: Negation::Standard }
    }
}

#[inline]
fn clamp_unit(x: f64) -> f64 {
    if x.is_nan() {
        tracing::warn!("NaN truth value clamped to 0");
        return 0.0;
    }
    x.clamp(0.0, 1.0)
}

impl TNorm {
    #[inline]
    pub fn apply(self, x: f64, y: f64) -> f64 {
        let (x, y) = (clamp_unit(x), clamp_unit(y));
        self.apply_raw(x, y)
    }

    /// The t-norm formula without clamping. Used by training, where calibrated
    /// scores are aggregated before the clamp.
    #[inline]
    pub fn apply_raw(self, x: f64, y: f64) -> f64 {
        match self {
            TNorm::Godel => x.min(y),
            TNorm::Product => x * y,
            // max(0, x + y - 1), evaluated on sorted operands so that it is
            // exactly commutative and T(x, 1) = x holds without rounding
            TNorm::Lukasiewicz => {
                let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
                (lo - (1.0 - hi)).max(0.0)
            }
        }
    }

    /// Partial derivatives of [`TNorm::apply_raw`] with respect to `(x, y)`.
    /// Gödel ties route to `x`, which under a left fold is the lower-index operand.
    #[inline]
    pub fn partials(self, x: f64, y: f64) -> (f64, f64) {
        match self {
            TNorm::Godel => {
                if x <= y {
                    (1.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            }
            TNorm::Product => (y, x),
            TNorm::Lukasiewicz => {
                if self.apply_raw(x, y) > 0.0 {
                    (1.0, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }

    /// Dual t-conorm, evaluated literally as `1 - T(1 - x, 1 - y)` so the
    /// duality is exact in floating point (max, `x + y - xy` and `min(1, x + y)`
    /// up to rounding).
    #[inline]
    pub fn conorm(self, x: f64, y: f64) -> f64 {
        let (x, y) = (clamp_unit(x), clamp_unit(y));
        1.0 - self.apply_raw(1.0 - x, 1.0 - y)
    }

    /// Left fold of the t-norm. Returns `None` for an empty iterator.
    pub fn fold<I: IntoIterator<Item = f64>>(self, xs: I) -> Option<f64> {
        xs.into_iter().fold(None, |acc, x| Some(match acc {
            None => clamp_unit(x),
            Some(a) => self.apply(a, x),
        }))
    }

    pub fn fold_conorm<I: IntoIterator<Item = f64>>(self, xs: I) -> Option<f64> {
        xs.into_iter().fold(None, |acc, x| Some(match acc {
            None => clamp_unit(x),
            Some(a) => self.conorm(a, x),
        }))
    }
}

impl Negation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        self.apply_raw(clamp_unit(x))
    }

    #[inline]
    pub fn apply_raw(self, x: f64) -> f64 {
        match self {
            Negation::Standard => 1.0 - x,
            Negation::StrictCosine => 0.5 * (1.0 + (std::f64::consts::PI * x).cos()),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Negation::Standard => -1.0,
            Negation::StrictCosine => -0.5 * std::f64::consts::PI * (std::f64::consts::PI * x).sin(),
        }
    }
}

impl FuzzySemantics {
    pub fn new(tnorm: TNorm, negation: Negation) -> Self {
        Self { tnorm, negation }
    }

    pub fn tnorm(&self, x: f64, y: f64) -> f64 {
        self.tnorm.apply(x, y)
    }

    pub fn tconorm(&self, x: f64, y: f64) -> f64 {
        self.tnorm.conorm(x, y)
    }

    pub fn negate(&self, x: f64) -> f64 {
        self.negation.apply(x)
    }
}

impl FromStr for TNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "min" | "godel" => Ok(TNorm::Godel),
            "prod" | "product" => Ok(TNorm::Product),
            "luk" | "lukasiewicz" => Ok(TNorm::Lukasiewicz),
            other => Err(Error::Config(format!("unknown t-norm `{other}` (expected min, prod, luk)"))),
        }
    }
}

impl FromStr for Negation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "std" | "standard" => Ok(Negation::Standard),
            "cos" | "strict-cosine" => Ok(Negation::StrictCosine),
            other => Err(Error::Config(format!("unknown negation `{other}` (expected std, cos)"))),
        }
    }
}

impl fmt::Display for TNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TNorm::Godel => "min",
            TNorm::Product => "prod",
            TNorm::Lukasiewicz => "luk",
        })
    }
}

impl fmt::Display for Negation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Negation::Standard => "std",
            Negation::StrictCosine => "cos",
        })
    }
}
