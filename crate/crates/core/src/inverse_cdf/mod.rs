//! Reference and approximate inverse Normal distribution functions.
//!
//! Every approximation `Q̃` is antisymmetric about `u = 1/2`, so coupled
//! pairs `(Z, Z̃) = (Φ⁻¹(U), Q̃(U))` come from one shared uniform. Three
//! kinds are provided:
//!
//! * [`QuantizedTable`]: piecewise constant on `2^q` equal cells,
//! * [`DyadicPiecewiseLinear`]: least-squares lines on geometrically
//!   shrinking intervals towards `u = 0`, mirrored onto `(1/2, 1)`,
//! * [`OddPolynomial`]: least-squares odd polynomial in `u - 1/2`.
//!
//! Interval convention: partitions are closed on the left. For the
//! quantised table this means `u = k 2^{-q}` belongs to cell `k`; for the
//! dyadic approximation `u = 1/2` is evaluated on the first interval's line.

mod dyadic;
mod json;
mod moment;
mod polynomial;
mod quantized;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::quadrature::QuadratureError;
use crate::special;

pub use dyadic::{build_dyadic, DyadicPiecewiseLinear};
pub use json::{from_json, to_json};
pub use moment::{moment_error, MomentErrorReport, MomentMethod};
pub use polynomial::{fit_odd_polynomial, OddPolynomial};
pub use quantized::{build_quantized, CellValue, QuantizedTable};

/// Absolute accuracy of [`ReferenceInverseCdf`].
pub const REFERENCE_ACCURACY: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApproxError {
    #[error("probability {0} is outside (0, 1)")]
    Domain(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("least-squares fit failed on interval {interval}: {source}")]
    Fit {
        interval: usize,
        #[source]
        source: QuadratureError,
    },
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("malformed approximation document: {0}")]
    Document(String),
}

/// A map from `(0, 1)` to the reals standing in for `Φ⁻¹`.
pub trait InverseCdf: Send + Sync {
    /// Evaluates at `u`, which the caller guarantees lies in `(0, 1)`.
    fn eval(&self, u: f64) -> f64;

    /// Checked evaluation.
    fn evaluate(&self, u: f64) -> Result<f64, ApproxError> {
        if u > 0.0 && u < 1.0 {
            Ok(self.eval(u))
        } else {
            Err(ApproxError::Domain(u))
        }
    }
}

/// The exact inverse Normal distribution function, to [`REFERENCE_ACCURACY`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ReferenceInverseCdf;

impl InverseCdf for ReferenceInverseCdf {
    #[inline]
    fn eval(&self, u: f64) -> f64 {
        special::inv_normal_cdf(u)
    }
}

/// Checked `Φ⁻¹(u)`.
pub fn reference_inv_cdf(u: f64) -> Result<f64, ApproxError> {
    ReferenceInverseCdf.evaluate(u)
}

/// One of the shipped approximations, or the reference itself as a
/// pass-through (useful to check that nested estimators reduce to the
/// standard ones).
#[derive(Debug, Clone, PartialEq)]
pub enum ApproximateInverseCdf {
    PassThrough,
    Quantized(QuantizedTable),
    Dyadic(DyadicPiecewiseLinear),
    Polynomial(OddPolynomial),
}

impl InverseCdf for ApproximateInverseCdf {
    #[inline]
    fn eval(&self, u: f64) -> f64 {
        match self {
            Self::PassThrough => special::inv_normal_cdf(u),
            Self::Quantized(t) => t.eval(u),
            Self::Dyadic(d) => d.eval(u),
            Self::Polynomial(p) => p.eval(u),
        }
    }
}

macro_rules! inverse_cdf_by_eval {
    ($($t:ty),*) => {$(
        impl InverseCdf for $t {
            #[inline]
            fn eval(&self, u: f64) -> f64 {
                <$t>::eval(self, u)
            }
        }
    )*};
}

inverse_cdf_by_eval!(QuantizedTable, DyadicPiecewiseLinear, OddPolynomial);

impl From<QuantizedTable> for ApproximateInverseCdf {
    fn from(t: QuantizedTable) -> Self {
        Self::Quantized(t)
    }
}

impl From<DyadicPiecewiseLinear> for ApproximateInverseCdf {
    fn from(d: DyadicPiecewiseLinear) -> Self {
        Self::Dyadic(d)
    }
}

impl From<OddPolynomial> for ApproximateInverseCdf {
    fn from(p: OddPolynomial) -> Self {
        Self::Polynomial(p)
    }
}

impl ApproximateInverseCdf {
    /// The spec string this approximation was built from.
    pub fn spec(&self) -> ApproxSpec {
        match self {
            Self::PassThrough => ApproxSpec::PassThrough,
            Self::Quantized(t) => ApproxSpec::Quantized {
                q: t.q(),
                mode: t.mode(),
            },
            Self::Dyadic(d) => ApproxSpec::Dyadic {
                ratio: d.ratio(),
                intervals: d.intervals(),
            },
            Self::Polynomial(p) => ApproxSpec::Polynomial { terms: p.terms() },
        }
    }

    /// Sub-intervals of `(0, 1/2]` on which the approximation is smooth, in
    /// the `z = Φ⁻¹(u)` variable, with the local form on each.
    pub(crate) fn lower_pieces(&self) -> Vec<Piece<'_>> {
        match self {
            Self::PassThrough => whole_lower_half(LocalForm::Reference),
            Self::Polynomial(p) => whole_lower_half(LocalForm::Polynomial(p)),
            Self::Quantized(t) => t.lower_pieces(),
            Self::Dyadic(d) => d.lower_pieces(),
        }
    }
}

fn whole_lower_half(form: LocalForm<'_>) -> Vec<Piece<'_>> {
    // Panel splits only help the adaptive rule; the form is smooth throughout.
    let cuts = [special::Z_FLOOR, -12.0, -6.0, -3.0, -1.5, 0.0];
    cuts.windows(2)
        .map(|w| Piece {
            z_lo: w[0],
            z_hi: w[1],
            form,
        })
        .collect()
}

/// A smooth piece of an approximation over `[Φ(z_lo), Φ(z_hi)]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Piece<'a> {
    pub z_lo: f64,
    pub z_hi: f64,
    pub form: LocalForm<'a>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum LocalForm<'a> {
    Constant(f64),
    Line { slope: f64, intercept: f64 },
    Polynomial(&'a OddPolynomial),
    Reference,
}

impl LocalForm<'_> {
    /// `Q̃(Φ(z))` for `z <= 0`.
    #[inline]
    pub fn at_z(&self, z: f64) -> f64 {
        match *self {
            LocalForm::Constant(c) => c,
            LocalForm::Line { slope, intercept } => intercept + slope * special::normal_cdf(z),
            LocalForm::Polynomial(p) => p.eval_centered(0.5 * special::centered_normal_cdf(z)),
            LocalForm::Reference => special::inv_normal_cdf(special::normal_cdf(z)),
        }
    }
}

/// Textual description of an approximation, as accepted on the command line:
/// `quantized:q=10`, `quantized:q=10,mode=midpoint`, `dyadic:r=0.5,K=16`,
/// `poly:K=4`, `exact`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ApproxSpec {
    PassThrough,
    Quantized { q: u32, mode: CellValue },
    Dyadic { ratio: f64, intervals: usize },
    Polynomial { terms: usize },
}

impl ApproxSpec {
    /// Default sizes: 1024 cells, 16 dyadic intervals with ratio 1/2, degree 7.
    pub fn defaults() -> [ApproxSpec; 3] {
        [
            ApproxSpec::Quantized {
                q: 10,
                mode: CellValue::ConditionalMean,
            },
            ApproxSpec::Dyadic {
                ratio: 0.5,
                intervals: 16,
            },
            ApproxSpec::Polynomial { terms: 4 },
        ]
    }

    pub fn build(&self) -> Result<ApproximateInverseCdf, ApproxError> {
        Ok(match *self {
            ApproxSpec::PassThrough => ApproximateInverseCdf::PassThrough,
            ApproxSpec::Quantized { q, mode } => {
                ApproximateInverseCdf::Quantized(build_quantized(q, mode)?)
            }
            ApproxSpec::Dyadic { ratio, intervals } => {
                ApproximateInverseCdf::Dyadic(build_dyadic(ratio, intervals)?)
            }
            ApproxSpec::Polynomial { terms } => {
                ApproximateInverseCdf::Polynomial(fit_odd_polynomial(terms)?)
            }
        })
    }

    /// Short kind name used in CSV output.
    pub fn kind(&self) -> &'static str {
        match self {
            ApproxSpec::PassThrough => "exact",
            ApproxSpec::Quantized { .. } => "quantized",
            ApproxSpec::Dyadic { .. } => "dyadic",
            ApproxSpec::Polynomial { .. } => "poly",
        }
    }
}

impl fmt::Display for ApproxSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ApproxSpec::PassThrough => write!(f, "exact"),
            ApproxSpec::Quantized {
                q,
                mode: CellValue::ConditionalMean,
            } => write!(f, "quantized:q={q}"),
            ApproxSpec::Quantized {
                q,
                mode: CellValue::Midpoint,
            } => write!(f, "quantized:q={q},mode=midpoint"),
            ApproxSpec::Dyadic { ratio, intervals } => write!(f, "dyadic:r={ratio},K={intervals}"),
            ApproxSpec::Polynomial { terms } => write!(f, "poly:K={terms}"),
        }
    }
}

impl FromStr for ApproxSpec {
    type Err = ApproxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |msg: &str| ApproxError::Config(format!("approximation `{s}`: {msg}"));
        let (kind, args) = match s.split_once(':') {
            Some((k, a)) => (k.trim(), a.trim()),
            None => (s.trim(), ""),
        };
        let mut pairs = Vec::new();
        for item in args.split(',').filter(|x| !x.trim().is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| bad("expected key=value"))?;
            pairs.push((k.trim(), v.trim()));
        }
        let get = |key: &str| pairs.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
        let parse_usize = |key: &str| -> Result<usize, ApproxError> {
            get(key)
                .ok_or_else(|| bad(&format!("missing `{key}`")))?
                .parse()
                .map_err(|_| bad(&format!("`{key}` is not an integer")))
        };
        match kind {
            "exact" | "reference" => Ok(ApproxSpec::PassThrough),
            "quantized" | "quantised" => {
                let mode = match get("mode") {
                    None | Some("mean") | Some("conditional_mean") => CellValue::ConditionalMean,
                    Some("midpoint") => CellValue::Midpoint,
                    Some(other) => return Err(bad(&format!("unknown mode `{other}`"))),
                };
                let q = u32::try_from(parse_usize("q")?).map_err(|_| bad("q too large"))?;
                Ok(ApproxSpec::Quantized { q, mode })
            }
            "dyadic" => {
                let ratio = match get("r") {
                    Some(v) => v.parse().map_err(|_| bad("`r` is not a number"))?,
                    None => 0.5,
                };
                Ok(ApproxSpec::Dyadic {
                    ratio,
                    intervals: parse_usize("K")?,
                })
            }
            "poly" | "polynomial" => Ok(ApproxSpec::Polynomial {
                terms: parse_usize("K")?,
            }),
            _ => Err(bad("unknown kind")),
        }
    }
}

impl serde::Serialize for ApproxSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for ApproxSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_domain() {
        assert_eq!(reference_inv_cdf(0.5).unwrap(), 0.0);
        assert!(matches!(reference_inv_cdf(0.0), Err(ApproxError::Domain(_))));
        assert!(matches!(reference_inv_cdf(1.0), Err(ApproxError::Domain(_))));
        assert!(matches!(reference_inv_cdf(f64::NAN), Err(ApproxError::Domain(_))));
        let a = reference_inv_cdf(0.3).unwrap();
        let b = reference_inv_cdf(0.7).unwrap();
        assert!((a + b).abs() < REFERENCE_ACCURACY);
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in ["quantized:q=10", "quantized:q=3,mode=midpoint", "dyadic:r=0.5,K=16", "poly:K=4", "exact"] {
            let spec: ApproxSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        assert!("poly".parse::<ApproxSpec>().is_err());
        assert!("quantized:q=x".parse::<ApproxSpec>().is_err());
        assert!("spline:K=2".parse::<ApproxSpec>().is_err());
    }

    #[test]
    fn evaluate_rejects_outside_unit_interval() {
        for spec in ApproxSpec::defaults() {
            let a = spec.build().unwrap();
            assert!(a.evaluate(0.0).is_err());
            assert!(a.evaluate(1.0).is_err());
            assert!(a.evaluate(-0.1).is_err());
            assert!(a.evaluate(0.25).is_ok());
        }
    }
}
