//! JSON documents for fitted approximations:
//!
//! ```json
//! {"kind": "dyadic", "parameters": {"r": 5.0000000000000000e-1, "K": 16},
//!  "breakpoints": [...], "coefficients": [...]}
//! ```
//!
//! Reals are written with 17 significant digits so that reading a document
//! back reproduces every coefficient bit for bit. Coefficient layout by kind:
//! `quantized` stores the `2^q` cell values, `dyadic` stores interleaved
//! `(slope, intercept)` pairs for intervals `1..K`, `polynomial` stores
//! `a_1..a_K`. Breakpoints are the interior cell edges `k 2^{-q}`, the dyadic
//! edges `r^k / 2` for `k = 1..K-1`, and empty for polynomials.

use std::fmt::Write;

use serde::Deserialize;

use super::{
    ApproxError, ApproximateInverseCdf, CellValue, DyadicPiecewiseLinear, OddPolynomial,
    QuantizedTable,
};

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn real_array(xs: impl IntoIterator<Item = f64>) -> String {
    let items: Vec<String> = xs.into_iter().map(real).collect();
    format!("[{}]", items.join(", "))
}

pub fn to_json(approx: &ApproximateInverseCdf) -> String {
    let (kind, parameters, breakpoints, coefficients) = match approx {
        ApproximateInverseCdf::PassThrough => ("exact", "{}".to_string(), vec![], vec![]),
        ApproximateInverseCdf::Quantized(t) => {
            let mode = match t.mode() {
                CellValue::ConditionalMean => "conditional_mean",
                CellValue::Midpoint => "midpoint",
            };
            let width = (t.cells() as f64).recip();
            (
                "quantized",
                format!("{{\"q\": {}, \"mode\": \"{mode}\"}}", t.q()),
                (1..t.cells()).map(|k| k as f64 * width).collect(),
                t.values().to_vec(),
            )
        }
        ApproximateInverseCdf::Dyadic(d) => (
            "dyadic",
            format!("{{\"r\": {}, \"K\": {}}}", real(d.ratio()), d.intervals()),
            d.breakpoints().to_vec(),
            d.slopes()
                .iter()
                .zip(d.intercepts())
                .flat_map(|(&s, &c)| [s, c])
                .collect(),
        ),
        ApproximateInverseCdf::Polynomial(p) => (
            "polynomial",
            format!("{{\"K\": {}}}", p.terms()),
            vec![],
            p.coeffs().to_vec(),
        ),
    };
    let mut out = String::new();
    let _ = write!(
        out,
        "{{\n  \"kind\": \"{kind}\",\n  \"parameters\": {parameters},\n  \"breakpoints\": {},\n  \"coefficients\": {}\n}}\n",
        real_array(breakpoints),
        real_array(coefficients)
    );
    out
}

#[derive(Deserialize)]
struct Document {
    kind: String,
    #[serde(default)]
    parameters: Parameters,
    #[serde(default)]
    breakpoints: Vec<f64>,
    #[serde(default)]
    coefficients: Vec<f64>,
}

#[derive(Deserialize, Default)]
struct Parameters {
    q: Option<u32>,
    mode: Option<CellValue>,
    r: Option<f64>,
    #[serde(rename = "K")]
    k: Option<usize>,
}

pub fn from_json(text: &str) -> Result<ApproximateInverseCdf, ApproxError> {
    let doc: Document =
        serde_json::from_str(text).map_err(|e| ApproxError::Document(e.to_string()))?;
    let missing = |name: &str| ApproxError::Document(format!("missing parameter `{name}`"));
    match doc.kind.as_str() {
        "exact" => Ok(ApproximateInverseCdf::PassThrough),
        "quantized" => {
            let q = doc.parameters.q.ok_or_else(|| missing("q"))?;
            let mode = doc.parameters.mode.unwrap_or_default();
            Ok(ApproximateInverseCdf::Quantized(QuantizedTable::from_parts(
                q,
                mode,
                doc.coefficients,
            )?))
        }
        "dyadic" => {
            let r = doc.parameters.r.ok_or_else(|| missing("r"))?;
            let k = doc.parameters.k.ok_or_else(|| missing("K"))?;
            if doc.coefficients.len() != 2 * k {
                return Err(ApproxError::Document(format!(
                    "dyadic approximation with K={k} needs {} coefficients",
                    2 * k
                )));
            }
            let (slopes, intercepts) = doc.coefficients.chunks(2).map(|c| (c[0], c[1])).unzip();
            Ok(ApproximateInverseCdf::Dyadic(DyadicPiecewiseLinear::from_parts(
                r,
                slopes,
                intercepts,
                doc.breakpoints,
            )?))
        }
        "polynomial" => {
            let p = OddPolynomial::from_coeffs(doc.coefficients)?;
            if let Some(k) = doc.parameters.k {
                if k != p.terms() {
                    return Err(ApproxError::Document(format!(
                        "K={k} but {} coefficients given",
                        p.terms()
                    )));
                }
            }
            Ok(ApproximateInverseCdf::Polynomial(p))
        }
        other => Err(ApproxError::Document(format!("unknown kind `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inverse_cdf::ApproxSpec;

    #[test]
    fn defaults_round_trip_bit_exact() {
        let mut specs = ApproxSpec::defaults().to_vec();
        specs.push("dyadic:r=0.75,K=9".parse().unwrap());
        specs.push("quantized:q=4,mode=midpoint".parse().unwrap());
        specs.push(ApproxSpec::PassThrough);
        for spec in specs {
            let a = spec.build().unwrap();
            let back = from_json(&to_json(&a)).unwrap();
            assert_eq!(back, a, "{spec}");
        }
    }

    #[test]
    fn rejects_malformed() {
        assert!(from_json("{").is_err());
        assert!(from_json(r#"{"kind": "spline"}"#).is_err());
        assert!(from_json(r#"{"kind": "quantized", "parameters": {"q": 2}, "coefficients": [1.0]}"#).is_err());
        assert!(from_json(r#"{"kind": "dyadic", "parameters": {"r": 0.5, "K": 2}, "breakpoints": [0.25], "coefficients": [1.0, 2.0]}"#).is_err());
    }

    #[test]
    fn seventeen_significant_digits() {
        let doc = to_json(&ApproxSpec::Polynomial { terms: 1 }.build().unwrap());
        let start = doc.find("\"coefficients\": [").unwrap() + 17;
        let number = &doc[start..doc[start..].find(']').unwrap() + start];
        let mantissa = number.split('e').next().unwrap();
        assert_eq!(mantissa.chars().filter(|c| c.is_ascii_digit()).count(), 17, "{number}");
    }
}
