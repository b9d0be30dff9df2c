use super::{ApproxError, LocalForm, Piece};
use crate::quadrature::{integrate, QuadratureError, Tolerance};
use crate::special::{inv_normal_cdf, normal_cdf, normal_pdf, Z_FLOOR};

pub const MAX_INTERVALS: usize = 64;

/// Discontinuous piecewise linear approximation on the geometric partition
/// of `(0, 1/2]`
///
/// ```text
/// I_k = [r^k / 2, r^{k-1} / 2)   k = 1..K-1
/// I_K = (0, r^{K-1} / 2)
/// ```
///
/// with `Q̃(u) = -Q̃(1-u)` on the upper half. Each line is the continuous
/// least-squares fit to `Φ⁻¹` on its interval.
#[derive(Debug, Clone, PartialEq)]
pub struct DyadicPiecewiseLinear {
    ratio: f64,
    slopes: Vec<f64>,
    intercepts: Vec<f64>,
    /// `r^k / 2` for `k = 1..K-1`, decreasing.
    breakpoints: Vec<f64>,
}

pub fn build_dyadic(ratio: f64, intervals: usize) -> Result<DyadicPiecewiseLinear, ApproxError> {
    if !(0.5..1.0).contains(&ratio) {
        return Err(ApproxError::Config(format!(
            "dyadic ratio must lie in [1/2, 1), got {ratio}"
        )));
    }
    if !(1..=MAX_INTERVALS).contains(&intervals) {
        return Err(ApproxError::Config(format!(
            "dyadic interval count must lie in 1..={MAX_INTERVALS}, got {intervals}"
        )));
    }
    let breakpoints = partition(ratio, intervals);
    let mut slopes = Vec::with_capacity(intervals);
    let mut intercepts = Vec::with_capacity(intervals);
    for j in 0..intervals {
        let hi = if j == 0 { 0.5 } else { breakpoints[j - 1] };
        let lo = if j + 1 == intervals { 0.0 } else { breakpoints[j] };
        let (slope, intercept) =
            fit_line(lo, hi).map_err(|source| ApproxError::Fit { interval: j + 1, source })?;
        slopes.push(slope);
        intercepts.push(intercept);
    }
    Ok(DyadicPiecewiseLinear {
        ratio,
        slopes,
        intercepts,
        breakpoints,
    })
}

fn partition(ratio: f64, intervals: usize) -> Vec<f64> {
    (1..intervals as i32).map(|k| 0.5 * ratio.powi(k)).collect()
}

/// Least-squares line for `Φ⁻¹` on `[lo, hi] ⊂ [0, 1/2]`.
///
/// In the centred basis `{1, u - c}` the Gram matrix is diagonal, so
/// `mean = ∫Φ⁻¹ / w` and `slope = ∫(u - c)Φ⁻¹ / (w³/12)`. Both moments are
/// integrated in `z = Φ⁻¹(u)`, where the singular end becomes a Gaussian tail.
pub(crate) fn fit_line(lo: f64, hi: f64) -> Result<(f64, f64), QuadratureError> {
    let width = hi - lo;
    let centre = 0.5 * (lo + hi);
    let z_lo = if lo > 0.0 { inv_normal_cdf(lo) } else { Z_FLOOR };
    let z_hi = inv_normal_cdf(hi);
    let tol = |scale: f64| Tolerance {
        rel: 1e-13,
        abs: 1e-16 * scale,
    };
    let m0 = integrate(|z| z * normal_pdf(z), z_lo, z_hi, tol(width))?;
    let m1 = integrate(
        |z| (normal_cdf(z) - centre) * z * normal_pdf(z),
        z_lo,
        z_hi,
        tol(width * width * width),
    )?;
    let slope = m1 * 12.0 / (width * width * width);
    let mean = m0 / width;
    Ok((slope, mean - slope * centre))
}

impl DyadicPiecewiseLinear {
    pub(crate) fn from_parts(
        ratio: f64,
        slopes: Vec<f64>,
        intercepts: Vec<f64>,
        breakpoints: Vec<f64>,
    ) -> Result<Self, ApproxError> {
        let k = slopes.len();
        if k == 0 || intercepts.len() != k || breakpoints.len() + 1 != k {
            return Err(ApproxError::Document(format!(
                "dyadic approximation with {k} slopes needs {k} intercepts and {} breakpoints",
                k.saturating_sub(1)
            )));
        }
        if !(0.5..1.0).contains(&ratio) || breakpoints.windows(2).any(|w| w[0] <= w[1]) {
            return Err(ApproxError::Document("dyadic breakpoints must decrease".into()));
        }
        Ok(Self {
            ratio,
            slopes,
            intercepts,
            breakpoints,
        })
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn intervals(&self) -> usize {
        self.slopes.len()
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// `[lo, hi)` of interval `k` (1-based).
    pub fn interval_bounds(&self, k: usize) -> (f64, f64) {
        let j = k - 1;
        let hi = if j == 0 { 0.5 } else { self.breakpoints[j - 1] };
        let lo = if j + 1 == self.intervals() {
            0.0
        } else {
            self.breakpoints[j]
        };
        (lo, hi)
    }

    /// 1-based interval index for `0 < u < 1/2`.
    #[inline]
    pub fn interval_index(&self, u: f64) -> usize {
        let last = self.intervals() - 1;
        if self.ratio == 0.5 {
            // 2u in [2^e, 2^{e+1}) lies in interval k = -e.
            let biased = ((2.0 * u).to_bits() >> 52) & 0x7ff;
            let k = 1023 - biased as i64;
            return (k.clamp(1, last as i64 + 1)) as usize;
        }
        let guess = ((2.0 * u).ln() / self.ratio.ln()).floor();
        let mut j = if guess.is_finite() {
            (guess.max(0.0) as usize).min(last)
        } else {
            last
        };
        while j > 0 && u >= self.breakpoints[j - 1] {
            j -= 1;
        }
        while j < last && u < self.breakpoints[j] {
            j += 1;
        }
        j + 1
    }

    #[inline]
    fn line(&self, k: usize, u: f64) -> f64 {
        self.intercepts[k - 1] + self.slopes[k - 1] * u
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        if u < 0.5 {
            self.line(self.interval_index(u), u)
        } else if u > 0.5 {
            let v = 1.0 - u;
            -self.line(self.interval_index(v), v)
        } else {
            self.line(1, u)
        }
    }

    pub(crate) fn lower_pieces(&self) -> Vec<Piece<'_>> {
        (1..=self.intervals())
            .map(|k| {
                let (lo, hi) = self.interval_bounds(k);
                Piece {
                    z_lo: if lo > 0.0 { inv_normal_cdf(lo) } else { Z_FLOOR },
                    z_hi: inv_normal_cdf(hi),
                    form: LocalForm::Line {
                        slope: self.slopes[k - 1],
                        intercept: self.intercepts[k - 1],
                    },
                }
            })
            .collect()
    }
}
