//! Adaptive Gauss–Legendre quadrature.
//!
//! A panel is accepted when its fixed-order estimate agrees with the sum of
//! the estimates on its two halves; otherwise both halves are refined
//! recursively. All integrands used in this crate are smooth on each panel
//! once the singular endpoints have been mapped away by `u = Φ(z)`.

use std::sync::OnceLock;

use thiserror::Error;

/// Nodes per panel.
pub const PANEL_ORDER: usize = 20;

const MAX_DEPTH: u32 = 48;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("adaptive quadrature did not converge on [{lo}, {hi}] (estimate {estimate:e}, error {error:e})")]
    NotConverged {
        lo: f64,
        hi: f64,
        estimate: f64,
        error: f64,
    },
    #[error("non-finite integrand value on [{lo}, {hi}]")]
    NonFinite { lo: f64, hi: f64 },
}

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Computes the `n`-point rule by Newton iteration on `P_n`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi's initial guess for the i-th largest root.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Fixed-rule estimate of `∫_lo^hi f`.
    #[inline]
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: &F, lo: f64, hi: f64) -> f64 {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let sum: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum();
        half * sum
    }

    /// Estimates of `∫ f` and `∫ |f|` from one pass over the nodes.
    #[inline]
    fn integrate_with_magnitude<F: Fn(f64) -> f64>(&self, f: &F, lo: f64, hi: f64) -> (f64, f64) {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let (sum, mag) = self
            .nodes
            .iter()
            .zip(&self.weights)
            .fold((0.0, 0.0), |(s, m), (&x, &w)| {
                let v = w * f(mid + half * x);
                (s + v, m + v.abs())
            });
        (half * sum, half.abs() * mag)
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let pm1 = if n == 0 { 0.0 } else { p0 };
    let d = n as f64 * (x * p - pm1) / (x * x - 1.0);
    (p, d)
}

fn default_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(PANEL_ORDER))
}

/// Tolerances for [`integrate`]: a panel is accepted when
/// `|coarse - fine| <= max(rel * |fine|, abs)`, or when the disagreement is
/// at the rounding level of `∫|f|` on the panel.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rel: 1e-12,
            abs: 1e-300,
        }
    }
}

/// Adaptive integral of `f` over `[lo, hi]`.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    tol: Tolerance,
) -> Result<f64, QuadratureError> {
    if lo == hi {
        return Ok(0.0);
    }
    let rule = default_rule();
    let whole = rule.integrate(&f, lo, hi);
    refine(rule, &f, lo, hi, whole, tol, 0)
}

fn refine<F: Fn(f64) -> f64>(
    rule: &GaussLegendre,
    f: &F,
    lo: f64,
    hi: f64,
    whole: f64,
    tol: Tolerance,
    depth: u32,
) -> Result<f64, QuadratureError> {
    let mid = 0.5 * (lo + hi);
    let (left, left_mag) = rule.integrate_with_magnitude(f, lo, mid);
    let (right, right_mag) = rule.integrate_with_magnitude(f, mid, hi);
    let halves = left + right;
    if !halves.is_finite() {
        return Err(QuadratureError::NonFinite { lo, hi });
    }
    let error = (whole - halves).abs();
    let rounding = 64.0 * f64::EPSILON * (left_mag + right_mag);
    if error <= (tol.rel * halves.abs()).max(tol.abs).max(rounding) {
        return Ok(halves);
    }
    if depth >= MAX_DEPTH || mid <= lo || mid >= hi {
        return Err(QuadratureError::NotConverged {
            lo,
            hi,
            estimate: halves,
            error,
        });
    }
    // Each half gets the absolute budget scaled to its share of the interval.
    let sub = Tolerance {
        rel: tol.rel,
        abs: tol.abs * 0.5,
    };
    Ok(refine(rule, f, lo, mid, left, sub, depth + 1)?
        + refine(rule, f, mid, hi, right, sub, depth + 1)?)
}

/// Integral over consecutive panels `[breaks[i], breaks[i+1]]`.
pub fn integrate_panels<F: Fn(f64) -> f64>(
    f: F,
    breaks: &[f64],
    tol: Tolerance,
) -> Result<f64, QuadratureError> {
    breaks
        .windows(2)
        .map(|w| integrate(&f, w[0], w[1], tol))
        .sum()
}
