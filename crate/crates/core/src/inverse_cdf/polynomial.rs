use super::ApproxError;
use crate::quadrature::{integrate_panels, Tolerance};
use crate::special::{centered_normal_cdf, normal_pdf, Z_FLOOR};

pub const MAX_TERMS: usize = 8;

/// `Q̃(u) = Σ_{k=1..K} a_k (u - 1/2)^{2k-1}`, fitted by least squares to `Φ⁻¹`
/// over `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OddPolynomial {
    coeffs: Vec<f64>,
}

/// Fits `K` odd terms.
///
/// The fit is carried out in the shifted Legendre basis `P_n(2u - 1)`, which
/// is orthogonal on `[0, 1]` with `∫P_n² = 1/(2n+1)`, so each coefficient is
/// a single projection. Even `n` vanish by antisymmetry. The projections are
/// then re-expanded in powers of `u - 1/2`.
pub fn fit_odd_polynomial(terms: usize) -> Result<OddPolynomial, ApproxError> {
    if !(1..=MAX_TERMS).contains(&terms) {
        return Err(ApproxError::Config(format!(
            "odd polynomial needs 1 <= K <= {MAX_TERMS} terms, got {terms}"
        )));
    }
    let degree = 2 * terms - 1;
    let legendre = legendre_monomials(degree);
    let panels = [
        Z_FLOOR, -12.0, -8.0, -6.0, -4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0,
        12.0, -Z_FLOOR,
    ];
    let tol = Tolerance {
        rel: 1e-13,
        abs: 1e-15,
    };
    let mut coeffs = vec![0.0; terms];
    for n in (1..=degree).step_by(2) {
        let basis = &legendre[n];
        // ∫ P_n(2u-1) Φ⁻¹(u) du with u = Φ(z), 2u - 1 = erf(z/√2).
        let projection = integrate_panels(
            |z| legendre_value(n, centered_normal_cdf(z)) * z * normal_pdf(z),
            &panels,
            tol,
        )?;
        let c = (2 * n + 1) as f64 * projection;
        // P_n(y) with y = 2x contributes c * p_j * 2^j to x^j.
        for (k, a) in coeffs.iter_mut().enumerate() {
            let j = 2 * k + 1;
            if j <= n {
                *a += c * basis[j] * 2f64.powi(j as i32);
            }
        }
    }
    Ok(OddPolynomial { coeffs })
}

/// Monomial coefficients of `P_0..=P_degree` (in their own variable).
pub(crate) fn legendre_monomials(degree: usize) -> Vec<Vec<f64>> {
    let mut polys: Vec<Vec<f64>> = vec![vec![1.0], vec![0.0, 1.0]];
    for n in 1..degree {
        let nf = n as f64;
        let mut next = vec![0.0; n + 2];
        for (j, &c) in polys[n].iter().enumerate() {
            next[j + 1] += (2.0 * nf + 1.0) * c / (nf + 1.0);
        }
        for (j, &c) in polys[n - 1].iter().enumerate() {
            next[j] -= nf * c / (nf + 1.0);
        }
        polys.push(next);
    }
    polys.truncate(degree + 1);
    polys
}

/// `P_n(y)` by the three-term recurrence.
fn legendre_value(n: usize, y: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, y);
    if n == 0 {
        return p0;
    }
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * y * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    p1
}

impl OddPolynomial {
    pub(crate) fn from_coeffs(coeffs: Vec<f64>) -> Result<Self, ApproxError> {
        if coeffs.is_empty() || coeffs.len() > MAX_TERMS {
            return Err(ApproxError::Document(format!(
                "odd polynomial needs 1..={MAX_TERMS} coefficients, got {}",
                coeffs.len()
            )));
        }
        Ok(Self { coeffs })
    }

    /// `a_1..a_K`.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn terms(&self) -> usize {
        self.coeffs.len()
    }

    pub fn degree(&self) -> usize {
        2 * self.coeffs.len() - 1
    }

    /// Value at `x = u - 1/2`.
    #[inline]
    pub fn eval_centered(&self, x: f64) -> f64 {
        let x2 = x * x;
        x * self.coeffs.iter().rev().fold(0.0, |acc, &a| acc * x2 + a)
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        self.eval_centered(u - 0.5)
    }
}
