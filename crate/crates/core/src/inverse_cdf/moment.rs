use serde::{Deserialize, Serialize};

use super::{ApproxError, ApproximateInverseCdf, InverseCdf};
use crate::parallel::map_chunks;
use crate::quadrature::{integrate, Tolerance};
use crate::rng::{stream_id, Term, UniformStream};
use crate::special::{inv_normal_cdf, normal_pdf};
use crate::stats::RunningStats;

const MC_CHUNK: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentMethod {
    Quadrature,
    MonteCarlo { samples: u64, seed: u64 },
}

/// `E[|Z̃ - Z|^p]` with its standard error (zero for quadrature).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentErrorReport {
    pub p: u32,
    pub value: f64,
    pub method: MomentMethod,
    pub standard_error: f64,
}

/// Moment of the approximation error.
///
/// By quadrature the integral `∫₀¹ |Q̃(u) - Φ⁻¹(u)|^p du` is taken over the
/// lower half only (the integrand is symmetric about `1/2` for every
/// approximation here) and split at each breakpoint; each piece is
/// integrated in `z = Φ⁻¹(u)` as `∫ |Q̃(Φ(z)) - z|^p φ(z) dz`.
pub fn moment_error(
    approx: &ApproximateInverseCdf,
    p: u32,
    method: MomentMethod,
) -> Result<MomentErrorReport, ApproxError> {
    if p < 2 || !p.is_multiple_of(2) {
        return Err(ApproxError::Config(format!(
            "moment order must be an even integer >= 2, got {p}"
        )));
    }
    let (value, standard_error) = match method {
        MomentMethod::Quadrature => (quadrature_moment(approx, p)?, 0.0),
        MomentMethod::MonteCarlo { samples, seed } => {
            let stats = monte_carlo_moment(approx, p, samples, seed);
            (stats.mean(), stats.std_error().unwrap_or(f64::INFINITY))
        }
    };
    Ok(MomentErrorReport {
        p,
        value,
        method,
        standard_error,
    })
}

fn quadrature_moment(approx: &ApproximateInverseCdf, p: u32) -> Result<f64, ApproxError> {
    let tol = Tolerance {
        rel: 1e-10,
        abs: 1e-22,
    };
    let p = p as i32;
    let mut total = 0.0;
    for piece in approx.lower_pieces() {
        let form = piece.form;
        total += integrate(
            |z| (form.at_z(z) - z).powi(p) * normal_pdf(z),
            piece.z_lo,
            piece.z_hi,
            tol,
        )?;
    }
    Ok(2.0 * total)
}

fn monte_carlo_moment(approx: &ApproximateInverseCdf, p: u32, samples: u64, seed: u64) -> RunningStats {
    let p = p as i32;
    let parts = map_chunks(0..samples, MC_CHUNK, |range| {
        let mut stream = UniformStream::new(seed, stream_id(0, Term::Moment, range.start / MC_CHUNK));
        let mut acc = RunningStats::default();
        for _ in range {
            let u = stream.next_uniform();
            acc.push((approx.eval(u) - inv_normal_cdf(u)).powi(p));
        }
        acc
    });
    parts.iter().fold(RunningStats::default(), |mut a, b| {
        a.merge(b);
        a
    })
}
