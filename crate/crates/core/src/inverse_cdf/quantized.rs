use serde::{Deserialize, Serialize};

use super::{ApproxError, LocalForm, Piece};
use crate::special::{inv_normal_cdf, normal_pdf, Z_FLOOR};

pub const MAX_Q: u32 = 24;

/// How each cell of a [`QuantizedTable`] is valued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellValue {
    /// `E[Z | U in cell]`, which makes `E[Z̃] = 0` and minimises the MSE.
    #[default]
    ConditionalMean,
    /// `Φ⁻¹` at the cell midpoint.
    Midpoint,
}

/// Piecewise constant approximation on `K = 2^q` cells of width `2^{-q}`.
/// The cell index is the leading `q` bits of `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTable {
    q: u32,
    mode: CellValue,
    values: Vec<f64>,
}

/// Builds the table. Only the lower half is computed; the upper half is its
/// exact negated mirror image.
pub fn build_quantized(q: u32, mode: CellValue) -> Result<QuantizedTable, ApproxError> {
    if !(1..=MAX_Q).contains(&q) {
        return Err(ApproxError::Config(format!(
            "quantised table needs 1 <= q <= {MAX_Q}, got {q}"
        )));
    }
    let cells = 1usize << q;
    let width = (cells as f64).recip();
    let half = cells / 2;
    let mut values = vec![0.0; cells];
    match mode {
        CellValue::ConditionalMean => {
            // φ(Φ⁻¹(k/K)) at the cell edges of the lower half; φ(Φ⁻¹(0)) = 0.
            let edge_density: Vec<f64> = (0..=half)
                .map(|k| {
                    if k == 0 {
                        0.0
                    } else {
                        normal_pdf(inv_normal_cdf(k as f64 * width))
                    }
                })
                .collect();
            for k in 0..half {
                values[k] = (edge_density[k] - edge_density[k + 1]) * cells as f64;
            }
        }
        CellValue::Midpoint => {
            for (k, v) in values.iter_mut().take(half).enumerate() {
                *v = inv_normal_cdf((k as f64 + 0.5) * width);
            }
        }
    }
    for k in 0..half {
        values[cells - 1 - k] = -values[k];
    }
    Ok(QuantizedTable { q, mode, values })
}

impl QuantizedTable {
    pub(crate) fn from_parts(q: u32, mode: CellValue, values: Vec<f64>) -> Result<Self, ApproxError> {
        if !(1..=MAX_Q).contains(&q) || values.len() != 1usize << q {
            return Err(ApproxError::Document(format!(
                "quantised table with q={q} needs {} values, got {}",
                1u64 << q.min(63),
                values.len()
            )));
        }
        Ok(Self { q, mode, values })
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn mode(&self) -> CellValue {
        self.mode
    }

    pub fn cells(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn cell_index(&self, u: f64) -> usize {
        // u * 2^q is exact, so truncation extracts the leading q bits.
        ((u * self.values.len() as f64) as usize).min(self.values.len() - 1)
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        self.values[self.cell_index(u)]
    }

    pub(crate) fn lower_pieces(&self) -> Vec<Piece<'_>> {
        let cells = self.values.len();
        let width = (cells as f64).recip();
        let edges: Vec<f64> = (0..=cells / 2)
            .map(|k| {
                if k == 0 {
                    Z_FLOOR
                } else {
                    inv_normal_cdf(k as f64 * width)
                }
            })
            .collect();
        edges
            .windows(2)
            .zip(&self.values)
            .map(|(w, &c)| Piece {
                z_lo: w[0],
                z_hi: w[1],
                form: LocalForm::Constant(c),
            })
            .collect()
    }
}
