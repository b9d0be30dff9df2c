//! Closed-form sample allocation, predicted costs and bias extrapolation.

use super::MlmcError;

/// Variance and cost per sample of one estimator term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermCost {
    pub variance: f64,
    pub cost: f64,
}

impl From<(f64, f64)> for TermCost {
    fn from((variance, cost): (f64, f64)) -> Self {
        Self { variance, cost }
    }
}

/// Per-level inputs to the nested cost model: `V`, `Ṽ`, `C`, `C̃`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NestedLevelCost {
    pub variance: f64,
    pub correction_variance: f64,
    pub cost: f64,
    pub approx_cost: f64,
}

fn check(levels: &[TermCost], epsilon: f64) -> Result<(), MlmcError> {
    if levels.is_empty() {
        return Err(MlmcError::Config("allocation needs at least one level".into()));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(MlmcError::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    for t in levels {
        if !(t.variance >= 0.0 && t.variance.is_finite()) || !(t.cost > 0.0 && t.cost.is_finite()) {
            return Err(MlmcError::Config(format!(
                "need V >= 0 and C > 0, got V = {}, C = {}",
                t.variance, t.cost
            )));
        }
    }
    Ok(())
}

fn root_sum(levels: &[TermCost]) -> f64 {
    levels.iter().map(|t| (t.variance * t.cost).sqrt()).sum()
}

/// Real-valued minimiser of `Σ N C` subject to `Σ V/N = budget`:
/// `N = √(V/C) Σ√(VC) / budget`.
pub fn continuous_allocation(levels: &[TermCost], budget: f64) -> Vec<f64> {
    let s = root_sum(levels);
    levels
        .iter()
        .map(|t| (t.variance / t.cost).sqrt() * s / budget)
        .collect()
}

/// `N_ℓ = ⌈2ε⁻² √(V_ℓ/C_ℓ) Σ√(V C)⌉`, at least `n_min`, so that the
/// sampling variance `Σ V/N` stays within `ε²/2`.
pub fn optimal_allocation<T: Into<TermCost> + Copy>(
    levels: &[T],
    epsilon: f64,
    n_min: u64,
) -> Result<Vec<u64>, MlmcError> {
    let levels: Vec<TermCost> = levels.iter().map(|&t| t.into()).collect();
    check(&levels, epsilon)?;
    Ok(continuous_allocation(&levels, 0.5 * epsilon * epsilon)
        .into_iter()
        .map(|n| {
            let n = n.ceil();
            if n >= u64::MAX as f64 {
                u64::MAX
            } else {
                (n as u64).max(n_min)
            }
        })
        .collect())
}

/// Minimal cost `(Σ√(VC))² / budget` of reaching sampling variance `budget`.
///
/// With `budget = ε²` this is the two-level control-variate cost; the MLMC
/// formulas below spend half of the mean-square error on bias and use
/// `budget = ε²/2`.
pub fn optimal_cost<T: Into<TermCost> + Copy>(levels: &[T], budget: f64) -> f64 {
    let levels: Vec<TermCost> = levels.iter().map(|&t| t.into()).collect();
    let s = root_sum(&levels);
    s * s / budget
}

/// `2ε⁻² (Σ√(V_ℓ C_ℓ))²`.
pub fn predicted_cost_mlmc<T: Into<TermCost> + Copy>(levels: &[T], epsilon: f64) -> f64 {
    optimal_cost(levels, 0.5 * epsilon * epsilon)
}

/// `2ε⁻² (Σ √(C̃_ℓ V_ℓ) + √((C_ℓ + C̃_ℓ) Ṽ_ℓ))²` and the bound factor
/// `max_ℓ (C̃_ℓ/C_ℓ)(1 + √((C_ℓ/C̃_ℓ + 1) Ṽ_ℓ/V_ℓ))²`, which satisfies
/// `C_AMLMC <= C_MLMC · factor`.
pub fn predicted_cost_amlmc(levels: &[NestedLevelCost], epsilon: f64) -> (f64, f64) {
    let s: f64 = levels
        .iter()
        .map(|l| (l.approx_cost * l.variance).sqrt() + ((l.cost + l.approx_cost) * l.correction_variance).sqrt())
        .sum();
    let cost = 2.0 * s * s / (epsilon * epsilon);
    let factor = levels
        .iter()
        .map(|l| {
            let ratio = l.approx_cost / l.cost;
            let diag = ratio_diagnostic(l.cost / l.approx_cost, l.variance, l.correction_variance);
            ratio * (1.0 + diag).powi(2)
        })
        .fold(0.0, f64::max);
    (cost, factor)
}

/// `√((C/C̃ + 1) Ṽ/V)`, the per-level quantity whose smallness makes the
/// nested estimator pay off.
pub fn ratio_diagnostic(cost_ratio: f64, variance: f64, correction_variance: f64) -> f64 {
    if correction_variance == 0.0 {
        return 0.0;
    }
    ((cost_ratio + 1.0) * correction_variance / variance).sqrt()
}

/// Least-squares weak order `α` from `|m_ℓ| ≈ c M^{-αℓ}` over the given
/// levels. `None` with fewer than two points.
pub fn fit_weak_order(levels: &[(u32, f64)], refinement: f64) -> Option<f64> {
    if levels.len() < 2 {
        return None;
    }
    let pts: Vec<(f64, f64)> = levels
        .iter()
        .map(|&(l, m)| (f64::from(l), m.abs().max(f64::MIN_POSITIVE).log(refinement)))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some(-sxy / sxx)
}

/// Smallest weak order assumed when extrapolating the bias.
pub const ALPHA_FLOOR: f64 = 0.5;

/// Remaining bias `|m_L| / (M^α - 1)` from the level means `m_0..m_L`
/// (`m_0` is the level-0 mean itself).
///
/// `α` is regressed over levels `1..=L`; with only one correction level
/// there is nothing to regress and the floor is used. Fewer than two
/// entries give `+∞`, asking for another level.
pub fn estimate_bias(level_means: &[f64], refinement: u32) -> f64 {
    if level_means.len() < 2 {
        return f64::INFINITY;
    }
    let m = f64::from(refinement);
    let corrections: Vec<(u32, f64)> = level_means
        .iter()
        .enumerate()
        .skip(1)
        .map(|(l, &v)| (l as u32, v))
        .collect();
    let alpha = fit_weak_order(&corrections, m)
        .unwrap_or(ALPHA_FLOOR)
        .max(ALPHA_FLOOR);
    level_means[level_means.len() - 1].abs() / (m.powf(alpha) - 1.0)
}
