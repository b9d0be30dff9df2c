//! Checks against independently computed reference values: a series erf
//! with bisection for Φ⁻¹, closed-form least-squares moments, a direct
//! monomial normal-equation solve, and exact GBM expectations.

use amlmc_core::inverse_cdf::{
    build_dyadic, build_quantized, fit_odd_polynomial, moment_error, ApproximateInverseCdf,
    CellValue, MomentMethod,
};
use amlmc_core::mlmc::{optimal_cost, predicted_cost_amlmc, predicted_cost_mlmc, NestedLevelCost};
use amlmc_core::rng::{stream_id, Term, UniformStream};
use amlmc_core::sde::{analytic_gbm_expectation, GbmParams, Payoff};
use amlmc_core::special::inv_normal_cdf;
use amlmc_core::stats::RunningStats;

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// erf by the positive-term series `2/√π e^{-x²} Σ 2ⁿ x^{2n+1} / (2n+1)!!`.
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term.abs() > 1e-18 * sum.abs() {
        n += 1.0;
        term *= 2.0 * x * x / (2.0 * n + 1.0);
        sum += term;
    }
    2.0 / SQRT_PI * (-x * x).exp() * sum
}

fn cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf_series(z / 2f64.sqrt()))
}

fn pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * SQRT_PI * SQRT_PI).sqrt()
}

fn inv_bisect(u: f64) -> f64 {
    let (mut lo, mut hi) = (-10.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn series_erf_sanity() {
    assert!((erf_series(1.0) - 0.842_700_792_949_714_9).abs() < 1e-15);
    assert!((cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
}

#[test]
fn reference_inverse_matches_bisection() {
    let z = inv_normal_cdf(0.841_344_746_1);
    assert!((z - 1.0).abs() < 1e-8, "{z}");
    assert!((z - inv_bisect(0.841_344_746_1)).abs() < 1e-12);
    for i in 1..1000 {
        let u = i as f64 / 1000.0;
        let (a, b) = (inv_normal_cdf(u), inv_bisect(u));
        assert!((a - b).abs() < 1e-12, "u={u} {a} {b}");
    }
}

#[test]
fn quantized_small_tables() {
    let t = build_quantized(1, CellValue::ConditionalMean).unwrap();
    let m = (2.0 / std::f64::consts::PI).sqrt();
    assert!((t.values()[0] + m).abs() < 1e-15 && (t.values()[1] - m).abs() < 1e-15);
    assert_eq!(t.eval(0.3), t.values()[0]);
    let t = build_quantized(1, CellValue::Midpoint).unwrap();
    assert!((t.values()[1] - inv_bisect(0.75)).abs() < 1e-12);
    assert!((t.values()[1] - 0.674_489_750_196_081_7).abs() < 1e-12);
}

/// `∫_a^b Φ⁻¹` and `∫_a^b u Φ⁻¹` in closed form:
/// `φ(z_a) - φ(z_b)` and `aφ(z_a) - bφ(z_b) + (Φ(√2 z_b) - Φ(√2 z_a)) / (2√π)`.
fn closed_form_moments(a: f64, b: f64) -> (f64, f64) {
    let (za, zb) = (inv_bisect(a), inv_bisect(b));
    let (pa, pb) = (pdf(za), pdf(zb));
    let s2 = 2f64.sqrt();
    (pa - pb, a * pa - b * pb + (cdf(s2 * zb) - cdf(s2 * za)) / (2.0 * SQRT_PI))
}

#[test]
fn dyadic_normal_equations() {
    for &(ratio, intervals) in &[(0.5, 16), (0.5, 8), (0.7, 12), (0.9, 20)] {
        let d = build_dyadic(ratio, intervals).unwrap();
        for k in 1..intervals {
            let (a, b) = d.interval_bounds(k);
            if a < 1e-6 {
                break;
            }
            let (m0, m1) = closed_form_moments(a, b);
            let (s, c) = (d.slopes()[k - 1], d.intercepts()[k - 1]);
            // Residual against 1 and u.
            let r0 = m0 - (s * (b * b - a * a) / 2.0 + c * (b - a));
            let r1 = m1 - (s * (b.powi(3) - a.powi(3)) / 3.0 + c * (b * b - a * a) / 2.0);
            assert!(r0.abs() < 1e-10 && r1.abs() < 1e-10, "r={ratio} k={k}: {r0:e} {r1:e}");
            // Direct 2x2 solve in the centred basis. Deeper in the tail the
            // closed forms cancel too much to resolve the slope.
            if a < 1e-3 {
                continue;
            }
            let (w, mid) = (b - a, 0.5 * (a + b));
            let slope = (m1 - mid * m0) * 12.0 / w.powi(3);
            let intercept = m0 / w - slope * mid;
            assert!((slope - s).abs() < 1e-7 * slope.abs().max(1.0), "k={k} {slope} {s}");
            assert!((intercept - c).abs() < 1e-7 * intercept.abs().max(1.0), "k={k}");
        }
    }
}

/// `∫_0^1 (u-½)^{2j-1} Φ⁻¹(u) du` as `∫ (Φ(z)-½)^{2j-1} z φ(z) dz` by
/// composite Simpson on `[-9, 9]`.
fn odd_moment(j: usize) -> f64 {
    let n = 36_000;
    let h = 18.0 / n as f64;
    let f = |z: f64| (cdf(z) - 0.5).powi(2 * j as i32 - 1) * z * pdf(z);
    let mut s = f(-9.0) + f(9.0);
    for i in 1..n {
        let z = -9.0 + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(z);
    }
    s * h / 3.0
}

fn gram(j: usize, k: usize) -> f64 {
    let m = (2 * j + 2 * k - 2) as i32;
    2.0 * 0.5f64.powi(m + 1) / f64::from(m + 1)
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, p);
        b.swap(col, p);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let (top, rest) = a.split_at_mut(row);
            for (x, y) in rest[0][col..].iter_mut().zip(&top[col][col..]) {
                *x -= f * y;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

#[test]
fn polynomial_matches_monomial_normal_equations() {
    let moments: Vec<f64> = (1..=5).map(odd_moment).collect();
    for terms in 1..=5 {
        let g: Vec<Vec<f64>> = (1..=terms).map(|j| (1..=terms).map(|k| gram(j, k)).collect()).collect();
        let expected = solve(g, moments[..terms].to_vec());
        let fitted = fit_odd_polynomial(terms).unwrap();
        for (a, e) in fitted.coeffs().iter().zip(&expected) {
            assert!((a - e).abs() < 1e-6 * e.abs(), "K={terms}: {a} vs {e}");
        }
    }
    let a1 = fit_odd_polynomial(1).unwrap().coeffs()[0];
    assert!((a1 - 6.0 / SQRT_PI).abs() < 1e-11);
    assert!((fit_odd_polynomial(1).unwrap().eval(0.75) - 0.846_284_375).abs() < 1e-6);
}

#[test]
fn polynomial_residual_orthogonal_to_basis() {
    let moments: Vec<f64> = (1..=4).map(odd_moment).collect();
    let p = fit_odd_polynomial(4).unwrap();
    for j in 1..=4 {
        let fitted: f64 = p.coeffs().iter().enumerate().map(|(k, a)| a * gram(j, k + 1)).sum();
        assert!((fitted - moments[j - 1]).abs() < 1e-10, "j={j}");
    }
}

/// For least-squares fits `∫Q̃Φ⁻¹ = ∫Q̃²`, so the MSE is `1 - ∫Q̃²`.
#[test]
fn mse_by_projection_identity() {
    for terms in [2, 4, 6] {
        let p = fit_odd_polynomial(terms).unwrap();
        let c = p.coeffs();
        let norm: f64 = (0..terms)
            .flat_map(|j| (0..terms).map(move |k| (j, k)))
            .map(|(j, k)| c[j] * c[k] * gram(j + 1, k + 1))
            .sum();
        let approx = ApproximateInverseCdf::Polynomial(p);
        let mse = moment_error(&approx, 2, MomentMethod::Quadrature).unwrap().value;
        assert!((mse - (1.0 - norm)).abs() < 1e-10, "K={terms}: {mse} {}", 1.0 - norm);
    }
    let d = build_dyadic(0.5, 16).unwrap();
    let mut norm = 0.0;
    for k in 1..=d.intervals() {
        let (a, b) = d.interval_bounds(k);
        let (s, c) = (d.slopes()[k - 1], d.intercepts()[k - 1]);
        norm += 2.0
            * (s * s * (b.powi(3) - a.powi(3)) / 3.0 + s * c * (b * b - a * a) + c * c * (b - a));
    }
    let mse = moment_error(&ApproximateInverseCdf::Dyadic(d), 2, MomentMethod::Quadrature)
        .unwrap()
        .value;
    assert!((mse - (1.0 - norm)).abs() < 1e-10, "{mse} {}", 1.0 - norm);
}

#[test]
fn quadrature_and_monte_carlo_agree() {
    for spec in amlmc_core::inverse_cdf::ApproxSpec::defaults() {
        let a = spec.build().unwrap();
        for p in [2, 4] {
            let q = moment_error(&a, p, MomentMethod::Quadrature).unwrap();
            let mc = moment_error(
                &a,
                p,
                MomentMethod::MonteCarlo {
                    samples: 10_000_000,
                    seed: 17,
                },
            )
            .unwrap();
            let se = mc.standard_error;
            assert!((q.value - mc.value).abs() < 4.0 * se, "{spec} p={p}: {} {} {se}", q.value, mc.value);
        }
    }
}

#[test]
fn gbm_closed_forms() {
    let gbm = GbmParams::default();
    let id = analytic_gbm_expectation(&gbm, &Payoff::Identity).unwrap();
    assert!((id - 1.051_271_096_376_024).abs() < 1e-14);
    // d1 = 0.35, d2 = 0.15 for these parameters.
    let call = 0.05f64.exp() * cdf(0.35) - cdf(0.15);
    let lib = analytic_gbm_expectation(&gbm, &Payoff::Call { strike: 1.0 }).unwrap();
    assert!((lib - call).abs() < 1e-14, "{lib} {call}");
    assert!((call - 0.10986).abs() < 5e-6);
}

#[test]
fn gbm_call_by_exact_terminal_sampling() {
    let gbm = GbmParams::default();
    let mut stats = RunningStats::default();
    let mut s = UniformStream::new(99, stream_id(0, Term::Experiment, 0));
    let drift = gbm.mu - 0.5 * gbm.sigma * gbm.sigma;
    for _ in 0..10_000_000 {
        let z = inv_normal_cdf(s.next_uniform());
        let x = gbm.x0 * (drift + gbm.sigma * z).exp();
        stats.push((x - 1.0).max(0.0));
    }
    let exact = analytic_gbm_expectation(&gbm, &Payoff::Call { strike: 1.0 }).unwrap();
    let se = stats.std_error().unwrap();
    assert!((stats.mean() - exact).abs() < 4.0 * se, "{} {exact} {se}", stats.mean());
}

#[test]
fn two_level_cost_example() {
    // C₀ = C/10, C₁ = C, V₀ = V, V₁ = V/1000 with V = C = 1.
    let levels = [(1.0, 0.1), (1e-3, 1.0)];
    let cost = optimal_cost(&levels, 1.0);
    assert!((cost - 0.121).abs() < 1e-3 * 0.121);
    assert!((1.0 / cost - 8.26).abs() < 0.01);
    assert!((predicted_cost_mlmc(&levels, 1.0) - 2.0 * cost).abs() < 1e-15);
}

#[test]
fn nested_cost_tracks_cost_ratio() {
    let levels: Vec<NestedLevelCost> = (0..5)
        .map(|l| {
            let v = 4f64.powi(-l);
            NestedLevelCost {
                variance: v,
                correction_variance: 1e-3 * v,
                cost: 4f64.powi(l),
                approx_cost: 0.1 * 4f64.powi(l),
            }
        })
        .collect();
    let exact: Vec<(f64, f64)> = levels.iter().map(|l| (l.variance, l.cost)).collect();
    let (amlmc, factor) = predicted_cost_amlmc(&levels, 0.01);
    let ratio = amlmc / predicted_cost_mlmc(&exact, 0.01);
    assert!((ratio / 0.1 - 1.0).abs() < 0.25, "{ratio}");
    // Equal ratios on every level make the bound tight.
    assert!(ratio <= factor * (1.0 + 1e-12));
}
