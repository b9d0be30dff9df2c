//! Experiment drivers behind the `amlmc` command line tool.
//!
//! Each command returns structured results plus a rendering to CSV or JSON.
//! CSV files start with a `#` metadata line carrying the SHA-256 of the
//! resolved configuration and the seed, then a header row. Reals are
//! written with 17 significant digits, so identical configurations produce
//! byte-identical files.

use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::inverse_cdf::{
    moment_error, ApproxError, ApproxSpec, ApproximateInverseCdf, CellValue, InverseCdf,
    MomentMethod, ReferenceInverseCdf,
};
use crate::mlmc::{
    ratio_diagnostic, run_nested_amlmc, run_standard_mlmc, EstimatorTerm, MlmcConfig, MlmcError,
    MlmcReport,
};
use crate::parallel::{map_chunks, CHUNK};
use crate::rng::{stream_id, Term, UniformStream};
use crate::sde::{analytic_gbm_expectation, simulate_terminal_states, GbmParams, Payoff, SimulationError};
use crate::stats::RunningStats;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Mlmc(#[from] MlmcError),
    #[error("failed to write CSV: {0}")]
    Csv(#[from] csv::Error),
}

/// Parameter ranges of the moment-error sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MseSweep {
    /// Inclusive range of `q` for the quantised table.
    pub quantized_q: (u32, u32),
    pub quantized_mode: CellValue,
    /// Inclusive range of the dyadic interval count.
    pub dyadic_intervals: (usize, usize),
    pub dyadic_ratio: f64,
    /// Inclusive range of polynomial degrees; only odd degrees are fitted.
    pub polynomial_degree: (usize, usize),
    pub moments: Vec<u32>,
}

impl Default for MseSweep {
    fn default() -> Self {
        Self {
            quantized_q: (1, 12),
            quantized_mode: CellValue::ConditionalMean,
            dyadic_intervals: (2, 24),
            dyadic_ratio: 0.5,
            polynomial_degree: (1, 15),
            moments: vec![2, 4],
        }
    }
}

/// Micro-benchmark settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Evaluations per timed run; results are scaled to 10⁸.
    pub evaluations: u64,
    pub repeats: u32,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            evaluations: 10_000_000,
            repeats: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub gbm: GbmParams,
    pub approximations: Vec<ApproxSpec>,
    pub payoffs: Vec<Payoff>,
    /// Finest level of the variance experiment.
    pub levels: u32,
    /// Samples per level in the variance experiment.
    pub samples: u64,
    pub seed: u64,
    /// Target RMS error of `run`.
    pub epsilon: f64,
    pub mlmc: MlmcConfig,
    pub mse: MseSweep,
    pub bench: BenchConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            gbm: GbmParams::default(),
            approximations: ApproxSpec::defaults().to_vec(),
            payoffs: vec![Payoff::Identity, Payoff::Call { strike: 1.0 }],
            levels: 5,
            samples: 1_000_000,
            seed: 1,
            epsilon: 2e-3,
            mlmc: MlmcConfig::default(),
            mse: MseSweep::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serialises")
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("configuration serialises");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.approximations.is_empty() {
            return Err(ExperimentError::Config("no approximations given".into()));
        }
        if self.payoffs.is_empty() {
            return Err(ExperimentError::Config("no payoffs given".into()));
        }
        if self.levels == 0 {
            return Err(ExperimentError::Config("levels must be at least 1".into()));
        }
        if self.samples < 2 {
            return Err(ExperimentError::Config("need at least 2 samples per level".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(ExperimentError::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        self.mlmc.validate()?;
        self.mlmc.level(self.levels)?;
        Ok(())
    }

    fn metadata(&self, command: &str) -> String {
        format!("# amlmc {command} config_sha256={} seed={}\n", self.hash(), self.seed)
    }
}

/// Formats a real with 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn render_csv(meta: String, header: &[&str], rows: &[Vec<String>]) -> Result<String, ExperimentError> {
    let mut w = csv::Writer::from_writer(meta.into_bytes());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| ExperimentError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseRow {
    pub kind: &'static str,
    pub size: usize,
    pub p: u32,
    pub moment_error: f64,
}

/// `E[|Q̃(U) - Φ⁻¹(U)|^p]` over the configured sweep.
pub fn mse_sweep(cfg: &ExperimentConfig) -> Result<Vec<MseRow>, ExperimentError> {
    let s = &cfg.mse;
    let mut specs = Vec::new();
    for q in s.quantized_q.0..=s.quantized_q.1 {
        specs.push((q as usize, ApproxSpec::Quantized { q, mode: s.quantized_mode }));
    }
    for k in s.dyadic_intervals.0..=s.dyadic_intervals.1 {
        specs.push((k, ApproxSpec::Dyadic { ratio: s.dyadic_ratio, intervals: k }));
    }
    for d in s.polynomial_degree.0..=s.polynomial_degree.1 {
        if d % 2 == 1 {
            specs.push((d, ApproxSpec::Polynomial { terms: d.div_ceil(2) }));
        }
    }
    let mut rows = Vec::new();
    for (size, spec) in specs {
        let approx = spec.build()?;
        for &p in &s.moments {
            let r = moment_error(&approx, p, MomentMethod::Quadrature)?;
            rows.push(MseRow {
                kind: spec.kind(),
                size,
                p,
                moment_error: r.value,
            });
        }
    }
    Ok(rows)
}

pub fn cmd_mse(cfg: &ExperimentConfig) -> Result<String, ExperimentError> {
    let rows: Vec<Vec<String>> = mse_sweep(cfg)?
        .into_iter()
        .map(|r| vec![r.kind.to_string(), r.size.to_string(), r.p.to_string(), fmt_real(r.moment_error)])
        .collect();
    render_csv(cfg.metadata("mse"), &["kind", "size", "p", "moment_error"], &rows)
}

/// Level statistics for one payoff and one approximation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceRow {
    pub payoff: Payoff,
    pub approximation: ApproxSpec,
    pub level: u32,
    /// `V[P̂_ℓ - P̂_{ℓ-1}]`.
    pub var_baseline: f64,
    /// `V[(P̂_ℓ - P̂_{ℓ-1}) - (P̃_ℓ - P̃_{ℓ-1})]`.
    pub var_cross: f64,
    /// `V[P̃_ℓ - P̃_{ℓ-1}]`.
    pub var_approx: f64,
    pub mean_baseline: f64,
    pub mean_cross: f64,
    pub n: u64,
}

impl VarianceRow {
    /// `√((C/C̃ + 1) Ṽ/V)` for the given cost ratio `C/C̃`.
    pub fn ratio_diagnostic(&self, cost_ratio: f64) -> f64 {
        ratio_diagnostic(cost_ratio, self.var_baseline, self.var_cross)
    }
}

/// Accumulators of one chunk: per payoff the baseline, then per
/// `(payoff, approximation)` the approximate and cross differences.
#[derive(Clone)]
struct VarianceAcc {
    baseline: Vec<RunningStats>,
    approx: Vec<RunningStats>,
    cross: Vec<RunningStats>,
}

impl VarianceAcc {
    fn new(payoffs: usize, approxs: usize) -> Self {
        Self {
            baseline: vec![RunningStats::default(); payoffs],
            approx: vec![RunningStats::default(); payoffs * approxs],
            cross: vec![RunningStats::default(); payoffs * approxs],
        }
    }

    fn merge(&mut self, other: &Self) {
        let pairs = [
            (&mut self.baseline, &other.baseline),
            (&mut self.approx, &other.approx),
            (&mut self.cross, &other.cross),
        ];
        for (mine, theirs) in pairs {
            for (a, b) in mine.iter_mut().zip(theirs) {
                a.merge(b);
            }
        }
    }
}

/// Level variances on levels `1..=L`. Every sample drives one exact path
/// pair and one pair per approximation from the same uniforms, and every
/// payoff is evaluated on the same terminal states.
pub fn variance_table(cfg: &ExperimentConfig) -> Result<Vec<VarianceRow>, ExperimentError> {
    cfg.validate()?;
    let approxs: Vec<ApproximateInverseCdf> = cfg
        .approximations
        .iter()
        .map(ApproxSpec::build)
        .collect::<Result<_, _>>()?;
    let refs: Vec<&ApproximateInverseCdf> = approxs.iter().collect();
    let (np, na) = (cfg.payoffs.len(), refs.len());
    let mut rows = Vec::new();
    for level in 1..=cfg.levels {
        let lc = cfg.mlmc.level(level)?;
        let parts = map_chunks(0..cfg.samples, CHUNK, |r| -> Result<VarianceAcc, SimulationError> {
            let mut acc = VarianceAcc::new(np, na);
            let mut terminal = vec![(0.0, 0.0); na];
            for i in r {
                let mut stream = UniformStream::new(cfg.seed, stream_id(level, Term::Experiment, i));
                let (xf, xc) = simulate_terminal_states(&cfg.gbm, &lc, true, &refs, &mut stream, &mut terminal)?;
                for (pi, payoff) in cfg.payoffs.iter().enumerate() {
                    let base = payoff.eval(xf) - payoff.eval(xc);
                    acc.baseline[pi].push(base);
                    for (ai, &(yf, yc)) in terminal.iter().enumerate() {
                        let approx = payoff.eval(yf) - payoff.eval(yc);
                        acc.approx[pi * na + ai].push(approx);
                        acc.cross[pi * na + ai].push(base - approx);
                    }
                }
            }
            Ok(acc)
        });
        let mut total = VarianceAcc::new(np, na);
        for p in parts {
            total.merge(&p?);
        }
        for (pi, payoff) in cfg.payoffs.iter().enumerate() {
            let base = &total.baseline[pi];
            for (ai, spec) in cfg.approximations.iter().enumerate() {
                let cross = &total.cross[pi * na + ai];
                rows.push(VarianceRow {
                    payoff: *payoff,
                    approximation: *spec,
                    level,
                    var_baseline: base.variance().unwrap_or(0.0),
                    var_cross: cross.variance().unwrap_or(0.0),
                    var_approx: total.approx[pi * na + ai].variance().unwrap_or(0.0),
                    mean_baseline: base.mean(),
                    mean_cross: cross.mean(),
                    n: base.n,
                });
            }
        }
    }
    rows.sort_by_key(|r| {
        let pi = cfg.payoffs.iter().position(|p| *p == r.payoff);
        let ai = cfg.approximations.iter().position(|a| *a == r.approximation);
        (pi, ai, r.level)
    });
    Ok(rows)
}

pub fn render_variance(cfg: &ExperimentConfig, rows: &[VarianceRow]) -> Result<String, ExperimentError> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.payoff.to_string(),
                r.approximation.to_string(),
                r.level.to_string(),
                fmt_real(r.var_baseline),
                fmt_real(r.var_cross),
                fmt_real(r.var_approx),
                fmt_real(r.mean_baseline),
                fmt_real(r.mean_cross),
                r.n.to_string(),
            ]
        })
        .collect();
    render_csv(
        cfg.metadata("variance"),
        &[
            "payoff",
            "approximation",
            "level",
            "var_baseline",
            "var_cross",
            "var_approx",
            "mean_baseline",
            "mean_cross",
            "n",
        ],
        &rows,
    )
}

pub fn cmd_variance(cfg: &ExperimentConfig) -> Result<String, ExperimentError> {
    render_variance(cfg, &variance_table(cfg)?)
}

/// Least-squares slope of `log₂ y` against level.
pub fn log2_slope(points: &[(u32, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| f64::from(p.0)).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1.log2()).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (f64::from(p.0) - mx) * (p.1.log2() - my)).sum();
    let sxx: f64 = points.iter().map(|p| (f64::from(p.0) - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelDiagnostic {
    pub level: u32,
    pub variance: f64,
    pub correction_variance: f64,
    /// `√((C/C̃ + 1) Ṽ/V)`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutput {
    pub config_sha256: String,
    pub seed: u64,
    pub approximation: ApproxSpec,
    pub analytic: Option<f64>,
    pub standard: MlmcReport,
    pub nested: MlmcReport,
    pub diagnostics: Vec<LevelDiagnostic>,
    pub max_ratio: f64,
}

/// Standard and nested MLMC for the first payoff and approximation.
pub fn run_both(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    cfg.validate()?;
    let payoff = cfg.payoffs[0];
    let spec = cfg.approximations[0];
    let approx = spec.build()?;
    let standard = run_standard_mlmc(&cfg.gbm, &payoff, &cfg.mlmc, cfg.epsilon, cfg.seed)?;
    let nested = run_nested_amlmc(&cfg.gbm, &payoff, &cfg.mlmc, &approx, cfg.epsilon, cfg.seed)?;
    let cost_ratio = 1.0 / cfg.mlmc.cost.approx_ratio;
    let approx_rows: Vec<_> = nested.term_rows(EstimatorTerm::Approximate).collect();
    let diagnostics: Vec<LevelDiagnostic> = nested
        .term_rows(EstimatorTerm::Correction)
        .zip(approx_rows)
        .filter(|(c, _)| c.level >= 1)
        .map(|(c, a)| LevelDiagnostic {
            level: c.level,
            variance: a.variance,
            correction_variance: c.variance,
            ratio: ratio_diagnostic(cost_ratio, a.variance, c.variance),
        })
        .collect();
    let max_ratio = diagnostics.iter().map(|d| d.ratio).fold(0.0, f64::max);
    Ok(RunOutput {
        config_sha256: cfg.hash(),
        seed: cfg.seed,
        approximation: spec,
        analytic: analytic_gbm_expectation(&cfg.gbm, &payoff).ok(),
        standard,
        nested,
        diagnostics,
        max_ratio,
    })
}

pub fn cmd_run(cfg: &ExperimentConfig) -> Result<String, ExperimentError> {
    let out = run_both(cfg)?;
    Ok(serde_json::to_string_pretty(&out).expect("report serialises") + "\n")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub name: String,
    /// Median over repeats of the fastest batch.
    pub seconds_per_1e8: f64,
    pub runs: Vec<f64>,
    /// Per repeat: fastest batch relative to the fastest interleaved
    /// reference batch.
    pub ratios: Vec<f64>,
    /// Median of `ratios`.
    pub ratio_to_reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchOutput {
    pub config_sha256: String,
    pub evaluations: u64,
    pub repeats: u32,
    pub results: Vec<BenchResult>,
}

const BENCH_BLOCK: usize = 1 << 14;
const BENCH_BATCHES: u64 = 32;

/// Seconds per 10⁸ evaluations for one batch of `rounds` passes over the
/// uniforms.
fn time_batch<A: InverseCdf + ?Sized>(approx: &A, uniforms: &[f64], rounds: u64) -> f64 {
    let start = Instant::now();
    let mut acc = 0.0;
    for _ in 0..rounds {
        for &u in uniforms {
            acc += approx.eval(black_box(u));
        }
    }
    black_box(acc);
    start.elapsed().as_secs_f64() / (rounds * uniforms.len() as u64) as f64 * 1e8
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Wall-clock cost of the reference inverse, the pass-through and each
/// configured approximation, on a fixed block of uniforms.
///
/// Each repeat times every candidate against the reference in alternating
/// short batches and compares the fastest batch of each, which filters out
/// phases where other processes share the core or its caches.
pub fn bench(cfg: &ExperimentConfig) -> Result<BenchOutput, ExperimentError> {
    if cfg.bench.evaluations == 0 || cfg.bench.repeats == 0 {
        return Err(ExperimentError::Config("benchmark needs evaluations and repeats".into()));
    }
    let mut uniforms = vec![0.0; BENCH_BLOCK];
    UniformStream::new(cfg.seed, stream_id(0, Term::Experiment, 0)).fill_uniform(&mut uniforms);
    let mut approxs: Vec<(String, ApproximateInverseCdf)> =
        vec![("exact".to_string(), ApproximateInverseCdf::PassThrough)];
    for spec in &cfg.approximations {
        approxs.push((spec.to_string(), spec.build()?));
    }
    let rounds = cfg
        .bench
        .evaluations
        .div_ceil(BENCH_BATCHES * BENCH_BLOCK as u64)
        .max(1);
    let uniforms = &uniforms;
    let reference = move || time_batch(&ReferenceInverseCdf, uniforms, rounds);
    let mut timers: Vec<(String, Box<dyn Fn() -> f64 + '_>)> = Vec::new();
    for (name, approx) in &approxs {
        timers.push((name.clone(), Box::new(move || time_batch(approx, uniforms, rounds))));
    }
    reference();
    timers.iter().for_each(|(_, t)| {
        t();
    });
    let mut ref_runs = Vec::new();
    let mut runs = vec![Vec::new(); timers.len()];
    let mut ratios = vec![Vec::new(); timers.len()];
    for _ in 0..cfg.bench.repeats {
        let mut ref_best = f64::INFINITY;
        for (k, (_, time)) in timers.iter().enumerate() {
            let (mut best, mut best_ref) = (f64::INFINITY, f64::INFINITY);
            for b in 0..BENCH_BATCHES {
                let (r, c) = if b % 2 == 0 {
                    let r = reference();
                    (r, time())
                } else {
                    let c = time();
                    (reference(), c)
                };
                best_ref = best_ref.min(r);
                best = best.min(c);
            }
            ref_best = ref_best.min(best_ref);
            runs[k].push(best);
            ratios[k].push(best / best_ref);
        }
        ref_runs.push(ref_best);
    }
    let mut results = vec![BenchResult {
        name: "reference".into(),
        seconds_per_1e8: median(&ref_runs),
        ratios: vec![1.0; ref_runs.len()],
        runs: ref_runs,
        ratio_to_reference: 1.0,
    }];
    for (k, (name, _)) in timers.iter().enumerate() {
        results.push(BenchResult {
            name: name.clone(),
            seconds_per_1e8: median(&runs[k]),
            ratio_to_reference: median(&ratios[k]),
            runs: runs[k].clone(),
            ratios: ratios[k].clone(),
        });
    }
    Ok(BenchOutput {
        config_sha256: cfg.hash(),
        evaluations: cfg.bench.evaluations,
        repeats: cfg.bench.repeats,
        results,
    })
}

pub fn cmd_bench(cfg: &ExperimentConfig) -> Result<String, ExperimentError> {
    Ok(serde_json::to_string_pretty(&bench(cfg)?).expect("benchmark serialises") + "\n")
}
