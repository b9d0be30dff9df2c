//! Standard MLMC and the nested approximate-MLMC estimator.
//!
//! The standard estimator sums one term per level, `E[P̂_0]` and
//! `E[P̂_ℓ - P̂_{ℓ-1}]`. The nested estimator splits each of these in two,
//!
//! ```text
//! E[P̂_ℓ - P̂_{ℓ-1}] = E[P̃_ℓ - P̃_{ℓ-1}] + E[(P̂_ℓ - P̂_{ℓ-1}) - (P̃_ℓ - P̃_{ℓ-1})]
//! ```
//!
//! and estimates every piece independently with its own sample count.
//! Sample `i` of term `t` on level `ℓ` always uses the stream
//! `stream_id(ℓ, t, i)`, so results depend on the seed and the sample counts
//! only, never on the number of worker threads.

mod allocation;

use std::ops::Range;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use allocation::{
    continuous_allocation, estimate_bias, fit_weak_order, optimal_allocation, optimal_cost,
    predicted_cost_amlmc, predicted_cost_mlmc, ratio_diagnostic, NestedLevelCost, TermCost,
    ALPHA_FLOOR,
};

use crate::inverse_cdf::{InverseCdf, ReferenceInverseCdf};
use crate::parallel::{map_chunks, CHUNK};
use crate::rng::{stream_id, Term, UniformStream, MAX_SAMPLE_INDEX};
use crate::sde::{simulate_level, LevelConfig, LevelSample, PathSet, Payoff, ScalarSde, SimulationError};
use crate::stats::RunningStats;

#[derive(Debug, Error)]
pub enum MlmcError {
    #[error("invalid MLMC configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error("bias estimate {bias:e} still exceeds {target:e} at the maximum level {max_level}")]
    ConvergenceFailure {
        max_level: u32,
        bias: f64,
        target: f64,
        report: Box<MlmcReport>,
    },
}

/// One of the expectations summed by an estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorTerm {
    /// `P̂_ℓ - P̂_{ℓ-1}`.
    Standard,
    /// `P̃_ℓ - P̃_{ℓ-1}`.
    Approximate,
    /// `(P̂_ℓ - P̂_{ℓ-1}) - (P̃_ℓ - P̃_{ℓ-1})`.
    Correction,
}

impl EstimatorTerm {
    fn stream_term(self) -> Term {
        match self {
            Self::Standard => Term::Standard,
            Self::Approximate => Term::Approximate,
            Self::Correction => Term::Correction,
        }
    }

    fn paths(self) -> PathSet {
        match self {
            Self::Standard => PathSet::Exact,
            Self::Approximate => PathSet::Approximate,
            Self::Correction => PathSet::Both,
        }
    }

    /// The term's sample value; coarse payoffs are 0 on level 0.
    #[inline]
    pub fn value(self, s: &LevelSample) -> f64 {
        match self {
            Self::Standard => s.exact_difference(),
            Self::Approximate => s.approx_difference(),
            Self::Correction => s.cross_difference(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// One unit per exact Normal, `approx_ratio` per approximate one.
    #[default]
    Counted,
    /// Wall-clock seconds per sample.
    Timed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub mode: CostMode,
    /// `C̃/C` for counted costs.
    pub approx_ratio: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            mode: CostMode::Counted,
            approx_ratio: 1.0 / 7.0,
        }
    }
}

impl CostModel {
    /// Counted cost of one sample of `term` with `steps` fine steps.
    pub fn counted(&self, term: EstimatorTerm, steps: u64) -> f64 {
        let steps = steps as f64;
        match term {
            EstimatorTerm::Standard => steps,
            EstimatorTerm::Approximate => self.approx_ratio * steps,
            EstimatorTerm::Correction => (1.0 + self.approx_ratio) * steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlmcConfig {
    /// `M`.
    pub refinement: u32,
    /// `N₀`, steps on level 0.
    pub coarse_steps: u32,
    /// Samples taken on every term of a newly added level.
    pub warmup: u64,
    pub min_samples: u64,
    pub max_level: u32,
    pub cost: CostModel,
}

impl Default for MlmcConfig {
    fn default() -> Self {
        Self {
            refinement: 4,
            coarse_steps: 1,
            warmup: 100,
            min_samples: 32,
            max_level: 10,
            cost: CostModel::default(),
        }
    }
}

impl MlmcConfig {
    pub fn validate(&self) -> Result<(), MlmcError> {
        LevelConfig::new(self.max_level, self.refinement, self.coarse_steps)?;
        if self.max_level == 0 {
            return Err(MlmcError::Config("max_level must be at least 1".into()));
        }
        if self.warmup < 2 {
            return Err(MlmcError::Config("warm-up needs at least 2 samples".into()));
        }
        let r = self.cost.approx_ratio;
        if !(r > 0.0 && r.is_finite()) {
            return Err(MlmcError::Config(format!("approximate cost ratio must be positive, got {r}")));
        }
        Ok(())
    }

    pub fn level(&self, level: u32) -> Result<LevelConfig, MlmcError> {
        Ok(LevelConfig::new(level, self.refinement, self.coarse_steps)?)
    }
}

/// Running statistics of one estimator term on one level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: u32,
    pub term: EstimatorTerm,
    pub stats: RunningStats,
    /// Cost of one sample, counted or measured.
    pub unit_cost: f64,
    /// Wall-clock seconds spent on this term.
    pub elapsed: f64,
}

impl LevelStats {
    pub fn n(&self) -> u64 {
        self.stats.n
    }

    pub fn mean(&self) -> f64 {
        self.stats.mean()
    }

    /// Sample variance, 0 before two samples.
    pub fn variance(&self) -> f64 {
        self.stats.variance().unwrap_or(0.0)
    }

    fn term_cost(&self) -> TermCost {
        TermCost {
            variance: self.variance(),
            cost: self.unit_cost,
        }
    }
}

/// One row of the per-level table in a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermSummary {
    pub level: u32,
    pub term: EstimatorTerm,
    pub n: u64,
    pub mean: f64,
    pub variance: f64,
    pub cost: f64,
}

impl From<&LevelStats> for TermSummary {
    fn from(s: &LevelStats) -> Self {
        Self {
            level: s.level,
            term: s.term,
            n: s.n(),
            mean: s.mean(),
            variance: s.variance(),
            cost: s.unit_cost,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Standard,
    Nested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmcReport {
    pub method: Method,
    pub payoff: Payoff,
    /// Target RMS error; `None` for fixed sample counts.
    pub epsilon: Option<f64>,
    pub estimate: f64,
    /// `√(Σ V/N)`.
    pub std_error: f64,
    /// Extrapolated bias; `None` until two levels exist.
    pub bias: Option<f64>,
    pub max_level: u32,
    pub levels: Vec<TermSummary>,
    pub predicted_cost_mlmc: f64,
    pub predicted_cost_amlmc: Option<f64>,
    pub bound_factor: Option<f64>,
    pub realized_cost: f64,
}

impl MlmcReport {
    /// Rows of one term kind, by level.
    pub fn term_rows(&self, term: EstimatorTerm) -> impl Iterator<Item = &TermSummary> {
        self.levels.iter().filter(move |r| r.term == term)
    }

    /// `E[P̂_ℓ - P̂_{ℓ-1}]` estimates for `ℓ = 0..=L`.
    pub fn level_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.max_level as usize + 1];
        for r in &self.levels {
            means[r.level as usize] += r.mean;
        }
        means
    }
}

struct Engine<'a, S: ?Sized, A: ?Sized> {
    sde: &'a S,
    payoff: Payoff,
    approx: &'a A,
    cfg: &'a MlmcConfig,
    seed: u64,
    method: Method,
    terms: Vec<LevelStats>,
}

fn sample_range<S, A>(
    sde: &S,
    payoff: &Payoff,
    level: &LevelConfig,
    approx: &A,
    seed: u64,
    term: EstimatorTerm,
    range: Range<u64>,
) -> Result<RunningStats, SimulationError>
where
    S: ScalarSde + ?Sized,
    A: InverseCdf + ?Sized,
{
    let mut stats = RunningStats::default();
    for i in range {
        let mut stream = UniformStream::new(seed, stream_id(level.level(), term.stream_term(), i));
        let s = simulate_level(sde, payoff, level, approx, &mut stream, term.paths())?;
        stats.push(term.value(&s));
    }
    Ok(stats)
}

impl<'a, S, A> Engine<'a, S, A>
where
    S: ScalarSde + ?Sized,
    A: InverseCdf + ?Sized,
{
    fn new(sde: &'a S, payoff: &Payoff, approx: &'a A, cfg: &'a MlmcConfig, seed: u64, method: Method) -> Result<Self, MlmcError> {
        cfg.validate()?;
        Ok(Self {
            sde,
            payoff: *payoff,
            approx,
            cfg,
            seed,
            method,
            terms: Vec::new(),
        })
    }

    fn term_kinds(&self) -> &'static [EstimatorTerm] {
        match self.method {
            Method::Standard => &[EstimatorTerm::Standard],
            Method::Nested => &[EstimatorTerm::Approximate, EstimatorTerm::Correction],
        }
    }

    fn max_level(&self) -> u32 {
        self.terms.last().map_or(0, |t| t.level)
    }

    fn add_level(&mut self, level: u32, samples: &[u64]) -> Result<(), MlmcError> {
        let steps = self.cfg.level(level)?.fine_steps();
        for (&term, &n) in self.term_kinds().iter().zip(samples) {
            self.terms.push(LevelStats {
                level,
                term,
                stats: RunningStats::default(),
                unit_cost: self.cfg.cost.counted(term, steps),
                elapsed: 0.0,
            });
            let idx = self.terms.len() - 1;
            self.extend(idx, n)?;
        }
        Ok(())
    }

    fn extend(&mut self, idx: usize, target: u64) -> Result<(), MlmcError> {
        let t = self.terms[idx];
        if target <= t.n() {
            return Ok(());
        }
        if target > MAX_SAMPLE_INDEX {
            return Err(MlmcError::Config(format!(
                "{target} samples on level {} exceed the stream index range",
                t.level
            )));
        }
        let level = self.cfg.level(t.level)?;
        let start = Instant::now();
        let parts = map_chunks(t.n()..target, CHUNK, |r| {
            sample_range(self.sde, &self.payoff, &level, self.approx, self.seed, t.term, r)
        });
        let elapsed = start.elapsed().as_secs_f64();
        let entry = &mut self.terms[idx];
        for p in parts {
            entry.stats.merge(&p?);
        }
        entry.elapsed += elapsed;
        if self.cfg.cost.mode == CostMode::Timed {
            entry.unit_cost = (entry.elapsed / entry.n() as f64).max(1e-12);
        }
        Ok(())
    }

    /// Extends every term to its optimal sample count until the counts are
    /// consistent with the variance estimates they produce.
    fn allocate(&mut self, epsilon: f64) -> Result<(), MlmcError> {
        loop {
            let costs: Vec<TermCost> = self.terms.iter().map(LevelStats::term_cost).collect();
            let target = optimal_allocation(&costs, epsilon, self.cfg.min_samples)?;
            let mut extended = false;
            for (idx, &n) in target.iter().enumerate() {
                if n > self.terms[idx].n() {
                    self.extend(idx, n)?;
                    extended = true;
                }
            }
            if !extended {
                return Ok(());
            }
        }
    }

    fn level_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.max_level() as usize + 1];
        for t in &self.terms {
            means[t.level as usize] += t.mean();
        }
        means
    }

    fn report(&self, epsilon: Option<f64>) -> MlmcReport {
        let estimate: f64 = self.terms.iter().map(LevelStats::mean).sum();
        let sampling: f64 = self
            .terms
            .iter()
            .map(|t| if t.n() > 0 { t.variance() / t.n() as f64 } else { 0.0 })
            .sum();
        let realized_cost = self.terms.iter().map(|t| t.n() as f64 * t.unit_cost).sum();
        let eps = epsilon.unwrap_or_else(|| (2.0 * sampling).sqrt());
        let (predicted_cost_mlmc, predicted_cost_amlmc, bound_factor) = match self.method {
            Method::Standard => {
                let costs: Vec<TermCost> = self.terms.iter().map(LevelStats::term_cost).collect();
                (predicted_cost_mlmc(&costs, eps), None, None)
            }
            Method::Nested => {
                let nested = self.nested_costs();
                let exact: Vec<TermCost> = nested
                    .iter()
                    .map(|l| TermCost {
                        variance: l.variance,
                        cost: l.cost,
                    })
                    .collect();
                let (amlmc, factor) = predicted_cost_amlmc(&nested, eps);
                (predicted_cost_mlmc(&exact, eps), Some(amlmc), Some(factor))
            }
        };
        MlmcReport {
            method: self.method,
            payoff: self.payoff,
            epsilon,
            estimate,
            std_error: sampling.sqrt(),
            bias: Some(estimate_bias(&self.level_means(), self.cfg.refinement)).filter(|b| b.is_finite()),
            max_level: self.max_level(),
            levels: self.terms.iter().map(TermSummary::from).collect(),
            predicted_cost_mlmc,
            predicted_cost_amlmc,
            bound_factor,
            realized_cost,
        }
    }

    /// `(V, Ṽ, C, C̃)` per level, with `V` estimated by the variance of the
    /// approximate difference and `C` by the correction cost less `C̃`.
    fn nested_costs(&self) -> Vec<NestedLevelCost> {
        self.terms
            .chunks(2)
            .map(|pair| {
                let (a, c) = (&pair[0], &pair[1]);
                NestedLevelCost {
                    variance: a.variance(),
                    correction_variance: c.variance(),
                    cost: (c.unit_cost - a.unit_cost).max(1e-12),
                    approx_cost: a.unit_cost,
                }
            })
            .collect()
    }

    fn run(mut self, epsilon: f64) -> Result<MlmcReport, MlmcError> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(MlmcError::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        let warm = [self.cfg.warmup; 2];
        self.add_level(0, &warm)?;
        self.add_level(1, &warm)?;
        let target = epsilon / std::f64::consts::SQRT_2;
        loop {
            self.allocate(epsilon)?;
            let bias = estimate_bias(&self.level_means(), self.cfg.refinement);
            if bias <= target {
                return Ok(self.report(Some(epsilon)));
            }
            let level = self.max_level();
            if level >= self.cfg.max_level {
                return Err(MlmcError::ConvergenceFailure {
                    max_level: level,
                    bias,
                    target,
                    report: Box::new(self.report(Some(epsilon))),
                });
            }
            self.add_level(level + 1, &warm)?;
        }
    }
}

/// Adaptive standard MLMC to RMS error `epsilon`.
///
/// Levels `0` and `1` are warmed up first. Each pass allocates samples
/// optimally for the current variance estimates, then adds a level if the
/// extrapolated bias exceeds `ε/√2`.
pub fn run_standard_mlmc<S: ScalarSde + ?Sized>(
    sde: &S,
    payoff: &Payoff,
    cfg: &MlmcConfig,
    epsilon: f64,
    seed: u64,
) -> Result<MlmcReport, MlmcError> {
    Engine::new(sde, payoff, &ReferenceInverseCdf, cfg, seed, Method::Standard)?.run(epsilon)
}

/// Adaptive nested MLMC with approximate Normals. Bias control uses the
/// sum of both terms on each level, which estimates `E[P̂_ℓ - P̂_{ℓ-1}]`.
pub fn run_nested_amlmc<S, A>(
    sde: &S,
    payoff: &Payoff,
    cfg: &MlmcConfig,
    approx: &A,
    epsilon: f64,
    seed: u64,
) -> Result<MlmcReport, MlmcError>
where
    S: ScalarSde + ?Sized,
    A: InverseCdf + ?Sized,
{
    Engine::new(sde, payoff, approx, cfg, seed, Method::Nested)?.run(epsilon)
}

/// Standard MLMC on levels `0..samples.len()` with the given sample counts.
pub fn standard_mlmc_fixed<S: ScalarSde + ?Sized>(
    sde: &S,
    payoff: &Payoff,
    cfg: &MlmcConfig,
    samples: &[u64],
    seed: u64,
) -> Result<MlmcReport, MlmcError> {
    let mut e = Engine::new(sde, payoff, &ReferenceInverseCdf, cfg, seed, Method::Standard)?;
    if samples.is_empty() {
        return Err(MlmcError::Config("no levels requested".into()));
    }
    for (level, &n) in samples.iter().enumerate() {
        e.add_level(level as u32, &[n])?;
    }
    Ok(e.report(None))
}

/// Nested MLMC with `(approximate, correction)` sample counts per level.
pub fn nested_amlmc_fixed<S, A>(
    sde: &S,
    payoff: &Payoff,
    cfg: &MlmcConfig,
    approx: &A,
    samples: &[(u64, u64)],
    seed: u64,
) -> Result<MlmcReport, MlmcError>
where
    S: ScalarSde + ?Sized,
    A: InverseCdf + ?Sized,
{
    let mut e = Engine::new(sde, payoff, approx, cfg, seed, Method::Nested)?;
    if samples.is_empty() {
        return Err(MlmcError::Config("no levels requested".into()));
    }
    for (level, &(a, c)) in samples.iter().enumerate() {
        e.add_level(level as u32, &[a, c])?;
    }
    Ok(e.report(None))
}

/// Plain Monte Carlo statistics of `P̂_L` on one level, drawn from the
/// experiment streams so they are independent of any MLMC run.
pub fn single_level_estimate<S: ScalarSde + ?Sized>(
    sde: &S,
    payoff: &Payoff,
    cfg: &MlmcConfig,
    level: u32,
    samples: u64,
    seed: u64,
) -> Result<RunningStats, MlmcError> {
    let lc = cfg.level(level)?;
    let parts = map_chunks(0..samples, CHUNK, |r| -> Result<RunningStats, SimulationError> {
        let mut stats = RunningStats::default();
        for i in r {
            let mut stream = UniformStream::new(seed, stream_id(level, Term::Experiment, i));
            let s = simulate_level(sde, payoff, &lc, &ReferenceInverseCdf, &mut stream, PathSet::Exact)?;
            stats.push(s.phat_f);
        }
        Ok(stats)
    });
    let mut total = RunningStats::default();
    for p in parts {
        total.merge(&p?);
    }
    Ok(total)
}
