//! Coupled Euler–Maruyama paths for a scalar SDE `dX = a(X) dt + b(X) dW`.
//!
//! One sample on level `ℓ >= 1` advances four paths from the same uniforms:
//!
//! ```text
//! X̂f[n+1] = X̂f[n] + a(X̂f[n]) h + b(X̂f[n]) √h Z[n]
//! X̂c[n+1] = X̂c[n] + a(X̂c[n̲]) h + b(X̂c[n̲]) √h Z[n]     n̲ = M⌊n/M⌋
//! X̃f, X̃c  the same with Z̃[n] in place of Z[n]
//! ```
//!
//! with `Z[n] = Φ⁻¹(U[n])` and `Z̃[n] = Q̃(U[n])`. Freezing the coarse drift and
//! volatility at the start of each coarse step makes `X̂c` agree with an
//! Euler step of size `Mh` driven by the summed increments at every multiple
//! of `M`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inverse_cdf::InverseCdf;
use crate::rng::UniformStream;
use crate::special::{inv_normal_cdf, normal_cdf};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("non-finite {path} state on level {level} at step {step}")]
    NonFinite {
        level: u32,
        step: u64,
        path: &'static str,
    },
    #[error("invalid simulation configuration: {0}")]
    Config(String),
}

/// Coefficients of a scalar autonomous SDE on `[0, T]`.
pub trait ScalarSde: Sync {
    fn drift(&self, x: f64) -> f64;
    fn volatility(&self, x: f64) -> f64;
    fn initial_value(&self) -> f64;
    fn horizon(&self) -> f64;
}

/// Geometric Brownian motion `dX = μX dt + σX dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub mu: f64,
    pub sigma: f64,
    pub x0: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
}

impl Default for GbmParams {
    fn default() -> Self {
        Self {
            mu: 0.05,
            sigma: 0.2,
            x0: 1.0,
            horizon: 1.0,
        }
    }
}

impl ScalarSde for GbmParams {
    #[inline]
    fn drift(&self, x: f64) -> f64 {
        self.mu * x
    }
    #[inline]
    fn volatility(&self, x: f64) -> f64 {
        self.sigma * x
    }
    fn initial_value(&self) -> f64 {
        self.x0
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
}

/// An SDE given by closures.
#[derive(Clone)]
pub struct FnSde<A, B> {
    pub drift: A,
    pub volatility: B,
    pub x0: f64,
    pub horizon: f64,
}

impl<A, B> ScalarSde for FnSde<A, B>
where
    A: Fn(f64) -> f64 + Sync,
    B: Fn(f64) -> f64 + Sync,
{
    #[inline]
    fn drift(&self, x: f64) -> f64 {
        (self.drift)(x)
    }
    #[inline]
    fn volatility(&self, x: f64) -> f64 {
        (self.volatility)(x)
    }
    fn initial_value(&self) -> f64 {
        self.x0
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
}

/// Level `ℓ` uses `N₀ M^ℓ` fine steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelConfig {
    level: u32,
    refinement: u32,
    coarse_steps: u32,
}

impl LevelConfig {
    pub fn new(level: u32, refinement: u32, coarse_steps: u32) -> Result<Self, SimulationError> {
        if refinement != 2 && refinement != 4 {
            return Err(SimulationError::Config(format!(
                "refinement factor must be 2 or 4, got {refinement}"
            )));
        }
        if coarse_steps == 0 {
            return Err(SimulationError::Config("level 0 needs at least one step".into()));
        }
        let steps = u64::from(coarse_steps)
            .checked_mul(u64::from(refinement).checked_pow(level).unwrap_or(u64::MAX))
            .filter(|&n| n <= 1 << 40);
        if steps.is_none() {
            return Err(SimulationError::Config(format!("level {level} has too many steps")));
        }
        Ok(Self {
            level,
            refinement,
            coarse_steps,
        })
    }

    /// `M = 4`, one step on level 0.
    pub fn standard(level: u32) -> Self {
        Self::new(level, 4, 1).expect("level within range")
    }

    pub fn with_level(&self, level: u32) -> Result<Self, SimulationError> {
        Self::new(level, self.refinement, self.coarse_steps)
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn refinement(&self) -> u32 {
        self.refinement
    }

    pub fn coarse_steps(&self) -> u32 {
        self.coarse_steps
    }

    pub fn fine_steps(&self) -> u64 {
        u64::from(self.coarse_steps) * u64::from(self.refinement).pow(self.level)
    }

    pub fn timestep(&self, horizon: f64) -> f64 {
        horizon / self.fine_steps() as f64
    }
}

/// Function of the terminal state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payoff {
    Identity,
    Call { strike: f64 },
    Put { strike: f64 },
}

impl Payoff {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Payoff::Identity => x,
            Payoff::Call { strike } => (x - strike).max(0.0),
            Payoff::Put { strike } => (strike - x).max(0.0),
        }
    }
}

pub fn payoff_eval(payoff: &Payoff, x: f64) -> f64 {
    payoff.eval(x)
}

impl fmt::Display for Payoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payoff::Identity => write!(f, "identity"),
            Payoff::Call { strike } => write!(f, "call:K={strike}"),
            Payoff::Put { strike } => write!(f, "put:K={strike}"),
        }
    }
}

impl FromStr for Payoff {
    type Err = SimulationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SimulationError::Config(format!("unrecognised payoff `{s}`"));
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        let strike = || -> Result<f64, SimulationError> {
            match args.trim() {
                "" => Ok(1.0),
                a => a
                    .strip_prefix("K=")
                    .and_then(|v| v.trim().parse().ok())
                    .ok_or_else(bad),
            }
        };
        match kind.trim() {
            "identity" => Ok(Payoff::Identity),
            "call" => Ok(Payoff::Call { strike: strike()? }),
            "put" => Ok(Payoff::Put { strike: strike()? }),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Payoff {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Payoff {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Payoffs at the four terminal states of one coupled sample, and the
/// number of exact and approximate Normals it consumed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LevelSample {
    pub phat_f: f64,
    pub phat_c: f64,
    pub ptilde_f: f64,
    pub ptilde_c: f64,
    pub cost_exact: u64,
    pub cost_approx: u64,
}

impl LevelSample {
    /// `P̂_ℓ - P̂_{ℓ-1}`.
    pub fn exact_difference(&self) -> f64 {
        self.phat_f - self.phat_c
    }

    /// `P̃_ℓ - P̃_{ℓ-1}`.
    pub fn approx_difference(&self) -> f64 {
        self.ptilde_f - self.ptilde_c
    }

    /// `(P̂_ℓ - P̂_{ℓ-1}) - (P̃_ℓ - P̃_{ℓ-1})`.
    pub fn cross_difference(&self) -> f64 {
        self.exact_difference() - self.approx_difference()
    }
}

/// Which of the exact and approximate path pairs to advance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathSet {
    Exact,
    Approximate,
    Both,
}

/// A fine/coarse pair of Euler paths sharing increments.
#[derive(Debug, Clone, Copy)]
struct PathPair {
    fine: f64,
    coarse: f64,
    coarse_drift: f64,
    coarse_vol: f64,
}

impl PathPair {
    fn new(x0: f64) -> Self {
        Self {
            fine: x0,
            coarse: x0,
            coarse_drift: 0.0,
            coarse_vol: 0.0,
        }
    }

    #[inline(always)]
    fn step<S: ScalarSde + ?Sized>(&mut self, sde: &S, coarse_start: bool, with_coarse: bool, h: f64, dw: f64) {
        let x = self.fine;
        self.fine = x + sde.drift(x) * h + sde.volatility(x) * dw;
        if with_coarse {
            if coarse_start {
                self.coarse_drift = sde.drift(self.coarse);
                self.coarse_vol = sde.volatility(self.coarse);
            }
            self.coarse = self.coarse + self.coarse_drift * h + self.coarse_vol * dw;
        }
    }

    #[inline(always)]
    fn is_finite(&self) -> bool {
        self.fine.is_finite() && self.coarse.is_finite()
    }
}

/// Terminal states `(fine, coarse)` of one fine/coarse pair driven by the
/// given unit Normals, one per fine step. On level 0 the coarse state is 0.
pub fn coupled_terminal_states<S: ScalarSde + ?Sized>(
    sde: &S,
    cfg: &LevelConfig,
    normals: &[f64],
) -> Result<(f64, f64), SimulationError> {
    if normals.len() as u64 != cfg.fine_steps() {
        return Err(SimulationError::Config(format!(
            "level {} needs {} normals, got {}",
            cfg.level(),
            cfg.fine_steps(),
            normals.len()
        )));
    }
    let h = cfg.timestep(sde.horizon());
    let sqrt_h = h.sqrt();
    let m = cfg.refinement() as usize;
    let with_coarse = cfg.level() > 0;
    let mut pair = PathPair::new(sde.initial_value());
    for (n, &z) in normals.iter().enumerate() {
        pair.step(sde, n % m == 0, with_coarse, h, sqrt_h * z);
        if !pair.is_finite() {
            return Err(SimulationError::NonFinite {
                level: cfg.level(),
                step: n as u64,
                path: "exact",
            });
        }
    }
    Ok((pair.fine, if with_coarse { pair.coarse } else { 0.0 }))
}

/// Advances the exact pair (if requested) and one pair per approximation
/// from a single stream of uniforms. Returns the exact terminal pair and
/// writes the approximate ones into `approx_out`.
pub fn simulate_terminal_states<S, A>(
    sde: &S,
    cfg: &LevelConfig,
    exact: bool,
    approxs: &[&A],
    stream: &mut UniformStream,
    approx_out: &mut [(f64, f64)],
) -> Result<(f64, f64), SimulationError>
where
    S: ScalarSde + ?Sized,
    A: InverseCdf + ?Sized,
{
    debug_assert_eq!(approxs.len(), approx_out.len());
    let steps = cfg.fine_steps();
    let h = cfg.timestep(sde.horizon());
    let sqrt_h = h.sqrt();
    let m = u64::from(cfg.refinement());
    let with_coarse = cfg.level() > 0;
    let x0 = sde.initial_value();
    let mut exact_pair = PathPair::new(x0);
    // Small fixed-size scratch covers every experiment here without allocating.
    let mut scratch = [PathPair::new(x0); 8];
    let mut heap;
    let pairs: &mut [PathPair] = if approxs.len() <= scratch.len() {
        &mut scratch[..approxs.len()]
    } else {
        heap = vec![PathPair::new(x0); approxs.len()];
        &mut heap
    };
    for n in 0..steps {
        let u = stream.next_uniform();
        let coarse_start = n % m == 0;
        if exact {
            exact_pair.step(sde, coarse_start, with_coarse, h, sqrt_h * inv_normal_cdf(u));
            if !exact_pair.is_finite() {
                return Err(SimulationError::NonFinite {
                    level: cfg.level(),
                    step: n,
                    path: "exact",
                });
            }
        }
        for (pair, approx) in pairs.iter_mut().zip(approxs) {
            pair.step(sde, coarse_start, with_coarse, h, sqrt_h * approx.eval(u));
            if !pair.is_finite() {
                return Err(SimulationError::NonFinite {
                    level: cfg.level(),
                    step: n,
                    path: "approximate",
                });
            }
        }
    }
    for (out, pair) in approx_out.iter_mut().zip(pairs.iter()) {
        *out = (pair.fine, if with_coarse { pair.coarse } else { 0.0 });
    }
    if exact {
        Ok((exact_pair.fine, if with_coarse { exact_pair.coarse } else { 0.0 }))
    } else {
        Ok((0.0, 0.0))
    }
}

/// One sample on any level, advancing only the requested path pairs.
/// Payoffs of pairs that were not advanced are 0, as are coarse payoffs on
/// level 0.
pub fn simulate_level<S, A>(
    sde: &S,
    payoff: &Payoff,
    cfg: &LevelConfig,
    approx: &A,
    stream: &mut UniformStream,
    paths: PathSet,
) -> Result<LevelSample, SimulationError>
where
    S: ScalarSde + ?Sized,
    A: InverseCdf + ?Sized,
{
    let steps = cfg.fine_steps();
    let exact = paths != PathSet::Approximate;
    let with_approx = paths != PathSet::Exact;
    let mut approx_out = [(0.0, 0.0)];
    let approxs: &[&A] = if with_approx { &[approx] } else { &[] };
    let out_len = approxs.len();
    let (xf, xc) =
        simulate_terminal_states(sde, cfg, exact, approxs, stream, &mut approx_out[..out_len])?;
    let coarse = cfg.level() > 0;
    let f = |x: f64, present: bool| if present { payoff.eval(x) } else { 0.0 };
    let (yf, yc) = approx_out[0];
    Ok(LevelSample {
        phat_f: f(xf, exact),
        phat_c: f(xc, exact && coarse),
        ptilde_f: f(yf, with_approx),
        ptilde_c: f(yc, with_approx && coarse),
        cost_exact: if exact { steps } else { 0 },
        cost_approx: if with_approx { steps } else { 0 },
    })
}

/// All four coupled paths on a level `ℓ >= 1`.
pub fn simulate_coupled<S, A>(
    sde: &S,
    payoff: &Payoff,
    cfg: &LevelConfig,
    approx: &A,
    stream: &mut UniformStream,
) -> Result<LevelSample, SimulationError>
where
    S: ScalarSde + ?Sized,
    A: InverseCdf + ?Sized,
{
    if cfg.level() == 0 {
        return Err(SimulationError::Config("coupled simulation needs level >= 1".into()));
    }
    simulate_level(sde, payoff, cfg, approx, stream, PathSet::Both)
}

/// Exact and approximate single paths on level 0.
pub fn simulate_level0<S, A>(
    sde: &S,
    payoff: &Payoff,
    cfg: &LevelConfig,
    approx: &A,
    stream: &mut UniformStream,
) -> Result<LevelSample, SimulationError>
where
    S: ScalarSde + ?Sized,
    A: InverseCdf + ?Sized,
{
    if cfg.level() != 0 {
        return Err(SimulationError::Config("level-0 simulation needs level 0".into()));
    }
    simulate_level(sde, payoff, cfg, approx, stream, PathSet::Both)
}

/// `max_n |X̃f[n] - X̂f[n]|²` over one fine path.
pub fn max_fine_deviation<S, A>(
    sde: &S,
    cfg: &LevelConfig,
    approx: &A,
    stream: &mut UniformStream,
) -> Result<f64, SimulationError>
where
    S: ScalarSde + ?Sized,
    A: InverseCdf + ?Sized,
{
    let h = cfg.timestep(sde.horizon());
    let sqrt_h = h.sqrt();
    let mut exact = PathPair::new(sde.initial_value());
    let mut approximate = exact;
    let mut worst: f64 = 0.0;
    for n in 0..cfg.fine_steps() {
        let u = stream.next_uniform();
        exact.step(sde, false, false, h, sqrt_h * inv_normal_cdf(u));
        approximate.step(sde, false, false, h, sqrt_h * approx.eval(u));
        if !exact.is_finite() || !approximate.is_finite() {
            return Err(SimulationError::NonFinite {
                level: cfg.level(),
                step: n,
                path: "fine",
            });
        }
        worst = worst.max((approximate.fine - exact.fine).powi(2));
    }
    Ok(worst)
}

/// `E[f(X_T)]` for exact GBM, for identity and call payoffs.
pub fn analytic_gbm_expectation(params: &GbmParams, payoff: &Payoff) -> Result<f64, SimulationError> {
    let forward = params.x0 * (params.mu * params.horizon).exp();
    match *payoff {
        Payoff::Identity => Ok(forward),
        Payoff::Call { strike } => {
            let spread = params.sigma * params.horizon.sqrt();
            if spread == 0.0 {
                return Ok((forward - strike).max(0.0));
            }
            let d1 = ((params.x0 / strike).ln()
                + (params.mu + 0.5 * params.sigma * params.sigma) * params.horizon)
                / spread;
            let d2 = d1 - spread;
            Ok(forward * normal_cdf(d1) - strike * normal_cdf(d2))
        }
        Payoff::Put { .. } => Err(SimulationError::Config(
            "analytic expectation is only provided for identity and call payoffs".into(),
        )),
    }
}
