//! Reproducible uniform streams and coupled Normal pairs.
//!
//! Draws come from the Philox4x32-10 counter-based generator keyed by the
//! 64-bit seed, with the 128-bit counter split into a 64-bit stream id and
//! a 64-bit block index. Every draw is a pure function of
//! `(seed, stream_id, counter)`, so workers never share generator state.
//!
//! Stream ids used by the estimators are assigned by [`stream_id`]:
//!
//! ```text
//! bits 63..56  level
//! bits 55..48  estimator term (see `Term`)
//! bits 47..0   sample index
//! ```

use crate::inverse_cdf::InverseCdf;
use crate::special::inv_normal_cdf;

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

/// The Philox4x32 bijection with 10 rounds.
#[inline]
pub fn philox4x32_10(mut ctr: [u32; 4], mut key: [u32; 2]) -> [u32; 4] {
    for round in 0..10 {
        if round > 0 {
            key[0] = key[0].wrapping_add(PHILOX_W0);
            key[1] = key[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, ctr[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, ctr[2]);
        ctr = [hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0];
    }
    ctr
}

/// Maps 64 random bits onto the open grid `{(m + 1/2) 2^{-52}}`, using the
/// top 52 bits. Every value is exactly representable, lies in
/// `[2^{-53}, 1 - 2^{-53}]`, and `1 - u` is exact.
#[inline]
pub fn bits_to_open_unit(bits: u64) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 52) as f64;
    ((bits >> 12) as f64 + 0.5) * SCALE
}

/// A position in one Philox stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformStream {
    seed: u64,
    stream_id: u64,
    counter: u64,
    spare: u64,
}

impl UniformStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self {
            seed,
            stream_id,
            counter: 0,
            spare: 0,
        }
    }

    /// Stream positioned so that the next draw is draw number `counter`.
    pub fn at(seed: u64, stream_id: u64, counter: u64) -> Self {
        let mut s = Self {
            seed,
            stream_id,
            counter,
            spare: 0,
        };
        if counter & 1 == 1 {
            s.spare = s.block(counter >> 1)[1];
        }
        s
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of draws taken so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    #[inline]
    fn block(&self, index: u64) -> [u64; 2] {
        let out = philox4x32_10(
            [
                index as u32,
                (index >> 32) as u32,
                self.stream_id as u32,
                (self.stream_id >> 32) as u32,
            ],
            [self.seed as u32, (self.seed >> 32) as u32],
        );
        [
            u64::from(out[0]) | (u64::from(out[1]) << 32),
            u64::from(out[2]) | (u64::from(out[3]) << 32),
        ]
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let c = self.counter;
        self.counter += 1;
        if c & 1 == 0 {
            let [a, b] = self.block(c >> 1);
            self.spare = b;
            a
        } else {
            self.spare
        }
    }

    /// Next uniform, strictly inside `(0, 1)`.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        bits_to_open_unit(self.next_u64())
    }

    pub fn fill_uniform(&mut self, out: &mut [f64]) {
        for u in out {
            *u = self.next_uniform();
        }
    }

    /// One coupled pair from a single uniform.
    #[inline]
    pub fn next_pair<A: InverseCdf + ?Sized>(&mut self, approx: &A) -> CoupledNormalPair {
        CoupledNormalPair::from_uniform(self.next_uniform(), approx)
    }
}

/// An exact Normal and its approximation, both produced from `u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledNormalPair {
    pub z: f64,
    pub z_tilde: f64,
    pub u: f64,
}

impl CoupledNormalPair {
    #[inline]
    pub fn from_uniform<A: InverseCdf + ?Sized>(u: f64, approx: &A) -> Self {
        Self {
            z: inv_normal_cdf(u),
            z_tilde: approx.eval(u),
            u,
        }
    }
}

/// Estimator terms, used in the stream-id layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Term {
    /// `P̂_ℓ - P̂_{ℓ-1}` in standard MLMC.
    Standard = 0,
    /// `P̃_ℓ - P̃_{ℓ-1}` in nested MLMC.
    Approximate = 1,
    /// `(P̂_ℓ - P̂_{ℓ-1}) - (P̃_ℓ - P̃_{ℓ-1})` in nested MLMC.
    Correction = 2,
    /// Variance and rate experiments.
    Experiment = 3,
    /// Monte Carlo moment errors (stream per chunk rather than per sample).
    Moment = 4,
}

pub const MAX_SAMPLE_INDEX: u64 = (1 << 48) - 1;

/// Frozen stream-id assignment: one stream per `(level, term, sample)`.
#[inline]
pub fn stream_id(level: u32, term: Term, index: u64) -> u64 {
    debug_assert!(level < 256 && index <= MAX_SAMPLE_INDEX);
    (u64::from(level) << 56) | ((term as u64) << 48) | (index & MAX_SAMPLE_INDEX)
}
