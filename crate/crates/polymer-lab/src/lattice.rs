//! Simple-random-walk bridge combinatorics on the space-time cone.
//!
//! A walk of length `N` started at the origin lives on sites `(i, y)` with
//! `0 <= i <= N`, `|y| <= i` and `y = i (mod 2)`. Slice `i` therefore carries
//! `i + 1` admissible sites and the cone over slices `1..=N` carries
//! `N (N + 3) / 2` sites in total. Everything downstream (disorder fields,
//! transfer matrices) indexes sites through this module.

use crate::error::{Error, Result};

pub const LN_2: f64 = std::f64::consts::LN_2;

/// A single admissible site `(time, space)` of the walk cone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LatticeSite {
    pub time: usize,
    pub space: i64,
}

impl LatticeSite {
    pub fn new(time: usize, space: i64) -> Result<Self> {
        if !is_admissible(time, space) {
            return Err(Error::InvalidEndpoint {
                horizon: time,
                endpoint: space,
            });
        }
        Ok(LatticeSite { time, space })
    }
}

/// True iff `(time, space)` lies in the cone: `|space| <= time`, matching parity.
pub fn is_admissible(time: usize, space: i64) -> bool {
    space.unsigned_abs() as usize <= time && (space - time as i64).rem_euclid(2) == 0
}

/// Walk length and final position of a conditioned bridge.
///
/// Constructing a `BridgeSpec` validates the endpoint, so the log-probability
/// and transfer-matrix routines taking a spec never fail on geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BridgeSpec {
    horizon: usize,
    endpoint: i64,
}

impl BridgeSpec {
    pub fn new(horizon: usize, endpoint: i64) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::InvalidHorizon(horizon));
        }
        if !is_admissible(horizon, endpoint) {
            return Err(Error::InvalidEndpoint { horizon, endpoint });
        }
        Ok(BridgeSpec { horizon, endpoint })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn endpoint(&self) -> i64 {
        self.endpoint
    }
}

/// Number of admissible sites on slice `i` (for `i >= 1`).
pub fn slice_len(i: usize) -> usize {
    i + 1
}

/// Admissible `y` values of slice `i`, ascending: `-i, -i + 2, ..., i`.
pub fn slice_spaces(i: usize) -> impl Iterator<Item = i64> {
    let ii = i as i64;
    (0..=ii).map(move |j| 2 * j - ii)
}

/// Total number of sites on slices `1..=n`: `n (n + 3) / 2`.
pub fn cone_size(n: usize) -> usize {
    n * (n + 3) / 2
}

/// `ln n!` accumulated by compensated summation.
///
/// For integer arguments this is more accurate than a general log-gamma
/// evaluation (absolute error stays near machine precision for every `n`
/// used here), which keeps `sum_e P[S_N = e] = 1` well inside 1e-12 and makes
/// reflected bridge probabilities bit-identical.
pub fn ln_factorial(n: u64) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for i in 2..=n {
        let term = (i as f64).ln();
        let y = term - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

/// `ln C(n, k)` in log-space. Symmetric in `k <-> n - k` by construction.
pub fn log_binomial(n: u64, k: u64) -> f64 {
    assert!(k <= n, "binomial index out of range: C({n}, {k})");
    let k = k.min(n - k);
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// `ln P[S_N = e]` for the simple random walk: `ln( C(N, (N+e)/2) 2^{-N} )`.
pub fn log_bridge_probability(spec: &BridgeSpec) -> f64 {
    let n = spec.horizon() as u64;
    let k = ((spec.horizon() as i64 + spec.endpoint()) / 2) as u64;
    log_binomial(n, k) - n as f64 * LN_2
}

/// Standardize macroscopic coordinates `(t, x)` at scale `N` to a lattice bridge.
///
/// The horizon is `t * N` rounded half-to-even (then clamped up to 1); the
/// endpoint is the admissible integer nearest to `x * sqrt(N)` with the
/// horizon's parity. When the target is exactly between two admissible
/// integers the one closer to 0 wins; the symmetric `-1 / +1` tie resolves
/// to `+1`. Fails if the standardized endpoint falls outside the cone.
pub fn admissible_endpoint(t: f64, x: f64, n: usize) -> Result<BridgeSpec> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::invalid_parameter("t", "must be positive and finite"));
    }
    if !x.is_finite() {
        return Err(Error::invalid_parameter("x", "must be finite"));
    }
    if n < 1 {
        return Err(Error::InvalidHorizon(n));
    }
    let horizon = ((t * n as f64).round_ties_even() as i64).max(1) as usize;
    let target = x * (n as f64).sqrt();
    let endpoint = nearest_with_parity(target, horizon);
    if endpoint.unsigned_abs() as usize > horizon {
        return Err(Error::UnreachableEndpoint { horizon, target });
    }
    BridgeSpec::new(horizon, endpoint)
}

fn nearest_with_parity(target: f64, horizon: usize) -> i64 {
    let parity = (horizon % 2) as i64;
    let mut lo = target.floor() as i64;
    if (lo - parity).rem_euclid(2) != 0 {
        lo -= 1;
    }
    let hi = lo + 2;
    let d_lo = target - lo as f64;
    let d_hi = hi as f64 - target;
    if d_lo < d_hi {
        lo
    } else if d_hi < d_lo {
        hi
    } else if lo.abs() < hi.abs() {
        lo
    } else {
        hi
    }
}
