//! Quenched polymer partition functions, Gibbs marginals, and replica overlaps.
//!
//! For a disorder field `w` and inverse temperature `beta`, the point-to-point
//! partition function over bridges pinned at `(N, e)` is
//!
//! ```text
//! Z = E[ exp(beta * sum_{i=1..N} w(i, S_i)) | S_N = e ] ,
//! ```
//!
//! computed by the forward transfer recursion
//! `W(i, y) = exp(beta w(i, y)) * (W(i-1, y-1) + W(i-1, y+1)) / 2` with
//! `W(0, 0) = 1`, so that `log Z = log W(N, e) - log P[S_N = e]`. Each slice is
//! rescaled by its maximum (the scale accumulates in log-space), which keeps
//! every intermediate in the representable range for any horizon.
//!
//! Gibbs marginals come from the matching backward recursion: `mu_i(y)` is
//! proportional to `F(i, y) * B(i, y)` where `B` carries the disorder strictly
//! after slice `i`. The two-replica overlap under a common field is then
//! `sum_i sum_y mu_i(y)^2`, because the two replicas are independent given the
//! disorder.

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::lattice::{admissible_endpoint, log_bridge_probability, BridgeSpec};

/// Bridge geometry plus inverse temperature for a quenched computation.
#[derive(Debug, Clone, Copy)]
pub struct PolymerSpec {
    bridge: BridgeSpec,
    beta: f64,
}

impl PolymerSpec {
    pub fn new(bridge: BridgeSpec, beta: f64) -> Result<Self> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::invalid_parameter(
                "beta",
                "must be finite and non-negative",
            ));
        }
        Ok(PolymerSpec { bridge, beta })
    }

    pub fn bridge(&self) -> BridgeSpec {
        self.bridge
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Macroscopic coordinates `(t, x)` at scale `N`, with the scale-dictated
/// inverse temperature `beta = N^{-1/4}`.
#[derive(Debug, Clone, Copy)]
pub struct ScaledSpec {
    t: f64,
    x: f64,
    n: usize,
    bridge: BridgeSpec,
}

impl ScaledSpec {
    pub fn new(t: f64, x: f64, n: usize) -> Result<Self> {
        let bridge = admissible_endpoint(t, x, n)?;
        Ok(ScaledSpec { t, x, n, bridge })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn scale(&self) -> usize {
        self.n
    }

    /// The standardized bridge: horizon `round(t N)`, endpoint near `x sqrt(N)`.
    pub fn bridge(&self) -> BridgeSpec {
        self.bridge
    }

    /// Scale-dictated inverse temperature `N^{-1/4}`.
    pub fn beta(&self) -> f64 {
        (self.n as f64).powf(-0.25)
    }

    /// `log E Z` for this spec: `horizon * beta^2 / 2 = horizon / (2 sqrt(N))`.
    pub fn log_mean_partition(&self) -> f64 {
        self.bridge.horizon() as f64 / (2.0 * (self.n as f64).sqrt())
    }
}

fn check_same_cone(env: &Environment, bridge: &BridgeSpec) -> Result<()> {
    if env.horizon() != bridge.horizon() {
        return Err(Error::HorizonMismatch(env.horizon(), bridge.horizon()));
    }
    Ok(())
}

#[inline]
fn endpoint_index(bridge: &BridgeSpec) -> usize {
    ((bridge.endpoint() + bridge.horizon() as i64) / 2) as usize
}

#[inline]
fn slice_max(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0f64, f64::max)
}

/// One forward step: fill slice `i` from the (rescaled) slice `i - 1`.
#[inline]
fn forward_step(prev: &[f64], cur: &mut Vec<f64>, i: usize, beta: f64, env: &Environment) {
    cur.clear();
    cur.resize(i + 1, 0.0);
    for (j, c) in cur.iter_mut().enumerate() {
        let y = 2 * j as i64 - i as i64;
        let mut acc = 0.0;
        if j >= 1 {
            acc += prev[j - 1];
        }
        if j < i {
            acc += prev[j];
        }
        *c = 0.5 * acc * (beta * env.value(i, y)).exp();
    }
}

/// `log Z` for the given field and polymer spec.
pub fn log_partition(env: &Environment, spec: &PolymerSpec) -> Result<f64> {
    let bridge = spec.bridge();
    check_same_cone(env, &bridge)?;
    let n = bridge.horizon();
    let beta = spec.beta();

    let mut prev = vec![1.0f64];
    let mut cur = Vec::new();
    let mut log_scale = 0.0f64;
    for i in 1..=n {
        forward_step(&prev, &mut cur, i, beta, env);
        let m = slice_max(&cur);
        for v in cur.iter_mut() {
            *v /= m;
        }
        log_scale += m.ln();
        std::mem::swap(&mut prev, &mut cur);
    }
    let log_w = prev[endpoint_index(&bridge)].ln() + log_scale;
    Ok(log_w - log_bridge_probability(&bridge))
}

/// `log` of the normalized partition function: `log Z - log E Z` at the
/// standardized bridge of `scaled`, with `beta = N^{-1/4}`.
pub fn log_normalized_partition(env: &Environment, scaled: &ScaledSpec) -> Result<f64> {
    let spec = PolymerSpec::new(scaled.bridge(), scaled.beta())?;
    Ok(log_partition(env, &spec)? - scaled.log_mean_partition())
}

/// Per-slice Gibbs marginals `mu_i(y)` of the pinned polymer, `i = 1..=N`.
#[derive(Debug, Clone)]
pub struct MarginalProfile {
    horizon: usize,
    endpoint: i64,
    slices: Vec<Vec<f64>>,
}

impl MarginalProfile {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn endpoint(&self) -> i64 {
        self.endpoint
    }

    /// Marginal of slice `i` (1-based), `y` ascending; zero entries mark sites
    /// that cannot reach the endpoint.
    pub fn slice(&self, i: usize) -> &[f64] {
        &self.slices[i - 1]
    }

    /// Probability of site `(i, y)`.
    pub fn prob(&self, i: usize, y: i64) -> f64 {
        self.slices[i - 1][((y + i as i64) / 2) as usize]
    }

    /// `sum_i sum_y mu_i(y)^2` — the expected coincidence count of two
    /// conditionally independent replicas.
    pub fn overlap(&self) -> f64 {
        self.slices
            .iter()
            .map(|s| s.iter().map(|p| p * p).sum::<f64>())
            .sum()
    }
}

/// Forward log-weights `log F(i, y)` for slices `1..=n`.
fn forward_log_weights(env: &Environment, beta: f64, n: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut prev = vec![1.0f64];
    let mut cur = Vec::new();
    let mut log_scale = 0.0f64;
    for i in 1..=n {
        forward_step(&prev, &mut cur, i, beta, env);
        let m = slice_max(&cur);
        for v in cur.iter_mut() {
            *v /= m;
        }
        log_scale += m.ln();
        out.push(
            cur.iter()
                .map(|&v| if v > 0.0 { v.ln() + log_scale } else { f64::NEG_INFINITY })
                .collect(),
        );
        std::mem::swap(&mut prev, &mut cur);
    }
    out
}

/// Backward log-weights `log B(i, y)` for slices `1..=n`; `B(i, y)` carries the
/// disorder strictly after slice `i` and ends pinned at the bridge endpoint.
fn backward_log_weights(env: &Environment, beta: f64, bridge: &BridgeSpec) -> Vec<Vec<f64>> {
    let n = bridge.horizon();
    let j_e = endpoint_index(bridge);
    let mut out = vec![Vec::new(); n];

    let mut next = vec![0.0f64; n + 1];
    next[j_e] = 1.0;
    out[n - 1] = next
        .iter()
        .map(|&v| if v > 0.0 { 0.0 } else { f64::NEG_INFINITY })
        .collect();

    let mut log_scale = 0.0f64;
    let mut cur = Vec::new();
    for i in (1..n).rev() {
        cur.clear();
        cur.resize(i + 1, 0.0);
        for (j, c) in cur.iter_mut().enumerate() {
            let y = 2 * j as i64 - i as i64;
            let down = next[j] * (beta * env.value(i + 1, y - 1)).exp();
            let up = next[j + 1] * (beta * env.value(i + 1, y + 1)).exp();
            *c = 0.5 * (down + up);
        }
        let m = slice_max(&cur);
        for v in cur.iter_mut() {
            *v /= m;
        }
        log_scale += m.ln();
        out[i - 1] = cur
            .iter()
            .map(|&v| if v > 0.0 { v.ln() + log_scale } else { f64::NEG_INFINITY })
            .collect();
        std::mem::swap(&mut next, &mut cur);
    }
    out
}

/// Gibbs marginals computed by the forward-backward pass; each slice is
/// exponentiated after subtracting its running maximum, then normalized.
pub fn gibbs_marginals(env: &Environment, spec: &PolymerSpec) -> Result<MarginalProfile> {
    Ok(partition_and_marginals(env, spec)?.1)
}

/// `log Z` together with the marginal profile, sharing one forward pass.
pub fn partition_and_marginals(
    env: &Environment,
    spec: &PolymerSpec,
) -> Result<(f64, MarginalProfile)> {
    let bridge = spec.bridge();
    check_same_cone(env, &bridge)?;
    let n = bridge.horizon();
    let beta = spec.beta();

    let fwd = forward_log_weights(env, beta, n);
    let bwd = backward_log_weights(env, beta, &bridge);

    let log_w = fwd[n - 1][endpoint_index(&bridge)];
    let log_z = log_w - log_bridge_probability(&bridge);

    let mut slices = Vec::with_capacity(n);
    for i in 0..n {
        let raw: Vec<f64> = fwd[i].iter().zip(&bwd[i]).map(|(f, b)| f + b).collect();
        let m = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut mu: Vec<f64> = raw.iter().map(|r| (r - m).exp()).collect();
        let total: f64 = mu.iter().sum();
        for p in mu.iter_mut() {
            *p /= total;
        }
        slices.push(mu);
    }

    Ok((
        log_z,
        MarginalProfile {
            horizon: n,
            endpoint: bridge.endpoint(),
            slices,
        },
    ))
}

/// Quenched two-replica overlap `sum_i sum_y mu_i(y)^2`.
pub fn quenched_overlap(env: &Environment, spec: &PolymerSpec) -> Result<f64> {
    Ok(gibbs_marginals(env, spec)?.overlap())
}

/// `(log Z, overlap)` in one forward-backward pass — the inner loop of the
/// concentration experiments.
pub fn partition_and_overlap(env: &Environment, spec: &PolymerSpec) -> Result<(f64, f64)> {
    let (log_z, profile) = partition_and_marginals(env, spec)?;
    Ok((log_z, profile.overlap()))
}
