//! Exact annealed two-replica computations.
//!
//! Averaging the squared partition function over Gaussian disorder turns the
//! quenched problem into expectations of `exp(alpha * L_N)` for a pair of
//! independent walks, where `L_N = #{ i <= N : S^1_i = S^2_i }` counts
//! coincidences. This module evaluates such tilted pair expectations exactly:
//!
//! * [`conditioned_overlap_stats`] runs the tilted pair transfer matrix over
//!   states `(y_1, y_2)` with both walks pinned at a common endpoint. Under
//!   the double-endpoint conditioning the difference walk alone is *not*
//!   Markov, so the full O(N^3) pair recursion is used rather than a
//!   difference-walk reduction.
//! * [`pinning_partition`] handles the unconditioned case, where the
//!   difference `Y = S^1 - S^2` *is* a lazy walk (steps -2, 0, +2 with
//!   probabilities 1/4, 1/2, 1/4) and `z_m(beta) = E[exp(beta sum 1{Y_i=0})]`
//!   reduces to a one-dimensional recursion.
//! * [`fit_pinning_constants`] certifies an exponential envelope
//!   `z_m(beta) <= c1 exp(c2 beta^2 m)` over a grid, and
//!   [`convexity_chain_check`], [`halving_inequality_check`] and
//!   [`halftime_conditioning_ratio`] verify the comparison inequalities that
//!   reduce conditioned tilted overlaps to this envelope.
//!
//! Everything here is deterministic linear algebra; probabilities stay in
//! linear space (they are bounded by `exp(alpha * N)`, far from overflow for
//! every grid used), and bridge probabilities come from
//! [`lattice::log_bridge_probability`](crate::lattice::log_bridge_probability).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{admissible_endpoint, log_binomial, log_bridge_probability, BridgeSpec, LN_2};

/// Default grid of pinning horizons used by fits: powers of two, 16..=1024.
pub const DEFAULT_PINNING_GRID: [usize; 7] = [16, 32, 64, 128, 256, 512, 1024];

/// Largest horizon accepted by [`halftime_conditioning_ratio`] (its state
/// space is cubic in the horizon and the walk pair adds another factor).
pub const HALFTIME_MAX_HORIZON: usize = 64;

const DEFAULT_C2_STEP: f64 = 0.01;
const C2_MAX: f64 = 2.0;
const DEFAULT_LN_C1_STEP: f64 = 0.005;
/// Prefactor cap: a fit must explain everything beyond this by the
/// exponential term, which is what forces `c2` to carry growth in `m`.
const C1_CAP: f64 = 100.0;
const SNAP_TOLERANCE: f64 = 1e-12;

/// Final tilted pair-transfer-matrix slice: `v` accumulates the coincidence
/// tilt, `u` additionally weights by the coincidence count itself.
struct PairSlice {
    width: usize,
    v: Vec<f64>,
    u: Vec<f64>,
}

#[inline]
fn parent_range(j: usize, i: usize) -> std::ops::RangeInclusive<usize> {
    j.saturating_sub(1)..=j.min(i - 1)
}

/// Run the pair recursion for `steps` slices with per-coincidence tilt
/// `exp(alpha)`. State `(j1, j2)` indexes `y = 2 j - i` on slice `i`.
fn run_pair_dp(steps: usize, alpha: f64) -> PairSlice {
    let tilt = alpha.exp();
    let mut v_prev = vec![1.0f64];
    let mut u_prev = vec![0.0f64];
    let mut pw = 1usize;
    for i in 1..=steps {
        let w = i + 1;
        let mut v = vec![0.0f64; w * w];
        let mut u = vec![0.0f64; w * w];
        for j1 in 0..=i {
            for j2 in 0..=i {
                let mut sv = 0.0;
                let mut su = 0.0;
                for p1 in parent_range(j1, i) {
                    for p2 in parent_range(j2, i) {
                        sv += v_prev[p1 * pw + p2];
                        su += u_prev[p1 * pw + p2];
                    }
                }
                sv *= 0.25;
                su *= 0.25;
                let idx = j1 * w + j2;
                if j1 == j2 {
                    v[idx] = sv * tilt;
                    u[idx] = (su + sv) * tilt;
                } else {
                    v[idx] = sv;
                    u[idx] = su;
                }
            }
        }
        v_prev = v;
        u_prev = u;
        pw = w;
    }
    PairSlice {
        width: pw,
        v: v_prev,
        u: u_prev,
    }
}

/// Exact conditioned pair statistics at one `(horizon, alpha, endpoint)` cell.
#[derive(Debug, Clone, Copy)]
pub struct OverlapStats {
    pub horizon: usize,
    pub endpoint: i64,
    pub alpha: f64,
    /// `E[ exp(alpha L_N) | both walks end at the endpoint ]`.
    pub mgf: f64,
    /// `E[ L_N exp(alpha L_N) | both walks end at the endpoint ]`
    /// (the `alpha`-derivative of `mgf`).
    pub tilted_mean: f64,
}

/// Both conditioned pair expectations from a single transfer-matrix pass.
pub fn conditioned_overlap_stats(n: usize, alpha: f64, endpoint: i64) -> Result<OverlapStats> {
    let bridge = BridgeSpec::new(n, endpoint)?;
    if !alpha.is_finite() {
        return Err(Error::invalid_parameter("alpha", "must be finite"));
    }
    let dp = run_pair_dp(n, alpha);
    let je = ((endpoint + n as i64) / 2) as usize;
    let idx = je * dp.width + je;
    let p2 = (2.0 * log_bridge_probability(&bridge)).exp();
    Ok(OverlapStats {
        horizon: n,
        endpoint,
        alpha,
        mgf: dp.v[idx] / p2,
        tilted_mean: dp.u[idx] / p2,
    })
}

/// `E[ exp(alpha L_N) | both end at endpoint ]`.
pub fn annealed_mgf_conditioned(n: usize, alpha: f64, endpoint: i64) -> Result<f64> {
    Ok(conditioned_overlap_stats(n, alpha, endpoint)?.mgf)
}

/// `E[ L_N exp(alpha L_N) | both end at endpoint ]`.
pub fn annealed_tilted_mean_conditioned(n: usize, alpha: f64, endpoint: i64) -> Result<f64> {
    Ok(conditioned_overlap_stats(n, alpha, endpoint)?.tilted_mean)
}

/// One row of the overlap bound table at scale `n`.
#[derive(Debug, Clone, Copy)]
pub struct OverlapBoundRow {
    pub n: usize,
    pub horizon: usize,
    pub endpoint: i64,
    /// `E[exp(N^{-1/2} L) | cond]` — the second-moment candidate.
    pub mgf: f64,
    /// `N^{-1/2} E[L exp(N^{-1/2} L) | cond]` — the tilted-mean candidate.
    pub tilted_scaled: f64,
    pub mgf_running_max: f64,
    pub tilted_running_max: f64,
}

/// Evaluate the two bounded-overlap candidates across scales and report
/// running maxima. Cells are independent and evaluated in parallel; assembly
/// is deterministic in list order.
pub fn overlap_bound_table(n_list: &[usize], t: f64, x: f64) -> Result<Vec<OverlapBoundRow>> {
    if n_list.is_empty() {
        return Err(Error::invalid_parameter("n_list", "must be non-empty"));
    }
    let cells: Vec<(usize, OverlapStats)> = n_list
        .par_iter()
        .map(|&n| -> Result<(usize, OverlapStats)> {
            let bridge = admissible_endpoint(t, x, n)?;
            let alpha = (n as f64).powf(-0.5);
            let stats = conditioned_overlap_stats(bridge.horizon(), alpha, bridge.endpoint())?;
            Ok((n, stats))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(cells.len());
    let mut mgf_max = f64::NEG_INFINITY;
    let mut tilted_max = f64::NEG_INFINITY;
    for (n, stats) in cells {
        let tilted_scaled = stats.tilted_mean / (n as f64).sqrt();
        mgf_max = mgf_max.max(stats.mgf);
        tilted_max = tilted_max.max(tilted_scaled);
        rows.push(OverlapBoundRow {
            n,
            horizon: stats.horizon,
            endpoint: stats.endpoint,
            mgf: stats.mgf,
            tilted_scaled,
            mgf_running_max: mgf_max,
            tilted_running_max: tilted_max,
        });
    }
    Ok(rows)
}

/// Pinning partition function of the lazy difference walk at one horizon.
#[derive(Debug, Clone, Copy)]
pub struct PinningResult {
    pub m: usize,
    pub beta: f64,
    /// `z_m(beta) = E[exp(beta L_m)]`, `L_m` = visits of the lazy walk to 0.
    pub z: f64,
    /// `E[L_m exp(beta L_m)] = dz/dbeta`.
    pub tilted_mean: f64,
}

/// Evaluate `z_m(beta)` and its `beta`-derivative by the one-dimensional
/// lazy-walk recursion (O(m^2) states).
pub fn pinning_partition(m: usize, beta: f64) -> Result<PinningResult> {
    if m < 1 {
        return Err(Error::InvalidHorizon(m));
    }
    if !beta.is_finite() {
        return Err(Error::invalid_parameter("beta", "must be finite"));
    }
    let tilt = beta.exp();
    // Position q = Y/2 on slice i ranges over -i..=i (index q + i).
    let mut v_prev = vec![1.0f64];
    let mut u_prev = vec![0.0f64];
    for i in 1..=m {
        let w = 2 * i + 1;
        let pw = 2 * (i - 1) + 1;
        let mut v = vec![0.0f64; w];
        let mut u = vec![0.0f64; w];
        for qi in 0..w {
            let q = qi as i64 - i as i64;
            let mut sv = 0.0;
            let mut su = 0.0;
            // Parent positions q-1, q, q+1 with weights 1/4, 1/2, 1/4.
            for (dq, weight) in [(-1i64, 0.25), (0, 0.5), (1, 0.25)] {
                let p = q + dq;
                if p.unsigned_abs() as usize <= i - 1 {
                    let pi = (p + (i as i64 - 1)) as usize;
                    debug_assert!(pi < pw);
                    sv += weight * v_prev[pi];
                    su += weight * u_prev[pi];
                }
            }
            if q == 0 {
                v[qi] = sv * tilt;
                u[qi] = (su + sv) * tilt;
            } else {
                v[qi] = sv;
                u[qi] = su;
            }
        }
        v_prev = v;
        u_prev = u;
    }
    let z: f64 = v_prev.iter().sum();
    let tilted_mean: f64 = u_prev.iter().sum();
    if !z.is_finite() || !tilted_mean.is_finite() {
        return Err(Error::invalid_parameter(
            "beta",
            format!("pinning partition overflows f64 at m = {m}, beta = {beta}"),
        ));
    }
    Ok(PinningResult {
        m,
        beta,
        z,
        tilted_mean,
    })
}

/// How `beta` is chosen at each grid horizon during a pinning fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaRule {
    /// `beta = m^{-1/2}` (the scaling the concentration argument uses).
    InverseSqrt,
    /// A fixed `beta` at every horizon.
    Fixed(f64),
}

impl BetaRule {
    pub fn beta(&self, m: usize) -> f64 {
        match self {
            BetaRule::InverseSqrt => (m as f64).powf(-0.5),
            BetaRule::Fixed(b) => *b,
        }
    }
}

/// A certified exponential envelope `z_m(beta) <= c1 exp(c2 beta^2 m)`.
#[derive(Debug, Clone)]
pub struct PinningFit {
    /// Prefactor, `exp(ln_c1)`; snapped upward to its search grid.
    pub c1: f64,
    pub ln_c1: f64,
    /// Exponential rate per `beta^2 m`.
    pub c2: f64,
    pub rule: BetaRule,
    /// The grid evaluations the fit certifies.
    pub points: Vec<PinningResult>,
}

/// Outcome of re-checking a fit on a horizon outside its grid.
#[derive(Debug, Clone, Copy)]
pub struct PinningHoldout {
    pub point: PinningResult,
    pub bound: f64,
    pub ok: bool,
}

impl PinningFit {
    pub fn log_bound(&self, m: usize, beta: f64) -> f64 {
        self.ln_c1 + self.c2 * beta * beta * m as f64
    }

    pub fn bound(&self, m: usize, beta: f64) -> f64 {
        self.log_bound(m, beta).exp()
    }

    /// Evaluate the envelope on a fresh horizon under the fit's own rule.
    pub fn validate(&self, m: usize) -> Result<PinningHoldout> {
        let beta = self.rule.beta(m);
        let point = pinning_partition(m, beta)?;
        let bound = self.bound(m, beta);
        Ok(PinningHoldout {
            point,
            bound,
            ok: point.z <= bound,
        })
    }
}

/// Fit `(c1, c2)` with the default search grids (`c2` step 0.01, `ln c1`
/// step 0.005, prefactor cap 100).
pub fn fit_pinning_constants(m_grid: &[usize], rule: BetaRule) -> Result<PinningFit> {
    fit_pinning_constants_on_grid(m_grid, rule, DEFAULT_C2_STEP, DEFAULT_LN_C1_STEP)
}

/// Fit with explicit search-grid resolutions.
///
/// The fit is lexicographic: the smallest grid `c2` admitting a prefactor
/// below the cap wins, then `c1` is the smallest grid value that covers every
/// point. A fit in which `c2 = 0` is legitimate — it simply means the data
/// never outgrow a constant — and since `z_m(0) = 1` the degenerate rule
/// `beta = 0` yields exactly `(c1, c2) = (1, 0)`.
pub fn fit_pinning_constants_on_grid(
    m_grid: &[usize],
    rule: BetaRule,
    c2_step: f64,
    ln_c1_step: f64,
) -> Result<PinningFit> {
    if m_grid.is_empty() {
        return Err(Error::invalid_parameter("m_grid", "must be non-empty"));
    }
    if !(c2_step > 0.0 && ln_c1_step > 0.0) {
        return Err(Error::invalid_parameter(
            "grid_step",
            "search grid steps must be positive",
        ));
    }
    let points: Vec<PinningResult> = m_grid
        .iter()
        .map(|&m| pinning_partition(m, rule.beta(m)))
        .collect::<Result<Vec<_>>>()?;

    let steps = (C2_MAX / c2_step).ceil() as usize;
    for k2 in 0..=steps {
        let c2 = k2 as f64 * c2_step;
        let ln_c1_raw = points
            .iter()
            .map(|p| p.z.ln() - c2 * p.beta * p.beta * p.m as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        if ln_c1_raw > C1_CAP.ln() {
            continue;
        }
        let k1 = ((ln_c1_raw - SNAP_TOLERANCE) / ln_c1_step).ceil().max(0.0);
        let ln_c1 = k1 * ln_c1_step;
        return Ok(PinningFit {
            c1: ln_c1.exp(),
            ln_c1,
            c2,
            rule,
            points,
        });
    }
    Err(Error::invalid_parameter(
        "m_grid",
        format!(
            "no envelope with prefactor <= {C1_CAP} and rate <= {C2_MAX} fits the grid \
             (is beta too large?)"
        ),
    ))
}

/// Residuals of the convexity chain that converts a tilted-mean bound into a
/// pinning-envelope bound. All three are non-negative when the chain holds:
///
/// * `r1 = g(2u) - 1 - u g'(u)`        (convexity of `g` plus `g >= 1`),
/// * `r2 = (g(2u) - 1)/(2u) - g'(u)/2` (the same inequality per unit tilt),
/// * `r3 = c1 exp(4 c2 m u^2) - g(2u)` (the fitted envelope evaluated at `2u`).
#[derive(Debug, Clone, Copy)]
pub struct ConvexityResiduals {
    pub m: usize,
    pub u: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    /// Envelope constants used for `r3`.
    pub c1: f64,
    pub c2: f64,
}

/// Check the convexity chain at `(m, u)`.
///
/// The envelope constants for `r3` are fitted at the doubled tilt `2u` over
/// the default horizon grid extended with `m` itself, so `r3` certifies that
/// one envelope covers the whole grid including the point under test.
pub fn convexity_chain_check(m: usize, u: f64) -> Result<ConvexityResiduals> {
    if m < 1 {
        return Err(Error::InvalidHorizon(m));
    }
    if !(u.is_finite() && u > 0.0) {
        return Err(Error::invalid_parameter("u", "must be positive and finite"));
    }
    let g_u = pinning_partition(m, u)?;
    let g_2u = pinning_partition(m, 2.0 * u)?;

    let mut grid: Vec<usize> = DEFAULT_PINNING_GRID.to_vec();
    grid.push(m);
    grid.sort_unstable();
    grid.dedup();
    let fit = fit_pinning_constants(&grid, BetaRule::Fixed(2.0 * u))?;

    let r1 = g_2u.z - 1.0 - u * g_u.tilted_mean;
    let r2 = (g_2u.z - 1.0) / (2.0 * u) - 0.5 * g_u.tilted_mean;
    let r3 = fit.bound(m, 2.0 * u) - g_2u.z;
    Ok(ConvexityResiduals {
        m,
        u,
        r1,
        r2,
        r3,
        c1: fit.c1,
        c2: fit.c2,
    })
}

/// Both sides of the half-horizon comparison inequalities, conditioned on the
/// full bridge. `h1` and `h2` are the slack of
///
/// ```text
/// E[exp(b L_N)]   <= 2 E[exp(2b L_{N/2})] E[exp(b L_{N/2})]        (h1)
/// E[L_N exp(b L_N)] <= 4 E[L_{N/2} exp(2b L_{N/2})] E[exp(b L_{N/2})]  (h2)
/// ```
#[derive(Debug, Clone, Copy)]
pub struct HalvingCheck {
    pub n: usize,
    pub beta: f64,
    pub endpoint: i64,
    pub full_mgf: f64,
    pub full_tilted: f64,
    pub half_mgf: f64,
    pub half_mgf_doubled: f64,
    pub half_tilted_doubled: f64,
    pub h1: f64,
    pub h2: f64,
}

/// Completion probabilities `P[S_rest = endpoint - y]` for every slice-`m`
/// index `j` (zero where the endpoint is out of reach).
fn completion_probs(m: usize, rest: usize, endpoint: i64) -> Vec<f64> {
    (0..=m)
        .map(|j| {
            let y = 2 * j as i64 - m as i64;
            let d = endpoint - y;
            if d.unsigned_abs() as usize > rest || (d - rest as i64).rem_euclid(2) != 0 {
                0.0
            } else {
                (log_binomial(rest as u64, ((d + rest as i64) / 2) as u64)
                    - rest as f64 * LN_2)
                    .exp()
            }
        })
        .collect()
}

/// Contract a half-horizon pair slice against bridge completions, returning
/// unnormalized `E[f 1{both end at endpoint}]` for `f = exp(...)` and
/// `f = L exp(...)`.
fn complete_pair(dp: &PairSlice, m: usize, rest: usize, endpoint: i64) -> (f64, f64) {
    let probs = completion_probs(m, rest, endpoint);
    let mut ev = 0.0;
    let mut eu = 0.0;
    for j1 in 0..=m {
        if probs[j1] == 0.0 {
            continue;
        }
        for j2 in 0..=m {
            let p = probs[j1] * probs[j2];
            ev += dp.v[j1 * dp.width + j2] * p;
            eu += dp.u[j1 * dp.width + j2] * p;
        }
    }
    (ev, eu)
}

/// Evaluate the half-horizon comparison inequalities exactly.
pub fn halving_inequality_check(n: usize, beta: f64, endpoint: i64) -> Result<HalvingCheck> {
    let bridge = BridgeSpec::new(n, endpoint)?;
    if n % 2 != 0 {
        return Err(Error::OddHorizon(n));
    }
    if !beta.is_finite() {
        return Err(Error::invalid_parameter("beta", "must be finite"));
    }
    let m = n / 2;
    let p2 = (2.0 * log_bridge_probability(&bridge)).exp();
    let je = ((endpoint + n as i64) / 2) as usize;

    let full = run_pair_dp(n, beta);
    let full_mgf = full.v[je * full.width + je] / p2;
    let full_tilted = full.u[je * full.width + je] / p2;

    let half = run_pair_dp(m, beta);
    let (ev, _) = complete_pair(&half, m, n - m, endpoint);
    let half_mgf = ev / p2;

    let half_doubled = run_pair_dp(m, 2.0 * beta);
    let (ev2, eu2) = complete_pair(&half_doubled, m, n - m, endpoint);
    let half_mgf_doubled = ev2 / p2;
    let half_tilted_doubled = eu2 / p2;

    Ok(HalvingCheck {
        n,
        beta,
        endpoint,
        full_mgf,
        full_tilted,
        half_mgf,
        half_mgf_doubled,
        half_tilted_doubled,
        h1: 2.0 * half_mgf_doubled * half_mgf - full_mgf,
        h2: 4.0 * half_tilted_doubled * half_mgf - full_tilted,
    })
}

/// Worst-case ratio between the conditioned and unconditioned distribution of
/// the half-horizon coincidence count.
#[derive(Debug, Clone, Copy)]
pub struct ConditioningRatio {
    pub n: usize,
    pub endpoint: i64,
    /// `max_k P[L_{N/2} = k | both end at endpoint] / P[L_{N/2} = k]`.
    pub max_ratio: f64,
    pub argmax_k: usize,
}

/// Resolve the distribution of the half-horizon coincidence count with and
/// without the double-endpoint conditioning, and return the worst ratio.
///
/// The recursion tracks `(y_1, y_2, k)` so it costs O(N^4); horizons are
/// capped at [`HALFTIME_MAX_HORIZON`].
pub fn halftime_conditioning_ratio(n: usize, endpoint: i64) -> Result<ConditioningRatio> {
    let _bridge = BridgeSpec::new(n, endpoint)?;
    if n % 2 != 0 {
        return Err(Error::OddHorizon(n));
    }
    if n > HALFTIME_MAX_HORIZON {
        return Err(Error::invalid_parameter(
            "n",
            format!("horizon {n} exceeds the local-time-resolved cap {HALFTIME_MAX_HORIZON}"),
        ));
    }
    let m = n / 2;
    let levels = m + 1;

    // dp[k][j1][j2], flat; slice 0 is the single state (0, 0) with k = 0.
    let mut prev = vec![0.0f64; levels];
    prev[0] = 1.0;
    let mut pw = 1usize;
    for i in 1..=m {
        let w = i + 1;
        let mut cur = vec![0.0f64; levels * w * w];
        for j1 in 0..=i {
            for j2 in 0..=i {
                let coincide = j1 == j2;
                for k in 0..levels {
                    let source_k = if coincide {
                        if k == 0 {
                            continue;
                        }
                        k - 1
                    } else {
                        k
                    };
                    let mut s = 0.0;
                    for p1 in parent_range(j1, i) {
                        for p2 in parent_range(j2, i) {
                            s += prev[(source_k * pw + p1) * pw + p2];
                        }
                    }
                    cur[(k * w + j1) * w + j2] = 0.25 * s;
                }
            }
        }
        prev = cur;
        pw = w;
    }

    let probs = completion_probs(m, n - m, endpoint);
    let mut unconditioned = vec![0.0f64; levels];
    let mut conditioned_raw = vec![0.0f64; levels];
    for k in 0..levels {
        for j1 in 0..=m {
            for j2 in 0..=m {
                let mass = prev[(k * pw + j1) * pw + j2];
                unconditioned[k] += mass;
                conditioned_raw[k] += mass * probs[j1] * probs[j2];
            }
        }
    }
    let total: f64 = conditioned_raw.iter().sum();

    let mut max_ratio = f64::NEG_INFINITY;
    let mut argmax_k = 0;
    for k in 0..levels {
        if unconditioned[k] <= 0.0 {
            continue;
        }
        let ratio = (conditioned_raw[k] / total) / unconditioned[k];
        if ratio > max_ratio {
            max_ratio = ratio;
            argmax_k = k;
        }
    }
    Ok(ConditioningRatio {
        n,
        endpoint,
        max_ratio,
        argmax_k,
    })
}
