//! Monte Carlo concentration experiments and the deterministic constants
//! pipeline they certify against.
//!
//! Every experiment follows the same template: a master seed expands through
//! [`derive_seed`](crate::environment::derive_seed) into one stream per
//! replicate, each replicate samples a disorder field and evaluates exact
//! transfer-matrix functionals on it, and the summaries compare the empirical
//! statistics against exact annealed values or certified bounds. Replicates
//! are fanned out with rayon but collected in index order, so results are
//! byte-identical no matter how many worker threads run.
//!
//! The chain being exercised: the exact pair computations give the
//! second-moment constant `L̂` and the tilted-overlap constant `K̂`; the
//! Paley–Zygmund inequality plus a Markov bound turn those into an event of
//! probability `δ = 1/(8 L̂)` on which the partition function is large and
//! the Gibbs overlap is small; convexity of `log Z` in the disorder converts
//! that event into a Gaussian lower-tail estimate with explicit constants
//! `(C₂, c₂)`; and the tail integrates into negative-moment bounds `κ_p`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{derive_seed, Environment};
use crate::error::{Error, Result};
use crate::lattice::{BridgeSpec, LN_2};
use crate::polymer::{
    log_normalized_partition, log_partition, partition_and_overlap, PolymerSpec, ScaledSpec,
};
use crate::replica::{annealed_mgf_conditioned, overlap_bound_table};

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2))
}

/// Sample mean and its standard error (infinite for fewer than two samples).
pub fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Half-width of the Wilson score interval at one standard normal unit.
/// Strictly positive even at `p_hat` = 0 or 1, which keeps tail checks
/// honest when no replicate lands in the tail.
pub fn wilson_half_width(successes: usize, trials: usize) -> f64 {
    let n = trials as f64;
    let p = successes as f64 / n;
    (p * (1.0 - p) / n + 1.0 / (4.0 * n * n)).sqrt() / (1.0 + 1.0 / n)
}

/// Two-sample Kolmogorov–Smirnov distance. Both slices must be sorted.
pub fn ks_distance(sorted_a: &[f64], sorted_b: &[f64]) -> f64 {
    let na = sorted_a.len() as f64;
    let nb = sorted_b.len() as f64;
    let mut i = 0usize;
    let mut j = 0usize;
    let mut d = 0.0f64;
    while i < sorted_a.len() && j < sorted_b.len() {
        let x = sorted_a[i].min(sorted_b[j]);
        while i < sorted_a.len() && sorted_a[i] == x {
            i += 1;
        }
        while j < sorted_b.len() && sorted_b[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Evaluate `f` on `replicates` independently seeded disorder fields.
///
/// Replicate `i` always sees the field derived from `(master_seed, i)`, and
/// results come back in replicate order, so the output is independent of the
/// rayon worker count.
pub fn replicate_map<T, F>(
    horizon: usize,
    replicates: usize,
    master_seed: u64,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&Environment, usize) -> Result<T> + Sync,
{
    if replicates < 1 {
        return Err(Error::InsufficientReplicates {
            got: replicates,
            min: 1,
        });
    }
    (0..replicates)
        .into_par_iter()
        .map(|i| {
            let env = Environment::sample(horizon, derive_seed(master_seed, i as u64))?;
            f(&env, i)
        })
        .collect()
}

fn require_replicates(replicates: usize, min: usize) -> Result<()> {
    if replicates < min {
        return Err(Error::InsufficientReplicates {
            got: replicates,
            min,
        });
    }
    Ok(())
}

/// One uniform result row, the record format every experiment writes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub experiment: String,
    pub n: usize,
    pub horizon: usize,
    pub endpoint: i64,
    pub t: Option<f64>,
    pub x: Option<f64>,
    pub beta: Option<f64>,
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
    pub statistic: String,
    pub value: f64,
    pub se: Option<f64>,
    pub bound: Option<f64>,
    pub pass: Option<bool>,
}

/// Empirical check that the disorder-averaged partition function matches its
/// closed form `exp(N beta^2 / 2)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanCheck {
    pub n: usize,
    pub beta: f64,
    pub endpoint: i64,
    pub replicates: usize,
    pub seed: u64,
    /// Mean of `Z / E[Z]`; should sit within a few SE of 1.
    pub mean_ratio: f64,
    pub se: f64,
    pub pass: bool,
}

pub fn mean_partition_check(
    n: usize,
    beta: f64,
    endpoint: i64,
    replicates: usize,
    seed: u64,
) -> Result<MeanCheck> {
    require_replicates(replicates, 100)?;
    let spec = PolymerSpec::new(BridgeSpec::new(n, endpoint)?, beta)?;
    let log_mean = 0.5 * n as f64 * beta * beta;
    let ratios = replicate_map(n, replicates, seed, |env, _| {
        Ok((log_partition(env, &spec)? - log_mean).exp())
    })?;
    let (mean_ratio, se) = mean_and_se(&ratios);
    Ok(MeanCheck {
        n,
        beta,
        endpoint,
        replicates,
        seed,
        mean_ratio,
        se,
        // The 1e-12 floor covers the zero-variance case beta = 0.
        pass: (mean_ratio - 1.0).abs() <= 3.0 * se + 1e-12,
    })
}

/// Empirical second moment of `Z / E[Z]` at the scaled coupling
/// `beta = N^{-1/4}` against the exact conditioned pair expectation at tilt
/// `beta^2 = N^{-1/2}` — the disorder average collapses to a two-walk
/// functional, and this check exercises that collapse end to end.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FubiniCheck {
    pub n: usize,
    pub endpoint: i64,
    pub beta: f64,
    pub alpha: f64,
    pub replicates: usize,
    pub seed: u64,
    pub mc_second_moment: f64,
    pub se: f64,
    pub exact: f64,
    pub pass: bool,
}

pub fn second_moment_fubini_check(
    n: usize,
    endpoint: i64,
    replicates: usize,
    seed: u64,
) -> Result<FubiniCheck> {
    require_replicates(replicates, 100)?;
    let beta = (n as f64).powf(-0.25);
    let alpha = beta * beta;
    let spec = PolymerSpec::new(BridgeSpec::new(n, endpoint)?, beta)?;
    let log_mean = 0.5 * n as f64 * alpha;
    let squares = replicate_map(n, replicates, seed, |env, _| {
        Ok((2.0 * (log_partition(env, &spec)? - log_mean)).exp())
    })?;
    let (mc_second_moment, se) = mean_and_se(&squares);
    let exact = annealed_mgf_conditioned(n, alpha, endpoint)?;
    Ok(FubiniCheck {
        n,
        endpoint,
        beta,
        alpha,
        replicates,
        seed,
        mc_second_moment,
        se,
        exact,
        pass: (mc_second_moment - exact).abs() <= 3.0 * se + 1e-12,
    })
}

/// Every constant of the concentration argument, derived deterministically
/// from exact pair computations over a scale grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantsLedger {
    pub n_grid: Vec<usize>,
    pub t: f64,
    pub x: f64,
    /// `L̂`: the largest conditioned second moment over the grid.
    pub l_hat: f64,
    /// `K̂`: the largest scaled tilted overlap mean over the grid.
    pub k_hat: f64,
    /// Overlap cap coefficient `C = 32 K̂ L̂`.
    pub big_c: f64,
    /// Good-event probability floor `δ = 1/(4L̂) - 4K̂/C = 1/(8L̂)`.
    pub delta: f64,
    /// `C' = sqrt(2 ln(1/δ))`.
    pub c_prime: f64,
    /// `C'' = sqrt(C)`.
    pub c_double_prime: f64,
    /// Tail exponent offset `c₁ = ln 2 + C' C''`.
    pub c_one: f64,
    /// Tail rate `c₂ = C''`.
    pub c_two: f64,
    /// Tail prefactor `C₂ = exp(-c₁)`.
    pub big_c2: f64,
}

pub fn constants_pipeline(n_grid: &[usize], t: f64, x: f64) -> Result<ConstantsLedger> {
    let rows = overlap_bound_table(n_grid, t, x)?;
    let last = rows.last().expect("non-empty grid produces rows");
    let l_hat = last.mgf_running_max;
    let k_hat = last.tilted_running_max;
    let big_c = 32.0 * k_hat * l_hat;
    let delta = 1.0 / (4.0 * l_hat) - 4.0 * k_hat / big_c;
    let c_double_prime = big_c.sqrt();
    let c_prime = (2.0 * (1.0 / delta).ln()).sqrt();
    let c_one = LN_2 + c_prime * c_double_prime;
    Ok(ConstantsLedger {
        n_grid: n_grid.to_vec(),
        t,
        x,
        l_hat,
        k_hat,
        big_c,
        delta,
        c_prime,
        c_double_prime,
        c_one,
        c_two: c_double_prime,
        big_c2: (-c_one).exp(),
    })
}

/// Empirical probability of the good event
/// `{ Z >= E[Z]/2 } ∩ { Gibbs overlap <= C sqrt(N) }` against its certified
/// floor `δ`, at the scaled coupling `beta = N^{-1/4}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventACheck {
    pub n: usize,
    pub endpoint: i64,
    pub beta: f64,
    pub replicates: usize,
    pub seed: u64,
    pub c_big: f64,
    pub overlap_cap: f64,
    pub delta: f64,
    pub p_hat: f64,
    pub se: f64,
    pub pass: bool,
}

/// Good-event probability with explicit cap coefficient and floor.
pub fn event_a_probability_with(
    n: usize,
    endpoint: i64,
    c_big: f64,
    delta: f64,
    replicates: usize,
    seed: u64,
) -> Result<EventACheck> {
    require_replicates(replicates, 2)?;
    if !(c_big.is_finite() && c_big > 0.0) {
        return Err(Error::invalid_parameter(
            "c_big",
            "must be positive and finite",
        ));
    }
    if !(delta.is_finite() && (0.0..1.0).contains(&delta)) {
        return Err(Error::invalid_parameter("delta", "must lie in [0, 1)"));
    }
    let beta = (n as f64).powf(-0.25);
    let spec = PolymerSpec::new(BridgeSpec::new(n, endpoint)?, beta)?;
    let log_half_mean = 0.5 * n as f64 * beta * beta - LN_2;
    let overlap_cap = c_big * (n as f64).sqrt();
    let hits = replicate_map(n, replicates, seed, |env, _| {
        let (log_z, overlap) = partition_and_overlap(env, &spec)?;
        Ok(u64::from(log_z >= log_half_mean && overlap <= overlap_cap))
    })?;
    let successes: u64 = hits.iter().sum();
    let m = replicates as f64;
    let p_hat = successes as f64 / m;
    let se = (p_hat * (1.0 - p_hat) / m).sqrt();
    Ok(EventACheck {
        n,
        endpoint,
        beta,
        replicates,
        seed,
        c_big,
        overlap_cap,
        delta,
        p_hat,
        se,
        pass: p_hat >= delta - 3.0 * se,
    })
}

/// Good-event probability with the cap and floor taken from a ledger.
pub fn event_a_probability(
    n: usize,
    endpoint: i64,
    ledger: &ConstantsLedger,
    replicates: usize,
    seed: u64,
) -> Result<EventACheck> {
    event_a_probability_with(n, endpoint, ledger.big_c, ledger.delta, replicates, seed)
}

/// Sampled slack of the disorder-comparison inequality
/// `log Z(B) - log Z(A) >= -beta * |B - A| * sqrt(overlap(A))`,
/// which holds pathwise because `log Z` is convex in the disorder with
/// gradient norm `beta * sqrt(overlap)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoEnvCheck {
    pub n: usize,
    pub endpoint: i64,
    pub beta: f64,
    pub pairs: usize,
    pub seed: u64,
    pub min_residual: f64,
    pub mean_residual: f64,
    pub violations: usize,
    pub pass: bool,
}

pub fn two_env_residual(
    n: usize,
    endpoint: i64,
    beta: f64,
    pairs: usize,
    seed: u64,
) -> Result<TwoEnvCheck> {
    if pairs < 1 {
        return Err(Error::InsufficientReplicates { got: pairs, min: 1 });
    }
    let spec = PolymerSpec::new(BridgeSpec::new(n, endpoint)?, beta)?;
    let residuals: Vec<f64> = (0..pairs)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let env_a = Environment::sample(n, derive_seed(seed, 2 * i as u64))?;
            let env_b = Environment::sample(n, derive_seed(seed, 2 * i as u64 + 1))?;
            pair_residual(&env_a, &env_b, &spec)
        })
        .collect::<Result<Vec<_>>>()?;
    let min_residual = residuals.iter().copied().fold(f64::INFINITY, f64::min);
    let mean_residual = residuals.iter().sum::<f64>() / pairs as f64;
    let violations = residuals.iter().filter(|&&r| r < -1e-9).count();
    Ok(TwoEnvCheck {
        n,
        endpoint,
        beta,
        pairs,
        seed,
        min_residual,
        mean_residual,
        violations,
        pass: violations == 0,
    })
}

/// Slack of the comparison inequality for one explicit pair of fields.
pub fn pair_residual(env_a: &Environment, env_b: &Environment, spec: &PolymerSpec) -> Result<f64> {
    let (log_a, overlap_a) = partition_and_overlap(env_a, spec)?;
    let log_b = log_partition(env_b, spec)?;
    let dist = env_a.distance(env_b)?;
    Ok(log_b - log_a + spec.beta() * dist * overlap_a.sqrt())
}

/// Empirical lower-tail curve of the normalized partition function against
/// the certified Gaussian bound `P[𝒵 < C₂ exp(-c₂ u)] <= exp(-u²/2)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailRow {
    pub u: f64,
    /// `C₂ exp(-c₂ u)` (may underflow to 0 for large `u`; the comparison is
    /// done in log space).
    pub threshold: f64,
    pub p_hat: f64,
    /// Wilson-interval half-width at one standard unit.
    pub se: f64,
    pub gauss_bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailCurve {
    pub n: usize,
    pub horizon: usize,
    pub endpoint: i64,
    pub t: f64,
    pub x: f64,
    pub beta: f64,
    pub replicates: usize,
    pub seed: u64,
    pub c_two: f64,
    pub big_c2: f64,
    pub rows: Vec<TailRow>,
    pub pass: bool,
}

pub fn lower_tail_curve(
    n: usize,
    t: f64,
    x: f64,
    u_list: &[f64],
    ledger: &ConstantsLedger,
    replicates: usize,
    seed: u64,
) -> Result<TailCurve> {
    require_replicates(replicates, 1000)?;
    if u_list.is_empty() {
        return Err(Error::invalid_parameter("u_list", "must be non-empty"));
    }
    if u_list.iter().any(|u| !u.is_finite() || *u < 0.0) {
        return Err(Error::invalid_parameter(
            "u_list",
            "tail offsets must be finite and non-negative",
        ));
    }
    let scaled = ScaledSpec::new(t, x, n)?;
    let logs = replicate_map(scaled.bridge().horizon(), replicates, seed, |env, _| {
        log_normalized_partition(env, &scaled)
    })?;
    let ln_big_c2 = -ledger.c_one;
    let rows: Vec<TailRow> = u_list
        .iter()
        .map(|&u| {
            let ln_threshold = ln_big_c2 - ledger.c_two * u;
            let successes = logs.iter().filter(|&&l| l < ln_threshold).count();
            let p_hat = successes as f64 / replicates as f64;
            let se = wilson_half_width(successes, replicates);
            let gauss_bound = (-u * u / 2.0).exp();
            TailRow {
                u,
                threshold: ln_threshold.exp(),
                p_hat,
                se,
                gauss_bound,
                pass: p_hat <= gauss_bound + 3.0 * se,
            }
        })
        .collect();
    let pass = rows.iter().all(|r| r.pass);
    Ok(TailCurve {
        n,
        horizon: scaled.bridge().horizon(),
        endpoint: scaled.bridge().endpoint(),
        t,
        x,
        beta: scaled.beta(),
        replicates,
        seed,
        c_two: ledger.c_two,
        big_c2: ledger.big_c2,
        rows,
        pass,
    })
}

/// `ln(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Negative moment `E[𝒵^{-p}]`: empirical mean against the layer-cake
/// integral of the certified tail,
/// `κ_p = C₂^{-p} (1 + p c₂ sqrt(2π) exp((p c₂)²/2) Φ(p c₂))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NegMomentCheck {
    pub n: usize,
    pub horizon: usize,
    pub endpoint: i64,
    pub t: f64,
    pub x: f64,
    pub beta: f64,
    pub p: f64,
    pub replicates: usize,
    pub seed: u64,
    pub mc_mean: f64,
    pub se: f64,
    pub ln_kappa: f64,
    /// `exp(ln_kappa)` clamped to `f64::MAX`; the certified constants are
    /// deliberately conservative, so this is often astronomically large.
    pub kappa: f64,
    pub pass: bool,
}

pub fn negative_moment_estimate(
    n: usize,
    t: f64,
    x: f64,
    p: f64,
    ledger: &ConstantsLedger,
    replicates: usize,
    seed: u64,
) -> Result<NegMomentCheck> {
    require_replicates(replicates, 1000)?;
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::invalid_parameter("p", "must be positive and finite"));
    }
    let scaled = ScaledSpec::new(t, x, n)?;
    let samples = replicate_map(scaled.bridge().horizon(), replicates, seed, |env, _| {
        Ok((-p * log_normalized_partition(env, &scaled)?).exp())
    })?;
    let (mc_mean, se) = mean_and_se(&samples);

    let pc2 = p * ledger.c_two;
    let ln_tail_term = pc2.ln()
        + 0.5 * (2.0 * std::f64::consts::PI).ln()
        + pc2 * pc2 / 2.0
        + std_normal_cdf(pc2).ln();
    let ln_kappa = p * ledger.c_one + softplus(ln_tail_term);
    let kappa = if ln_kappa >= f64::MAX.ln() {
        f64::MAX
    } else {
        ln_kappa.exp()
    };
    Ok(NegMomentCheck {
        n,
        horizon: scaled.bridge().horizon(),
        endpoint: scaled.bridge().endpoint(),
        t,
        x,
        beta: scaled.beta(),
        p,
        replicates,
        seed,
        mc_mean,
        se,
        ln_kappa,
        kappa,
        pass: mc_mean <= kappa + 3.0 * se,
    })
}

/// Distributional stability of `log 𝒵` across scales at fixed `(t, x)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub horizon: usize,
    pub endpoint: i64,
    pub beta: f64,
    /// Mean of `𝒵` itself; its population value is exactly 1.
    pub mean_z: f64,
    pub se_z: f64,
    pub mean_log: f64,
    pub sd_log: f64,
    pub se_log: f64,
    /// Two-sample KS distance to the previous scale's sample (first row: none).
    pub ks_to_prev: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub t: f64,
    pub x: f64,
    pub replicates: usize,
    pub master_seed: u64,
    pub rows: Vec<ConvergenceRow>,
}

/// Sample `log 𝒵_N(t, x)` at every scale in `n_list` and compare successive
/// empirical distributions.
///
/// Each scale draws from its own seed stream keyed by the scale value, so a
/// repeated scale reproduces its sample exactly (and has KS distance 0 to
/// itself) regardless of list position.
pub fn convergence_probe(
    n_list: &[usize],
    t: f64,
    x: f64,
    replicates: usize,
    master_seed: u64,
) -> Result<ConvergenceReport> {
    require_replicates(replicates, 2)?;
    if n_list.is_empty() {
        return Err(Error::invalid_parameter("n_list", "must be non-empty"));
    }
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(n_list.len());
    let mut prev_sample: Option<Vec<f64>> = None;
    for &n in n_list {
        let scaled = ScaledSpec::new(t, x, n)?;
        let stream = derive_seed(master_seed, n as u64);
        let mut sample = replicate_map(scaled.bridge().horizon(), replicates, stream, |env, _| {
            log_normalized_partition(env, &scaled)
        })?;
        let (mean_log, se_log) = mean_and_se(&sample);
        let sd_log = se_log * (replicates as f64).sqrt();
        let zs: Vec<f64> = sample.iter().map(|l| l.exp()).collect();
        let (mean_z, se_z) = mean_and_se(&zs);
        sample.sort_by(f64::total_cmp);
        let ks_to_prev = prev_sample.as_deref().map(|prev| ks_distance(prev, &sample));
        rows.push(ConvergenceRow {
            n,
            horizon: scaled.bridge().horizon(),
            endpoint: scaled.bridge().endpoint(),
            beta: scaled.beta(),
            mean_z,
            se_z,
            mean_log,
            sd_log,
            se_log,
            ks_to_prev,
        });
        prev_sample = Some(sample);
    }
    Ok(ConvergenceReport {
        t,
        x,
        replicates,
        master_seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replica::conditioned_overlap_stats;

    #[test]
    fn zero_disorder_coupling_gives_exact_mean() {
        let check = mean_partition_check(12, 0.0, 0, 200, 7).unwrap();
        assert!(check.pass);
        assert!((check.mean_ratio - 1.0).abs() < 1e-12, "{}", check.mean_ratio);
    }

    #[test]
    fn mean_partition_concentrates_at_scaled_coupling() {
        let n = 16;
        let check = mean_partition_check(n, (n as f64).powf(-0.25), 0, 4000, 1001).unwrap();
        assert!(
            check.pass,
            "mean ratio {} +- {} strays from 1",
            check.mean_ratio, check.se
        );
    }

    #[test]
    fn empirical_second_moment_matches_pair_computation() {
        let n = 16;
        let check = second_moment_fubini_check(n, 0, 20_000, 31_337).unwrap();
        assert!(
            check.pass,
            "MC {} +- {} vs exact {}",
            check.mc_second_moment, check.se, check.exact
        );
        // The exact value itself is the tilted pair expectation.
        let alpha = (n as f64).powf(-0.5);
        let direct = conditioned_overlap_stats(n, alpha, 0).unwrap().mgf;
        assert!((check.exact - direct).abs() < 1e-12);
    }

    #[test]
    fn forced_path_second_moment_matches_closed_form() {
        // endpoint = N admits a single path, so L_N = N and the conditioned
        // mgf collapses to exp(N^{1/2}).
        let n = 4usize;
        let check = second_moment_fubini_check(n, n as i64, 2000, 2_718).unwrap();
        let forced = (n as f64).sqrt().exp();
        assert!((check.exact - forced).abs() < 1e-12 * forced);
        assert!(check.pass, "MC {} vs forced {}", check.mc_second_moment, forced);
    }

    #[test]
    fn large_partition_probability_beats_second_moment_floor() {
        // With the overlap cap effectively disabled, the good event reduces to
        // {Z >= E[Z]/2}, whose probability is floored by 1/(4 E[(Z/EZ)^2]).
        for n in [8usize, 32] {
            let alpha = (n as f64).powf(-0.5);
            let mgf = conditioned_overlap_stats(n, alpha, 0).unwrap().mgf;
            let floor = 0.25 / mgf;
            let check = event_a_probability_with(n, 0, 1e9, floor, 4000, 271).unwrap();
            assert!(
                check.pass,
                "N={n}: p_hat {} +- {} under floor {floor}",
                check.p_hat, check.se
            );
        }
    }

    #[test]
    fn event_probability_is_monotone_in_the_overlap_cap() {
        let tight = event_a_probability_with(16, 0, 0.05, 0.0, 1000, 99).unwrap();
        let loose = event_a_probability_with(16, 0, 10.0, 0.0, 1000, 99).unwrap();
        assert!(tight.p_hat <= loose.p_hat);
    }

    #[test]
    fn comparison_residuals_are_never_negative() {
        let n = 16;
        let check = two_env_residual(n, 0, (n as f64).powf(-0.25), 500, 5150).unwrap();
        assert_eq!(check.violations, 0);
        assert!(check.pass);
        assert!(check.min_residual >= -1e-9, "min {}", check.min_residual);
        assert!(check.mean_residual > 0.0);
    }

    #[test]
    fn identical_and_shifted_fields_give_closed_form_residuals() {
        let n = 10usize;
        let beta = 0.6;
        let spec = PolymerSpec::new(BridgeSpec::new(n, 0).unwrap(), beta).unwrap();
        let env = Environment::sample(n, 33).unwrap();
        let same = pair_residual(&env, &env, &spec).unwrap();
        assert!((same - 0.0).abs() < 1e-12, "identical fields: {same}");

        // Shifting every site by c > 0 moves log Z by exactly beta*c*N, and
        // the distance term only adds more slack.
        let c = 0.75;
        let shifted = env.shift(c);
        let res = pair_residual(&env, &shifted, &spec).unwrap();
        let floor = beta * c * n as f64;
        assert!(
            res >= floor - 1e-9,
            "shift residual {res} under floor {floor}"
        );
    }

    #[test]
    fn constants_pipeline_algebra_holds() {
        let ledger = constants_pipeline(&[8, 16], 1.0, 0.0).unwrap();
        let mgf8 = conditioned_overlap_stats(8, 8f64.powf(-0.5), 0).unwrap();
        let mgf16 = conditioned_overlap_stats(16, 16f64.powf(-0.5), 0).unwrap();
        assert_eq!(ledger.l_hat, mgf8.mgf.max(mgf16.mgf));
        let k_direct = (mgf8.tilted_mean / 8f64.sqrt()).max(mgf16.tilted_mean / 16f64.sqrt());
        assert_eq!(ledger.k_hat, k_direct);
        assert!((ledger.delta - 1.0 / (8.0 * ledger.l_hat)).abs() < 1e-15);
        assert!((ledger.big_c - 32.0 * ledger.k_hat * ledger.l_hat).abs() < 1e-12);
        assert!((ledger.big_c2 - (-ledger.c_one).exp()).abs() < 1e-15);
        assert!((ledger.c_prime * ledger.c_prime - 2.0 * (1.0 / ledger.delta).ln()).abs() < 1e-12);
        assert!(ledger.delta > 0.0 && ledger.delta < 1.0);
        assert!(
            ledger.l_hat > 0.0
                && ledger.k_hat > 0.0
                && ledger.big_c > 0.0
                && ledger.c_prime > 0.0
                && ledger.c_double_prime > 0.0
                && ledger.c_one > 0.0
                && ledger.big_c2 > 0.0
        );
    }

    #[test]
    fn tail_curve_is_monotone_and_respects_the_bound() {
        let ledger = constants_pipeline(&[8, 16], 1.0, 0.0).unwrap();
        let curve =
            lower_tail_curve(16, 1.0, 0.0, &[0.0, 0.5, 1.0, 2.0], &ledger, 5000, 8080).unwrap();
        assert!(curve.pass);
        for w in curve.rows.windows(2) {
            assert!(
                w[1].p_hat <= w[0].p_hat,
                "tail curve must be non-increasing in u"
            );
            assert!(w[1].threshold <= w[0].threshold);
        }
        // u = 0 bound is 1: vacuously satisfied however the sample falls.
        assert!(curve.rows[0].gauss_bound == 1.0 && curve.rows[0].pass);
    }

    #[test]
    fn negative_moments_pass_and_obey_jensen() {
        let ledger = constants_pipeline(&[8, 16], 1.0, 0.0).unwrap();
        let one = negative_moment_estimate(16, 1.0, 0.0, 1.0, &ledger, 3000, 1212).unwrap();
        let two = negative_moment_estimate(16, 1.0, 0.0, 2.0, &ledger, 3000, 1212).unwrap();
        assert!(one.pass && two.pass);
        // Same seed, same sample: E[X]^2 <= E[X^2] exactly on the sample.
        assert!(one.mc_mean * one.mc_mean <= two.mc_mean + 1e-12);
        assert!(one.ln_kappa < two.ln_kappa);
        assert!(one.kappa >= 1.0);
    }

    #[test]
    fn direct_and_layer_cake_negative_moments_agree() {
        // The layer-cake identity E[X] = ∫ P[X > s] ds, evaluated on an
        // independent sample of X = 𝒵^{-1}, must agree with the direct mean
        // within combined MC error. Integrating the empirical survival
        // function exactly reproduces that sample's mean, so this reduces to
        // comparing two independent estimates.
        let ledger = constants_pipeline(&[8, 16], 1.0, 0.0).unwrap();
        let direct = negative_moment_estimate(16, 1.0, 0.0, 1.0, &ledger, 4000, 555).unwrap();
        let scaled = ScaledSpec::new(1.0, 0.0, 16).unwrap();
        let other = replicate_map(16, 4000, 556, |env, _| {
            Ok((-log_normalized_partition(env, &scaled)?).exp())
        })
        .unwrap();
        let mut sorted = other.clone();
        sorted.sort_by(f64::total_cmp);
        // ∫_0^∞ P̂[X > s] ds with P̂ the empirical survival function: the area
        // is Σ_i (x_(i) - x_(i-1)) * (M - i + 1)/M, telescoping to the mean.
        let m = sorted.len() as f64;
        let mut integral = 0.0;
        let mut prev = 0.0;
        for (i, &x) in sorted.iter().enumerate() {
            integral += (x - prev) * ((sorted.len() - i) as f64 / m);
            prev = x;
        }
        let (other_mean, other_se) = mean_and_se(&other);
        assert!((integral - other_mean).abs() < 1e-9, "layer-cake identity");
        assert!(
            (direct.mc_mean - integral).abs() <= 3.0 * (direct.se + other_se),
            "direct {} +- {} vs integrated {} +- {}",
            direct.mc_mean,
            direct.se,
            integral,
            other_se
        );
    }

    #[test]
    fn convergence_probe_reuses_streams_per_scale() {
        let report = convergence_probe(&[16, 16, 32], 1.0, 0.0, 400, 2024).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert!(report.rows[0].ks_to_prev.is_none());
        assert_eq!(report.rows[1].ks_to_prev, Some(0.0));
        assert_eq!(report.rows[0].mean_log, report.rows[1].mean_log);
        let ks = report.rows[2].ks_to_prev.unwrap();
        assert!(ks > 0.0 && ks < 1.0);
        for row in &report.rows {
            assert!(
                (row.mean_z - 1.0).abs() <= 3.0 * row.se_z,
                "N={}: mean 𝒵 {} +- {}",
                row.n,
                row.mean_z,
                row.se_z
            );
        }
    }

    #[test]
    fn replicate_map_is_independent_of_worker_count() {
        let run = |threads: usize| -> Vec<f64> {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                replicate_map(12, 64, 777, |env, i| {
                    Ok(env.values()[i % env.values().len()])
                })
                .unwrap()
            })
        };
        let single = run(1);
        let quad = run(4);
        assert_eq!(single, quad);
    }

    #[test]
    fn ks_distance_handles_ties_and_extremes() {
        assert_eq!(ks_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(ks_distance(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        assert!((ks_distance(&[1.0, 3.0], &[2.0, 4.0]) - 0.5).abs() < 1e-15);
        let d = ks_distance(&[1.0, 1.0, 2.0], &[1.0, 2.0, 2.0]);
        assert!((d - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn wilson_half_width_is_positive_and_symmetric() {
        let at_zero = wilson_half_width(0, 100);
        assert!(at_zero > 0.0);
        let lo = wilson_half_width(10, 100);
        let hi = wilson_half_width(90, 100);
        assert!((lo - hi).abs() < 1e-15);
        assert!(wilson_half_width(50, 100) > lo);
    }

    #[test]
    fn replicate_validation() {
        assert!(matches!(
            mean_partition_check(8, 0.5, 0, 99, 3),
            Err(Error::InsufficientReplicates { got: 99, min: 100 })
        ));
        assert!(matches!(
            lower_tail_curve(
                8,
                1.0,
                0.0,
                &[0.5],
                &constants_pipeline(&[8], 1.0, 0.0).unwrap(),
                999,
                1
            ),
            Err(Error::InsufficientReplicates { got: 999, min: 1000 })
        ));
        assert!(replicate_map(4, 0, 1, |_, _| Ok(())).is_err());
    }
}
