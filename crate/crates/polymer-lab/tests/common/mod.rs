//! Brute-force enumeration oracles shared by the integration tests.
//!
//! Everything here recomputes quantities by exhaustive enumeration with no
//! dynamic programming, no log-space tricks, and no shared code with the
//! library internals, so agreement is evidence rather than tautology.
#![allow(dead_code)]

use polymer_lab::environment::Environment;

/// All nearest-neighbour bridge paths `S_1..S_n` from the origin to
/// `endpoint`, enumerated by step bitmask. Only sensible for small `n`.
pub fn bridge_paths(n: usize, endpoint: i64) -> Vec<Vec<i64>> {
    assert!(n >= 1 && n <= 20, "enumeration oracle needs a small horizon");
    let mut paths = Vec::new();
    for mask in 0u32..1 << n {
        let mut pos = 0i64;
        let mut path = Vec::with_capacity(n);
        for i in 0..n {
            pos += if mask >> i & 1 == 1 { 1 } else { -1 };
            path.push(pos);
        }
        if path[n - 1] == endpoint {
            paths.push(path);
        }
    }
    paths
}

/// `log E[exp(beta * sum_i w(i, S_i)) | S_n = endpoint]` by direct summation.
pub fn oracle_log_partition(env: &Environment, n: usize, endpoint: i64, beta: f64) -> f64 {
    let paths = bridge_paths(n, endpoint);
    assert!(!paths.is_empty(), "endpoint must be reachable");
    let total: f64 = paths
        .iter()
        .map(|p| {
            let field: f64 = p
                .iter()
                .enumerate()
                .map(|(idx, &y)| env.value(idx + 1, y))
                .sum();
            (beta * field).exp()
        })
        .sum();
    (total / paths.len() as f64).ln()
}

/// Endpoint-pinned Gibbs marginals, slice by slice: `out[i-1]` maps the
/// slice-`i` sites `y = -i, -i+2, .., i` (index `(y+i)/2`) to probabilities.
pub fn oracle_marginals(env: &Environment, n: usize, endpoint: i64, beta: f64) -> Vec<Vec<f64>> {
    let paths = bridge_paths(n, endpoint);
    assert!(!paths.is_empty(), "endpoint must be reachable");
    let mut mass: Vec<Vec<f64>> = (1..=n).map(|i| vec![0.0; i + 1]).collect();
    let mut total = 0.0f64;
    for p in &paths {
        let field: f64 = p
            .iter()
            .enumerate()
            .map(|(idx, &y)| env.value(idx + 1, y))
            .sum();
        let weight = (beta * field).exp();
        total += weight;
        for (idx, &y) in p.iter().enumerate() {
            let i = idx + 1;
            mass[idx][((y + i as i64) / 2) as usize] += weight;
        }
    }
    for slice in &mut mass {
        for v in slice.iter_mut() {
            *v /= total;
        }
    }
    mass
}

/// Expected replica coincidence count `sum_i sum_y mu_i(y)^2` of the
/// quenched Gibbs measure, from the enumerated marginals.
pub fn oracle_overlap(env: &Environment, n: usize, endpoint: i64, beta: f64) -> f64 {
    oracle_marginals(env, n, endpoint, beta)
        .iter()
        .map(|slice| slice.iter().map(|p| p * p).sum::<f64>())
        .sum()
}

/// Conditioned pair functionals over independent bridges: returns
/// `(E[e^{alpha L}], E[L e^{alpha L}])` with `L = #{1 <= i <= n : S_i = S'_i}`.
pub fn oracle_pair_mgf(n: usize, endpoint: i64, alpha: f64) -> (f64, f64) {
    let paths = bridge_paths(n, endpoint);
    assert!(!paths.is_empty(), "endpoint must be reachable");
    let mut mgf = 0.0f64;
    let mut tilted = 0.0f64;
    for a in &paths {
        for b in &paths {
            let coincidences = a
                .iter()
                .zip(b.iter())
                .filter(|(x, y)| x == y)
                .count() as f64;
            let weight = (alpha * coincidences).exp();
            mgf += weight;
            tilted += coincidences * weight;
        }
    }
    let count = (paths.len() * paths.len()) as f64;
    (mgf / count, tilted / count)
}

/// Pinned lazy-walk functionals by base-3 step-code enumeration: returns
/// `(E[e^{beta V}], E[V e^{beta V}])` where the walk steps -1, 0, +1 with
/// probabilities 1/4, 1/2, 1/4 and `V = #{1 <= i <= m : q_i = 0}`.
pub fn oracle_pinning(m: usize, beta: f64) -> (f64, f64) {
    assert!(m >= 1 && m <= 12, "enumeration oracle needs a small horizon");
    let mut z = 0.0f64;
    let mut tilted = 0.0f64;
    for code in 0..3usize.pow(m as u32) {
        let mut c = code;
        let mut q = 0i64;
        let mut prob = 1.0f64;
        let mut visits = 0.0f64;
        for _ in 0..m {
            let step = c % 3;
            c /= 3;
            match step {
                0 => {
                    q -= 1;
                    prob *= 0.25;
                }
                1 => prob *= 0.5,
                _ => {
                    q += 1;
                    prob *= 0.25;
                }
            }
            if q == 0 {
                visits += 1.0;
            }
        }
        let weight = prob * (beta * visits).exp();
        z += weight;
        tilted += visits * weight;
    }
    (z, tilted)
}

/// Relative agreement with a unit floor, so near-zero values compare sanely.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Parity-respecting endpoints reachable at horizon `n`.
pub fn reachable_endpoints(n: usize) -> Vec<i64> {
    let n_i = n as i64;
    (-n_i..=n_i).step_by(2).collect()
}
