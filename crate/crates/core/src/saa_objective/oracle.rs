//! Deterministic quadrature for small `(d, p)`, used as a test oracle.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::measure_change::BaselineIntensity;

/// Fewest Gauss-Hermite nodes per Gaussian dimension.
pub const MIN_NODES: usize = 64;

/// Largest Poisson truncation point tried before giving up.
const MAX_COUNT: u32 = 10_000;

/// Gauss-Hermite rule for the standard normal weight `e^{-x²/2}/√(2π)`.
///
/// Nodes and weights come from the eigen-decomposition of the Jacobi
/// matrix of the probabilists' Hermite polynomials; weights sum to 1.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let off = (k as f64).sqrt();
        jacobi[(k - 1, k)] = off;
        jacobi[(k, k - 1)] = off;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], v * v)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // symmetrize to cancel round-off in odd moments
    let nodes: Vec<f64> = (0..n)
        .map(|i| 0.5 * (pairs[i].0 - pairs[n - 1 - i].0))
        .collect();
    let weights: Vec<f64> = (0..n)
        .map(|i| 0.5 * (pairs[i].1 + pairs[n - 1 - i].1))
        .collect();
    let total: f64 = weights.iter().sum();
    (nodes, weights.into_iter().map(|w| w / total).collect())
}

/// Poisson pmf on `0..=k_max` where the tail beyond `k_max` is below `tol`.
fn truncated_pmf(mu: f64, tol: f64) -> Result<Vec<f64>> {
    let mut pmf = vec![(-mu).exp()];
    let mut cdf = pmf[0];
    let mut k = 0u32;
    // once past the mode, the tail is bounded by the next term over (1 - mu/(k+2))
    loop {
        let next = pmf[k as usize] * mu / (k + 1) as f64;
        let ratio = mu / (k + 2) as f64;
        let tail_bound = if ratio < 1.0 {
            next / (1.0 - ratio)
        } else {
            f64::INFINITY
        };
        if tail_bound < tol && 1.0 - cdf < tol.max(4.0 * f64::EPSILON) {
            return Ok(pmf);
        }
        k += 1;
        if k > MAX_COUNT {
            return Err(Error::TruncationUnreachable(format!(
                "Poisson({mu}) tail stays above {tol} past {MAX_COUNT} terms"
            )));
        }
        pmf.push(next);
        cdf += next;
    }
}

/// `E[f(G, N)]` with `G ~ N(0, I_d)` and independent `N_i ~ Poisson(mu_i)`.
///
/// Gaussian dimensions use [`MIN_NODES`]-point Gauss-Hermite rules;
/// Poisson sums stop where the remaining tail mass is below `tol`.
pub fn brute_force_expectation<F>(f: F, mu: &BaselineIntensity, d: usize, tol: f64) -> Result<f64>
where
    F: Fn(&[f64], &[u32]) -> f64,
{
    brute_force_with_nodes(f, mu, d, tol, MIN_NODES)
}

pub fn brute_force_with_nodes<F>(
    f: F,
    mu: &BaselineIntensity,
    d: usize,
    tol: f64,
    nodes: usize,
) -> Result<f64>
where
    F: Fn(&[f64], &[u32]) -> f64,
{
    let p = mu.len();
    if d > 3 || p > 3 {
        return Err(Error::invalid("dimension", "the oracle handles d <= 3 and p <= 3"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", "must be positive"));
    }
    let nodes = nodes.max(MIN_NODES);
    let (x, w) = gauss_hermite(nodes);
    let pmfs = mu
        .as_slice()
        .iter()
        .map(|&m| truncated_pmf(m, tol / p.max(1) as f64))
        .collect::<Result<Vec<_>>>()?;

    let gauss_total = nodes.pow(d as u32);
    let count_total: usize = pmfs.iter().map(Vec::len).product();
    let mut g = vec![0.0; d];
    let mut n = vec![0u32; p];
    let mut sum = 0.0;
    for gi in 0..gauss_total {
        let mut idx = gi;
        let mut wg = 1.0;
        for slot in g.iter_mut() {
            let k = idx % nodes;
            idx /= nodes;
            *slot = x[k];
            wg *= w[k];
        }
        let mut inner = 0.0;
        for ci in 0..count_total {
            let mut idx = ci;
            let mut wp = 1.0;
            for (slot, pmf) in n.iter_mut().zip(&pmfs) {
                let k = idx % pmf.len();
                idx /= pmf.len();
                *slot = k as u32;
                wp *= pmf[k];
            }
            inner += wp * f(&g, &n);
        }
        sum += wg * inner;
    }
    Ok(sum)
}
