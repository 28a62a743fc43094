//! Gaussian mean shift and Poisson intensity change.
//!
//! Under the tilted law the Gaussian vector is `G + theta` and the counts are
//! Poisson with parameters `lambda`. The likelihood ratio back to the
//! baseline law `(G, N^mu)` is
//!
//! ```text
//! exp(-theta.g - |theta|^2/2) * prod_i exp(lambda_i - mu_i) (mu_i/lambda_i)^{n_i}
//! ```
//!
//! All ratios are handled in log space; `(mu/lambda)^n` overflows quickly
//! for large counts.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::GridSpec;

/// Baseline Poisson parameters, one per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineIntensity {
    mu: Vec<f64>,
    log_mu: Vec<f64>,
}

impl BaselineIntensity {
    pub fn new(mu: Vec<f64>) -> Result<Self> {
        check_positive(&mu)?;
        let log_mu = mu.iter().map(|m| m.ln()).collect();
        Ok(Self { mu, log_mu })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.mu
    }

    pub fn log(&self) -> &[f64] {
        &self.log_mu
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.mu.iter().sum()
    }
}

/// Full-dimension tilt: Gaussian shift `theta` and Poisson parameters `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ISParams {
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl ISParams {
    pub fn new(theta: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        check_positive(&lambda)?;
        Ok(Self { theta, lambda })
    }

    /// The tilt that leaves the baseline law unchanged.
    pub fn identity(d: usize, base: &BaselineIntensity) -> Self {
        Self {
            theta: vec![0.0; d],
            lambda: base.as_slice().to_vec(),
        }
    }
}

/// Low-dimensional tilt, mapped to [`ISParams`] through [`ReductionMaps`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedISParams {
    pub vartheta: Vec<f64>,
    pub lambdatilde: Vec<f64>,
}

impl ReducedISParams {
    pub fn new(vartheta: Vec<f64>, lambdatilde: Vec<f64>) -> Result<Self> {
        check_positive(&lambdatilde)?;
        Ok(Self {
            vartheta,
            lambdatilde,
        })
    }

    pub fn dim(&self) -> usize {
        self.vartheta.len() + self.lambdatilde.len()
    }

    /// Concatenation `(vartheta, lambdatilde)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.vartheta.clone();
        v.extend_from_slice(&self.lambdatilde);
        v
    }

    pub fn from_slice(x: &[f64], theta_dim: usize) -> Self {
        Self {
            vartheta: x[..theta_dim].to_vec(),
            lambdatilde: x[theta_dim..].to_vec(),
        }
    }
}

/// Linear maps `A` (d x d') and `B` (p x p') restricting the tilt to a
/// subspace: `theta = A vartheta`, `lambda = B lambdatilde`.
#[derive(Debug, Clone)]
pub struct ReductionMaps {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    a_rows: Vec<Vec<(usize, f64)>>,
    b_rows: Vec<Vec<(usize, f64)>>,
}

impl PartialEq for ReductionMaps {
    fn eq(&self, other: &Self) -> bool {
        self.a == other.a && self.b == other.b
    }
}

fn sparse_rows(m: &DMatrix<f64>) -> Vec<Vec<(usize, f64)>> {
    (0..m.nrows())
        .map(|r| {
            (0..m.ncols())
                .filter_map(|c| {
                    let v = m[(r, c)];
                    (v != 0.0).then_some((c, v))
                })
                .collect()
        })
        .collect()
}

fn full_column_rank(m: &DMatrix<f64>) -> bool {
    if m.ncols() == 0 {
        return true;
    }
    if m.ncols() > m.nrows() {
        return false;
    }
    let gram = m.transpose() * m;
    let scale = gram.diagonal().max().max(f64::MIN_POSITIVE);
    let eig = gram.symmetric_eigenvalues();
    eig.min() > 1e-12 * scale
}

impl ReductionMaps {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !full_column_rank(&a) {
            return Err(Error::InvalidReduction(
                "A must have full column rank".into(),
            ));
        }
        if b.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidReduction(
                "B must have nonnegative finite entries".into(),
            ));
        }
        if !full_column_rank(&b) {
            return Err(Error::InvalidReduction(
                "B must have full column rank".into(),
            ));
        }
        if let Some(r) = (0..b.nrows()).find(|&r| b.row(r).iter().all(|&v| v == 0.0)) {
            return Err(Error::InvalidReduction(format!(
                "row {r} of B is zero, so B maps positive intensities to a zero intensity"
            )));
        }
        let a_rows = sparse_rows(&a);
        let b_rows = sparse_rows(&b);
        Ok(Self {
            a,
            b,
            a_rows,
            b_rows,
        })
    }

    /// `A = I_d`, `B = I_p`: the full strategy.
    pub fn identity(d: usize, p: usize) -> Self {
        Self::new(DMatrix::identity(d, d), DMatrix::identity(p, p))
            .expect("identity maps are valid")
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Nonzero entries of row `r` of `A` as `(column, value)`.
    pub fn a_row(&self, r: usize) -> &[(usize, f64)] {
        &self.a_rows[r]
    }

    pub fn b_row(&self, r: usize) -> &[(usize, f64)] {
        &self.b_rows[r]
    }

    pub fn full_dims(&self) -> (usize, usize) {
        (self.a.nrows(), self.b.nrows())
    }

    pub fn reduced_dims(&self) -> (usize, usize) {
        (self.a.ncols(), self.b.ncols())
    }

    /// `Aᵀ x` for a full-dimension Gaussian vector.
    pub fn project_theta(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &xr) in x.iter().enumerate() {
            for &(c, v) in &self.a_rows[r] {
                out[c] += v * xr;
            }
        }
    }

    /// `Bᵀ x` for a full-dimension Poisson vector.
    pub fn project_lambda(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &xr) in x.iter().enumerate() {
            for &(c, v) in &self.b_rows[r] {
                out[c] += v * xr;
            }
        }
    }

    /// Least-squares preimage of a full intensity vector under `B`.
    pub fn lambda_preimage(&self, base: &BaselineIntensity) -> Result<Vec<f64>> {
        Error::check_len("baseline intensity", self.b.nrows(), base.len())?;
        let mu = DVector::from_column_slice(base.as_slice());
        let gram = self.b.transpose() * &self.b;
        let rhs = self.b.transpose() * mu;
        let chol = gram.cholesky().ok_or_else(|| {
            Error::InvalidReduction("BᵀB is not positive definite".into())
        })?;
        let sol = chol.solve(&rhs);
        let out: Vec<f64> = sol.iter().copied().collect();
        check_positive(&out)?;
        Ok(out)
    }
}

/// Maps a reduced point to the full tilt `(A vartheta, B lambdatilde)`.
pub fn apply_reduction(maps: &ReductionMaps, red: &ReducedISParams) -> Result<ISParams> {
    let (dr, pr) = maps.reduced_dims();
    Error::check_len("reduced Gaussian shift", dr, red.vartheta.len())?;
    Error::check_len("reduced intensity", pr, red.lambdatilde.len())?;
    check_positive(&red.lambdatilde)?;
    let (d, p) = maps.full_dims();
    let mut theta = vec![0.0; d];
    for (r, t) in theta.iter_mut().enumerate() {
        *t = maps.a_rows[r].iter().map(|&(c, v)| v * red.vartheta[c]).sum();
    }
    let mut lambda = vec![0.0; p];
    for (r, l) in lambda.iter_mut().enumerate() {
        *l = maps.b_rows[r]
            .iter()
            .map(|&(c, v)| v * red.lambdatilde[c])
            .sum();
    }
    ISParams::new(theta, lambda)
}

/// Reduction to a constant Gaussian drift per asset and a time-constant
/// intensity per jump driver on the grid.
///
/// `A[(j-1)I + i, i] = sqrt(t_j - t_{j-1})` and
/// `B[(j-1)K + k, k] = t_j - t_{j-1}` where `K` is the number of jump
/// drivers (`1` for a single asset, `I + 1` otherwise).
pub fn esscher_maps(grid: &GridSpec, assets: usize) -> Result<ReductionMaps> {
    esscher_maps_from_times(grid.times(), assets)
}

/// As [`esscher_maps`] for an explicit list of monitoring times `t_1 < ... < t_J`.
pub fn esscher_maps_from_times(times: &[f64], assets: usize) -> Result<ReductionMaps> {
    if times.is_empty() {
        return Err(Error::NonIncreasingGrid);
    }
    if assets == 0 {
        return Err(Error::invalid("assets", "need at least one asset"));
    }
    let drivers = crate::models::driver_count(assets);
    let steps = times.len();
    let mut a = DMatrix::zeros(assets * steps, assets);
    let mut b = DMatrix::zeros(drivers * steps, drivers);
    let mut prev = 0.0;
    for (j, &t) in times.iter().enumerate() {
        let dt = t - prev;
        if !(dt > 0.0) || !t.is_finite() {
            return Err(Error::NonIncreasingGrid);
        }
        for i in 0..assets {
            a[(j * assets + i, i)] = dt.sqrt();
        }
        for k in 0..drivers {
            b[(j * drivers + k, k)] = dt;
        }
        prev = t;
    }
    ReductionMaps::new(a, b)
}

/// Precomputed kernel of a fixed tilt, for repeated weight evaluation.
#[derive(Debug, Clone)]
pub struct TiltKernel {
    theta: Vec<f64>,
    lambda: Vec<f64>,
    log_mu_over_lambda: Vec<f64>,
    theta_sq: f64,
    intensity_shift: f64,
}

impl TiltKernel {
    pub fn new(params: &ISParams, base: &BaselineIntensity) -> Result<Self> {
        Error::check_len("tilt intensity", base.len(), params.lambda.len())?;
        check_positive(&params.lambda)?;
        let log_mu_over_lambda = base
            .log()
            .iter()
            .zip(&params.lambda)
            .map(|(lm, l)| lm - l.ln())
            .collect();
        let intensity_shift = params
            .lambda
            .iter()
            .zip(base.as_slice())
            .map(|(l, m)| l - m)
            .sum();
        Ok(Self {
            theta: params.theta.clone(),
            lambda: params.lambda.clone(),
            log_mu_over_lambda,
            theta_sq: params.theta.iter().map(|t| t * t).sum(),
            intensity_shift,
        })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// `-theta.g + sum_i n_i log(mu_i/lambda_i)`, the part shared by both weights.
    #[inline]
    fn sample_part(&self, g: &[f64], n: &[u32]) -> f64 {
        let dot: f64 = self.theta.iter().zip(g).map(|(t, x)| t * x).sum();
        let counts: f64 = n
            .iter()
            .zip(&self.log_mu_over_lambda)
            .filter(|(&k, _)| k > 0)
            .map(|(&k, l)| k as f64 * l)
            .sum();
        counts - dot
    }

    /// Log of the likelihood ratio at the standard normal draw `g` and tilted counts `n`.
    #[inline]
    pub fn log_likelihood_ratio(&self, g: &[f64], n: &[u32]) -> f64 {
        self.sample_part(g, n) - 0.5 * self.theta_sq + self.intensity_shift
    }

    /// Log of the second-moment weight evaluated at baseline samples `(g, n)`.
    #[inline]
    pub fn log_variance_weight(&self, g: &[f64], n: &[u32]) -> f64 {
        self.sample_part(g, n) + 0.5 * self.theta_sq + self.intensity_shift
    }
}

fn check_dims(g: &[f64], n: &[u32], params: &ISParams, base: &BaselineIntensity) -> Result<()> {
    Error::check_len("Gaussian vector", params.theta.len(), g.len())?;
    Error::check_len("count vector", params.lambda.len(), n.len())?;
    Error::check_len("baseline intensity", params.lambda.len(), base.len())
}

/// `-theta.g - |theta|^2/2 + sum_i [(lambda_i - mu_i) + n_i (log mu_i - log lambda_i)]`.
pub fn log_likelihood_ratio(
    g: &[f64],
    n: &[u32],
    params: &ISParams,
    base: &BaselineIntensity,
) -> Result<f64> {
    check_dims(g, n, params, base)?;
    Ok(TiltKernel::new(params, base)?.log_likelihood_ratio(g, n))
}

/// `-theta.g + |theta|^2/2 + sum_i [(lambda_i - mu_i) + n_i (log mu_i - log lambda_i)]`.
///
/// `f(g, n)^2 * exp(result)` is the integrand of the second moment of the
/// importance sampling estimator written under the baseline law.
pub fn log_variance_weight(
    g: &[f64],
    n: &[u32],
    params: &ISParams,
    base: &BaselineIntensity,
) -> Result<f64> {
    check_dims(g, n, params, base)?;
    Ok(TiltKernel::new(params, base)?.log_variance_weight(g, n))
}

/// Smallest `k >= 0` with `u < P(N <= k)` for `N ~ Poisson(lam)`.
///
/// With `u` fixed the result is non-decreasing in `lam`, which couples the
/// counts drawn at different intensities.
pub fn poisson_inverse_cdf(u: f64, lam: f64) -> Result<u32> {
    if !(0.0..1.0).contains(&u) {
        return Err(Error::UniformOutOfRange(u));
    }
    if !(lam > 0.0) || !lam.is_finite() {
        return Err(Error::NonPositiveIntensity {
            index: 0,
            value: lam,
        });
    }
    Ok(poisson_inverse_cdf_unchecked(u, lam))
}

/// Loop cap; the tail event beyond it maps to the cap.
fn count_cap(lam: f64) -> u32 {
    (lam + 20.0 * lam.sqrt() + 50.0).ceil() as u32
}

#[inline]
pub(crate) fn poisson_inverse_cdf_unchecked(u: f64, lam: f64) -> u32 {
    let cap = count_cap(lam);
    if lam <= 30.0 {
        let mut pmf = (-lam).exp();
        let mut cdf = pmf;
        let mut k = 0u32;
        while u >= cdf && k < cap {
            k += 1;
            pmf *= lam / k as f64;
            cdf += pmf;
        }
        k
    } else {
        // log-space recurrence: exp(-lam) underflows for large lam
        let ln_lam = lam.ln();
        let mut log_pmf = -lam;
        let mut cdf = log_pmf.exp();
        let mut k = 0u32;
        while u >= cdf && k < cap {
            k += 1;
            log_pmf += ln_lam - (k as f64).ln();
            cdf += log_pmf.exp();
        }
        k
    }
}

fn check_positive(v: &[f64]) -> Result<()> {
    match v.iter().position(|&x| !(x > 0.0) || !x.is_finite()) {
        Some(index) => Err(Error::NonPositiveIntensity {
            index,
            value: v[index],
        }),
        None => Ok(()),
    }
}
