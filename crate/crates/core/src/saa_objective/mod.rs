//! Sample average approximation of the second moment of the importance
//! sampling estimator, and its log-reformulation used by Newton's method.
//!
//! For a first-stage batch `(G^j, N^j)` drawn under the baseline law,
//!
//! ```text
//! v_n(θ, λ) = (1/m) Σ_j f_j² exp(-θ·G^j + |θ|²/2) Π_i exp(λ_i - μ_i) (μ_i/λ_i)^{N^j_i}
//! u_n(θ, λ) = |θ|²/2 + Σ_i λ_i + log (1/m) Σ_j f_j² exp(-θ·G^j) Π_i (μ_i/λ_i)^{N^j_i}
//! ```
//!
//! so `u_n = log v_n + Σ μ_i` and both share their minimizer. Everything is
//! evaluated on the reduced point `(ϑ, λ̃)` with `θ = Aϑ`, `λ = Bλ̃`.

pub mod oracle;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measure_change::{apply_reduction, BaselineIntensity, ReducedISParams, ReductionMaps};
use crate::optimizer::Objective;
use crate::problem::Integrand;
use crate::rng::{count_seed, fill_poisson, fill_standard_normal, sample_rng};

/// Rows per reduction chunk. Sums are taken in fixed order within and
/// across chunks, so results only depend on this value.
pub const DEFAULT_CHUNK: usize = 1024;

/// First-stage draws with cached squared payoffs.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    d: usize,
    p: usize,
    gaussians: Vec<f64>,
    counts: Vec<u32>,
    fsq: Vec<f64>,
    base: BaselineIntensity,
}

impl SampleBatch {
    /// Assembles a batch from row-major `gaussians` (m x d) and `counts` (m x p).
    pub fn from_parts(
        gaussians: Vec<f64>,
        counts: Vec<u32>,
        fsq: Vec<f64>,
        base: BaselineIntensity,
        d: usize,
    ) -> Result<Self> {
        let m = fsq.len();
        let p = base.len();
        Error::check_len("batch Gaussian entries", m * d, gaussians.len())?;
        Error::check_len("batch count entries", m * p, counts.len())?;
        if let Some(j) = fsq.iter().position(|&v| !(v >= 0.0)) {
            return Err(Error::invalid(
                format!("fsq[{j}]"),
                "squared payoff must be nonnegative",
            ));
        }
        Ok(Self {
            d,
            p,
            gaussians,
            counts,
            fsq,
            base,
        })
    }

    pub fn len(&self) -> usize {
        self.fsq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fsq.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.d, self.p)
    }

    pub fn gaussian(&self, j: usize) -> &[f64] {
        &self.gaussians[j * self.d..(j + 1) * self.d]
    }

    pub fn counts(&self, j: usize) -> &[u32] {
        &self.counts[j * self.p..(j + 1) * self.p]
    }

    pub fn fsq(&self) -> &[f64] {
        &self.fsq
    }

    pub fn base(&self) -> &BaselineIntensity {
        &self.base
    }

    pub fn nonzero(&self) -> usize {
        self.fsq.iter().filter(|&&v| v > 0.0).count()
    }
}

/// Draws `m` baseline samples from per-sample streams of `seed` and caches
/// `f²` for each.
pub fn build_batch<P: Integrand + ?Sized>(problem: &P, m: usize, seed: u64) -> Result<SampleBatch> {
    if m == 0 {
        return Err(Error::invalid("m", "need at least one first-stage sample"));
    }
    let d = problem.gaussian_dim();
    let p = problem.poisson_dim();
    let mu = problem.baseline().as_slice();
    let useed = count_seed(seed);
    let rows: Vec<(Vec<f64>, Vec<u32>, f64)> = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut rng = sample_rng(seed, j as u64);
            let mut g = vec![0.0; d];
            let mut n = vec![0u32; p];
            fill_standard_normal(&mut rng, &mut g);
            fill_poisson(&mut sample_rng(useed, j as u64), mu, &mut n);
            let f = problem.evaluate(&g, &n, &mut rng);
            (g, n, f * f)
        })
        .collect();
    let mut gaussians = Vec::with_capacity(m * d);
    let mut counts = Vec::with_capacity(m * p);
    let mut fsq = Vec::with_capacity(m);
    for (g, n, v) in rows {
        gaussians.extend_from_slice(&g);
        counts.extend_from_slice(&n);
        fsq.push(v);
    }
    if fsq.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateBatch {
            payoff: problem.label(),
        });
    }
    SampleBatch::from_parts(gaussians, counts, fsq, problem.baseline().clone(), d)
}

/// Value, gradient and Hessian at a reduced point, ordered `(ϑ, λ̃)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
}

/// Per-point quantities shared by every row.
struct PointData {
    vartheta: Vec<f64>,
    /// `AᵀA ϑ`
    ata_vartheta: Vec<f64>,
    theta_sq: f64,
    lambda: Vec<f64>,
    log_mu_over_lambda: Vec<f64>,
    lambda_sum: f64,
}

/// SAA objectives on a fixed batch and fixed reduction maps.
///
/// Rows with `f = 0` never contribute and are dropped up front. The
/// Gaussian part is stored already projected through `Aᵀ`, since
/// `θ·G = ϑ·(AᵀG)`.
pub struct SaaObjective<'a> {
    batch: &'a SampleBatch,
    maps: &'a ReductionMaps,
    chunk: usize,
    dr: usize,
    pr: usize,
    log_fsq: Vec<f64>,
    proj_g: Vec<f64>,
    count_offsets: Vec<usize>,
    count_entries: Vec<(u32, u32)>,
    ata: DMatrix<f64>,
}

impl<'a> SaaObjective<'a> {
    pub fn new(batch: &'a SampleBatch, maps: &'a ReductionMaps) -> Result<Self> {
        let (d, p) = maps.full_dims();
        Error::check_len("Gaussian dimension of maps", batch.d, d)?;
        Error::check_len("Poisson dimension of maps", batch.p, p)?;
        let support: Vec<usize> = (0..batch.len()).filter(|&j| batch.fsq[j] > 0.0).collect();
        if support.is_empty() {
            return Err(Error::DegenerateBatch {
                payoff: "batch".into(),
            });
        }
        let (dr, pr) = maps.reduced_dims();
        let mut log_fsq = Vec::with_capacity(support.len());
        let mut proj_g = vec![0.0; support.len() * dr];
        let mut count_offsets = Vec::with_capacity(support.len() + 1);
        let mut count_entries = Vec::new();
        count_offsets.push(0);
        for (row, &j) in support.iter().enumerate() {
            log_fsq.push(batch.fsq[j].ln());
            maps.project_theta(batch.gaussian(j), &mut proj_g[row * dr..(row + 1) * dr]);
            count_entries.extend(
                batch
                    .counts(j)
                    .iter()
                    .enumerate()
                    .filter(|(_, &k)| k > 0)
                    .map(|(i, &k)| (i as u32, k)),
            );
            count_offsets.push(count_entries.len());
        }
        let ata = maps.a().transpose() * maps.a();
        Ok(Self {
            batch,
            maps,
            chunk: DEFAULT_CHUNK,
            dr,
            pr,
            log_fsq,
            proj_g,
            count_offsets,
            count_entries,
            ata,
        })
    }

    pub fn with_chunk(mut self, chunk: usize) -> Self {
        self.chunk = chunk.max(1);
        self
    }

    pub fn maps(&self) -> &ReductionMaps {
        self.maps
    }

    pub fn batch(&self) -> &SampleBatch {
        self.batch
    }

    fn rows(&self) -> usize {
        self.log_fsq.len()
    }

    fn row_counts(&self, row: usize) -> &[(u32, u32)] {
        &self.count_entries[self.count_offsets[row]..self.count_offsets[row + 1]]
    }

    fn row_g(&self, row: usize) -> &[f64] {
        &self.proj_g[row * self.dr..(row + 1) * self.dr]
    }

    fn point(&self, red: &ReducedISParams) -> Result<PointData> {
        let full = apply_reduction(self.maps, red)?;
        let ata_vartheta: Vec<f64> = (0..self.dr)
            .map(|r| (0..self.dr).map(|c| self.ata[(r, c)] * red.vartheta[c]).sum())
            .collect();
        let theta_sq = red
            .vartheta
            .iter()
            .zip(&ata_vartheta)
            .map(|(a, b)| a * b)
            .sum();
        let log_mu_over_lambda = self
            .batch
            .base
            .log()
            .iter()
            .zip(&full.lambda)
            .map(|(lm, l)| lm - l.ln())
            .collect();
        Ok(PointData {
            vartheta: red.vartheta.clone(),
            ata_vartheta,
            theta_sq,
            lambda_sum: full.lambda.iter().sum(),
            lambda: full.lambda,
            log_mu_over_lambda,
        })
    }

    /// `log f_j² - θ·G^j + Σ_i N^j_i log(μ_i/λ_i)` for every support row.
    fn log_terms(&self, pt: &PointData) -> Vec<f64> {
        (0..self.rows())
            .into_par_iter()
            .map(|row| {
                let dot: f64 = pt
                    .vartheta
                    .iter()
                    .zip(self.row_g(row))
                    .map(|(a, b)| a * b)
                    .sum();
                let counts: f64 = self
                    .row_counts(row)
                    .iter()
                    .map(|&(i, k)| k as f64 * pt.log_mu_over_lambda[i as usize])
                    .sum();
                self.log_fsq[row] - dot + counts
            })
            .collect()
    }

    fn fixed_sum(&self, values: &[f64]) -> f64 {
        let partial: Vec<f64> = values
            .par_chunks(self.chunk)
            .map(|c| c.iter().sum::<f64>())
            .collect();
        partial.iter().sum()
    }

    /// `(max, log Σ exp(l - max) + max)`.
    fn log_sum_exp(&self, logs: &[f64]) -> (f64, f64) {
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shifted: Vec<f64> = logs.par_iter().map(|l| (l - max).exp()).collect();
        (max, max + self.fixed_sum(&shifted).ln())
    }

    /// `log v_n`.
    pub fn log_v(&self, red: &ReducedISParams) -> Result<f64> {
        let pt = self.point(red)?;
        let (_, lse) = self.log_sum_exp(&self.log_terms(&pt));
        Ok(lse - (self.batch.len() as f64).ln() + 0.5 * pt.theta_sq + pt.lambda_sum
            - self.batch.base.total())
    }

    /// `v_n`; `+inf` once it exceeds the representable range.
    pub fn v(&self, red: &ReducedISParams) -> Result<f64> {
        Ok(self.log_v(red)?.exp())
    }

    pub fn u(&self, red: &ReducedISParams) -> Result<f64> {
        let pt = self.point(red)?;
        let (_, lse) = self.log_sum_exp(&self.log_terms(&pt));
        Ok(0.5 * pt.theta_sq + pt.lambda_sum + lse - (self.batch.len() as f64).ln())
    }

    /// Reduced feature `(AᵀG, Bᵀ(N/λ))` of a row.
    fn features(&self, row: usize, pt: &PointData, z: &mut [f64]) {
        z[..self.dr].copy_from_slice(self.row_g(row));
        z[self.dr..].iter_mut().for_each(|v| *v = 0.0);
        for &(i, k) in self.row_counts(row) {
            let ratio = k as f64 / pt.lambda[i as usize];
            for &(c, b) in self.maps.b_row(i as usize) {
                z[self.dr + c] += b * ratio;
            }
        }
    }

    /// `u_n` with its gradient and Hessian.
    ///
    /// With weights `w_j ∝ f_j² exp(-θ·G^j) Π (μ/λ)^{N^j}` and `z_j` the
    /// reduced features, the gradient is `(AᵀAϑ, Bᵀ1) - E_w[z]` and the
    /// Hessian is `diag(AᵀA, Bᵀ E_w[diag(N/λ²)] B) + Cov_w(z)`.
    pub fn u_eval(&self, red: &ReducedISParams) -> Result<ObjectiveEval> {
        let pt = self.point(red)?;
        let logs = self.log_terms(&pt);
        let (max, lse) = self.log_sum_exp(&logs);
        let dim = self.dr + self.pr;
        let p = self.batch.p;

        struct Acc {
            sw: f64,
            swz: Vec<f64>,
            swd: Vec<f64>,
            swzz: Vec<f64>,
        }
        let row_ids: Vec<usize> = (0..self.rows()).collect();
        let partial: Vec<Acc> = row_ids
            .par_chunks(self.chunk)
            .map(|rows| {
                let mut acc = Acc {
                    sw: 0.0,
                    swz: vec![0.0; dim],
                    swd: vec![0.0; p],
                    swzz: vec![0.0; dim * dim],
                };
                let mut z = vec![0.0; dim];
                let mut nz: Vec<usize> = Vec::with_capacity(dim);
                for &row in rows {
                    let w = (logs[row] - max).exp();
                    if w == 0.0 {
                        continue;
                    }
                    self.features(row, &pt, &mut z);
                    acc.sw += w;
                    nz.clear();
                    nz.extend((0..dim).filter(|&a| z[a] != 0.0));
                    for &a in &nz {
                        let wa = w * z[a];
                        acc.swz[a] += wa;
                        for &b in nz.iter().filter(|&&b| b >= a) {
                            acc.swzz[a * dim + b] += wa * z[b];
                        }
                    }
                    for &(i, k) in self.row_counts(row) {
                        let l = pt.lambda[i as usize];
                        acc.swd[i as usize] += w * k as f64 / (l * l);
                    }
                }
                acc
            })
            .collect();
        let mut sw = 0.0;
        let mut swz = vec![0.0; dim];
        let mut swd = vec![0.0; p];
        let mut swzz = vec![0.0; dim * dim];
        for acc in partial {
            sw += acc.sw;
            swz.iter_mut().zip(&acc.swz).for_each(|(a, b)| *a += b);
            swd.iter_mut().zip(&acc.swd).for_each(|(a, b)| *a += b);
            swzz.iter_mut().zip(&acc.swzz).for_each(|(a, b)| *a += b);
        }
        let mean: Vec<f64> = swz.iter().map(|v| v / sw).collect();

        let mut gradient = vec![0.0; dim];
        for a in 0..self.dr {
            gradient[a] = pt.ata_vartheta[a] - mean[a];
        }
        let b = self.maps.b();
        for c in 0..self.pr {
            gradient[self.dr + c] = b.column(c).sum() - mean[self.dr + c];
        }

        let mut hessian = DMatrix::zeros(dim, dim);
        for a in 0..dim {
            for bb in a..dim {
                let v = swzz[a * dim + bb] / sw - mean[a] * mean[bb];
                hessian[(a, bb)] = v;
                hessian[(bb, a)] = v;
            }
        }
        for r in 0..self.dr {
            for c in 0..self.dr {
                hessian[(r, c)] += self.ata[(r, c)];
            }
        }
        for (i, &s) in swd.iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            let di = s / sw;
            let row = self.maps.b_row(i);
            for &(c1, v1) in row {
                for &(c2, v2) in row {
                    hessian[(self.dr + c1, self.dr + c2)] += di * v1 * v2;
                }
            }
        }

        let value = 0.5 * pt.theta_sq + pt.lambda_sum + lse - (self.batch.len() as f64).ln();
        Ok(ObjectiveEval {
            value,
            gradient,
            hessian,
        })
    }

    /// `v_n` with gradient and Hessian, computed directly from the
    /// derivatives of the second-moment integrand (not through `u_n`).
    pub fn v_eval(&self, red: &ReducedISParams) -> Result<ObjectiveEval> {
        let pt = self.point(red)?;
        let logs = self.log_terms(&pt);
        let shift_const = 0.5 * pt.theta_sq + pt.lambda_sum - self.batch.base.total();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dim = self.dr + self.pr;
        let b_sum: Vec<f64> = (0..self.pr).map(|c| self.maps.b().column(c).sum()).collect();

        let mut value = 0.0;
        let mut gradient = vec![0.0; dim];
        let mut hessian = DMatrix::zeros(dim, dim);
        let mut y = vec![0.0; dim];
        for (row, &log) in logs.iter().enumerate() {
            let f = (log - max).exp();
            for ((ya, &shift), &g) in y.iter_mut().zip(&pt.ata_vartheta).zip(self.row_g(row)) {
                *ya = shift - g;
            }
            // Bᵀ a(N, λ) with a_i = 1 - N_i/λ_i
            y[self.dr..].copy_from_slice(&b_sum);
            for &(i, k) in self.row_counts(row) {
                let ratio = k as f64 / pt.lambda[i as usize];
                for &(c, bv) in self.maps.b_row(i as usize) {
                    y[self.dr + c] -= bv * ratio;
                }
            }
            value += f;
            for a in 0..dim {
                gradient[a] += f * y[a];
                for c in 0..dim {
                    hessian[(a, c)] += f * y[a] * y[c];
                }
            }
            for r in 0..self.dr {
                for c in 0..self.dr {
                    hessian[(r, c)] += f * self.ata[(r, c)];
                }
            }
            for &(i, k) in self.row_counts(row) {
                let l = pt.lambda[i as usize];
                let di = f * k as f64 / (l * l);
                let brow = self.maps.b_row(i as usize);
                for &(c1, v1) in brow {
                    for &(c2, v2) in brow {
                        hessian[(self.dr + c1, self.dr + c2)] += di * v1 * v2;
                    }
                }
            }
        }
        let scale = (max + shift_const - (self.batch.len() as f64).ln()).exp();
        Ok(ObjectiveEval {
            value: value * scale,
            gradient: gradient.iter().map(|g| g * scale).collect(),
            hessian: hessian * scale,
        })
    }
}

impl Objective for SaaObjective<'_> {
    fn theta_dim(&self) -> usize {
        self.dr
    }

    fn lambda_dim(&self) -> usize {
        self.pr
    }

    fn value(&self, x: &ReducedISParams) -> Result<f64> {
        self.u(x)
    }

    fn evaluate(&self, x: &ReducedISParams) -> Result<ObjectiveEval> {
        self.u_eval(x)
    }
}

/// `v_n` seen as an objective for Newton's method (used to cross-check the
/// minimizer of `u_n`).
pub struct SecondMoment<'a>(pub &'a SaaObjective<'a>);

impl Objective for SecondMoment<'_> {
    fn theta_dim(&self) -> usize {
        self.0.dr
    }

    fn lambda_dim(&self) -> usize {
        self.0.pr
    }

    fn value(&self, x: &ReducedISParams) -> Result<f64> {
        self.0.v(x)
    }

    fn evaluate(&self, x: &ReducedISParams) -> Result<ObjectiveEval> {
        self.0.v_eval(x)
    }
}

/// `v_n^{A,B}` at a reduced point.
pub fn v_n(batch: &SampleBatch, maps: &ReductionMaps, red: &ReducedISParams) -> Result<f64> {
    SaaObjective::new(batch, maps)?.v(red)
}

pub fn u_n(batch: &SampleBatch, maps: &ReductionMaps, red: &ReducedISParams) -> Result<f64> {
    SaaObjective::new(batch, maps)?.u(red)
}

pub fn u_n_eval(
    batch: &SampleBatch,
    maps: &ReductionMaps,
    red: &ReducedISParams,
) -> Result<ObjectiveEval> {
    SaaObjective::new(batch, maps)?.u_eval(red)
}
