//! Discretized Merton, Kou and BNS price dynamics on a time grid.
//!
//! Randomness enters a path through three pieces: standard normal
//! increments (one per asset and step), Poisson counts (one per jump driver
//! and step) and, given the counts, the jump sizes and jump times. Only the
//! first two are tilted by importance sampling.
//!
//! With `I` assets there are `I + 1` jump drivers: driver `i` hits asset `i`
//! only and driver `I` (the systemic one) hits every asset. A single asset
//! has a single driver.

mod jumps;

pub use jumps::{draw_jump_times, BnsDriver, KouJumps, NormalJumps};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of jump drivers for `assets` assets.
pub fn driver_count(assets: usize) -> usize {
    if assets == 1 {
        1
    } else {
        assets + 1
    }
}

/// Monitoring times `0 = t_0 < t_1 < ... < t_J = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    times: Vec<f64>,
}

impl GridSpec {
    /// Regular grid `t_j = j T / J`.
    pub fn regular(maturity: f64, steps: usize) -> Result<Self> {
        if !(maturity > 0.0) || !maturity.is_finite() {
            return Err(Error::invalid("grid.maturity", "must be positive"));
        }
        if steps == 0 {
            return Err(Error::invalid("grid.steps", "must be at least 1"));
        }
        let times = (1..=steps)
            .map(|j| maturity * j as f64 / steps as f64)
            .collect();
        Ok(Self { times })
    }

    /// Grid from explicit times `t_1 < ... < t_J` (with `t_0 = 0` implied).
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        let mut prev = 0.0;
        for &t in &times {
            if !(t > prev) || !t.is_finite() {
                return Err(Error::NonIncreasingGrid);
            }
            prev = t;
        }
        if times.is_empty() {
            return Err(Error::NonIncreasingGrid);
        }
        Ok(Self { times })
    }

    /// `t_1, ..., t_J`.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len()
    }

    pub fn maturity(&self) -> f64 {
        *self.times.last().expect("grid is never empty")
    }

    /// Start of step `j` (0-based), i.e. `t_{j}` in 0-based step indexing.
    pub fn start(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else {
            self.times[j - 1]
        }
    }

    pub fn dt(&self, j: usize) -> f64 {
        self.times[j] - self.start(j)
    }
}

/// Correlation of the Brownian drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Correlation {
    /// `(1 - rho) Id + rho 1 1ᵀ`.
    Equi(f64),
    Matrix(Vec<Vec<f64>>),
}

impl Default for Correlation {
    fn default() -> Self {
        Correlation::Equi(0.0)
    }
}

impl Correlation {
    pub fn matrix(&self, assets: usize) -> Result<DMatrix<f64>> {
        match self {
            Correlation::Equi(rho) => {
                if !rho.is_finite() {
                    return Err(Error::invalid("rho", "must be finite"));
                }
                Ok(DMatrix::from_fn(assets, assets, |r, c| {
                    if r == c {
                        1.0
                    } else {
                        *rho
                    }
                }))
            }
            Correlation::Matrix(rows) => {
                Error::check_len("correlation matrix rows", assets, rows.len())?;
                for row in rows {
                    Error::check_len("correlation matrix columns", assets, row.len())?;
                }
                let m = DMatrix::from_fn(assets, assets, |r, c| rows[r][c]);
                for r in 0..assets {
                    if (m[(r, r)] - 1.0).abs() > 1e-12 {
                        return Err(Error::invalid("correlation", "diagonal must be 1"));
                    }
                    for c in 0..r {
                        if (m[(r, c)] - m[(c, r)]).abs() > 1e-12 {
                            return Err(Error::invalid("correlation", "must be symmetric"));
                        }
                    }
                }
                Ok(m)
            }
        }
    }

    /// Lower Cholesky factor `L` with `L Lᵀ = Γ`.
    pub fn cholesky(&self, assets: usize) -> Result<DMatrix<f64>> {
        let m = self.matrix(assets)?;
        m.cholesky()
            .map(|c| c.l())
            .ok_or(Error::SingularCorrelation)
    }
}

/// Cholesky factor of the equicorrelation matrix with parameter `rho`.
pub fn correlate(rho: f64, assets: usize) -> Result<DMatrix<f64>> {
    if assets >= 2 && !(rho > -1.0 / (assets as f64 - 1.0) && rho < 1.0) {
        return Err(Error::SingularCorrelation);
    }
    Correlation::Equi(rho).cholesky(assets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MertonParams {
    pub s0: Vec<f64>,
    pub sigma: Vec<f64>,
    /// One entry per jump driver.
    pub jumps: Vec<NormalJumps>,
    pub r: f64,
    pub correlation: Correlation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KouParams {
    pub s0: Vec<f64>,
    pub sigma: Vec<f64>,
    pub jumps: Vec<KouJumps>,
    pub r: f64,
    pub correlation: Correlation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnsParams {
    pub s0: Vec<f64>,
    /// Initial squared volatility per asset.
    pub sigma0_sq: Vec<f64>,
    pub drivers: Vec<BnsDriver>,
    pub r: f64,
    pub correlation: Correlation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelSpec {
    Merton(MertonParams),
    Kou(KouParams),
    Bns(BnsParams),
}

fn check_spots(s0: &[f64]) -> Result<()> {
    if s0.is_empty() {
        return Err(Error::invalid("s0", "need at least one asset"));
    }
    if let Some(i) = s0.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::invalid(format!("s0[{i}]"), "must be positive"));
    }
    Ok(())
}

impl ModelSpec {
    pub fn assets(&self) -> usize {
        match self {
            ModelSpec::Merton(p) => p.s0.len(),
            ModelSpec::Kou(p) => p.s0.len(),
            ModelSpec::Bns(p) => p.s0.len(),
        }
    }

    pub fn drivers(&self) -> usize {
        driver_count(self.assets())
    }

    pub fn rate(&self) -> f64 {
        match self {
            ModelSpec::Merton(p) => p.r,
            ModelSpec::Kou(p) => p.r,
            ModelSpec::Bns(p) => p.r,
        }
    }

    pub fn spots(&self) -> &[f64] {
        match self {
            ModelSpec::Merton(p) => &p.s0,
            ModelSpec::Kou(p) => &p.s0,
            ModelSpec::Bns(p) => &p.s0,
        }
    }

    pub fn correlation(&self) -> &Correlation {
        match self {
            ModelSpec::Merton(p) => &p.correlation,
            ModelSpec::Kou(p) => &p.correlation,
            ModelSpec::Bns(p) => &p.correlation,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Merton(_) => "merton",
            ModelSpec::Kou(_) => "kou",
            ModelSpec::Bns(_) => "bns",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let assets = self.assets();
        check_spots(self.spots())?;
        let drivers = driver_count(assets);
        if !self.rate().is_finite() {
            return Err(Error::invalid("r", "must be finite"));
        }
        match self {
            ModelSpec::Merton(p) => {
                Error::check_len("sigma", assets, p.sigma.len())?;
                Error::check_len("jump drivers", drivers, p.jumps.len())?;
                check_vols(&p.sigma)?;
                for (k, j) in p.jumps.iter().enumerate() {
                    j.validate(&format!("jumps[{k}]"))?;
                }
            }
            ModelSpec::Kou(p) => {
                Error::check_len("sigma", assets, p.sigma.len())?;
                Error::check_len("jump drivers", drivers, p.jumps.len())?;
                check_vols(&p.sigma)?;
                for (k, j) in p.jumps.iter().enumerate() {
                    j.validate(&format!("jumps[{k}]"))?;
                }
            }
            ModelSpec::Bns(p) => {
                Error::check_len("sigma0_sq", assets, p.sigma0_sq.len())?;
                Error::check_len("jump drivers", drivers, p.drivers.len())?;
                if let Some(i) = p.sigma0_sq.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
                    return Err(Error::invalid(format!("sigma0_sq[{i}]"), "must be nonnegative"));
                }
                for (k, d) in p.drivers.iter().enumerate() {
                    d.validate(&format!("drivers[{k}]"))?;
                }
            }
        }
        if let Correlation::Equi(rho) = self.correlation() {
            correlate(*rho, assets)?;
        } else {
            self.correlation().cholesky(assets)?;
        }
        Ok(())
    }

    /// Calendar-time arrival rate of jump driver `k`.
    pub fn arrival_rate(&self, k: usize) -> f64 {
        match self {
            ModelSpec::Merton(p) => p.jumps[k].intensity,
            ModelSpec::Kou(p) => p.jumps[k].intensity,
            ModelSpec::Bns(p) => p.drivers[k].arrival_rate(),
        }
    }

    /// Expected count of every (step, driver) cell, laid out `j * K + k`.
    pub fn cell_intensities(&self, grid: &GridSpec) -> Vec<f64> {
        let k_count = self.drivers();
        (0..grid.steps())
            .flat_map(|j| {
                let dt = grid.dt(j);
                (0..k_count).map(move |k| self.arrival_rate(k) * dt)
            })
            .collect()
    }

    /// Draws `count` i.i.d. jump sizes from driver `k`'s law.
    pub fn draw_jump_sizes<R: Rng + ?Sized>(&self, k: usize, count: u32, rng: &mut R) -> Vec<f64> {
        (0..count)
            .map(|_| match self {
                ModelSpec::Merton(p) => p.jumps[k].sample(rng),
                ModelSpec::Kou(p) => p.jumps[k].sample(rng),
                ModelSpec::Bns(p) => p.drivers[k].sample(rng),
            })
            .collect()
    }

    /// Drifts making every discounted price a martingale.
    ///
    /// Jump diffusions: `beta^i = r - sum_k mu^k (E[e^{Y^k}] - 1)` over the
    /// drivers hitting asset `i`. BNS: `a^i = r - sum_k psi^k kappa^k mu^k / (beta^k - psi^k)`.
    pub fn martingale_drift(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let assets = self.assets();
        let compensator: Vec<f64> = match self {
            ModelSpec::Merton(p) => p
                .jumps
                .iter()
                .map(|j| j.intensity * (j.exp_moment() - 1.0))
                .collect(),
            ModelSpec::Kou(p) => p
                .jumps
                .iter()
                .map(|j| j.intensity * (j.exp_moment() - 1.0))
                .collect(),
            ModelSpec::Bns(p) => p.drivers.iter().map(|d| d.leverage_compensator()).collect(),
        };
        let r = self.rate();
        Ok((0..assets)
            .map(|i| {
                let systemic = if assets > 1 { compensator[assets] } else { 0.0 };
                r - compensator[i] - systemic
            })
            .collect())
    }
}

fn check_vols(sigma: &[f64]) -> Result<()> {
    if let Some(i) = sigma.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::invalid(format!("sigma[{i}]"), "must be positive"));
    }
    Ok(())
}

/// All random inputs of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDraw {
    /// Standard normal increments before correlation, laid out `j * I + i`.
    pub gaussian: Vec<f64>,
    /// Poisson counts per cell, laid out `j * K + k`.
    pub counts: Vec<u32>,
    /// Jump sizes per cell; `jump_sizes[c].len() == counts[c]`.
    pub jump_sizes: Vec<Vec<f64>>,
    /// Sorted jump times per cell (BNS only).
    pub jump_times: Option<Vec<Vec<f64>>>,
}

impl PathDraw {
    /// Completes Gaussian increments and counts with jump sizes (and, for
    /// BNS, jump times) drawn from `rng`.
    pub fn complete<R: Rng + ?Sized>(
        model: &ModelSpec,
        grid: &GridSpec,
        gaussian: Vec<f64>,
        counts: Vec<u32>,
        rng: &mut R,
    ) -> Self {
        let k_count = model.drivers();
        let with_times = matches!(model, ModelSpec::Bns(_));
        let mut jump_sizes = Vec::with_capacity(counts.len());
        let mut jump_times = with_times.then(|| Vec::with_capacity(counts.len()));
        for (c, &n) in counts.iter().enumerate() {
            let (j, k) = (c / k_count, c % k_count);
            if let Some(times) = jump_times.as_mut() {
                times.push(draw_jump_times(grid.start(j), grid.times()[j], n, rng));
            }
            jump_sizes.push(model.draw_jump_sizes(k, n, rng));
        }
        Self {
            gaussian,
            counts,
            jump_sizes,
            jump_times,
        }
    }
}

/// Prices (and BNS squared volatilities) at `t_0, ..., t_J`, one row per asset.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPath {
    assets: usize,
    points: usize,
    prices: Vec<f64>,
    vol: Option<Vec<f64>>,
}

impl SimulatedPath {
    pub fn assets(&self) -> usize {
        self.assets
    }

    /// Number of monitoring dates after `t_0`.
    pub fn steps(&self) -> usize {
        self.points - 1
    }

    pub fn asset(&self, i: usize) -> &[f64] {
        &self.prices[i * self.points..(i + 1) * self.points]
    }

    pub fn price(&self, i: usize, j: usize) -> f64 {
        self.prices[i * self.points + j]
    }

    pub fn terminal(&self) -> Vec<f64> {
        (0..self.assets).map(|i| self.price(i, self.points - 1)).collect()
    }

    /// Squared-volatility path of asset `i` (BNS only).
    pub fn variance_path(&self, i: usize) -> Option<&[f64]> {
        self.vol
            .as_ref()
            .map(|v| &v[i * self.points..(i + 1) * self.points])
    }
}

/// Simulates paths for a fixed model and grid.
#[derive(Debug, Clone)]
pub struct PathSimulator {
    model: ModelSpec,
    grid: GridSpec,
    drift: Vec<f64>,
    chol: DMatrix<f64>,
}

impl PathSimulator {
    pub fn new(model: ModelSpec, grid: GridSpec) -> Result<Self> {
        let drift = model.martingale_drift()?;
        let chol = model.correlation().cholesky(model.assets())?;
        Ok(Self {
            model,
            grid,
            drift,
            chol,
        })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn drift(&self) -> &[f64] {
        &self.drift
    }

    fn check(&self, draw: &PathDraw) -> Result<()> {
        let assets = self.model.assets();
        let cells = self.model.drivers() * self.grid.steps();
        Error::check_len("Gaussian increments", assets * self.grid.steps(), draw.gaussian.len())?;
        Error::check_len("Poisson counts", cells, draw.counts.len())?;
        Error::check_len("jump size cells", cells, draw.jump_sizes.len())?;
        for (c, sizes) in draw.jump_sizes.iter().enumerate() {
            Error::check_len("jump sizes in cell", draw.counts[c] as usize, sizes.len())?;
        }
        if matches!(self.model, ModelSpec::Bns(_)) {
            let times = draw.jump_times.as_ref().ok_or(Error::invalid(
                "jump_times",
                "BNS paths need jump times",
            ))?;
            Error::check_len("jump time cells", cells, times.len())?;
            for (c, t) in times.iter().enumerate() {
                Error::check_len("jump times in cell", draw.counts[c] as usize, t.len())?;
            }
        }
        Ok(())
    }

    pub fn simulate(&self, draw: &PathDraw) -> Result<SimulatedPath> {
        self.check(draw)?;
        Ok(self.simulate_unchecked(draw))
    }

    pub(crate) fn simulate_unchecked(&self, draw: &PathDraw) -> SimulatedPath {
        let assets = self.model.assets();
        let steps = self.grid.steps();
        let points = steps + 1;
        let mut prices = vec![0.0; assets * points];
        let mut corr = vec![0.0; assets];
        match &self.model {
            ModelSpec::Merton(p) => {
                self.jump_diffusion(&p.s0, &p.sigma, draw, &mut prices, &mut corr);
                SimulatedPath {
                    assets,
                    points,
                    prices,
                    vol: None,
                }
            }
            ModelSpec::Kou(p) => {
                self.jump_diffusion(&p.s0, &p.sigma, draw, &mut prices, &mut corr);
                SimulatedPath {
                    assets,
                    points,
                    prices,
                    vol: None,
                }
            }
            ModelSpec::Bns(p) => {
                let mut vol = vec![0.0; assets * points];
                self.bns(p, draw, &mut prices, &mut vol, &mut corr);
                SimulatedPath {
                    assets,
                    points,
                    prices,
                    vol: Some(vol),
                }
            }
        }
    }

    fn correlated(&self, g: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..=i).map(|c| self.chol[(i, c)] * g[c]).sum();
        }
    }

    fn jump_diffusion(
        &self,
        s0: &[f64],
        sigma: &[f64],
        draw: &PathDraw,
        prices: &mut [f64],
        corr: &mut [f64],
    ) {
        let assets = s0.len();
        let k_count = driver_count(assets);
        let points = self.grid.steps() + 1;
        let mut log_s: Vec<f64> = s0.iter().map(|s| s.ln()).collect();
        for i in 0..assets {
            prices[i * points] = s0[i];
        }
        for j in 0..self.grid.steps() {
            let dt = self.grid.dt(j);
            self.correlated(&draw.gaussian[j * assets..(j + 1) * assets], corr);
            let systemic: f64 = if assets > 1 {
                draw.jump_sizes[j * k_count + assets].iter().sum()
            } else {
                0.0
            };
            for i in 0..assets {
                let own: f64 = draw.jump_sizes[j * k_count + i].iter().sum();
                log_s[i] += (self.drift[i] - 0.5 * sigma[i] * sigma[i]) * dt
                    + sigma[i] * dt.sqrt() * corr[i]
                    + own
                    + systemic;
                prices[i * points + j + 1] = log_s[i].exp();
            }
        }
    }

    fn bns(
        &self,
        p: &BnsParams,
        draw: &PathDraw,
        prices: &mut [f64],
        vol: &mut [f64],
        corr: &mut [f64],
    ) {
        let assets = p.s0.len();
        let k_count = driver_count(assets);
        let points = self.grid.steps() + 1;
        let times = draw.jump_times.as_ref().expect("checked: BNS draw has jump times");
        let mut log_s: Vec<f64> = p.s0.iter().map(|s| s.ln()).collect();
        let mut sig = p.sigma0_sq.clone();
        for i in 0..assets {
            prices[i * points] = p.s0[i];
            vol[i * points] = sig[i];
        }
        let mut events: Vec<(f64, f64)> = Vec::new();
        for j in 0..self.grid.steps() {
            let (t0, t1) = (self.grid.start(j), self.grid.times()[j]);
            let dt = t1 - t0;
            self.correlated(&draw.gaussian[j * assets..(j + 1) * assets], corr);
            let sys_cell = j * k_count + assets;
            for i in 0..assets {
                let own_cell = j * k_count + i;
                let mut decay = p.drivers[i].kappa;
                events.clear();
                events.extend(times[own_cell].iter().copied().zip(draw.jump_sizes[own_cell].iter().copied()));
                let mut jump_term = p.drivers[i].psi * draw.jump_sizes[own_cell].iter().sum::<f64>();
                if assets > 1 {
                    let sys = &p.drivers[assets];
                    decay += sys.kappa;
                    events.extend(times[sys_cell].iter().copied().zip(draw.jump_sizes[sys_cell].iter().copied()));
                    jump_term += sys.psi * draw.jump_sizes[sys_cell].iter().sum::<f64>();
                    events.sort_by(|a, b| a.0.total_cmp(&b.0));
                }
                // exact integration of the piecewise-exponential variance path
                let mut cur = sig[i];
                let mut last = t0;
                let mut integrated = 0.0;
                for &(tau, y) in &events {
                    let seg = tau - last;
                    integrated += cur * (-(-decay * seg).exp_m1()) / decay;
                    cur = cur * (-decay * seg).exp() + y;
                    last = tau;
                }
                let seg = t1 - last;
                integrated += cur * (-(-decay * seg).exp_m1()) / decay;
                cur *= (-decay * seg).exp();
                debug_assert!(integrated >= 0.0);
                let integrated = integrated.max(0.0);
                log_s[i] += self.drift[i] * dt - 0.5 * integrated
                    + integrated.sqrt() * corr[i]
                    + jump_term;
                sig[i] = cur;
                prices[i * points + j + 1] = log_s[i].exp();
                vol[i * points + j + 1] = cur;
            }
        }
    }
}

/// One-shot path simulation.
pub fn simulate_path(model: &ModelSpec, grid: &GridSpec, draw: &PathDraw) -> Result<SimulatedPath> {
    PathSimulator::new(model.clone(), grid.clone())?.simulate(draw)
}
