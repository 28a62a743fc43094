//! Two-stage adaptive estimator and strategy comparison.
//!
//! Stage one draws `m` baseline samples and minimizes the SAA objective
//! over the strategy's free block. Stage two draws `n` fresh samples under
//! the optimized tilt and averages the reweighted discounted payoff.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure_change::{apply_reduction, ISParams, ReducedISParams, ReductionMaps, TiltKernel};
use crate::optimizer::{projected_newton, FreeBlocks, NewtonSettings, Restricted};
use crate::problem::Integrand;
use crate::rng::{count_seed, derive_seed, fill_poisson, fill_standard_normal, sample_rng};
use crate::saa_objective::{build_batch, SaaObjective, DEFAULT_CHUNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tilt {
    Crude,
    Gaussian,
    Poisson,
    GaussianPoisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Full,
    Reduced,
}

impl Tilt {
    pub const ALL: [Tilt; 4] = [Tilt::Crude, Tilt::Gaussian, Tilt::Poisson, Tilt::GaussianPoisson];

    pub fn name(self) -> &'static str {
        match self {
            Tilt::Crude => "crude",
            Tilt::Gaussian => "gaussian",
            Tilt::Poisson => "poisson",
            Tilt::GaussianPoisson => "gaussian_poisson",
        }
    }

    fn free_blocks(self) -> Option<FreeBlocks> {
        match self {
            Tilt::Crude => None,
            Tilt::Gaussian => Some(FreeBlocks {
                theta: true,
                lambda: false,
            }),
            Tilt::Poisson => Some(FreeBlocks {
                theta: false,
                lambda: true,
            }),
            Tilt::GaussianPoisson => Some(FreeBlocks {
                theta: true,
                lambda: true,
            }),
        }
    }

    fn tag(self) -> u64 {
        self as u64
    }
}

impl Scope {
    pub fn name(self) -> &'static str {
        match self {
            Scope::Full => "full",
            Scope::Reduced => "reduced",
        }
    }
}

impl FromStr for Tilt {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "crude" => Ok(Tilt::Crude),
            "gaussian" | "g" => Ok(Tilt::Gaussian),
            "poisson" | "p" => Ok(Tilt::Poisson),
            "gaussian_poisson" | "gp" => Ok(Tilt::GaussianPoisson),
            other => Err(Error::invalid(
                "strategy",
                format!("unknown tilt `{other}` (crude, gaussian, poisson, gaussian_poisson)"),
            )),
        }
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(Scope::Full),
            "reduced" => Ok(Scope::Reduced),
            other => Err(Error::invalid(
                "scope",
                format!("unknown scope `{other}` (full, reduced)"),
            )),
        }
    }
}

/// A tilt family together with the parametrization it is optimized in.
/// The scope of the crude strategy is irrelevant and normalized to `Full`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Strategy {
    pub tilt: Tilt,
    pub scope: Scope,
}

impl Strategy {
    pub fn new(tilt: Tilt, scope: Scope) -> Self {
        let scope = if tilt == Tilt::Crude { Scope::Full } else { scope };
        Self { tilt, scope }
    }

    pub fn crude() -> Self {
        Self::new(Tilt::Crude, Scope::Full)
    }

    pub fn is_crude(self) -> bool {
        self.tilt == Tilt::Crude
    }

    /// Seed of this strategy's stage `stage` (1 or 2) under `master`.
    pub fn seed(self, master: u64, stage: u64) -> u64 {
        derive_seed(master, &[self.tilt.tag(), self.scope as u64, stage])
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_crude() {
            f.write_str("crude")
        } else {
            write!(f, "{}/{}", self.tilt.name(), self.scope.name())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub stage_one: Option<u64>,
    pub stage_two: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub strategy: Strategy,
    pub price: f64,
    /// Per-sample variance of the weighted summand (`n - 1` denominator).
    pub variance: f64,
    pub std_error: f64,
    pub ci95: (f64, f64),
    pub optimal_params: Option<ReducedISParams>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    /// Wall-clock seconds spent in each stage.
    pub cpu_seconds_stage1: f64,
    pub cpu_seconds_stage2: f64,
    pub seeds: Seeds,
    pub m: usize,
    pub n: usize,
}

/// Knobs shared by every strategy in a run.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineSettings {
    pub newton: NewtonSettings,
    /// Samples per reduction chunk; part of the determinism contract.
    pub chunk: usize,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            newton: NewtonSettings::default(),
            chunk: DEFAULT_CHUNK,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageOne {
    pub maps: ReductionMaps,
    pub optimum: ReducedISParams,
    /// Value of the SAA objective `u_n` at the optimum.
    pub value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub seconds: f64,
}

pub fn strategy_maps<P: Integrand + ?Sized>(problem: &P, scope: Scope) -> Result<ReductionMaps> {
    match scope {
        Scope::Full => Ok(ReductionMaps::identity(
            problem.gaussian_dim(),
            problem.poisson_dim(),
        )),
        Scope::Reduced => problem.reduced_maps(),
    }
}

/// The reduced point giving the baseline law: `ϑ = 0`, `λ̃` the preimage of `μ`.
pub fn identity_point<P: Integrand + ?Sized>(problem: &P, maps: &ReductionMaps) -> Result<ReducedISParams> {
    let (dr, _) = maps.reduced_dims();
    ReducedISParams::new(vec![0.0; dr], maps.lambda_preimage(problem.baseline())?)
}

pub fn stage_one<P: Integrand + ?Sized>(
    problem: &P,
    strategy: Strategy,
    m: usize,
    seed: u64,
    settings: &EngineSettings,
) -> Result<StageOne> {
    let free = strategy.tilt.free_blocks().ok_or(Error::CrudeHasNoStageOne)?;
    let start = Instant::now();
    let batch = build_batch(problem, m, seed)?;
    let maps = strategy_maps(problem, strategy.scope)?;
    let objective = SaaObjective::new(&batch, &maps)?.with_chunk(settings.chunk);
    let x0 = identity_point(problem, &maps)?;
    let restricted = Restricted::new(&objective, x0.clone(), free)?;
    let mut newton = settings.newton.clone();
    if free.lambda && newton.lambda_floor.is_none() {
        newton = newton.with_relative_floor(&x0.lambdatilde);
    } else if !free.lambda {
        newton.lambda_floor = None;
    }
    let res = projected_newton(&restricted, &restricted.restrict(&x0), &newton)?;
    let optimum = restricted.embed(&res.point);
    Ok(StageOne {
        maps,
        optimum,
        value: res.value,
        iterations: res.iterations,
        grad_norm: res.grad_norm,
        converged: res.converged,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Running mean and centered sum of squares.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.count;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if other.count == 0.0 {
            return self;
        }
        if self.count == 0.0 {
            return other;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        Moments {
            count,
            mean: self.mean + delta * other.count / count,
            m2: self.m2 + other.m2 + delta * delta * self.count * other.count / count,
        }
    }
}

/// Mean and sample variance of the second-stage summands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTwo {
    pub price: f64,
    pub variance: f64,
    pub seconds: f64,
}

/// Second-stage summand `e^{-rT} f(Ḡ + θ, Ñ) L` for sample `j`, where `Ñ`
/// is Poisson with parameter `λ` and `L` is the likelihood ratio.
pub fn stage_two_summand<P: Integrand + ?Sized>(
    problem: &P,
    kernel: &TiltKernel,
    seed: u64,
    j: u64,
) -> f64 {
    let theta = kernel.theta();
    let mut rng = sample_rng(seed, j);
    let mut g = vec![0.0; theta.len()];
    let mut n = vec![0u32; kernel.lambda().len()];
    fill_standard_normal(&mut rng, &mut g);
    fill_poisson(&mut sample_rng(count_seed(seed), j), kernel.lambda(), &mut n);
    let shifted: Vec<f64> = g.iter().zip(theta).map(|(x, t)| x + t).collect();
    let f = problem.evaluate(&shifted, &n, &mut rng);
    if f == 0.0 {
        return 0.0;
    }
    problem.discount() * f * kernel.log_likelihood_ratio(&g, &n).exp()
}

pub fn stage_two<P: Integrand + ?Sized>(
    problem: &P,
    params: &ISParams,
    n: usize,
    seed: u64,
    chunk: usize,
) -> Result<StageTwo> {
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    Error::check_len("tilt shift", problem.gaussian_dim(), params.theta.len())?;
    let kernel = TiltKernel::new(params, problem.baseline())?;
    let start = Instant::now();
    let ids: Vec<u64> = (0..n as u64).collect();
    let partial: Vec<Moments> = ids
        .par_chunks(chunk.max(1))
        .map(|block| {
            let mut acc = Moments::default();
            for &j in block {
                acc.push(stage_two_summand(problem, &kernel, seed, j));
            }
            acc
        })
        .collect();
    let total = partial.into_iter().fold(Moments::default(), Moments::merge);
    Ok(StageTwo {
        price: total.mean,
        variance: total.m2 / (total.count - 1.0),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs both stages for one strategy with seeds derived from `master`.
pub fn run_strategy<P: Integrand + ?Sized>(
    problem: &P,
    strategy: Strategy,
    n: usize,
    m: usize,
    master: u64,
    settings: &EngineSettings,
) -> Result<EstimatorReport> {
    let seed2 = strategy.seed(master, 2);
    let (params, stage1, seed1) = if strategy.is_crude() {
        (ISParams::identity(problem.gaussian_dim(), problem.baseline()), None, None)
    } else {
        let seed1 = strategy.seed(master, 1);
        let s1 = stage_one(problem, strategy, m, seed1, settings)?;
        let params = apply_reduction(&s1.maps, &s1.optimum)?;
        (params, Some(s1), Some(seed1))
    };
    let s2 = stage_two(problem, &params, n, seed2, settings.chunk)?;
    let std_error = (s2.variance / n as f64).sqrt();
    Ok(EstimatorReport {
        strategy,
        price: s2.price,
        variance: s2.variance,
        std_error,
        ci95: (s2.price - 1.96 * std_error, s2.price + 1.96 * std_error),
        optimal_params: stage1.as_ref().map(|s| s.optimum.clone()),
        iterations: stage1.as_ref().map_or(0, |s| s.iterations),
        grad_norm: stage1.as_ref().map_or(0.0, |s| s.grad_norm),
        converged: stage1.as_ref().is_none_or(|s| s.converged),
        cpu_seconds_stage1: stage1.as_ref().map_or(0.0, |s| s.seconds),
        cpu_seconds_stage2: s2.seconds,
        seeds: Seeds {
            stage_one: seed1,
            stage_two: seed2,
        },
        m: if strategy.is_crude() { 0 } else { m },
        n,
    })
}

/// Crude plus every requested strategy, each on its own seed streams.
/// A failing strategy leaves the others running.
pub fn run_comparison<P: Integrand + ?Sized>(
    problem: &P,
    strategies: &[Strategy],
    n: usize,
    m: usize,
    master: u64,
    settings: &EngineSettings,
) -> Vec<(Strategy, Result<EstimatorReport>)> {
    let mut list = vec![Strategy::crude()];
    for &s in strategies {
        if !list.contains(&s) {
            list.push(s);
        }
    }
    list.into_iter()
        .map(|s| (s, run_strategy(problem, s, n, m, master, settings)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure_change::BaselineIntensity;
    use crate::problem::FnIntegrand;
    use approx::assert_abs_diff_eq;

    fn toy() -> FnIntegrand<impl Fn(&[f64], &[u32]) -> f64 + Sync> {
        let base = BaselineIntensity::new(vec![0.7]).unwrap();
        FnIntegrand::new(1, base, |g: &[f64], n: &[u32]| (g[0] + n[0] as f64 - 1.0).max(0.0))
    }

    #[test]
    fn crude_has_no_stage_one() {
        let err = stage_one(&toy(), Strategy::crude(), 10, 1, &EngineSettings::default()).unwrap_err();
        assert_eq!(err, Error::CrudeHasNoStageOne);
    }

    #[test]
    fn identity_tilt_matches_crude_exactly() {
        let p = toy();
        let id = ISParams::identity(1, p.baseline());
        let a = stage_two(&p, &id, 1000, 5, 64).unwrap();
        let b = stage_two(&p, &id, 1000, 5, 256).unwrap();
        assert_abs_diff_eq!(a.price, b.price, epsilon = 1e-12);
        let direct: Vec<f64> = (0..1000)
            .map(|j| {
                let mut rng = sample_rng(5, j);
                let mut g = [0.0];
                let mut n = [0u32];
                fill_standard_normal(&mut rng, &mut g);
                fill_poisson(&mut sample_rng(count_seed(5), j), &[0.7], &mut n);
                (g[0] + n[0] as f64 - 1.0).max(0.0)
            })
            .collect();
        assert_abs_diff_eq!(a.price, direct.iter().sum::<f64>() / 1000.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_payoff_optimum_is_identity() {
        let base = BaselineIntensity::new(vec![0.4, 1.3]).unwrap();
        let p = FnIntegrand::new(2, base, |_: &[f64], _: &[u32]| 2.0);
        let s1 = stage_one(
            &p,
            Strategy::new(Tilt::GaussianPoisson, Scope::Full),
            4000,
            3,
            &EngineSettings::default(),
        )
        .unwrap();
        assert!(s1.converged);
        // the empirical optimum is the sample mean of the batch
        assert!(s1.optimum.vartheta.iter().all(|t| t.abs() < 0.1));
        assert_abs_diff_eq!(s1.optimum.lambdatilde[0], 0.4, epsilon = 0.1);
        assert_abs_diff_eq!(s1.optimum.lambdatilde[1], 1.3, epsilon = 0.1);
    }

    #[test]
    fn strategy_names_round_trip() {
        for t in Tilt::ALL {
            assert_eq!(t.name().parse::<Tilt>().unwrap(), t);
        }
        assert_eq!("gp".parse::<Tilt>().unwrap(), Tilt::GaussianPoisson);
        assert!("bogus".parse::<Tilt>().is_err());
        assert_eq!(Strategy::new(Tilt::Crude, Scope::Reduced), Strategy::crude());
        assert_eq!(
            Strategy::new(Tilt::Poisson, Scope::Reduced).to_string(),
            "poisson/reduced"
        );
    }

    #[test]
    fn stage_two_needs_two_samples() {
        let p = toy();
        let id = ISParams::identity(1, p.baseline());
        assert_eq!(stage_two(&p, &id, 1, 0, 8).unwrap_err(), Error::TooFewSamples(1));
    }

    #[test]
    fn comparison_always_includes_crude() {
        let p = toy();
        let out = run_comparison(
            &p,
            &[Strategy::new(Tilt::Gaussian, Scope::Full)],
            500,
            500,
            11,
            &EngineSettings::default(),
        );
        assert_eq!(out.len(), 2);
        assert!(out[0].0.is_crude());
        let crude = out[0].1.as_ref().unwrap();
        assert_eq!(crude.m, 0);
        assert_eq!(crude.seeds.stage_one, None);
        let g = out[1].1.as_ref().unwrap();
        assert_abs_diff_eq!(g.std_error, (g.variance / 500.0).sqrt(), epsilon = 1e-15);
    }
}
