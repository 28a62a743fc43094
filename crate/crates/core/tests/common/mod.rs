#![allow(dead_code)]

use jumpis::measure_change::esscher_maps_from_times;
use jumpis::{BaselineIntensity, FnIntegrand, ReductionMaps};

/// Per-cell baseline of the toy problem: intensity 2 per year on two half-year steps.
pub const TOY_MU: [f64; 2] = [1.0, 1.0];

/// A smoothed call on `exp(0.3 (g1 + g2) + 0.25 (n1 + n2) - 0.5)`.
pub fn toy_payoff(g: &[f64], n: &[u32]) -> f64 {
    let s = (0.3 * (g[0] + g[1]) + 0.25 * (n[0] + n[1]) as f64 - 0.5).exp();
    let z = 4.0 * (s - 1.0);
    let softplus = if z > 30.0 { z } else { z.exp().ln_1p() };
    softplus / 4.0
}

pub fn toy_base() -> BaselineIntensity {
    BaselineIntensity::new(TOY_MU.to_vec()).unwrap()
}

pub fn toy_maps() -> ReductionMaps {
    esscher_maps_from_times(&[0.5, 1.0], 1).unwrap()
}

pub type ToyPayoff = fn(&[f64], &[u32]) -> f64;

pub fn toy_problem() -> FnIntegrand<ToyPayoff> {
    FnIntegrand::new(2, toy_base(), toy_payoff as ToyPayoff)
        .with_reduction(toy_maps())
        .unwrap()
}

/// `max |a - b| / max |b|`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / scale
}

pub fn experiment(name: &str) -> jumpis::ExperimentConfig {
    let path = format!("{}/../../experiments/{name}.toml", env!("CARGO_MANIFEST_DIR"));
    jumpis::load_config(std::path::Path::new(&path)).unwrap()
}

/// The problem of an experiment file at its `k`-th strike.
pub fn experiment_problem(name: &str, k: usize) -> jumpis::PricingProblem {
    experiment(name).problems().unwrap().swap_remove(k)
}

/// Mean and standard error of `e^{-rT} S^i_T / S^i_0` per asset over `n`
/// crude paths.
pub fn martingale_ratios(
    model: &jumpis::ModelSpec,
    grid: &jumpis::GridSpec,
    n: u64,
    seed: u64,
) -> Vec<(f64, f64)> {
    use jumpis::rng::{count_seed, fill_poisson, fill_standard_normal, sample_rng};
    use rayon::prelude::*;

    let sim = jumpis::models::PathSimulator::new(model.clone(), grid.clone()).unwrap();
    let mu = model.cell_intensities(grid);
    let assets = model.assets();
    let disc = (-model.rate() * grid.maturity()).exp();
    let spots = model.spots().to_vec();
    let (sum, sum_sq) = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut rng = sample_rng(seed, j);
            let mut g = vec![0.0; assets * grid.steps()];
            let mut counts = vec![0u32; mu.len()];
            fill_standard_normal(&mut rng, &mut g);
            fill_poisson(&mut sample_rng(count_seed(seed), j), &mu, &mut counts);
            let draw = jumpis::PathDraw::complete(model, grid, g, counts, &mut rng);
            let path = sim.simulate(&draw).unwrap();
            let x: Vec<f64> = path.terminal().iter().zip(&spots).map(|(s, s0)| disc * s / s0).collect();
            let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
            (x, x2)
        })
        .reduce(
            || (vec![0.0; assets], vec![0.0; assets]),
            |(mut a, mut b), (c, d)| {
                for i in 0..a.len() {
                    a[i] += c[i];
                    b[i] += d[i];
                }
                (a, b)
            },
        );
    let nf = n as f64;
    sum.iter()
        .zip(&sum_sq)
        .map(|(s, s2)| {
            let mean = s / nf;
            let var = (s2 / nf - mean * mean) * nf / (nf - 1.0);
            (mean, (var / nf).sqrt())
        })
        .collect()
}

/// Asymptotic p-value of the one-sample Kolmogorov-Smirnov statistic `d`
/// at sample size `n`.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let x = d * (n as f64).sqrt();
    let p: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            let sign = if k as u64 % 2 == 1 { 1.0 } else { -1.0 };
            2.0 * sign * (-2.0 * k * k * x * x).exp()
        })
        .sum();
    p.clamp(0.0, 1.0)
}

/// Kolmogorov-Smirnov distance of `sample` (any order) to the uniform law on `[0, 1]`.
pub fn ks_uniform(sample: &mut [f64]) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &u)| (u - i as f64 / n).max((i + 1) as f64 / n - u))
        .fold(0.0, f64::max)
}
