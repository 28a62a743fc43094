//! Adaptive importance sampling for functionals of Gaussian and Poisson
//! random vectors, with jump-diffusion and BNS option pricing on top.
//!
//! The tilt shifts the mean of the Gaussian drivers and changes the
//! intensities of the Poisson drivers. Its parameters are chosen by
//! minimizing a sample average approximation of the estimator's second
//! moment with a projected Newton method, then an independent Monte Carlo
//! run prices under the optimized law.
//!
//! ```no_run
//! use jumpis::{parse_config, run_comparison};
//!
//! let cfg = parse_config(&std::fs::read_to_string("experiments/table1_merton_asian.toml")?)?;
//! for problem in cfg.problems()? {
//!     let reports = run_comparison(
//!         &problem,
//!         &cfg.strategies(),
//!         cfg.run.n,
//!         cfg.m(),
//!         cfg.run.master_seed,
//!         &cfg.engine_settings(),
//!     );
//!     for (strategy, report) in reports {
//!         println!("{strategy}: {:?}", report.map(|r| r.price));
//!     }
//! }
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod engine;
pub mod error;
pub mod measure_change;
pub mod models;
pub mod optimizer;
pub mod payoffs;
pub mod problem;
pub mod rng;
pub mod saa_objective;

pub use config::{load_config, parse_config, ExperimentConfig, OutputFormat};
pub use engine::{
    run_comparison, run_strategy, stage_one, stage_two, EngineSettings, EstimatorReport, Scope,
    Seeds, Strategy, Tilt,
};
pub use error::{Error, Result};
pub use measure_change::{
    apply_reduction, esscher_maps, log_likelihood_ratio, log_variance_weight, poisson_inverse_cdf,
    BaselineIntensity, ISParams, ReducedISParams, ReductionMaps,
};
pub use models::{correlate, simulate_path, GridSpec, ModelSpec, PathDraw, SimulatedPath};
pub use optimizer::{projected_newton, NewtonSettings, Objective, OptimResult};
pub use payoffs::PayoffSpec;
pub use problem::{FnIntegrand, Integrand, PricingProblem};
pub use saa_objective::oracle::brute_force_expectation;
pub use saa_objective::{build_batch, u_n, u_n_eval, v_n, ObjectiveEval, SampleBatch, SaaObjective};
