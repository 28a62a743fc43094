//! Declarative experiment files (TOML).
//!
//! ```toml
//! [model]
//! kind = "merton"        # merton | kou | bns
//! assets = 1
//! s0 = 100.0             # scalar or one value per asset
//! sigma = 0.25
//! r = 0.05
//!
//! [model.jumps]          # law of every per-asset driver
//! intensity = 1.0
//! mean = 0.5
//! std = 0.2
//!
//! [payoff]
//! kind = "asian"
//! strikes = [90.0, 100.0, 110.0]
//!
//! [grid]
//! maturity = 1.0
//! steps = 12
//!
//! [run]
//! n = 50000
//! strategies = ["crude", "gaussian", "poisson", "gaussian_poisson"]
//! scopes = ["full", "reduced"]
//! ```
//!
//! Unknown keys are rejected and every error names the offending field.

use serde::{Deserialize, Serialize};

use crate::engine::{EngineSettings, Scope, Strategy, Tilt};
use crate::error::{Error, Result};
use crate::models::{
    driver_count, BnsDriver, BnsParams, Correlation, GridSpec, KouJumps, KouParams, MertonParams,
    ModelSpec, NormalJumps,
};
use crate::optimizer::NewtonSettings;
use crate::payoffs::PayoffSpec;
use crate::problem::PricingProblem;
use crate::saa_objective::DEFAULT_CHUNK;

/// A scalar shared by every slot, or one value per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn expand(&self, len: usize, path: &str) -> Result<Vec<T>> {
        match self {
            OneOrMany::One(v) => Ok(vec![v.clone(); len]),
            OneOrMany::Many(v) if v.len() == len => Ok(v.clone()),
            OneOrMany::Many(v) => Err(config_error(
                path,
                format!("expected 1 or {len} values, found {}", v.len()),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Merton,
    Kou,
    Bns,
}

/// Law of a jump driver. Which fields apply depends on the model kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpSection {
    pub intensity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_up: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_up: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_down: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub assets: usize,
    pub s0: OneOrMany<f64>,
    /// Diffusion volatility (Merton, Kou).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<OneOrMany<f64>>,
    /// Initial squared volatility (BNS).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma0_sq: Option<OneOrMany<f64>>,
    pub r: f64,
    /// Equicorrelation; ignored for a single asset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Vec<Vec<f64>>>,
    /// Law of every per-asset driver.
    pub jumps: JumpSection,
    /// The driver shared by all assets; defaults to the per-asset law.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub systemic: Option<JumpSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffSection {
    pub kind: PayoffKind,
    pub strikes: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<OneOrMany<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<OneOrMany<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffKind {
    Asian,
    BarrierUpOut,
    Basket,
    BasketDownOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub maturity: f64,
    pub steps: usize,
}

fn default_strategies() -> Vec<Tilt> {
    Tilt::ALL.to_vec()
}

fn default_scopes() -> Vec<Scope> {
    vec![Scope::Full, Scope::Reduced]
}

fn default_seed() -> u64 {
    42
}

fn default_chunk() -> usize {
    DEFAULT_CHUNK
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub n: usize,
    /// First-stage size; defaults to `n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Tilt>,
    #[serde(default = "default_scopes")]
    pub scopes: Vec<Scope>,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default = "default_chunk")]
    pub worker_chunk: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Table,
    Records,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Free-form label printed above tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub model: ModelSection,
    pub payoff: PayoffSection,
    pub grid: GridSection,
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn config_error(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

fn reparent(err: Error, section: &str) -> Error {
    match err {
        Error::InvalidParameter { name, reason } => config_error(&format!("{section}.{name}"), reason),
        Error::Config { .. } => err,
        other => config_error(section, other.to_string()),
    }
}

/// Validation error whose parameter name is already a full path.
fn at_path(err: Error) -> Error {
    match err {
        Error::InvalidParameter { name, reason } => config_error(&name, reason),
        other => other,
    }
}

fn require(v: Option<f64>, path: &str) -> Result<f64> {
    v.ok_or_else(|| config_error(path, "missing field for this model kind"))
}

fn forbid(present: bool, path: &str, kind: &str) -> Result<()> {
    if present {
        Err(config_error(path, format!("not a parameter of the {kind} model")))
    } else {
        Ok(())
    }
}

impl JumpSection {
    fn merton(&self, path: &str) -> Result<NormalJumps> {
        forbid(self.p_up.is_some(), &format!("{path}.p_up"), "merton")?;
        forbid(self.eta_up.is_some(), &format!("{path}.eta_up"), "merton")?;
        forbid(self.eta_down.is_some(), &format!("{path}.eta_down"), "merton")?;
        forbid(self.kappa.is_some(), &format!("{path}.kappa"), "merton")?;
        forbid(self.beta.is_some(), &format!("{path}.beta"), "merton")?;
        forbid(self.psi.is_some(), &format!("{path}.psi"), "merton")?;
        let j = NormalJumps {
            intensity: self.intensity,
            mean: require(self.mean, &format!("{path}.mean"))?,
            std: require(self.std, &format!("{path}.std"))?,
        };
        j.validate(path).map_err(at_path)?;
        Ok(j)
    }

    fn kou(&self, path: &str) -> Result<KouJumps> {
        forbid(self.mean.is_some(), &format!("{path}.mean"), "kou")?;
        forbid(self.std.is_some(), &format!("{path}.std"), "kou")?;
        forbid(self.kappa.is_some(), &format!("{path}.kappa"), "kou")?;
        forbid(self.beta.is_some(), &format!("{path}.beta"), "kou")?;
        forbid(self.psi.is_some(), &format!("{path}.psi"), "kou")?;
        let j = KouJumps {
            intensity: self.intensity,
            p_up: require(self.p_up, &format!("{path}.p_up"))?,
            eta_up: require(self.eta_up, &format!("{path}.eta_up"))?,
            eta_down: require(self.eta_down, &format!("{path}.eta_down"))?,
        };
        j.validate(path).map_err(at_path)?;
        Ok(j)
    }

    fn bns(&self, path: &str) -> Result<BnsDriver> {
        forbid(self.mean.is_some(), &format!("{path}.mean"), "bns")?;
        forbid(self.std.is_some(), &format!("{path}.std"), "bns")?;
        forbid(self.p_up.is_some(), &format!("{path}.p_up"), "bns")?;
        forbid(self.eta_up.is_some(), &format!("{path}.eta_up"), "bns")?;
        forbid(self.eta_down.is_some(), &format!("{path}.eta_down"), "bns")?;
        let d = BnsDriver {
            intensity: self.intensity,
            kappa: require(self.kappa, &format!("{path}.kappa"))?,
            beta: require(self.beta, &format!("{path}.beta"))?,
            psi: self.psi.unwrap_or(0.0),
        };
        d.validate(path).map_err(at_path)?;
        Ok(d)
    }
}

impl ModelSection {
    /// Per-driver jump laws: per-asset drivers first, the systemic one last.
    fn driver_sections(&self) -> Result<Vec<(String, JumpSection)>> {
        let assets = self.assets;
        let mut out = vec![("model.jumps".to_string(), self.jumps.clone()); assets];
        if driver_count(assets) > assets {
            let sys = self.systemic.clone().unwrap_or_else(|| self.jumps.clone());
            out.push(("model.systemic".to_string(), sys));
        } else if self.systemic.is_some() {
            return Err(config_error(
                "model.systemic",
                "a single asset has no systemic driver",
            ));
        }
        Ok(out)
    }

    fn correlation(&self) -> Result<Correlation> {
        match (&self.rho, &self.correlation) {
            (Some(_), Some(_)) => Err(config_error(
                "model.correlation",
                "give either rho or correlation, not both",
            )),
            (_, Some(m)) => Ok(Correlation::Matrix(m.clone())),
            (rho, None) => Ok(Correlation::Equi(if self.assets > 1 {
                rho.unwrap_or(0.0)
            } else {
                0.0
            })),
        }
    }

    pub fn build(&self) -> Result<ModelSpec> {
        if self.assets == 0 {
            return Err(config_error("model.assets", "need at least one asset"));
        }
        let s0 = self.s0.expand(self.assets, "model.s0")?;
        let correlation = self.correlation()?;
        let drivers = self.driver_sections()?;
        let model = match self.kind {
            ModelKind::Merton | ModelKind::Kou => {
                forbid(self.sigma0_sq.is_some(), "model.sigma0_sq", "jump-diffusion")?;
                let sigma = self
                    .sigma
                    .as_ref()
                    .ok_or_else(|| config_error("model.sigma", "missing field for this model kind"))?
                    .expand(self.assets, "model.sigma")?;
                if self.kind == ModelKind::Merton {
                    let jumps = drivers
                        .iter()
                        .map(|(p, j)| j.merton(p))
                        .collect::<Result<Vec<_>>>()?;
                    ModelSpec::Merton(MertonParams {
                        s0,
                        sigma,
                        jumps,
                        r: self.r,
                        correlation,
                    })
                } else {
                    let jumps = drivers
                        .iter()
                        .map(|(p, j)| j.kou(p))
                        .collect::<Result<Vec<_>>>()?;
                    ModelSpec::Kou(KouParams {
                        s0,
                        sigma,
                        jumps,
                        r: self.r,
                        correlation,
                    })
                }
            }
            ModelKind::Bns => {
                forbid(self.sigma.is_some(), "model.sigma", "bns")?;
                let sigma0_sq = self
                    .sigma0_sq
                    .as_ref()
                    .ok_or_else(|| config_error("model.sigma0_sq", "missing field for this model kind"))?
                    .expand(self.assets, "model.sigma0_sq")?;
                let drivers = drivers
                    .iter()
                    .map(|(p, j)| j.bns(p))
                    .collect::<Result<Vec<_>>>()?;
                ModelSpec::Bns(BnsParams {
                    s0,
                    sigma0_sq,
                    drivers,
                    r: self.r,
                    correlation,
                })
            }
        };
        model.validate().map_err(|e| match e {
            Error::SingularCorrelation => config_error(
                if self.correlation.is_some() {
                    "model.correlation"
                } else {
                    "model.rho"
                },
                "correlation matrix is not positive definite",
            ),
            other => reparent(other, "model"),
        })?;
        Ok(model)
    }
}

impl PayoffSection {
    pub fn build(&self, assets: usize) -> Result<Vec<PayoffSpec>> {
        if self.strikes.is_empty() {
            return Err(config_error("payoff.strikes", "need at least one strike"));
        }
        let kind = self.kind;
        let single = matches!(kind, PayoffKind::Asian | PayoffKind::BarrierUpOut);
        forbid(
            self.upper.is_some() && kind != PayoffKind::BarrierUpOut,
            "payoff.upper",
            "payoff",
        )?;
        forbid(
            self.lower.is_some() && kind != PayoffKind::BasketDownOut,
            "payoff.lower",
            "payoff",
        )?;
        forbid(self.weights.is_some() && single, "payoff.weights", "payoff")?;
        let weights = || -> Result<Vec<f64>> {
            self.weights
                .as_ref()
                .ok_or_else(|| config_error("payoff.weights", "missing field for this payoff kind"))?
                .expand(assets, "payoff.weights")
        };
        let template = match kind {
            PayoffKind::Asian => PayoffSpec::Asian { strike: 0.0 },
            PayoffKind::BarrierUpOut => PayoffSpec::BarrierUpOut {
                strike: 0.0,
                upper: self
                    .upper
                    .ok_or_else(|| config_error("payoff.upper", "missing field for this payoff kind"))?,
            },
            PayoffKind::Basket => PayoffSpec::Basket {
                strike: 0.0,
                weights: weights()?,
            },
            PayoffKind::BasketDownOut => PayoffSpec::BasketDownOut {
                strike: 0.0,
                weights: weights()?,
                lower: self
                    .lower
                    .as_ref()
                    .ok_or_else(|| config_error("payoff.lower", "missing field for this payoff kind"))?
                    .expand(assets, "payoff.lower")?,
            },
        };
        self.strikes
            .iter()
            .map(|&k| {
                let p = template.with_strike(k);
                p.validate(assets).map_err(|e| reparent(e, "payoff"))?;
                Ok(p)
            })
            .collect()
    }
}

impl ExperimentConfig {
    pub fn model_spec(&self) -> Result<ModelSpec> {
        self.model.build()
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        if self.grid.steps == 0 {
            return Err(config_error("grid.steps", "need at least one step"));
        }
        GridSpec::regular(self.grid.maturity, self.grid.steps).map_err(|e| reparent(e, "grid"))
    }

    pub fn payoffs(&self) -> Result<Vec<PayoffSpec>> {
        self.payoff.build(self.model.assets)
    }

    /// One pricing problem per strike.
    pub fn problems(&self) -> Result<Vec<PricingProblem>> {
        let model = self.model_spec()?;
        let grid = self.grid_spec()?;
        let payoffs = self.payoffs()?;
        let first = PricingProblem::new(model, grid, payoffs[0].clone())
            .map_err(|e| reparent(e, "model"))?;
        let mut out = vec![first.clone()];
        for p in &payoffs[1..] {
            out.push(first.with_payoff(p.clone())?);
        }
        Ok(out)
    }

    /// Requested strategies; the crude one is always first.
    pub fn strategies(&self) -> Vec<Strategy> {
        let mut out = vec![Strategy::crude()];
        for &scope in &self.run.scopes {
            for &tilt in &self.run.strategies {
                let s = Strategy::new(tilt, scope);
                if !out.contains(&s) {
                    out.push(s);
                }
            }
        }
        out
    }

    pub fn m(&self) -> usize {
        self.run.m.unwrap_or(self.run.n)
    }

    pub fn engine_settings(&self) -> EngineSettings {
        let defaults = NewtonSettings::default();
        EngineSettings {
            newton: NewtonSettings {
                epsilon: self.run.epsilon.unwrap_or(defaults.epsilon),
                max_iter: self.run.max_iter.unwrap_or(defaults.max_iter),
                lambda_floor: None,
            },
            chunk: self.run.worker_chunk,
        }
    }

    /// Checks everything that can be checked before sampling.
    pub fn validate(&self) -> Result<()> {
        if self.run.n < 2 {
            return Err(config_error("run.n", "need at least 2 samples"));
        }
        if self.m() == 0 {
            return Err(config_error("run.m", "need at least 1 sample"));
        }
        if self.run.worker_chunk == 0 {
            return Err(config_error("run.worker_chunk", "must be positive"));
        }
        if let Some(e) = self.run.epsilon {
            if !(e > 0.0) {
                return Err(config_error("run.epsilon", "must be positive"));
            }
        }
        self.problems().map(|_| ())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }
}

/// Parses and validates an experiment file.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| config_error("<document>", e.message()))?;
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        config_error(&path, e.into_inner().message())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(&path.display().to_string(), e.to_string()))?;
    parse_config(&text)
}
