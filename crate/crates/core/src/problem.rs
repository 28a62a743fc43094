//! The expectation `E[f(G, N^mu)]` being estimated.

use crate::error::{Error, Result};
use crate::measure_change::{esscher_maps, BaselineIntensity, ReductionMaps};
use crate::models::{GridSpec, ModelSpec, PathDraw, PathSimulator};
use crate::payoffs::PayoffSpec;
use crate::rng::SampleRng;

/// A function of a standard normal vector and a Poisson vector.
///
/// `evaluate` may draw further randomness (jump sizes, jump times) from the
/// sample's stream; that randomness is never tilted.
pub trait Integrand: Sync {
    fn gaussian_dim(&self) -> usize;

    fn baseline(&self) -> &BaselineIntensity;

    fn poisson_dim(&self) -> usize {
        self.baseline().len()
    }

    /// Undiscounted value.
    fn evaluate(&self, g: &[f64], n: &[u32], rng: &mut SampleRng) -> f64;

    fn discount(&self) -> f64 {
        1.0
    }

    /// Maps used by the reduced strategy.
    fn reduced_maps(&self) -> Result<ReductionMaps> {
        Ok(ReductionMaps::identity(self.gaussian_dim(), self.poisson_dim()))
    }

    fn label(&self) -> String {
        "integrand".to_string()
    }
}

/// Deterministic integrand built from a closure.
pub struct FnIntegrand<F> {
    d: usize,
    base: BaselineIntensity,
    reduced: Option<ReductionMaps>,
    f: F,
}

impl<F> FnIntegrand<F>
where
    F: Fn(&[f64], &[u32]) -> f64 + Sync,
{
    pub fn new(d: usize, base: BaselineIntensity, f: F) -> Self {
        Self {
            d,
            base,
            reduced: None,
            f,
        }
    }

    pub fn with_reduction(mut self, maps: ReductionMaps) -> Result<Self> {
        let expected = (self.d, self.base.len());
        if maps.full_dims() != expected {
            return Err(Error::InvalidReduction(format!(
                "maps act on {:?}, integrand has dimensions {:?}",
                maps.full_dims(),
                expected
            )));
        }
        self.reduced = Some(maps);
        Ok(self)
    }
}

impl<F> Integrand for FnIntegrand<F>
where
    F: Fn(&[f64], &[u32]) -> f64 + Sync,
{
    fn gaussian_dim(&self) -> usize {
        self.d
    }

    fn baseline(&self) -> &BaselineIntensity {
        &self.base
    }

    fn evaluate(&self, g: &[f64], n: &[u32], _rng: &mut SampleRng) -> f64 {
        (self.f)(g, n)
    }

    fn reduced_maps(&self) -> Result<ReductionMaps> {
        Ok(self
            .reduced
            .clone()
            .unwrap_or_else(|| ReductionMaps::identity(self.d, self.base.len())))
    }

    fn label(&self) -> String {
        "fn".to_string()
    }
}

/// An option on a discretized jump model.
#[derive(Debug, Clone)]
pub struct PricingProblem {
    simulator: PathSimulator,
    payoff: PayoffSpec,
    base: BaselineIntensity,
    reduced: ReductionMaps,
    discount: f64,
}

impl PricingProblem {
    pub fn new(model: ModelSpec, grid: GridSpec, payoff: PayoffSpec) -> Result<Self> {
        model.validate()?;
        payoff.validate(model.assets())?;
        let intensities = model.cell_intensities(&grid);
        let base = BaselineIntensity::new(intensities).map_err(|_| {
            Error::invalid(
                "jump intensity",
                "every jump driver needs a positive intensity to be priced",
            )
        })?;
        let reduced = esscher_maps(&grid, model.assets())?;
        let discount = (-model.rate() * grid.maturity()).exp();
        let simulator = PathSimulator::new(model, grid)?;
        Ok(Self {
            simulator,
            payoff,
            base,
            reduced,
            discount,
        })
    }

    pub fn model(&self) -> &ModelSpec {
        self.simulator.model()
    }

    pub fn grid(&self) -> &GridSpec {
        self.simulator.grid()
    }

    pub fn payoff(&self) -> &PayoffSpec {
        &self.payoff
    }

    pub fn simulator(&self) -> &PathSimulator {
        &self.simulator
    }

    /// Same model and grid, different payoff.
    pub fn with_payoff(&self, payoff: PayoffSpec) -> Result<Self> {
        payoff.validate(self.model().assets())?;
        Ok(Self {
            payoff,
            ..self.clone()
        })
    }

    pub fn draw(&self, g: &[f64], n: &[u32], rng: &mut SampleRng) -> PathDraw {
        PathDraw::complete(self.model(), self.grid(), g.to_vec(), n.to_vec(), rng)
    }
}

impl Integrand for PricingProblem {
    fn gaussian_dim(&self) -> usize {
        self.model().assets() * self.grid().steps()
    }

    fn baseline(&self) -> &BaselineIntensity {
        &self.base
    }

    fn evaluate(&self, g: &[f64], n: &[u32], rng: &mut SampleRng) -> f64 {
        let draw = self.draw(g, n, rng);
        let path = self.simulator.simulate_unchecked(&draw);
        self.payoff.evaluate(&path)
    }

    fn discount(&self) -> f64 {
        self.discount
    }

    fn reduced_maps(&self) -> Result<ReductionMaps> {
        Ok(self.reduced.clone())
    }

    fn label(&self) -> String {
        format!("{}/{}", self.model().name(), self.payoff.name())
    }
}
