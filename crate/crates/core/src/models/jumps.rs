//! Jump-size laws and within-cell jump placement.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-normal price jumps: log-jump `Y ~ N(mean, std^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalJumps {
    /// Arrival rate per year.
    pub intensity: f64,
    pub mean: f64,
    pub std: f64,
}

/// Asymmetric double-exponential log-jumps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KouJumps {
    pub intensity: f64,
    /// Probability of an upward jump.
    pub p_up: f64,
    /// Decay rate of upward jumps; must exceed 1 for `E[e^Y]` to be finite.
    pub eta_up: f64,
    pub eta_down: f64,
}

/// Driver of a BNS volatility factor: a compound Poisson process with
/// exponential jumps, run on the clock `kappa * t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BnsDriver {
    pub intensity: f64,
    pub kappa: f64,
    /// Rate of the exponential jump sizes.
    pub beta: f64,
    /// Leverage, nonpositive.
    pub psi: f64,
}

impl NormalJumps {
    pub fn validate(&self, name: &str) -> Result<()> {
        check_intensity(name, self.intensity)?;
        if !self.mean.is_finite() {
            return Err(Error::invalid(format!("{name}.mean"), "must be finite"));
        }
        if !(self.std > 0.0) || !self.std.is_finite() {
            return Err(Error::invalid(format!("{name}.std"), "must be positive"));
        }
        Ok(())
    }

    /// `E[e^Y] = exp(mean + std^2 / 2)`.
    pub fn exp_moment(&self) -> f64 {
        (self.mean + 0.5 * self.std * self.std).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Normal::new(self.mean, self.std)
            .expect("validated jump law")
            .sample(rng)
    }
}

impl KouJumps {
    pub fn validate(&self, name: &str) -> Result<()> {
        check_intensity(name, self.intensity)?;
        if !(0.0..=1.0).contains(&self.p_up) {
            return Err(Error::invalid(format!("{name}.p_up"), "must lie in [0, 1]"));
        }
        if !(self.eta_up > 1.0) || !self.eta_up.is_finite() {
            return Err(Error::invalid(
                format!("{name}.eta_up"),
                "must exceed 1 (otherwise E[exp(Y)] is infinite)",
            ));
        }
        if !(self.eta_down > 0.0) || !self.eta_down.is_finite() {
            return Err(Error::invalid(format!("{name}.eta_down"), "must be positive"));
        }
        Ok(())
    }

    pub fn exp_moment(&self) -> f64 {
        self.p_up * self.eta_up / (self.eta_up - 1.0)
            + (1.0 - self.p_up) * self.eta_down / (self.eta_down + 1.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let up = rng.random::<f64>() < self.p_up;
        if up {
            Exp::new(self.eta_up).expect("validated").sample(rng)
        } else {
            -Exp::new(self.eta_down).expect("validated").sample(rng)
        }
    }
}

impl BnsDriver {
    pub fn validate(&self, name: &str) -> Result<()> {
        check_intensity(name, self.intensity)?;
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::invalid(format!("{name}.kappa"), "must be positive"));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid(format!("{name}.beta"), "must be positive"));
        }
        if !(self.psi <= 0.0) {
            return Err(Error::invalid(format!("{name}.psi"), "must be nonpositive"));
        }
        Ok(())
    }

    /// Arrival rate of jumps in calendar time.
    pub fn arrival_rate(&self) -> f64 {
        self.kappa * self.intensity
    }

    /// Compensator of `psi * Z_{kappa t}` per unit time.
    pub fn leverage_compensator(&self) -> f64 {
        self.psi * self.kappa * self.intensity / (self.beta - self.psi)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Exp::new(self.beta).expect("validated").sample(rng)
    }
}

fn check_intensity(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::invalid(
            format!("{name}.intensity"),
            "must be nonnegative",
        ));
    }
    Ok(())
}

/// Order statistics of `count` uniforms on `[start, end)`.
pub fn draw_jump_times<R: Rng + ?Sized>(start: f64, end: f64, count: u32, rng: &mut R) -> Vec<f64> {
    let width = end - start;
    let mut times: Vec<f64> = (0..count)
        .map(|_| start + width * rng.random::<f64>())
        .collect();
    times.sort_by(f64::total_cmp);
    times
}
