//! Undiscounted option payoffs on simulated paths. Monitoring dates are
//! `t_1, ..., t_J`; `t_0` is never monitored.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::SimulatedPath;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffSpec {
    /// `((1/J) sum_j S_{t_j} - K)_+`.
    Asian { strike: f64 },
    /// `(S_T - K)_+ 1{S_{t_j} < U for all j}`.
    BarrierUpOut { strike: f64, upper: f64 },
    /// `(sum_i w_i S^i_T - K)_+`.
    Basket { strike: f64, weights: Vec<f64> },
    /// Basket payoff knocked out when any asset ever sits at or below its barrier.
    BasketDownOut {
        strike: f64,
        weights: Vec<f64>,
        lower: Vec<f64>,
    },
}

impl PayoffSpec {
    pub fn strike(&self) -> f64 {
        match self {
            PayoffSpec::Asian { strike }
            | PayoffSpec::BarrierUpOut { strike, .. }
            | PayoffSpec::Basket { strike, .. }
            | PayoffSpec::BasketDownOut { strike, .. } => *strike,
        }
    }

    pub fn with_strike(&self, k: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            PayoffSpec::Asian { strike }
            | PayoffSpec::BarrierUpOut { strike, .. }
            | PayoffSpec::Basket { strike, .. }
            | PayoffSpec::BasketDownOut { strike, .. } => *strike = k,
        }
        out
    }

    pub fn name(&self) -> &'static str {
        match self {
            PayoffSpec::Asian { .. } => "asian",
            PayoffSpec::BarrierUpOut { .. } => "barrier_up_out",
            PayoffSpec::Basket { .. } => "basket",
            PayoffSpec::BasketDownOut { .. } => "basket_down_out",
        }
    }

    /// Checks the payoff's own fields and its fit with `assets`.
    pub fn validate(&self, assets: usize) -> Result<()> {
        if !self.strike().is_finite() {
            return Err(Error::invalid("payoff.strike", "must be finite"));
        }
        match self {
            PayoffSpec::Asian { .. } => {
                Error::check_len("assets of a single-asset payoff", 1, assets)?;
            }
            PayoffSpec::BarrierUpOut { upper, .. } => {
                Error::check_len("assets of a single-asset payoff", 1, assets)?;
                if !(*upper > 0.0) {
                    return Err(Error::invalid("payoff.upper", "must be positive"));
                }
            }
            PayoffSpec::Basket { weights, .. } => {
                Error::check_len("payoff.weights", assets, weights.len())?;
            }
            PayoffSpec::BasketDownOut { weights, lower, .. } => {
                Error::check_len("payoff.weights", assets, weights.len())?;
                Error::check_len("payoff.lower", assets, lower.len())?;
                if lower.iter().any(|&b| !(b >= 0.0)) {
                    return Err(Error::invalid("payoff.lower", "must be nonnegative"));
                }
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, path: &SimulatedPath) -> f64 {
        match self {
            PayoffSpec::Asian { strike } => asian(path.asset(0), *strike),
            PayoffSpec::BarrierUpOut { strike, upper } => {
                barrier_up_out(path.asset(0), *strike, *upper)
            }
            PayoffSpec::Basket { strike, weights } => basket(&path.terminal(), weights, *strike),
            PayoffSpec::BasketDownOut {
                strike,
                weights,
                lower,
            } => {
                let alive = (0..path.assets())
                    .all(|i| path.asset(i)[1..].iter().all(|&s| s > lower[i]));
                if alive {
                    basket(&path.terminal(), weights, *strike)
                } else {
                    0.0
                }
            }
        }
    }
}

/// `path` holds `S_{t_0}, ..., S_{t_J}`.
pub fn asian(path: &[f64], strike: f64) -> f64 {
    let monitored = &path[1..];
    let mean = monitored.iter().sum::<f64>() / monitored.len() as f64;
    (mean - strike).max(0.0)
}

pub fn barrier_up_out(path: &[f64], strike: f64, upper: f64) -> f64 {
    if path[1..].iter().all(|&s| s < upper) {
        (path[path.len() - 1] - strike).max(0.0)
    } else {
        0.0
    }
}

pub fn basket(terminal: &[f64], weights: &[f64], strike: f64) -> f64 {
    let value: f64 = terminal.iter().zip(weights).map(|(s, w)| s * w).sum();
    (value - strike).max(0.0)
}

/// `paths[i]` holds asset `i` at `t_0, ..., t_J`.
pub fn basket_down_out(paths: &[&[f64]], weights: &[f64], strike: f64, lower: &[f64]) -> f64 {
    let alive = paths
        .iter()
        .zip(lower)
        .all(|(p, &b)| p[1..].iter().all(|&s| s > b));
    if !alive {
        return 0.0;
    }
    let terminal: Vec<f64> = paths.iter().map(|p| p[p.len() - 1]).collect();
    basket(&terminal, weights, strike)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn asian_examples() {
        assert_eq!(asian(&[100.0; 13], 90.0), 10.0);
        assert_eq!(asian(&[100.0; 13], 110.0), 0.0);
        assert_eq!(asian(&[100.0, 110.0, 120.0], 100.0), 15.0);
        // t_0 is excluded from the average
        assert_eq!(asian(&[1000.0, 100.0, 100.0], 100.0), 0.0);
    }

    #[test]
    fn barrier_examples() {
        assert_eq!(barrier_up_out(&[100.0, 160.0, 150.0], 100.0, 155.0), 0.0);
        assert_eq!(barrier_up_out(&[100.0, 140.0, 150.0], 100.0, 155.0), 50.0);
        assert_eq!(barrier_up_out(&[100.0, 155.0, 150.0], 100.0, 155.0), 0.0);
        // t_0 is not a monitoring date
        assert_eq!(barrier_up_out(&[200.0, 140.0, 150.0], 100.0, 155.0), 50.0);
    }

    #[test]
    fn basket_examples() {
        let w = [0.5, 0.5, -0.5, -0.5];
        let s = [100.0; 4];
        assert_eq!(basket(&s, &w, 10.0), 0.0);
        assert_eq!(basket(&s, &w, -10.0), 10.0);
        assert_eq!(basket(&[120.0], &[1.0], 100.0), 20.0);
    }

    #[test]
    fn basket_down_out_examples() {
        let a: &[f64] = &[100.0, 90.0, 105.0];
        let b: &[f64] = &[100.0, 80.0, 100.0];
        assert_eq!(basket_down_out(&[a, b], &[1.0, -1.0], 0.0, &[85.0, 80.0]), 0.0);
        assert_eq!(basket_down_out(&[a, b], &[1.0, -1.0], 0.0, &[85.0, 79.0]), 5.0);
        assert_eq!(
            basket_down_out(&[a, b], &[1.0, -1.0], -1.0, &[0.0, 0.0]),
            basket(&[105.0, 100.0], &[1.0, -1.0], -1.0)
        );
    }

    #[test]
    fn validation() {
        assert!(PayoffSpec::Asian { strike: 100.0 }.validate(2).is_err());
        assert!(PayoffSpec::BarrierUpOut {
            strike: 100.0,
            upper: 0.0
        }
        .validate(1)
        .is_err());
        assert!(PayoffSpec::Basket {
            strike: 0.0,
            weights: vec![1.0]
        }
        .validate(2)
        .is_err());
        assert!(PayoffSpec::BasketDownOut {
            strike: 0.0,
            weights: vec![1.0, 1.0],
            lower: vec![80.0, 80.0]
        }
        .validate(2)
        .is_ok());
    }

    proptest! {
        #[test]
        fn payoffs_are_monotone_and_dominated(
            path in prop::collection::vec(1.0f64..300.0, 2..20),
            k1 in -50.0f64..200.0,
            dk in 0.0f64..50.0,
            upper in 50.0f64..400.0,
        ) {
            let k2 = k1 + dk;
            prop_assert!(asian(&path, k2) <= asian(&path, k1));
            let term = [path[path.len() - 1]];
            prop_assert!(basket(&term, &[1.0], k2) <= basket(&term, &[1.0], k1));
            let b = barrier_up_out(&path, k1, upper);
            prop_assert!(b >= 0.0 && b.is_finite());
            prop_assert!(b <= basket(&term, &[1.0], k1));
            let p: &[f64] = &path;
            let d = basket_down_out(&[p], &[1.0], k1, &[upper / 4.0]);
            prop_assert!(d >= 0.0 && d <= basket(&term, &[1.0], k1));
        }
    }
}
