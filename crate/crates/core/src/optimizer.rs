//! Projected Newton iteration on `(ϑ, λ̃)`.
//!
//! Each step solves `H d = -∇` by Cholesky. Gaussian coordinates take the
//! full step; an intensity coordinate whose tentative value is not above
//! its floor is halved instead (and never pushed below the floor). A step
//! that raises the objective is halved until it does not, which only kicks
//! in on small, badly conditioned batches.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::measure_change::ReducedISParams;
use crate::saa_objective::ObjectiveEval;

/// A smooth convex function of a reduced point.
pub trait Objective {
    fn theta_dim(&self) -> usize;

    fn lambda_dim(&self) -> usize;

    fn value(&self, x: &ReducedISParams) -> Result<f64>;

    fn evaluate(&self, x: &ReducedISParams) -> Result<ObjectiveEval>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonSettings {
    pub epsilon: f64,
    pub max_iter: usize,
    /// Lower bound per intensity coordinate; `None` keeps only positivity.
    pub lambda_floor: Option<Vec<f64>>,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            max_iter: 50,
            lambda_floor: None,
        }
    }
}

impl NewtonSettings {
    /// Floor at `1e-4` times a reference intensity.
    pub fn with_relative_floor(mut self, reference: &[f64]) -> Self {
        self.lambda_floor = Some(reference.iter().map(|r| 1e-4 * r).collect());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub point: ReducedISParams,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value at every iterate, starting with `x0`.
    pub history: Vec<f64>,
}

/// Gradient norm ignoring intensity coordinates held at their floor by a
/// positive derivative.
fn projected_norm(grad: &[f64], lambda: &[f64], floor: &[f64], dt: usize) -> f64 {
    grad.iter()
        .enumerate()
        .filter(|&(a, &g)| a < dt || !(at_floor(lambda[a - dt], floor[a - dt]) && g > 0.0))
        .map(|(_, g)| g * g)
        .sum::<f64>()
        .sqrt()
}

fn at_floor(x: f64, floor: f64) -> bool {
    floor > 0.0 && x <= floor * (1.0 + 1e-12)
}

/// Solves `H d = rhs` by Cholesky, retrying once with a small ridge.
pub fn newton_direction(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = h.clone().cholesky() {
        let d = ch.solve(rhs);
        if d.iter().all(|v| v.is_finite()) {
            return Ok(d);
        }
    }
    let dim = h.nrows().max(1) as f64;
    let ridge = 1e-10 * h.trace().abs() / dim;
    let ridge = if ridge > 0.0 { ridge } else { 1e-10 };
    let mut shifted = h.clone();
    for i in 0..h.nrows() {
        shifted[(i, i)] += ridge;
    }
    let ch = shifted.cholesky().ok_or(Error::HessianSolve)?;
    let d = ch.solve(rhs);
    if d.iter().all(|v| v.is_finite()) {
        Ok(d)
    } else {
        Err(Error::HessianSolve)
    }
}

/// Step halvings tried before a Newton step that raises the objective is
/// taken anyway.
const MAX_HALVINGS: usize = 40;

pub fn projected_newton<O: Objective + ?Sized>(
    objective: &O,
    x0: &ReducedISParams,
    settings: &NewtonSettings,
) -> Result<OptimResult> {
    let dt = objective.theta_dim();
    let dl = objective.lambda_dim();
    Error::check_len("starting shift", dt, x0.vartheta.len())?;
    Error::check_len("starting intensity", dl, x0.lambdatilde.len())?;
    if !(settings.epsilon > 0.0) {
        return Err(Error::invalid("epsilon", "must be positive"));
    }
    let floor = match &settings.lambda_floor {
        Some(f) => {
            Error::check_len("intensity floor", dl, f.len())?;
            f.clone()
        }
        None => vec![0.0; dl],
    };
    let mut x = x0.clone();
    for (l, &f) in x.lambdatilde.iter_mut().zip(&floor) {
        *l = l.max(f);
    }
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let eval = objective.evaluate(&x)?;
        history.push(eval.value);
        let grad_norm = projected_norm(&eval.gradient, &x.lambdatilde, &floor, dt);
        if grad_norm <= settings.epsilon || iterations >= settings.max_iter {
            return Ok(OptimResult {
                value: eval.value,
                converged: grad_norm <= settings.epsilon,
                point: x,
                grad_norm,
                iterations,
                history,
            });
        }

        // an intensity with no curvature and a rising slope is linear in that
        // coordinate, so its minimum sits on the floor
        let flat: Vec<usize> = (dt..dt + dl)
            .filter(|&a| eval.hessian[(a, a)] <= 0.0 && eval.gradient[a] > 0.0)
            .collect();
        let free: Vec<usize> = (0..dt + dl)
            .filter(|&a| {
                a < dt
                    || !(flat.contains(&a)
                        || at_floor(x.lambdatilde[a - dt], floor[a - dt]) && eval.gradient[a] > 0.0)
            })
            .collect();
        let h = DMatrix::from_fn(free.len(), free.len(), |r, c| eval.hessian[(free[r], free[c])]);
        let rhs = DVector::from_iterator(free.len(), free.iter().map(|&a| -eval.gradient[a]));
        let step = newton_direction(&h, &rhs)?;

        let mut scale = 1.0;
        let mut trial;
        let mut halvings = 0;
        loop {
            trial = x.clone();
            for &a in &flat {
                let i = a - dt;
                trial.lambdatilde[i] = if floor[i] > 0.0 { floor[i] } else { 0.5 * x.lambdatilde[i] };
            }
            for (s, &a) in free.iter().enumerate() {
                if a < dt {
                    trial.vartheta[a] += scale * step[s];
                } else {
                    let i = a - dt;
                    let tentative = x.lambdatilde[i] + scale * step[s];
                    trial.lambdatilde[i] = if tentative > floor[i] {
                        tentative
                    } else {
                        (0.5 * x.lambdatilde[i]).max(floor[i])
                    };
                }
            }
            let value = objective.value(&trial)?;
            if value <= eval.value + 1e-12 * eval.value.abs() || halvings >= MAX_HALVINGS {
                break;
            }
            scale *= 0.5;
            halvings += 1;
        }
        x = trial;
        iterations += 1;
    }
}

/// Which blocks of the reduced point are optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreeBlocks {
    pub theta: bool,
    pub lambda: bool,
}

/// An objective with one block frozen at the value held in `anchor`.
pub struct Restricted<'a, O: ?Sized> {
    inner: &'a O,
    anchor: ReducedISParams,
    free: FreeBlocks,
}

impl<'a, O: Objective + ?Sized> Restricted<'a, O> {
    pub fn new(inner: &'a O, anchor: ReducedISParams, free: FreeBlocks) -> Result<Self> {
        Error::check_len("anchor shift", inner.theta_dim(), anchor.vartheta.len())?;
        Error::check_len("anchor intensity", inner.lambda_dim(), anchor.lambdatilde.len())?;
        Ok(Self {
            inner,
            anchor,
            free,
        })
    }

    /// The free coordinates of `full`.
    pub fn restrict(&self, full: &ReducedISParams) -> ReducedISParams {
        ReducedISParams {
            vartheta: if self.free.theta {
                full.vartheta.clone()
            } else {
                Vec::new()
            },
            lambdatilde: if self.free.lambda {
                full.lambdatilde.clone()
            } else {
                Vec::new()
            },
        }
    }

    /// Fills the frozen block from the anchor.
    pub fn embed(&self, x: &ReducedISParams) -> ReducedISParams {
        ReducedISParams {
            vartheta: if self.free.theta {
                x.vartheta.clone()
            } else {
                self.anchor.vartheta.clone()
            },
            lambdatilde: if self.free.lambda {
                x.lambdatilde.clone()
            } else {
                self.anchor.lambdatilde.clone()
            },
        }
    }

    fn kept(&self) -> Vec<usize> {
        let dt = self.inner.theta_dim();
        let dl = self.inner.lambda_dim();
        let mut idx = Vec::with_capacity(dt + dl);
        if self.free.theta {
            idx.extend(0..dt);
        }
        if self.free.lambda {
            idx.extend(dt..dt + dl);
        }
        idx
    }
}

impl<O: Objective + ?Sized> Objective for Restricted<'_, O> {
    fn theta_dim(&self) -> usize {
        if self.free.theta {
            self.inner.theta_dim()
        } else {
            0
        }
    }

    fn lambda_dim(&self) -> usize {
        if self.free.lambda {
            self.inner.lambda_dim()
        } else {
            0
        }
    }

    fn value(&self, x: &ReducedISParams) -> Result<f64> {
        self.inner.value(&self.embed(x))
    }

    fn evaluate(&self, x: &ReducedISParams) -> Result<ObjectiveEval> {
        let full = self.inner.evaluate(&self.embed(x))?;
        let kept = self.kept();
        Ok(ObjectiveEval {
            value: full.value,
            gradient: kept.iter().map(|&a| full.gradient[a]).collect(),
            hessian: DMatrix::from_fn(kept.len(), kept.len(), |r, c| {
                full.hessian[(kept[r], kept[c])]
            }),
        })
    }
}
