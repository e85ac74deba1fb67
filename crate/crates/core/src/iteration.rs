//! Stationary iteration `sol <- sol + B (rhs - A sol)` with a fixed linear
//! solver `B`, starting from `sol = 0`.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{self, GridTensor, Real};
use crate::timing::Stopwatch;

/// Relative residual above which an iteration is reported as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Default cap on stationary iterations.
pub const DEFAULT_MAX_ITERS: usize = 500;

/// A linear map on grid tensors.
pub trait LinearMap<T: Real> {
    fn apply(&self, x: &GridTensor<T>) -> Result<GridTensor<T>>;
}

impl<T: Real, F> LinearMap<T> for F
where
    F: Fn(&GridTensor<T>) -> Result<GridTensor<T>>,
{
    fn apply(&self, x: &GridTensor<T>) -> Result<GridTensor<T>> {
        self(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Converged,
    MaxIterations,
    Diverged,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Converged => "converged",
            Outcome::MaxIterations => "max_iterations",
            Outcome::Diverged => "diverged",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationReport {
    pub iterations: usize,
    /// `||r^k|| / ||rhs||` for `k = 0..=iterations`, starting at 1.
    pub relative_residual_history: Vec<f64>,
    pub outcome: Outcome,
    pub setup_seconds: f64,
    pub solve_seconds: f64,
}

impl IterationReport {
    pub fn converged(&self) -> bool {
        self.outcome == Outcome::Converged
    }

    pub fn final_relative_residual(&self) -> f64 {
        *self.relative_residual_history.last().unwrap_or(&f64::NAN)
    }

    /// Mean per-iteration residual reduction factor.
    pub fn mean_contraction(&self) -> f64 {
        if self.iterations == 0 {
            return 0.0;
        }
        self.final_relative_residual().powf(1.0 / self.iterations as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopCriterion {
    /// Relative residual tolerance, met when `||r|| / ||rhs|| <= tol`.
    pub tol: f64,
    pub max_iters: usize,
}

impl StopCriterion {
    pub fn new(tol: f64, max_iters: usize) -> Result<Self> {
        if tol.is_nan() || tol <= 0.0 {
            return Err(Error::OutOfRange(format!("tolerance {tol} must be positive")));
        }
        Ok(StopCriterion { tol, max_iters })
    }
}

/// Runs the stationary iteration. Divergence (relative residual above
/// [`DIVERGENCE_THRESHOLD`] or non-finite) ends the loop early with
/// [`Outcome::Diverged`]; it is not an `Err`.
pub fn stationary_solve<T, A, B>(
    apply_a: &A,
    apply_b: &B,
    rhs: &GridTensor<T>,
    stop: StopCriterion,
) -> Result<(GridTensor<T>, IterationReport)>
where
    T: Real,
    A: LinearMap<T> + ?Sized,
    B: LinearMap<T> + ?Sized,
{
    let watch = Stopwatch::start();
    let rhs_norm = tensor::norm2(rhs).to_f64().unwrap_or(f64::NAN);
    let mut sol = GridTensor::zeros_like(rhs);
    let mut history = vec![1.0];
    let mut outcome = Outcome::MaxIterations;

    if rhs_norm == 0.0 {
        return Ok((
            sol,
            IterationReport {
                iterations: 0,
                relative_residual_history: history,
                outcome: Outcome::Converged,
                setup_seconds: 0.0,
                solve_seconds: watch.elapsed_seconds(),
            },
        ));
    }

    let mut r = rhs.clone();
    let mut rel = 1.0;
    loop {
        if rel <= stop.tol {
            outcome = Outcome::Converged;
            break;
        }
        if !rel.is_finite() || rel > DIVERGENCE_THRESHOLD {
            outcome = Outcome::Diverged;
            break;
        }
        if history.len() > stop.max_iters {
            break;
        }
        let correction = apply_b.apply(&r)?;
        sol.add_assign(&correction)?;
        r = tensor::sub(rhs, &apply_a.apply(&sol)?)?;
        rel = tensor::norm2(&r).to_f64().unwrap_or(f64::NAN) / rhs_norm;
        history.push(rel);
    }

    Ok((
        sol,
        IterationReport {
            iterations: history.len() - 1,
            relative_residual_history: history,
            outcome,
            setup_seconds: 0.0,
            solve_seconds: watch.elapsed_seconds(),
        },
    ))
}
