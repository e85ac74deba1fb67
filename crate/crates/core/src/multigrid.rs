//! Classical geometric multigrid: weighted Jacobi smoothing, bilinear
//! transfer operators and re-discretized coarse operators on nested
//! `2^k - 1` grids.

use std::sync::OnceLock;

use crate::discretization::{apply_operator, residual, ProblemSpec};
use crate::error::{Error, Result};
use crate::iteration::LinearMap;
use crate::tensor::{self, ConvKernel, GridTensor, Real, Stride};

pub const DEFAULT_JACOBI_WEIGHT: f64 = 0.67;
pub const DEFAULT_SWEEPS: usize = 3;
/// Coarsest grid targeted by [`gmg_levels_for_grid`].
pub const COARSEST_GMG_GRID: usize = 15;

/// Number of GMG levels so that the coarsest grid is 15x15 (one level for
/// grids of 15 and below).
pub fn gmg_levels_for_grid(grid_n: usize) -> usize {
    let mut levels = 1;
    let mut n = grid_n;
    while n > COARSEST_GMG_GRID && n % 2 == 1 {
        n = tensor::coarse_len(n);
        levels += 1;
    }
    levels
}

#[derive(Clone, Debug)]
pub struct GmgHierarchy<T> {
    specs: Vec<ProblemSpec<T>>,
    inv_diagonals: Vec<GridTensor<T>>,
    jacobi_weight: f64,
    sweeps: usize,
}

impl<T: Real> GmgHierarchy<T> {
    pub fn levels(&self) -> usize {
        self.specs.len()
    }

    pub fn spec(&self, level: usize) -> &ProblemSpec<T> {
        &self.specs[level]
    }

    pub fn jacobi_weight(&self) -> f64 {
        self.jacobi_weight
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn with_smoother(mut self, jacobi_weight: f64, sweeps: usize) -> Result<Self> {
        if !(jacobi_weight > 0.0 && jacobi_weight <= 1.0) {
            return Err(Error::OutOfRange(format!(
                "Jacobi weight {jacobi_weight} outside (0, 1]"
            )));
        }
        if sweeps == 0 {
            return Err(Error::OutOfRange("sweeps must be positive".into()));
        }
        self.jacobi_weight = jacobi_weight;
        self.sweeps = sweeps;
        Ok(self)
    }

    /// One V-cycle as a linear map of the fine-level right-hand side.
    pub fn v_cycle_map(&self) -> impl LinearMap<T> + '_ {
        move |rhs: &GridTensor<T>| v_cycle(self, 0, rhs)
    }
}

/// Coarse point `(i, j)` samples fine point `(2i + 1, 2j + 1)`.
pub fn inject<T: Real>(fine: &GridTensor<T>) -> Result<GridTensor<T>> {
    if fine.height().is_multiple_of(2) || fine.width().is_multiple_of(2) || fine.height() < 3 || fine.width() < 3 {
        return Err(Error::InvalidGridSize {
            size: fine.height(),
            reason: "injection needs an odd grid of at least 3",
        });
    }
    let (mh, mw) = (tensor::coarse_len(fine.height()), tensor::coarse_len(fine.width()));
    Ok(GridTensor::from_fn(fine.channels(), mh, mw, |c, i, j| {
        fine.get(c, 2 * i + 1, 2 * j + 1)
    }))
}

/// Builds the level hierarchy by injecting the coefficient field onto each
/// coarser grid and re-discretizing with the same velocity. The operator
/// carries a factor `h`, so each coarser level halves `coef`.
pub fn gmg_setup<T: Real>(fine: &ProblemSpec<T>, levels: usize) -> Result<GmgHierarchy<T>> {
    if levels == 0 {
        return Err(Error::OutOfRange("at least one level is required".into()));
    }
    let mut specs = vec![fine.clone()];
    for _ in 1..levels {
        let prev = specs.last().expect("non-empty");
        if prev.grid_n() < 3 {
            return Err(Error::InvalidGridSize {
                size: fine.grid_n(),
                reason: "too many GMG levels for this grid",
            });
        }
        let half = T::from_f64_lossy(0.5);
        let coef = inject(prev.coef())?.map(|c| c * half);
        specs.push(prev.with_coef(coef));
    }
    let inv_diagonals = specs.iter().map(|s| s.diagonal().map(|d| T::one() / d)).collect();
    Ok(GmgHierarchy {
        specs,
        inv_diagonals,
        jacobi_weight: DEFAULT_JACOBI_WEIGHT,
        sweeps: DEFAULT_SWEEPS,
    })
}

/// `sweeps` repetitions of `sol <- sol + weight D^-1 (rhs - A sol)`.
pub fn weighted_jacobi<T: Real>(
    spec: &ProblemSpec<T>,
    sol: &GridTensor<T>,
    rhs: &GridTensor<T>,
    weight: f64,
    sweeps: usize,
) -> Result<GridTensor<T>> {
    let inv_diag = spec.diagonal().map(|d| T::one() / d);
    jacobi_with(spec, &inv_diag, sol.clone(), rhs, weight, sweeps)
}

fn jacobi_with<T: Real>(
    spec: &ProblemSpec<T>,
    inv_diag: &GridTensor<T>,
    mut sol: GridTensor<T>,
    rhs: &GridTensor<T>,
    weight: f64,
    sweeps: usize,
) -> Result<GridTensor<T>> {
    let w = T::from_f64_lossy(weight);
    for _ in 0..sweeps {
        let r = residual(spec, &sol, rhs)?;
        for ((s, &rv), &d) in sol.data_mut().iter_mut().zip(r.data()).zip(inv_diag.data()) {
            *s += w * d * rv;
        }
    }
    Ok(sol)
}

fn bilinear_kernel() -> &'static ConvKernel<f64> {
    static K: OnceLock<ConvKernel<f64>> = OnceLock::new();
    K.get_or_init(|| ConvKernel::from_stencil([[0.25, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 0.25]]))
}

/// Bilinear interpolation from the nested coarse grid (zero outside).
pub fn bilinear_prolong<T: Real>(coarse: &GridTensor<T>) -> Result<GridTensor<T>> {
    let k: ConvKernel<T> = bilinear_kernel().cast();
    let k = per_channel(&k, coarse.channels());
    tensor::transposed_conv2d(coarse, &k)
}

/// Full-weighting restriction, `R = P^T / 4`.
pub fn bilinear_restrict<T: Real>(fine: &GridTensor<T>) -> Result<GridTensor<T>> {
    let mut k: ConvKernel<T> = bilinear_kernel().cast();
    let quarter = T::from_f64_lossy(0.25);
    k.weights_mut().iter_mut().for_each(|w| *w *= quarter);
    let k = per_channel(&k, fine.channels());
    tensor::conv2d(fine, &k, Stride::Two)
}

/// Channel-diagonal kernel applying a single-channel stencil to every channel.
fn per_channel<T: Real>(k: &ConvKernel<T>, channels: usize) -> ConvKernel<T> {
    if channels == 1 {
        return k.clone();
    }
    let mut out = ConvKernel::zeros(channels, channels);
    for c in 0..channels {
        let start = (c * channels + c) * 9;
        out.weights_mut()[start..start + 9].copy_from_slice(k.weights());
    }
    out
}

/// Approximate solution of `A_level e = rhs` by one V-cycle from `e = 0`:
/// pre-smoothing, coarse-grid correction of the restricted residual,
/// post-smoothing. The restricted residual is doubled to match the coarse
/// operator's `2h` factor. The coarsest level smooths with twice the sweeps.
pub fn v_cycle<T: Real>(h: &GmgHierarchy<T>, level: usize, rhs: &GridTensor<T>) -> Result<GridTensor<T>> {
    if level >= h.levels() {
        return Err(Error::OutOfRange(format!(
            "level {level} outside hierarchy of {} levels",
            h.levels()
        )));
    }
    let spec = &h.specs[level];
    let inv_diag = &h.inv_diagonals[level];
    let zero = GridTensor::zeros_like(rhs);
    if level + 1 == h.levels() {
        return jacobi_with(spec, inv_diag, zero, rhs, h.jacobi_weight, 2 * h.sweeps);
    }
    let mut e = jacobi_with(spec, inv_diag, zero, rhs, h.jacobi_weight, h.sweeps)?;
    let r = tensor::sub(rhs, &apply_operator(spec, &e)?)?;
    let rc = tensor::scale(&bilinear_restrict(&r)?, T::from_f64_lossy(2.0));
    let ec = v_cycle(h, level + 1, &rc)?;
    e.add_assign(&bilinear_prolong(&ec)?)?;
    jacobi_with(spec, inv_diag, e, rhs, h.jacobi_weight, h.sweeps)
}
