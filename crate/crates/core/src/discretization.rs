//! First-order upwind discretization of the non-divergence convection-diffusion
//! equation on a uniform grid of interior points with zero Dirichlet boundary.
//!
//! After dropping the common `1/h` factor the operator is
//! `A u = coef * (laplacian * u) + (upwind * u)` where `coef = mu / h` is the
//! inverse mesh Reynolds number per grid point and `*` is a zero-padded 3x3
//! convolution. Rows of a tensor are the y axis, columns the x axis.

use crate::error::{Error, Result};
use crate::tensor::{self, ConvKernel, GridTensor, Real, Stride};

pub type Stencil = [[f64; 3]; 3];

pub const LAPLACIAN: Stencil = [[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]];
pub const DX_PLUS: Stencil = [[0.0, 0.0, 0.0], [0.0, -1.0, 1.0], [0.0, 0.0, 0.0]];
pub const DX_MINUS: Stencil = [[0.0, 0.0, 0.0], [-1.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
pub const DY_PLUS: Stencil = [[0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 0.0]];
pub const DY_MINUS: Stencil = [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0]];

const UNIT_NORM_TOL: f64 = 1e-12;

/// Constant convection velocity, normalized to unit length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Velocity {
    vx: f64,
    vy: f64,
}

impl Velocity {
    pub fn new(vx: f64, vy: f64) -> Result<Self> {
        let norm = vx.hypot(vy);
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::NonUnitVelocity { vx, vy });
        }
        Ok(Velocity { vx, vy })
    }

    /// `(sin 0.5, cos 0.5)`, the velocity of all benchmark problems.
    pub fn benchmark() -> Self {
        Velocity {
            vx: 0.5f64.sin(),
            vy: 0.5f64.cos(),
        }
    }

    pub fn vx(&self) -> f64 {
        self.vx
    }

    pub fn vy(&self) -> f64 {
        self.vy
    }
}

impl Default for Velocity {
    fn default() -> Self {
        Velocity::benchmark()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpwindStencil {
    pub laplacian: Stencil,
    pub upwind: Stencil,
}

impl UpwindStencil {
    pub fn laplacian_kernel<T: Real>(&self) -> ConvKernel<T> {
        stencil_kernel(&self.laplacian)
    }

    pub fn upwind_kernel<T: Real>(&self) -> ConvKernel<T> {
        stencil_kernel(&self.upwind)
    }

    /// Diagonal entry of `A` at a point with coefficient `coef`, read off the
    /// stencil centres.
    pub fn diagonal(&self, coef: f64) -> f64 {
        coef * self.laplacian[1][1] + self.upwind[1][1]
    }
}

fn stencil_kernel<T: Real>(s: &Stencil) -> ConvKernel<T> {
    ConvKernel::from_stencil(s.map(|row| row.map(T::from_f64_lossy)))
}

fn combine(terms: &[(f64, &Stencil)]) -> Stencil {
    let mut out = [[0.0; 3]; 3];
    for (w, s) in terms {
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] += w * s[i][j];
            }
        }
    }
    out
}

/// Laplacian and velocity-dependent upwind stencils.
pub fn build_upwind_stencil(velocity: Velocity) -> UpwindStencil {
    let (vx, vy) = (velocity.vx, velocity.vy);
    let upwind = combine(&[
        (vx.max(0.0), &DX_MINUS),
        (vx.min(0.0), &DX_PLUS),
        (vy.max(0.0), &DY_MINUS),
        (vy.min(0.0), &DY_PLUS),
    ]);
    UpwindStencil {
        laplacian: LAPLACIAN,
        upwind,
    }
}

/// Whether `n` is `2^k - 1` for some `k >= 1`.
pub fn is_nested_size(n: usize) -> bool {
    n >= 1 && (n + 1).is_power_of_two()
}

/// Everything that defines the operator `A` of one problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec<T> {
    grid_n: usize,
    velocity: Velocity,
    re_limit: f64,
    coef: GridTensor<T>,
    stencil: UpwindStencil,
}

impl<T: Real> ProblemSpec<T> {
    /// Validates the grid size, the coefficient shape and its range
    /// `[1 / re_limit, 1]`.
    pub fn new(velocity: Velocity, re_limit: f64, coef: GridTensor<T>) -> Result<Self> {
        let grid_n = coef.height();
        if !is_nested_size(grid_n) {
            return Err(Error::InvalidGridSize {
                size: grid_n,
                reason: "grid must have 2^k - 1 interior points",
            });
        }
        if coef.channels() != 1 || coef.width() != grid_n {
            return Err(Error::InvalidData(format!(
                "coefficient must be 1x{grid_n}x{grid_n}, got {}",
                coef.shape()
            )));
        }
        if !(re_limit > 1.0 && re_limit.is_finite()) {
            return Err(Error::OutOfRange(format!("re_limit {re_limit} must exceed 1")));
        }
        // tolerance covers rounding of 10^-p in either precision
        let slack = 1e-6;
        let lo = (1.0 / re_limit) * (1.0 - slack);
        let hi = 1.0 + slack;
        for v in coef.data() {
            let v = v.to_f64().unwrap_or(f64::NAN);
            if !(v >= lo && v <= hi) {
                return Err(Error::OutOfRange(format!(
                    "coefficient {v} outside [{}, 1]",
                    1.0 / re_limit
                )));
            }
        }
        Ok(Self::new_unchecked(velocity, re_limit, coef))
    }

    fn new_unchecked(velocity: Velocity, re_limit: f64, coef: GridTensor<T>) -> Self {
        ProblemSpec {
            grid_n: coef.height(),
            velocity,
            re_limit,
            stencil: build_upwind_stencil(velocity),
            coef,
        }
    }

    /// Same velocity and range limit on another coefficient field. Used for
    /// re-discretized coarse levels, whose fields come from a valid fine one.
    pub(crate) fn with_coef(&self, coef: GridTensor<T>) -> Self {
        Self::new_unchecked(self.velocity, self.re_limit, coef)
    }

    pub fn grid_n(&self) -> usize {
        self.grid_n
    }

    pub fn velocity(&self) -> Velocity {
        self.velocity
    }

    pub fn re_limit(&self) -> f64 {
        self.re_limit
    }

    pub fn coef(&self) -> &GridTensor<T> {
        &self.coef
    }

    pub fn stencil(&self) -> &UpwindStencil {
        &self.stencil
    }

    /// Pointwise diagonal of `A`, `4 coef + |vx| + |vy|`.
    pub fn diagonal(&self) -> GridTensor<T> {
        let center_lap = T::from_f64_lossy(self.stencil.laplacian[1][1]);
        let center_up = T::from_f64_lossy(self.stencil.upwind[1][1]);
        self.coef.map(|c| c * center_lap + center_up)
    }

    fn check_operand(&self, x: &GridTensor<T>, op: &'static str) -> Result<()> {
        self.coef.check_same_shape(x, op)
    }
}

/// `A sol`.
pub fn apply_operator<T: Real>(spec: &ProblemSpec<T>, sol: &GridTensor<T>) -> Result<GridTensor<T>> {
    spec.check_operand(sol, "apply_operator")?;
    let mut out = tensor::conv2d(sol, &spec.stencil.laplacian_kernel(), Stride::One)?;
    for (o, &c) in out.data_mut().iter_mut().zip(spec.coef.data()) {
        *o *= c;
    }
    let convective = tensor::conv2d(sol, &spec.stencil.upwind_kernel(), Stride::One)?;
    out.add_assign(&convective)?;
    Ok(out)
}

/// `rhs - A sol`.
pub fn residual<T: Real>(spec: &ProblemSpec<T>, sol: &GridTensor<T>, rhs: &GridTensor<T>) -> Result<GridTensor<T>> {
    spec.check_operand(rhs, "residual")?;
    let a_sol = apply_operator(spec, sol)?;
    tensor::sub(rhs, &a_sol)
}

/// Maps uniform `[0, 1]` samples to coefficients `10^(-r log10(re_limit))`,
/// which lie in `[1 / re_limit, 1]`.
pub fn coef_from_random<T: Real>(random: &GridTensor<T>, re_limit: f64) -> Result<GridTensor<T>> {
    if !(re_limit > 1.0 && re_limit.is_finite()) {
        return Err(Error::OutOfRange(format!("re_limit {re_limit} must exceed 1")));
    }
    let decades = re_limit.log10();
    let mut out = random.clone();
    for v in out.data_mut() {
        let r = v.to_f64().unwrap_or(f64::NAN);
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::OutOfRange(format!("random entry {r} outside [0, 1]")));
        }
        *v = T::from_f64_lossy(10f64.powf(-r * decades));
    }
    Ok(out)
}
