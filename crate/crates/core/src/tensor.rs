//! Dense multi-channel 2-D tensors and the fixed 3x3 convolution op set.
//!
//! Storage is row-major `(channel, row, column)`. Every convolution uses a
//! 3x3 kernel and comes in exactly two geometries:
//!
//! * [`Stride::One`]: zero padding of one cell, output has the input size.
//!   Zero padding realizes the homogeneous Dirichlet boundary.
//! * [`Stride::Two`]: no padding, an odd `n x n` input maps to
//!   `(n - 1) / 2 x (n - 1) / 2`, so `2^k - 1` grids nest exactly.
//!
//! [`transposed_conv2d`] is the exact matrix transpose of the stride-2
//! geometry and maps `m x m` back to `2m + 1 x 2m + 1`.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating point element type of a tensor.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + fmt::LowerExp
    + 'static
{
    const PRECISION: Precision;

    fn from_f64_lossy(v: f64) -> Self;
}

impl Real for f32 {
    const PRECISION: Precision = Precision::F32;

    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::F64;

    fn from_f64_lossy(v: f64) -> Self {
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    /// Relative residual tolerance used by the convergence benchmarks.
    pub fn default_tolerance(self) -> f64 {
        match self {
            Precision::F32 => 1e-4,
            Precision::F64 => 1e-8,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "float" | "single" => Ok(Precision::F32),
            "f64" | "double" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridTensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> GridTensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, T::zero())
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Self {
        let shape = Shape::new(channels, height, width);
        GridTensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self::zeros(other.shape.channels, other.shape.height, other.shape.width)
    }

    /// Wraps `data` after checking its length and that every entry is finite.
    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidData(format!(
                "dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        let shape = Shape::new(channels, height, width);
        if data.len() != shape.len() {
            return Err(Error::InvalidData(format!("{} values for shape {shape}", data.len())));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("GridTensor::from_vec".into()));
        }
        Ok(GridTensor { shape, data })
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for i in 0..height {
                for j in 0..width {
                    data.push(f(c, i, j));
                }
            }
        }
        GridTensor {
            shape: Shape::new(channels, height, width),
            data,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    fn index(&self, c: usize, i: usize, j: usize) -> usize {
        (c * self.shape.height + i) * self.shape.width + j
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> T {
        self.data[self.index(c, i, j)]
    }

    pub fn set(&mut self, c: usize, i: usize, j: usize, value: T) {
        let k = self.index(c, i, j);
        self.data[k] = value;
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let plane = self.shape.height * self.shape.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let plane = self.shape.height * self.shape.width;
        &mut self.data[c * plane..(c + 1) * plane]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        GridTensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Converts to another precision (rounding when narrowing).
    pub fn cast<U: Real>(&self) -> GridTensor<U> {
        GridTensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                expected: self.shape,
                found: other.shape,
            });
        }
        Ok(())
    }

    /// `self += other`
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other, "add")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self += alpha * other`
    pub fn axpy_assign(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale_assign(&mut self, s: T) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, v| if v.abs() > m { v.abs() } else { m })
    }
}

/// A bank of 3x3 kernels mapping `in_channels` to `out_channels`.
///
/// Weights are stored as `[out][in][row][col]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel<T> {
    out_channels: usize,
    in_channels: usize,
    weights: Vec<T>,
}

impl<T: Real> ConvKernel<T> {
    pub const TAPS: usize = 9;

    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        ConvKernel {
            out_channels,
            in_channels,
            weights: vec![T::zero(); out_channels * in_channels * Self::TAPS],
        }
    }

    pub fn from_vec(out_channels: usize, in_channels: usize, weights: Vec<T>) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 {
            return Err(Error::InvalidData("kernel channels must be positive".into()));
        }
        if weights.len() != out_channels * in_channels * Self::TAPS {
            return Err(Error::InvalidData(format!(
                "{} weights for a {out_channels}x{in_channels}x3x3 kernel",
                weights.len()
            )));
        }
        Ok(ConvKernel {
            out_channels,
            in_channels,
            weights,
        })
    }

    /// Single-channel kernel from a 3x3 stencil given row by row.
    pub fn from_stencil(stencil: [[T; 3]; 3]) -> Self {
        ConvKernel {
            out_channels: 1,
            in_channels: 1,
            weights: stencil.iter().flatten().copied().collect(),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn at(&self, o: usize, c: usize, di: usize, dj: usize) -> T {
        self.weights[((o * self.in_channels + c) * 3 + di) * 3 + dj]
    }

    #[inline]
    fn taps(&self, o: usize, c: usize) -> &[T] {
        let start = (o * self.in_channels + c) * Self::TAPS;
        &self.weights[start..start + Self::TAPS]
    }

    /// Kernel of the adjoint stride-1 convolution: channels swapped and taps
    /// rotated by 180 degrees.
    pub fn adjoint(&self) -> Self {
        let mut out = ConvKernel::zeros(self.in_channels, self.out_channels);
        for o in 0..self.out_channels {
            for c in 0..self.in_channels {
                for di in 0..3 {
                    for dj in 0..3 {
                        out.weights[((c * self.out_channels + o) * 3 + di) * 3 + dj] = self.at(o, c, 2 - di, 2 - dj);
                    }
                }
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> ConvKernel<U> {
        ConvKernel {
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            weights: self
                .weights
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stride {
    /// Stride 1 with one cell of zero padding (size preserving).
    One,
    /// Stride 2 without padding (restriction to the nested coarse grid).
    Two,
}

impl Stride {
    pub fn step(self) -> usize {
        match self {
            Stride::One => 1,
            Stride::Two => 2,
        }
    }

    pub fn padding(self) -> usize {
        match self {
            Stride::One => 1,
            Stride::Two => 0,
        }
    }

    /// Accepts only the two supported `(stride, padding)` pairs.
    pub fn from_parts(stride: usize, padding: usize) -> Result<Self> {
        match (stride, padding) {
            (1, 1) => Ok(Stride::One),
            (2, 0) => Ok(Stride::Two),
            _ => Err(Error::InvalidData(format!(
                "unsupported convolution geometry stride={stride} padding={padding}"
            ))),
        }
    }
}

/// Spatial size after a stride-2 convolution, `(n - 1) / 2`.
pub fn coarse_len(n: usize) -> usize {
    (n - 1) / 2
}

fn check_restrictable(op: &'static str, shape: Shape) -> Result<()> {
    if shape.height.is_multiple_of(2) || shape.width.is_multiple_of(2) || shape.height < 3 || shape.width < 3 {
        return Err(Error::EvenGrid {
            op,
            height: shape.height,
            width: shape.width,
        });
    }
    Ok(())
}

pub fn conv2d<T: Real>(input: &GridTensor<T>, kernel: &ConvKernel<T>, stride: Stride) -> Result<GridTensor<T>> {
    if input.channels() != kernel.in_channels {
        return Err(Error::ChannelMismatch {
            op: "conv2d",
            expected: kernel.in_channels,
            found: input.channels(),
        });
    }
    match stride {
        Stride::One => {
            let mut out = GridTensor::zeros(kernel.out_channels, input.height(), input.width());
            conv_same_acc(input, kernel, &mut out);
            Ok(out)
        }
        Stride::Two => {
            check_restrictable("conv2d", input.shape())?;
            let mut out = GridTensor::zeros(
                kernel.out_channels,
                coarse_len(input.height()),
                coarse_len(input.width()),
            );
            conv_restrict_acc(input, kernel, &mut out);
            Ok(out)
        }
    }
}

/// Transpose of the stride-2 convolution with the same kernel: maps
/// `kernel.out_channels x m x m` to `kernel.in_channels x (2m+1) x (2m+1)`.
pub fn transposed_conv2d<T: Real>(input: &GridTensor<T>, kernel: &ConvKernel<T>) -> Result<GridTensor<T>> {
    if input.channels() != kernel.out_channels {
        return Err(Error::ChannelMismatch {
            op: "transposed_conv2d",
            expected: kernel.out_channels,
            found: input.channels(),
        });
    }
    let mut out = GridTensor::zeros(kernel.in_channels, 2 * input.height() + 1, 2 * input.width() + 1);
    transposed_acc(input, kernel, &mut out);
    Ok(out)
}

/// `out += conv(input, kernel)`, stride 1, zero padding 1.
fn conv_same_acc<T: Real>(input: &GridTensor<T>, kernel: &ConvKernel<T>, out: &mut GridTensor<T>) {
    let (h, w) = (input.height(), input.width());
    let zero_row = vec![T::zero(); w];
    for o in 0..kernel.out_channels {
        let dst_plane = out.channel_mut(o);
        for c in 0..kernel.in_channels {
            let src = input.channel(c);
            let taps = kernel.taps(o, c);
            for i in 0..h {
                let up = if i > 0 { &src[(i - 1) * w..i * w] } else { &zero_row[..] };
                let mid = &src[i * w..(i + 1) * w];
                let down = if i + 1 < h {
                    &src[(i + 1) * w..(i + 2) * w]
                } else {
                    &zero_row[..]
                };
                row_taps(&mut dst_plane[i * w..(i + 1) * w], [up, mid, down], taps);
            }
        }
    }
}

/// `dst[j] += sum_{di,dj} taps[di][dj] * rows[di][j + dj - 1]`, zero outside.
#[inline]
fn row_taps<T: Real>(dst: &mut [T], rows: [&[T]; 3], t: &[T]) {
    let w = dst.len();
    let [u, m, d] = rows;
    if w == 1 {
        dst[0] += t[1] * u[0] + t[4] * m[0] + t[7] * d[0];
        return;
    }
    dst[0] += t[1] * u[0] + t[2] * u[1] + t[4] * m[0] + t[5] * m[1] + t[7] * d[0] + t[8] * d[1];
    let l = w - 1;
    dst[l] += t[0] * u[l - 1] + t[1] * u[l] + t[3] * m[l - 1] + t[4] * m[l] + t[6] * d[l - 1] + t[7] * d[l];
    let n = w - 2;
    let out = &mut dst[1..1 + n];
    let (u0, u1, u2) = (&u[..n], &u[1..1 + n], &u[2..2 + n]);
    let (m0, m1, m2) = (&m[..n], &m[1..1 + n], &m[2..2 + n]);
    let (d0, d1, d2) = (&d[..n], &d[1..1 + n], &d[2..2 + n]);
    for k in 0..n {
        out[k] += t[0] * u0[k]
            + t[1] * u1[k]
            + t[2] * u2[k]
            + t[3] * m0[k]
            + t[4] * m1[k]
            + t[5] * m2[k]
            + t[6] * d0[k]
            + t[7] * d1[k]
            + t[8] * d2[k];
    }
}

/// `out += conv(input, kernel)`, stride 2, no padding.
fn conv_restrict_acc<T: Real>(input: &GridTensor<T>, kernel: &ConvKernel<T>, out: &mut GridTensor<T>) {
    let w = input.width();
    let (mh, mw) = (out.height(), out.width());
    for o in 0..kernel.out_channels {
        let dst_plane = out.channel_mut(o);
        for c in 0..kernel.in_channels {
            let src = input.channel(c);
            let t = kernel.taps(o, c);
            for i in 0..mh {
                let r0 = &src[2 * i * w..(2 * i + 1) * w];
                let r1 = &src[(2 * i + 1) * w..(2 * i + 2) * w];
                let r2 = &src[(2 * i + 2) * w..(2 * i + 3) * w];
                let dst = &mut dst_plane[i * mw..(i + 1) * mw];
                for (j, d) in dst.iter_mut().enumerate() {
                    let q = 2 * j;
                    *d += t[0] * r0[q]
                        + t[1] * r0[q + 1]
                        + t[2] * r0[q + 2]
                        + t[3] * r1[q]
                        + t[4] * r1[q + 1]
                        + t[5] * r1[q + 2]
                        + t[6] * r2[q]
                        + t[7] * r2[q + 1]
                        + t[8] * r2[q + 2];
                }
            }
        }
    }
}

/// `out += transposed_conv(input, kernel)`.
fn transposed_acc<T: Real>(input: &GridTensor<T>, kernel: &ConvKernel<T>, out: &mut GridTensor<T>) {
    let (mh, mw) = (input.height(), input.width());
    let w = out.width();
    for o in 0..kernel.out_channels {
        let src_plane = input.channel(o);
        for c in 0..kernel.in_channels {
            let dst_plane = out.channel_mut(c);
            let taps = kernel.taps(o, c);
            for i in 0..mh {
                let src = &src_plane[i * mw..(i + 1) * mw];
                for di in 0..3 {
                    let (t0, t1, t2) = (taps[di * 3], taps[di * 3 + 1], taps[di * 3 + 2]);
                    let row = &mut dst_plane[(2 * i + di) * w..(2 * i + di + 1) * w];
                    for (j, &s) in src.iter().enumerate() {
                        row[2 * j] += t0 * s;
                        row[2 * j + 1] += t1 * s;
                        row[2 * j + 2] += t2 * s;
                    }
                }
            }
        }
    }
}

/// Gradient of `<conv2d(input, K, stride), upstream>` with respect to `K`,
/// accumulated into `grad`.
pub fn conv2d_kernel_grad_acc<T: Real>(
    input: &GridTensor<T>,
    upstream: &GridTensor<T>,
    stride: Stride,
    grad: &mut ConvKernel<T>,
) {
    let (h, w) = (input.height(), input.width());
    let ci = grad.in_channels;
    for o in 0..grad.out_channels {
        let g_plane = upstream.channel(o);
        for c in 0..ci {
            let x_plane = input.channel(c);
            for di in 0..3 {
                for dj in 0..3 {
                    let mut acc = T::zero();
                    match stride {
                        Stride::One => {
                            let (i0, i1) = (usize::from(di == 0), if di == 2 { h - 1 } else { h });
                            let (j0, j1) = (usize::from(dj == 0), if dj == 2 { w - 1 } else { w });
                            if j1 > j0 {
                                for i in i0..i1 {
                                    let src_row = (i + di - 1) * w;
                                    let g = &g_plane[i * w + j0..i * w + j1];
                                    let x = &x_plane[src_row + j0 + dj - 1..src_row + j1 + dj - 1];
                                    acc += dot_slices(g, x);
                                }
                            }
                        }
                        Stride::Two => {
                            let (mh, mw) = (upstream.height(), upstream.width());
                            for i in 0..mh {
                                let x_row = &x_plane[(2 * i + di) * w + dj..];
                                let g = &g_plane[i * mw..(i + 1) * mw];
                                for (j, &gv) in g.iter().enumerate() {
                                    acc += gv * x_row[2 * j];
                                }
                            }
                        }
                    }
                    grad.weights[((o * ci + c) * 3 + di) * 3 + dj] += acc;
                }
            }
        }
    }
}

/// Gradient of `<transposed_conv2d(input, K), upstream>` with respect to `K`.
pub fn transposed_conv2d_kernel_grad_acc<T: Real>(
    input: &GridTensor<T>,
    upstream: &GridTensor<T>,
    grad: &mut ConvKernel<T>,
) {
    // y = K^T x  =>  d<y, g>/dK = d<x, K g>/dK, the stride-2 kernel gradient
    // with the roles of the fine and coarse tensors exchanged.
    conv2d_kernel_grad_acc(upstream, input, Stride::Two, grad);
}

/// Gradient of `<conv2d(x, K, stride), upstream>` with respect to `x`.
pub fn conv2d_input_grad<T: Real>(
    upstream: &GridTensor<T>,
    kernel: &ConvKernel<T>,
    stride: Stride,
) -> Result<GridTensor<T>> {
    match stride {
        Stride::One => conv2d(upstream, &kernel.adjoint(), Stride::One),
        Stride::Two => transposed_conv2d(upstream, kernel),
    }
}

/// Dot product with eight interleaved partial sums.
#[inline]
fn dot_slices<T: Real>(a: &[T], b: &[T]) -> T {
    const L: usize = 8;
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [T::zero(); L];
    let (ca, cb) = (a.chunks_exact(L), b.chunks_exact(L));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..L {
            lanes[k] += x[k] * y[k];
        }
    }
    let mut acc = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        acc += x * y;
    }
    lanes.iter().fold(acc, |s, &v| s + v)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Mul,
    Add,
}

pub fn elementwise<T: Real>(a: &GridTensor<T>, b: &GridTensor<T>, op: BinaryOp) -> Result<GridTensor<T>> {
    a.check_same_shape(b, "elementwise")?;
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| match op {
            BinaryOp::Mul => x * y,
            BinaryOp::Add => x + y,
        })
        .collect();
    Ok(GridTensor { shape: a.shape, data })
}

pub fn mul<T: Real>(a: &GridTensor<T>, b: &GridTensor<T>) -> Result<GridTensor<T>> {
    elementwise(a, b, BinaryOp::Mul)
}

pub fn add<T: Real>(a: &GridTensor<T>, b: &GridTensor<T>) -> Result<GridTensor<T>> {
    elementwise(a, b, BinaryOp::Add)
}

/// `a - b`
pub fn sub<T: Real>(a: &GridTensor<T>, b: &GridTensor<T>) -> Result<GridTensor<T>> {
    axpy(b, a, -T::one())
}

pub fn tanh_map<T: Real>(a: &GridTensor<T>) -> GridTensor<T> {
    a.map(|v| v.tanh())
}

pub fn scale<T: Real>(a: &GridTensor<T>, s: T) -> GridTensor<T> {
    a.map(|v| v * s)
}

/// `alpha * x + y`
pub fn axpy<T: Real>(x: &GridTensor<T>, y: &GridTensor<T>, alpha: T) -> Result<GridTensor<T>> {
    let mut out = y.clone();
    out.axpy_assign(alpha, x)?;
    Ok(out)
}

pub fn dot<T: Real>(a: &GridTensor<T>, b: &GridTensor<T>) -> Result<T> {
    a.check_same_shape(b, "dot")?;
    Ok(dot_slices(&a.data, &b.data))
}

/// Euclidean norm over all entries.
pub fn norm2<T: Real>(a: &GridTensor<T>) -> T {
    dot_slices(&a.data, &a.data).sqrt()
}

/// Separable bilinear interpolation with corner-aligned sample positions:
/// output index `k` samples input coordinate `k * (n_in - 1) / (n_out - 1)`.
pub fn bilinear_resize<T: Real>(input: &GridTensor<T>, new_height: usize, new_width: usize) -> Result<GridTensor<T>> {
    if new_height == 0 || new_width == 0 {
        return Err(Error::InvalidData(format!(
            "resize target must be positive, got {new_height}x{new_width}"
        )));
    }
    if new_height == input.height() && new_width == input.width() {
        return Ok(input.clone());
    }
    let rows = sample_positions::<T>(input.height(), new_height);
    let cols = sample_positions::<T>(input.width(), new_width);
    let w = input.width();
    let mut out = GridTensor::zeros(input.channels(), new_height, new_width);
    for c in 0..input.channels() {
        let src = input.channel(c);
        let dst = out.channel_mut(c);
        for (i, &(r0, r1, fr)) in rows.iter().enumerate() {
            for (j, &(c0, c1, fc)) in cols.iter().enumerate() {
                let top = src[r0 * w + c0] * (T::one() - fc) + src[r0 * w + c1] * fc;
                let bottom = src[r1 * w + c0] * (T::one() - fc) + src[r1 * w + c1] * fc;
                dst[i * new_width + j] = top * (T::one() - fr) + bottom * fr;
            }
        }
    }
    Ok(out)
}

/// For each output index: the two neighbouring input indices and the
/// fractional weight of the second one.
fn sample_positions<T: Real>(n_in: usize, n_out: usize) -> Vec<(usize, usize, T)> {
    (0..n_out)
        .map(|k| {
            if n_in == 1 || n_out == 1 {
                return (0, 0, T::zero());
            }
            let pos = k as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
            let lo = (pos.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, T::from_f64_lossy(pos - lo as f64))
        })
        .collect()
}
