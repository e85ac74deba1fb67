//! Dense-matrix reference constructions built from index formulas, without
//! going through the library's convolution loops.

#![allow(dead_code)]

use mgsolve::learned::{SetupOutputs, SolverWeights};
use mgsolve::tensor::{ConvKernel, GridTensor};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub a: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense {
            rows,
            cols,
            a: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Dense::zeros(n, n);
        for i in 0..n {
            m.a[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Dense::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m.a[i * d.len() + i] = v;
        }
        m
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.a[r * self.cols + c]
    }

    pub fn add_to(&mut self, r: usize, c: usize, v: f64) {
        self.a[r * self.cols + c] += v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| {
                self.a[r * self.cols..(r + 1) * self.cols]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    pub fn matmul(&self, other: &Dense) -> Dense {
        assert_eq!(self.cols, other.rows);
        let mut out = Dense::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let v = self.get(i, k);
                if v == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.a[i * other.cols + j] += v * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Dense {
        let mut out = Dense::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.a[c * self.rows + r] = self.get(r, c);
            }
        }
        out
    }

    pub fn add(&self, other: &Dense) -> Dense {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Dense {
            rows: self.rows,
            cols: self.cols,
            a: self.a.iter().zip(&other.a).map(|(x, y)| x + y).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Dense {
        Dense {
            rows: self.rows,
            cols: self.cols,
            a: self.a.iter().map(|x| x * s).collect(),
        }
    }
}

/// Convection-diffusion matrix on an `n x n` interior grid with zero
/// Dirichlet values outside. Row index is `i * n + j`, `i` the row (y), `j`
/// the column (x). Diffusion: `c (4 u - u_N - u_S - u_W - u_E)`. Convection
/// by first-order upwinding, where the upstream x neighbour for `vx > 0` is
/// `(i, j - 1)` and the upstream y neighbour for `vy > 0` is `(i + 1, j)`.
pub fn convection_diffusion(coef: &[f64], n: usize, vx: f64, vy: f64) -> Dense {
    let mut a = Dense::zeros(n * n, n * n);
    let idx = |i: usize, j: usize| i * n + j;
    for i in 0..n {
        for j in 0..n {
            let p = idx(i, j);
            let c = coef[p];
            a.add_to(p, p, 4.0 * c + vx.abs() + vy.abs());
            let mut nb = |di: isize, dj: isize, v: f64| {
                let (r, s) = (i as isize + di, j as isize + dj);
                if r >= 0 && s >= 0 && (r as usize) < n && (s as usize) < n {
                    a.add_to(p, idx(r as usize, s as usize), v);
                }
            };
            nb(-1, 0, -c);
            nb(1, 0, -c);
            nb(0, -1, -c);
            nb(0, 1, -c);
            if vx > 0.0 {
                nb(0, -1, -vx);
            } else {
                nb(0, 1, vx);
            }
            if vy > 0.0 {
                nb(1, 0, -vy);
            } else {
                nb(-1, 0, vy);
            }
        }
    }
    a
}

/// Matrix of a multi-channel 3x3 convolution. Input index `(c, p, q)`,
/// output `(o, i, j)`; stride 1 reads `(i + di - 1, j + dj - 1)` and stride 2
/// reads `(2i + di, 2j + dj)`.
pub fn conv_matrix(k: &ConvKernel<f64>, h: usize, w: usize, stride2: bool) -> Dense {
    let (oh, ow) = if stride2 { ((h - 1) / 2, (w - 1) / 2) } else { (h, w) };
    let (co, ci) = (k.out_channels(), k.in_channels());
    let mut m = Dense::zeros(co * oh * ow, ci * h * w);
    for o in 0..co {
        for i in 0..oh {
            for j in 0..ow {
                let row = (o * oh + i) * ow + j;
                for c in 0..ci {
                    for di in 0..3 {
                        for dj in 0..3 {
                            let (p, q) = if stride2 {
                                ((2 * i + di) as isize, (2 * j + dj) as isize)
                            } else {
                                (i as isize + di as isize - 1, j as isize + dj as isize - 1)
                            };
                            if p < 0 || q < 0 || p as usize >= h || q as usize >= w {
                                continue;
                            }
                            let col = (c * h + p as usize) * w + q as usize;
                            m.add_to(row, col, k.at(o, c, di, dj));
                        }
                    }
                }
            }
        }
    }
    m
}

/// Bilinear prolongation from an `m x m` coarse grid to `(2m+1)^2`: coarse
/// point `(I, J)` sits at fine `(2I + 1, 2J + 1)` and spreads with weight
/// `(1 - |dr| / 2) (1 - |ds| / 2)` to fine points within distance one.
pub fn prolongation(m: usize) -> Dense {
    let n = 2 * m + 1;
    let mut p = Dense::zeros(n * n, m * m);
    for ci in 0..m {
        for cj in 0..m {
            let (fi, fj) = (2 * ci + 1, 2 * cj + 1);
            for dr in -1isize..=1 {
                for ds in -1isize..=1 {
                    let (r, s) = ((fi as isize + dr) as usize, (fj as isize + ds) as usize);
                    let wgt = (1.0 - dr.abs() as f64 / 2.0) * (1.0 - ds.abs() as f64 / 2.0);
                    p.add_to(r * n + s, ci * m + cj, wgt);
                }
            }
        }
    }
    p
}

pub fn inject(coef: &[f64], n: usize) -> Vec<f64> {
    let m = (n - 1) / 2;
    let mut out = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            out.push(coef[(2 * i + 1) * n + 2 * j + 1]);
        }
    }
    out
}

/// `x + w D^-1 (b - A x)` repeated `sweeps` times.
pub fn jacobi(a: &Dense, x: &[f64], b: &[f64], w: f64, sweeps: usize) -> Vec<f64> {
    let mut x = x.to_vec();
    for _ in 0..sweeps {
        let ax = a.matvec(&x);
        for k in 0..x.len() {
            x[k] += w * (b[k] - ax[k]) / a.get(k, k);
        }
    }
    x
}

/// One V-cycle from a zero guess on `levels` levels, with coarse operators
/// re-discretized from injected coefficients halved per level and the
/// restricted residual doubled.
#[allow(clippy::too_many_arguments)]
pub fn v_cycle(coef: &[f64], n: usize, vx: f64, vy: f64, levels: usize, b: &[f64], w: f64, sweeps: usize) -> Vec<f64> {
    let a = convection_diffusion(coef, n, vx, vy);
    let zero = vec![0.0; n * n];
    if levels == 1 {
        return jacobi(&a, &zero, b, w, 2 * sweeps);
    }
    let e = jacobi(&a, &zero, b, w, sweeps);
    let ae = a.matvec(&e);
    let r: Vec<f64> = b.iter().zip(&ae).map(|(x, y)| x - y).collect();
    let m = (n - 1) / 2;
    let p = prolongation(m);
    let rc: Vec<f64> = p.transpose().matvec(&r).iter().map(|v| 2.0 * v / 4.0).collect();
    let coarse: Vec<f64> = inject(coef, n).iter().map(|c| c / 2.0).collect();
    let ec = v_cycle(&coarse, m, vx, vy, levels - 1, &rc, w, sweeps);
    let pe = p.matvec(&ec);
    let e: Vec<f64> = e.iter().zip(&pe).map(|(x, y)| x + y).collect();
    jacobi(&a, &e, b, w, sweeps)
}

fn kernel<'a>(w: &'a SolverWeights<f64>, name: &str) -> &'a ConvKernel<f64> {
    w.store().kernel(w.store().id(name).unwrap())
}

/// Dense matrix of the solve network for fixed setup tensors.
pub fn solve_matrix(w: &SolverWeights<f64>, s: &SetupOutputs<f64>, n: usize) -> Dense {
    let level = s.levels();
    let sizes: Vec<usize> = (0..level).map(|l| (n + 1) / (1 << l) - 1).collect();
    let smoother = |name: &str, l: usize| {
        let k = conv_matrix(kernel(w, name), sizes[l], sizes[l], false);
        let d = Dense::diag(s.level(l).data());
        Dense::identity(k.rows).add(&k.matmul(&d))
    };
    let restrict = |l: usize| conv_matrix(kernel(w, "solve_rcnn"), sizes[l], sizes[l], true);
    // state maps from rhs to each level's x, built down then up
    let mut xs: Vec<Dense> = Vec::new();
    let mut x = conv_matrix(kernel(w, "rhs_rechannel"), n, n, false);
    for l in 0..level {
        x = smoother("k_down", l).matmul(&x);
        xs.push(x.clone());
        if l + 1 < level {
            x = restrict(l).matmul(&x);
        }
    }
    for l in (0..level).rev() {
        xs[l] = smoother("k_up", l).matmul(&xs[l]);
        if l > 0 {
            let up = conv_matrix(kernel(w, "solve_tcnn"), sizes[l - 1], sizes[l - 1], true).transpose();
            xs[l - 1] = xs[l - 1].add(&up.matmul(&xs[l]));
        }
    }
    conv_matrix(kernel(w, "sol_rechannel"), n, n, false).matmul(&xs[0])
}

pub fn flat(t: &GridTensor<f64>) -> Vec<f64> {
    t.data().to_vec()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
