mod common;

use common::*;
use mgsolve::discretization::{apply_operator, ProblemSpec, Velocity};
use mgsolve::learned::{setup, solve_apply, SolverWeights};
use mgsolve::multigrid::{bilinear_prolong, bilinear_restrict, gmg_setup, v_cycle, weighted_jacobi};
use mgsolve::tensor::{conv2d, transposed_conv2d, ConvKernel, GridTensor, Stride};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-12;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn coef(r: &mut ChaCha8Rng, n: usize) -> GridTensor<f64> {
    GridTensor::from_fn(1, n, n, |_, _, _| 10f64.powf(-3.0 * r.random::<f64>()))
}

fn field(r: &mut ChaCha8Rng, c: usize, n: usize) -> GridTensor<f64> {
    GridTensor::from_fn(c, n, n, |_, _, _| r.random_range(-1.0..1.0))
}

fn velocities() -> Vec<Velocity> {
    vec![
        Velocity::benchmark(),
        Velocity::new(1.0, 0.0).unwrap(),
        Velocity::new(-0.6, 0.8).unwrap(),
        Velocity::new(0.6, -0.8).unwrap(),
        Velocity::new(-0.8, -0.6).unwrap(),
    ]
}

#[test]
fn operator_matches_dense_matrix() {
    let mut r = rng(1);
    for n in [3, 7] {
        for v in velocities() {
            let c = coef(&mut r, n);
            let spec = ProblemSpec::new(v, 1000.0, c.clone()).unwrap();
            let a = convection_diffusion(&flat(&c), n, v.vx(), v.vy());
            let u = field(&mut r, 1, n);
            let got = flat(&apply_operator(&spec, &u).unwrap());
            assert!(max_abs_diff(&got, &a.matvec(&flat(&u))) <= TOL, "n={n} v={v:?}");
        }
    }
}

#[test]
fn jacobi_matches_dense_sweeps() {
    let mut r = rng(2);
    for n in [3, 7] {
        let v = Velocity::benchmark();
        let c = coef(&mut r, n);
        let spec = ProblemSpec::new(v, 1000.0, c.clone()).unwrap();
        let a = convection_diffusion(&flat(&c), n, v.vx(), v.vy());
        let (x, b) = (field(&mut r, 1, n), field(&mut r, 1, n));
        for sweeps in [1, 3] {
            let got = weighted_jacobi(&spec, &x, &b, 0.67, sweeps).unwrap();
            let want = jacobi(&a, &flat(&x), &flat(&b), 0.67, sweeps);
            assert!(max_abs_diff(&flat(&got), &want) <= TOL);
        }
    }
}

#[test]
fn transfers_match_dense_bilinear() {
    let mut r = rng(3);
    for m in [1, 3, 4] {
        let p = prolongation(m);
        let n = 2 * m + 1;
        let coarse = field(&mut r, 1, m);
        let got = bilinear_prolong(&coarse).unwrap();
        assert!(max_abs_diff(&flat(&got), &p.matvec(&flat(&coarse))) <= TOL);
        let fine = field(&mut r, 1, n);
        let got = bilinear_restrict(&fine).unwrap();
        let want = p.transpose().scale(0.25).matvec(&flat(&fine));
        assert!(max_abs_diff(&flat(&got), &want) <= TOL);
    }
}

#[test]
fn strided_convolutions_match_dense() {
    let mut r = rng(4);
    for (ci, co, n) in [(1, 1, 7), (2, 3, 7), (3, 2, 9)] {
        let k = ConvKernel::from_vec(co, ci, (0..co * ci * 9).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let x = field(&mut r, ci, n);
        let same = conv_matrix(&k, n, n, false);
        assert!(max_abs_diff(&flat(&conv2d(&x, &k, Stride::One).unwrap()), &same.matvec(&flat(&x))) <= TOL);
        let down = conv_matrix(&k, n, n, true);
        assert!(max_abs_diff(&flat(&conv2d(&x, &k, Stride::Two).unwrap()), &down.matvec(&flat(&x))) <= TOL);
        let y = field(&mut r, co, (n - 1) / 2);
        let up = transposed_conv2d(&y, &k).unwrap();
        assert!(max_abs_diff(&flat(&up), &down.transpose().matvec(&flat(&y))) <= TOL);
    }
}

#[test]
fn v_cycle_matches_dense_recursion() {
    let mut r = rng(5);
    for (n, levels) in [(7, 1), (7, 2), (7, 3)] {
        let v = Velocity::benchmark();
        let c = coef(&mut r, n);
        let spec = ProblemSpec::new(v, 1000.0, c.clone()).unwrap();
        let h = gmg_setup(&spec, levels).unwrap();
        let b = field(&mut r, 1, n);
        let got = v_cycle(&h, 0, &b).unwrap();
        let want = common::v_cycle(&flat(&c), n, v.vx(), v.vy(), levels, &flat(&b), 0.67, 3);
        assert!(max_abs_diff(&flat(&got), &want) <= TOL, "levels {levels}");
    }
}

#[test]
fn solve_apply_matches_dense_composition() {
    let mut r = rng(6);
    for (n, level, c) in [(7, 2, 2), (7, 3, 3), (3, 1, 2)] {
        let w = SolverWeights::<f64>::init(c, 17 + n as u64).unwrap();
        let s = setup(&w, &coef(&mut r, n), level).unwrap();
        let m = solve_matrix(&w, &s, n);
        let rhs = field(&mut r, 1, n);
        let got = solve_apply(&w, &s, &rhs).unwrap();
        assert!(max_abs_diff(&flat(&got), &m.matvec(&flat(&rhs))) <= TOL);
    }
}

#[test]
fn solve_apply_unit_vector_materialization() {
    let mut r = rng(7);
    let n = 7;
    let w = SolverWeights::<f64>::init(4, 3).unwrap();
    let s = setup(&w, &coef(&mut r, n), 2).unwrap();
    let mut m = Dense::zeros(n * n, n * n);
    for k in 0..n * n {
        let mut e = GridTensor::zeros(1, n, n);
        e.data_mut()[k] = 1.0;
        let col = solve_apply(&w, &s, &e).unwrap();
        for (row, v) in col.data().iter().enumerate() {
            m.a[row * n * n + k] = *v;
        }
    }
    let rhs = field(&mut r, 1, n);
    let got = solve_apply(&w, &s, &rhs).unwrap();
    assert!(max_abs_diff(&flat(&got), &m.matvec(&flat(&rhs))) <= TOL);
}

#[test]
fn exact_inverse_converges_in_one_step() {
    use mgsolve::iteration::{stationary_solve, StopCriterion};
    let mut r = rng(8);
    let n = 7;
    let v = Velocity::benchmark();
    let c = coef(&mut r, n);
    let spec = ProblemSpec::new(v, 1000.0, c.clone()).unwrap();
    let a = convection_diffusion(&flat(&c), n, v.vx(), v.vy());
    let inv = invert(&a);
    let apply_a = |x: &GridTensor<f64>| apply_operator(&spec, x);
    let apply_b = |x: &GridTensor<f64>| GridTensor::from_vec(1, n, n, inv.matvec(&flat(x)));
    let rhs = GridTensor::filled(1, n, n, 1.0);
    let (_, rep) = stationary_solve(&apply_a, &apply_b, &rhs, StopCriterion::new(1e-8, 10).unwrap()).unwrap();
    assert_eq!(rep.iterations, 1);
    assert!(rep.converged());
}

/// Gauss-Jordan inverse with partial pivoting.
fn invert(a: &Dense) -> Dense {
    let n = a.rows;
    let mut m = a.clone();
    let mut inv = Dense::identity(n);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| m.get(x, col).abs().total_cmp(&m.get(y, col).abs()))
            .unwrap();
        for j in 0..n {
            m.a.swap(col * n + j, piv * n + j);
            inv.a.swap(col * n + j, piv * n + j);
        }
        let d = m.get(col, col);
        for j in 0..n {
            m.a[col * n + j] /= d;
            inv.a[col * n + j] /= d;
        }
        for row in 0..n {
            if row != col {
                let f = m.get(row, col);
                if f != 0.0 {
                    for j in 0..n {
                        m.a[row * n + j] -= f * m.a[col * n + j];
                        inv.a[row * n + j] -= f * inv.a[col * n + j];
                    }
                }
            }
        }
    }
    inv
}
