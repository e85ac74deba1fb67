//! End-to-end acceptance run: one PASS/FAIL line per criterion, non-zero exit
//! if any gated criterion fails. Criterion 6 trains a solver and takes tens
//! of minutes on one core.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use common::*;
use mgsolve::datasets::gen_data_multi_level_traced;
use mgsolve::discretization::{apply_operator, coef_from_random, ProblemSpec, Velocity};
use mgsolve::learned::{setup, solve_apply, SolverWeights};
use mgsolve::multigrid::{bilinear_prolong, bilinear_restrict, gmg_setup, v_cycle, weighted_jacobi};
use mgsolve::tensor::{self, conv2d, transposed_conv2d, ConvKernel, GridTensor, Real, Stride};
use mgsolve::weights_io::{decode_weights, encode_weights, load_weights, save_weights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn mgsolve(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgsolve"))
        .args(args)
        .current_dir(dir)
        .env("MGSOLVE_THREADS", "0")
        .output()
        .expect("failed to launch mgsolve")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within_time(start: Instant, limit_s: f64, detail: String) -> Check {
    let t = start.elapsed().as_secs_f64();
    ensure(t < limit_s, format!("{detail}; took {t:.1}s, limit {limit_s}s"))?;
    Ok(format!("{detail}; {t:.1}s"))
}

fn gradient_check(dir: &Path) -> Check {
    let start = Instant::now();
    let out = mgsolve(
        &[
            "gradcheck",
            "--channels",
            "4",
            "--size",
            "15",
            "--level",
            "2",
            "--seed",
            "0",
        ],
        dir,
    );
    let text = stdout(&out);
    let err: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("max_relative_error "))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| format!("no error reported: {text}"))?;
    ensure(
        out.status.success() && err < 1e-5,
        format!("max relative error {err:e}, status {}", out.status),
    )?;
    within_time(start, 120.0, format!("max relative error {err:e}"))
}

fn random_field<T: Real>(r: &mut ChaCha8Rng, c: usize, n: usize) -> GridTensor<T> {
    GridTensor::from_fn(c, n, n, |_, _, _| T::from_f64_lossy(r.random_range(-1.0..1.0)))
}

fn superposition<T: Real>(
    w: &SolverWeights<T>,
    coef: &GridTensor<T>,
    x: &GridTensor<T>,
    y: &GridTensor<T>,
    a: T,
    b: T,
) -> f64 {
    let s = setup(w, coef, 4).unwrap();
    let f = |v: &GridTensor<T>| solve_apply(w, &s, v).unwrap();
    let lhs = f(&tensor::axpy(x, &tensor::scale(y, b), a).unwrap());
    let rhs = tensor::axpy(&f(x), &tensor::scale(&f(y), b), a).unwrap();
    (tensor::norm2(&tensor::sub(&lhs, &rhs).unwrap()) / tensor::norm2(&rhs))
        .to_f64()
        .unwrap()
}

fn linearity() -> Check {
    let start = Instant::now();
    let (mut worst64, mut worst32) = (0.0f64, 0.0f64);
    for draw in 0..100u64 {
        let mut r = ChaCha8Rng::seed_from_u64(1000 + draw);
        let w = SolverWeights::<f64>::init(8, draw).unwrap();
        let raw = GridTensor::from_fn(1, 31, 31, |_, _, _| r.random::<f64>());
        let coef = coef_from_random(&raw, 1000.0).unwrap();
        let (x, y) = (random_field::<f64>(&mut r, 1, 31), random_field::<f64>(&mut r, 1, 31));
        let (a, b) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
        worst64 = worst64.max(superposition(&w, &coef, &x, &y, a, b));
        let w32 = w.cast::<f32>();
        worst32 = worst32.max(superposition(
            &w32,
            &coef.cast(),
            &x.cast(),
            &y.cast(),
            a as f32,
            b as f32,
        ));
    }
    let detail = format!("worst relative defect f64 {worst64:.2e}, f32 {worst32:.2e}");
    ensure(worst64 <= 1e-12 && worst32 <= 1e-5, detail.clone())?;
    within_time(start, 60.0, detail)
}

fn adjointness() -> Check {
    let mut worst = 0.0f64;
    for inst in 0..50u64 {
        let mut r = ChaCha8Rng::seed_from_u64(inst);
        let (ci, co, m) = (r.random_range(1..5), r.random_range(1..5), r.random_range(1..16));
        let k = ConvKernel::from_vec(co, ci, (0..co * ci * 9).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let x = random_field::<f64>(&mut r, ci, 2 * m + 1);
        let y = random_field::<f64>(&mut r, co, m);
        let lhs = tensor::dot(&conv2d(&x, &k, Stride::Two).unwrap(), &y).unwrap();
        let rhs = tensor::dot(&x, &transposed_conv2d(&y, &k).unwrap()).unwrap();
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));
    }
    ensure(worst <= 1e-10, format!("worst defect {worst:.2e}"))?;
    Ok(format!("worst defect {worst:.2e} over 50 instances"))
}

fn dense_oracle() -> Check {
    let mut r = ChaCha8Rng::seed_from_u64(99);
    let v = Velocity::benchmark();
    let mut worst = 0.0f64;
    for n in [3usize, 7] {
        let c = GridTensor::from_fn(1, n, n, |_, _, _| 10f64.powf(-3.0 * r.random::<f64>()));
        let spec = ProblemSpec::new(v, 1000.0, c.clone()).unwrap();
        let a = convection_diffusion(&flat(&c), n, v.vx(), v.vy());
        let (x, b) = (random_field::<f64>(&mut r, 1, n), random_field::<f64>(&mut r, 1, n));
        worst = worst.max(max_abs_diff(
            &flat(&apply_operator(&spec, &x).unwrap()),
            &a.matvec(&flat(&x)),
        ));
        let got = weighted_jacobi(&spec, &x, &b, 0.67, 1).unwrap();
        worst = worst.max(max_abs_diff(&flat(&got), &jacobi(&a, &flat(&x), &flat(&b), 0.67, 1)));
        let levels = if n == 3 { 2 } else { 3 };
        let h = gmg_setup(&spec, levels).unwrap();
        let want = common::v_cycle(&flat(&c), n, v.vx(), v.vy(), levels, &flat(&b), 0.67, 3);
        worst = worst.max(max_abs_diff(&flat(&v_cycle(&h, 0, &b).unwrap()), &want));
    }
    for m in [1usize, 2, 4] {
        let p = prolongation(m);
        let coarse = random_field::<f64>(&mut r, 1, m);
        worst = worst.max(max_abs_diff(
            &flat(&bilinear_prolong(&coarse).unwrap()),
            &p.matvec(&flat(&coarse)),
        ));
        let fine = random_field::<f64>(&mut r, 1, 2 * m + 1);
        let want = p.transpose().scale(0.25).matvec(&flat(&fine));
        worst = worst.max(max_abs_diff(&flat(&bilinear_restrict(&fine).unwrap()), &want));
    }
    for (n, level, channels) in [(7usize, 2usize, 2usize), (7, 3, 3), (9, 2, 4)] {
        let w = SolverWeights::<f64>::init(channels, n as u64 + level as u64).unwrap();
        let c = GridTensor::from_fn(1, n, n, |_, _, _| r.random::<f64>());
        let s = setup(&w, &c, level).unwrap();
        let rhs = random_field::<f64>(&mut r, 1, n);
        let want = solve_matrix(&w, &s, n).matvec(&flat(&rhs));
        worst = worst.max(max_abs_diff(&flat(&solve_apply(&w, &s, &rhs).unwrap()), &want));
    }
    ensure(worst <= 1e-12, format!("worst entry difference {worst:.2e}"))?;
    Ok(format!("worst entry difference {worst:.2e} on grids up to 9x9"))
}

#[derive(Debug)]
struct Row {
    grid: usize,
    solver: String,
    mean_iterations: f64,
    converged: bool,
}

fn bench(dir: &Path, args: &[&str]) -> Result<Vec<Row>, String> {
    let csv_path = dir.join("bench.csv");
    let mut full = vec!["bench", "--out", csv_path.to_str().unwrap()];
    full.extend_from_slice(args);
    let out = mgsolve(&full, dir);
    ensure(
        out.status.success(),
        format!("bench failed: {}", String::from_utf8_lossy(&out.stderr)),
    )?;
    let mut reader = csv::Reader::from_path(&csv_path).map_err(|e| e.to_string())?;
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (g, s, m, c) = (
        col("grid"),
        col("solver_name"),
        col("mean_iterations"),
        col("converged"),
    );
    reader
        .records()
        .map(|rec| {
            let rec = rec.map_err(|e| e.to_string())?;
            Ok(Row {
                grid: rec[g].parse().unwrap(),
                solver: rec[s].to_string(),
                mean_iterations: rec[m].parse().unwrap(),
                converged: &rec[c] == "true",
            })
        })
        .collect()
}

fn find<'a>(rows: &'a [Row], grid: usize, solver: &str) -> Result<&'a Row, String> {
    rows.iter()
        .find(|r| r.grid == grid && r.solver == solver)
        .ok_or_else(|| format!("no {solver} row for grid {grid}"))
}

fn gmg_baseline(dir: &Path) -> Check {
    let start = Instant::now();
    let rows = bench(
        dir,
        &[
            "--solvers",
            "gmg",
            "--grids",
            "31,63,127",
            "--runs",
            "10",
            "--seed",
            "0",
        ],
    )?;
    let mut detail = Vec::new();
    let mut ok = true;
    for (grid, lo, hi) in [(31, 12.0, 22.0), (63, 14.0, 26.0), (127, 15.0, 28.0)] {
        let row = find(&rows, grid, "gmg")?;
        ok &= row.converged && (lo..=hi).contains(&row.mean_iterations);
        detail.push(format!("{grid}: {} in [{lo}, {hi}]", row.mean_iterations));
    }
    let detail = detail.join(", ");
    ensure(ok, detail.clone())?;
    within_time(start, 300.0, detail)
}

const DESK_CONFIG: &str = "\
epochs = 15
num = 300
size_step = 5
max_size = 127
channels = 8
precision = f64
re_limit = 1000
coef_distribution = white_noise
seed = 0
";

fn desk_training(dir: &Path) -> Check {
    let start = Instant::now();
    fs::write(dir.join("desk.cfg"), DESK_CONFIG).map_err(|e| e.to_string())?;
    let out = mgsolve(
        &["train", "desk.cfg", "--out", "desk.mgcn", "--history", "desk.csv"],
        dir,
    );
    ensure(
        out.status.success(),
        format!("training failed: {}", String::from_utf8_lossy(&out.stderr)),
    )?;
    let trained = start.elapsed().as_secs_f64();
    let rows = bench(
        dir,
        &[
            "--weights",
            "desk.mgcn",
            "--solvers",
            "learned,gmg",
            "--grids",
            "63",
            "--runs",
            "10",
        ],
    )?;
    let (learned, gmg) = (find(&rows, 63, "learned")?, find(&rows, 63, "gmg")?);
    let rows = bench(
        dir,
        &[
            "--weights",
            "desk.mgcn",
            "--solvers",
            "learned",
            "--grids",
            "255",
            "--runs",
            "10",
        ],
    )?;
    let large = find(&rows, 255, "learned")?;
    let detail = format!(
        "63: learned {} vs gmg {} (need <= 16 and below gmg); 255: learned {} (need <= 40); trained in {:.0}s",
        learned.mean_iterations, gmg.mean_iterations, large.mean_iterations, trained
    );
    let ok = learned.converged
        && learned.mean_iterations <= 16.0
        && learned.mean_iterations < gmg.mean_iterations
        && large.converged
        && large.mean_iterations <= 40.0;
    ensure(ok, detail.clone())?;
    Ok(detail)
}

fn mldata_generator() -> Check {
    let (field, trace) = gen_data_multi_level_traced(63, 3, 5, 11).map_err(|e| e.to_string())?;
    ensure(trace.sizes == [10, 20, 40], format!("sizes {:?}", trace.sizes))?;
    ensure(
        trace.noise_ratios == [0.5, 0.25, 0.125],
        format!("ratios {:?}", trace.noise_ratios),
    )?;
    let (again, _) = gen_data_multi_level_traced(63, 3, 5, 11).map_err(|e| e.to_string())?;
    ensure(field == again, "same seed gave different fields")?;
    let (other, _) = gen_data_multi_level_traced(63, 3, 5, 12).map_err(|e| e.to_string())?;
    ensure(field != other, "different seeds gave equal fields")?;
    Ok("sizes 10/20/40, ratios 0.5/0.25/0.125, seed-deterministic".into())
}

fn determinism(dir: &Path) -> Check {
    fs::write(dir.join("smoke.cfg"), "epochs = 1\nnum = 10\nseed = 7\n").map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let (w, h) = (format!("smoke_{run}.mgcn"), format!("smoke_{run}.csv"));
        let out = mgsolve(&["train", "smoke.cfg", "--out", &w, "--history", &h], dir);
        ensure(
            out.status.success(),
            format!("smoke run failed: {}", String::from_utf8_lossy(&out.stderr)),
        )?;
        files.push(fs::read(dir.join(&w)).map_err(|e| e.to_string())?);
    }
    ensure(files[0] == files[1], "weight files differ")?;
    Ok(format!("two runs wrote identical {}-byte weight files", files[0].len()))
}

fn weight_round_trip(dir: &Path) -> Check {
    let w = SolverWeights::<f64>::init(8, 5).unwrap();
    let path = dir.join("rt.mgcn");
    save_weights(&path, &w).map_err(|e| e.to_string())?;
    let first = fs::read(&path).map_err(|e| e.to_string())?;
    let loaded = load_weights(&path).map_err(|e| e.to_string())?;
    ensure(loaded == w, "loaded weights differ")?;
    let again = encode_weights(&loaded);
    ensure(again == first, "second save differs")?;
    let mut bad = first.clone();
    bad[..4].copy_from_slice(b"XXXX");
    ensure(decode_weights(&bad).is_err(), "corrupted magic accepted")?;
    Ok(format!(
        "{}-byte file stable across save/load/save; bad magic rejected",
        first.len()
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let dir = tmp.path();
    // numeric arguments select a subset of criteria
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: u32| only.is_empty() || only.contains(&n);
    let mut failed = 0;
    let mut report = |n: u32, name: &str, run: &dyn Fn() -> Check| {
        if !wanted(n) {
            return;
        }
        match run() {
            Ok(d) => println!("criterion {n} ({name}): PASS - {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL - {d}");
            }
        }
    };
    report(1, "gradient check", &|| gradient_check(dir));
    report(2, "solve linearity", &|| linearity());
    report(3, "adjointness", &|| adjointness());
    report(4, "dense oracle", &|| dense_oracle());
    report(5, "gmg baseline", &|| gmg_baseline(dir));
    report(6, "desk-scale training", &|| desk_training(dir));
    if wanted(7) {
        println!("criterion 7 (full protocol): NOT RUN - optional stretch goal, documented and not gated");
    }
    report(8, "mldata generator", &|| mldata_generator());
    report(9, "training determinism", &|| determinism(dir));
    report(10, "weight round trip", &|| weight_round_trip(dir));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all gated criteria passed");
}
