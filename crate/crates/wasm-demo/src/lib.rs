//! Browser bindings: sample a coefficient field, solve with geometric
//! multigrid, and inspect the residual history and solution.

use mgsolve::bench::{instance_spec, solve_with, BenchOptions, SolverKind};
use mgsolve::datasets::{self, DistributionSpec};
use mgsolve::iteration::StopCriterion;
use mgsolve::GridTensor;
use wasm_bindgen::prelude::*;

fn js_err(e: mgsolve::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn options(dist: &str, re_limit: f64, seed: u64) -> Result<BenchOptions, JsError> {
    Ok(BenchOptions {
        re_limit,
        distribution: DistributionSpec::parse(dist).map_err(js_err)?,
        seed,
        runs: 1,
        ..BenchOptions::default()
    })
}

/// Random field in [0, 1] behind the coefficients, row-major.
#[wasm_bindgen]
pub fn coefficient_field(grid: usize, dist: &str, seed: u64) -> Result<Vec<f64>, JsError> {
    let spec = DistributionSpec::parse(dist).map_err(js_err)?;
    let field = datasets::sample_random_tensor(&spec, grid, seed).map_err(js_err)?;
    Ok(field.data().to_vec())
}

/// Outcome of one multigrid solve with right-hand side 1.
#[wasm_bindgen]
pub struct GmgRun {
    history: Vec<f64>,
    solution: Vec<f64>,
    iterations: usize,
    converged: bool,
}

#[wasm_bindgen]
impl GmgRun {
    /// Relative residual per iteration, starting at 1.
    #[wasm_bindgen(getter)]
    pub fn history(&self) -> Vec<f64> {
        self.history.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn solution(&self) -> Vec<f64> {
        self.solution.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    #[wasm_bindgen(getter)]
    pub fn converged(&self) -> bool {
        self.converged
    }
}

#[wasm_bindgen]
pub fn gmg_solve(grid: usize, dist: &str, re_limit: f64, seed: u64, tol: f64) -> Result<GmgRun, JsError> {
    let opts = options(dist, re_limit, seed)?;
    let spec = instance_spec::<f64>(&opts, grid, 0).map_err(js_err)?;
    let rhs = GridTensor::filled(1, grid, grid, 1.0);
    let stop = StopCriterion::new(tol, opts.max_iters).map_err(js_err)?;
    let (sol, report) = solve_with(SolverKind::Gmg, &spec, None, &rhs, stop).map_err(js_err)?;
    Ok(GmgRun {
        converged: report.converged(),
        iterations: report.iterations,
        history: report.relative_residual_history,
        solution: sol.data().to_vec(),
    })
}
