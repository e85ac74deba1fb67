//! Convergence benchmarks: stationary iteration with rhs = 1 on random
//! coefficient draws, for the classical and the learned solver.

use std::fmt;
use std::str::FromStr;

use crate::datasets::{self, DistributionSpec};
use crate::discretization::{apply_operator, coef_from_random, ProblemSpec, Velocity};
use crate::error::{Error, Result};
use crate::iteration::{stationary_solve, IterationReport, StopCriterion, DEFAULT_MAX_ITERS};
use crate::learned::{self, LearnedSolver, SolverWeights};
use crate::multigrid::{self, gmg_setup};
use crate::tensor::{GridTensor, Precision, Real};
use crate::timing::Stopwatch;
use crate::training::batch_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SolverKind {
    Gmg,
    Learned,
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverKind::Gmg => "gmg",
            SolverKind::Learned => "learned",
        })
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmg" => Ok(SolverKind::Gmg),
            "learned" => Ok(SolverKind::Learned),
            other => Err(Error::Config(format!("unknown solver '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub re_limit: f64,
    pub distribution: DistributionSpec,
    pub precision: Precision,
    /// `None` uses the precision's default tolerance.
    pub tol: Option<f64>,
    pub max_iters: usize,
    pub runs: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            re_limit: 1000.0,
            distribution: DistributionSpec::WhiteNoise,
            precision: Precision::F64,
            tol: None,
            max_iters: DEFAULT_MAX_ITERS,
            runs: 10,
            seed: 0,
        }
    }
}

impl BenchOptions {
    pub fn tolerance(&self) -> f64 {
        self.tol.unwrap_or_else(|| self.precision.default_tolerance())
    }

    pub fn stop(&self) -> Result<StopCriterion> {
        StopCriterion::new(self.tolerance(), self.max_iters)
    }
}

/// Coefficient field of run `run`; depends only on the seed, grid and
/// distribution, so every solver sees the same instances.
pub fn instance_coef(opts: &BenchOptions, grid: usize, run: usize) -> Result<GridTensor<f64>> {
    let r = datasets::sample_random_tensor(&opts.distribution, grid, batch_seed(opts.seed, run as u64))?;
    coef_from_random(&r, opts.re_limit)
}

pub fn instance_spec<T: Real>(opts: &BenchOptions, grid: usize, run: usize) -> Result<ProblemSpec<T>> {
    let coef = instance_coef(opts, grid, run)?;
    ProblemSpec::new(Velocity::benchmark(), opts.re_limit, coef.cast())
}

/// Solves `A sol = rhs` with the chosen preconditioner; setup time is
/// recorded in the report.
pub fn solve_with<T: Real>(
    kind: SolverKind,
    spec: &ProblemSpec<T>,
    weights: Option<&SolverWeights<T>>,
    rhs: &GridTensor<T>,
    stop: StopCriterion,
) -> Result<(GridTensor<T>, IterationReport)> {
    let a = |x: &GridTensor<T>| apply_operator(spec, x);
    let watch = Stopwatch::start();
    match kind {
        SolverKind::Gmg => {
            let h = gmg_setup(spec, multigrid::gmg_levels_for_grid(spec.grid_n()))?;
            let setup_seconds = watch.elapsed_seconds();
            let (sol, mut report) = stationary_solve(&a, &h.v_cycle_map(), rhs, stop)?;
            report.setup_seconds = setup_seconds;
            Ok((sol, report))
        }
        SolverKind::Learned => {
            let w = weights.ok_or_else(|| Error::Config("the learned solver needs weights".into()))?;
            let level = learned::level_for_grid(spec.grid_n())?;
            let b = LearnedSolver::new(w, spec, level)?;
            let (sol, mut report) = stationary_solve(&a, &b, rhs, stop)?;
            report.setup_seconds = b.setup_seconds();
            Ok((sol, report))
        }
    }
}

pub fn solver_level(kind: SolverKind, grid: usize) -> Result<usize> {
    match kind {
        SolverKind::Gmg => Ok(multigrid::gmg_levels_for_grid(grid)),
        SolverKind::Learned => learned::level_for_grid(grid),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResultRow {
    pub grid: usize,
    pub solver_name: String,
    pub channels: usize,
    pub level: usize,
    pub precision: Precision,
    pub mean_iterations: f64,
    pub setup_seconds: f64,
    pub solve_seconds: f64,
    pub final_relative_residual: f64,
    pub converged: bool,
    pub seed: u64,
}

impl BenchResultRow {
    pub const CSV_HEADER: [&'static str; 11] = [
        "grid",
        "solver_name",
        "channels",
        "level",
        "precision",
        "mean_iterations",
        "setup_seconds",
        "solve_seconds",
        "final_relative_residual",
        "converged",
        "seed",
    ];

    pub fn csv_record(&self) -> [String; 11] {
        [
            self.grid.to_string(),
            self.solver_name.clone(),
            self.channels.to_string(),
            self.level.to_string(),
            self.precision.to_string(),
            format!("{}", self.mean_iterations),
            format!("{:.6}", self.setup_seconds),
            format!("{:.6}", self.solve_seconds),
            format!("{:e}", self.final_relative_residual),
            self.converged.to_string(),
            self.seed.to_string(),
        ]
    }
}

/// Runs `opts.runs` solves on one grid and averages them. Timings are means
/// per run; the final residual is the worst over the runs.
pub fn bench_row<T: Real>(
    kind: SolverKind,
    grid: usize,
    weights: Option<&SolverWeights<T>>,
    opts: &BenchOptions,
) -> Result<(BenchResultRow, Vec<IterationReport>)> {
    if opts.runs == 0 {
        return Err(Error::Config("runs must be positive".into()));
    }
    let stop = opts.stop()?;
    let rhs = GridTensor::filled(1, grid, grid, T::one());
    let mut reports = Vec::with_capacity(opts.runs);
    for run in 0..opts.runs {
        let spec = instance_spec::<T>(opts, grid, run)?;
        let (_, report) = solve_with(kind, &spec, weights, &rhs, stop)?;
        reports.push(report);
    }
    let n = opts.runs as f64;
    let row = BenchResultRow {
        grid,
        solver_name: kind.to_string(),
        channels: match kind {
            SolverKind::Gmg => 1,
            SolverKind::Learned => weights.map_or(0, |w| w.channels()),
        },
        level: solver_level(kind, grid)?,
        precision: T::PRECISION,
        mean_iterations: reports.iter().map(|r| r.iterations as f64).sum::<f64>() / n,
        setup_seconds: reports.iter().map(|r| r.setup_seconds).sum::<f64>() / n,
        solve_seconds: reports.iter().map(|r| r.solve_seconds).sum::<f64>() / n,
        final_relative_residual: reports
            .iter()
            .map(IterationReport::final_relative_residual)
            .fold(0.0, f64::max),
        converged: reports.iter().all(IterationReport::converged),
        seed: opts.seed,
    };
    Ok((row, reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_parse() {
        assert_eq!("gmg".parse::<SolverKind>().unwrap(), SolverKind::Gmg);
        assert_eq!(SolverKind::Learned.to_string(), "learned");
        assert!("amg".parse::<SolverKind>().is_err());
    }

    #[test]
    fn instances_are_shared_and_seeded() {
        let opts = BenchOptions::default();
        assert_eq!(
            instance_coef(&opts, 31, 2).unwrap(),
            instance_coef(&opts, 31, 2).unwrap()
        );
        assert_ne!(
            instance_coef(&opts, 31, 2).unwrap(),
            instance_coef(&opts, 31, 3).unwrap()
        );
    }

    #[test]
    fn untrained_learned_row_does_not_crash() {
        let w = SolverWeights::<f64>::init(2, 0).unwrap();
        let opts = BenchOptions {
            runs: 1,
            max_iters: 20,
            ..Default::default()
        };
        let (row, reports) = bench_row(SolverKind::Learned, 15, Some(&w), &opts).unwrap();
        assert!(!row.converged);
        assert_eq!(reports.len(), 1);
        assert_eq!(row.level, 3);
        assert!(bench_row::<f64>(SolverKind::Learned, 15, None, &opts).is_err());
    }

    #[test]
    fn gmg_row_on_small_grid() {
        let opts = BenchOptions {
            runs: 2,
            ..Default::default()
        };
        let (row, _) = bench_row::<f64>(SolverKind::Gmg, 31, None, &opts).unwrap();
        assert!(row.converged);
        assert_eq!(row.level, 2);
        assert!(row.final_relative_residual <= 1e-8);
    }
}
