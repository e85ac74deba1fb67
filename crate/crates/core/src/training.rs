//! Unsupervised training of [`SolverWeights`]: minimize the mean squared
//! residual `||rhs - A B(rhs)||^2` of one solver application over random
//! coefficients and right-hand sides, with Adam and a progressive grid-size
//! schedule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{grad_check, GradCheckOptions, GradCheckReport, Gradients, NodeId, ParamStore, Tape};
use crate::datasets::{self, DistributionSpec};
use crate::discretization::{coef_from_random, ProblemSpec, Velocity};
use crate::error::{Error, Result};
use crate::learned::{self, SolverWeights};
use crate::tensor::{GridTensor, Precision, Real};
use crate::timing::Stopwatch;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub lr: f64,
    pub lr_step_epochs: usize,
    pub lr_gamma: f64,
    pub size_step: usize,
    pub initial_size: usize,
    pub initial_level: usize,
    pub initial_batch: usize,
    pub max_size: usize,
    pub min_batch: usize,
    pub re_limit: f64,
    pub channels: usize,
    pub precision: Precision,
    pub seed: u64,
    pub coef_distribution: DistributionSpec,
    /// Worker threads for per-sample passes; 0 or 1 runs sequentially.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batches_per_epoch: 1000,
            lr: 0.003,
            lr_step_epochs: 2,
            lr_gamma: 0.8,
            size_step: 10,
            initial_size: 31,
            initial_level: 4,
            initial_batch: 16,
            max_size: 511,
            min_batch: 2,
            re_limit: 1000.0,
            channels: learned::DEFAULT_CHANNELS,
            precision: Precision::F64,
            seed: 0,
            coef_distribution: DistributionSpec::WhiteNoise,
            threads: 0,
        }
    }
}

/// Grid size, level count and batch size of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stage {
    pub size: usize,
    pub level: usize,
    pub batch_size: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batches_per_epoch == 0 {
            return bad("epochs and batches_per_epoch must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return bad(format!("lr {} and lr_gamma {} out of range", self.lr, self.lr_gamma));
        }
        if self.lr_step_epochs == 0 || self.size_step == 0 {
            return bad("lr_step_epochs and size_step must be positive".into());
        }
        if !crate::discretization::is_nested_size(self.initial_size) || self.max_size < self.initial_size {
            return bad(format!(
                "initial_size {} must be 2^k - 1 and not above max_size {}",
                self.initial_size, self.max_size
            ));
        }
        learned::check_levels(self.initial_size, self.initial_level)
            .map_err(|e| Error::Config(format!("initial_level: {e}")))?;
        if self.initial_batch == 0 || self.min_batch == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.re_limit.is_nan() || self.re_limit <= 1.0 {
            return bad(format!("re_limit {} must exceed 1", self.re_limit));
        }
        if self.channels == 0 {
            return bad("channels must be positive".into());
        }
        self.coef_distribution.validate()
    }

    /// Size doubles, level grows by one and batch halves (floored at
    /// `min_batch`) every `size_step` epochs, until `max_size` is reached.
    pub fn stage(&self, epoch: usize) -> Stage {
        let mut s = Stage {
            size: self.initial_size,
            level: self.initial_level,
            batch_size: self.initial_batch,
        };
        for _ in 0..epoch / self.size_step {
            if 2 * s.size + 1 > self.max_size {
                break;
            }
            s.size = 2 * s.size + 1;
            s.level += 1;
            s.batch_size = (s.batch_size / 2).max(self.min_batch);
        }
        s.batch_size = s.batch_size.max(self.min_batch);
        s
    }
}

/// `lr * gamma^floor(epoch / step)`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr * cfg.lr_gamma.powi((epoch / cfg.lr_step_epochs) as i32)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = (0..params.len())
            .map(|id| vec![T::zero(); params.get(id).len()])
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, id: usize) -> &[T] {
        &self.m[id]
    }

    pub fn second_moment(&self, id: usize) -> &[T] {
        &self.v[id]
    }
}

/// One bias-corrected Adam update using the gradients held in `params`.
pub fn adam_step<T: Real>(params: &mut ParamStore<T>, state: &mut AdamState<T>, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let f = T::from_f64_lossy;
    let (b1t, b2t, eps) = (f(b1), f(b2), f(state.eps));
    let (one_b1, one_b2) = (f(1.0 - b1), f(1.0 - b2));
    let (step_size, c2t) = (f(lr / c1), f(c2));
    for ((values, grads), (m, v)) in params
        .values_and_grads_mut()
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for k in 0..values.len() {
            let g = grads[k];
            m[k] = b1t * m[k] + one_b1 * g;
            v[k] = b2t * v[k] + one_b2 * g * g;
            values[k] -= step_size * m[k] / ((v[k] / c2t).sqrt() + eps);
        }
    }
}

/// Squared residual norm `||rhs - A B(rhs)||^2` of one problem, recorded on
/// the tape with the full setup and solve networks.
pub fn residual_loss<T: Real>(
    tape: &mut Tape<'_, T>,
    weights: &SolverWeights<T>,
    spec: &ProblemSpec<T>,
    rhs: &GridTensor<T>,
    level: usize,
) -> Result<NodeId> {
    let coef = tape.leaf(spec.coef().clone());
    let setup = learned::setup_on_tape(tape, weights, coef, level)?;
    let r = tape.leaf(rhs.clone());
    let sol = learned::solve_on_tape(tape, weights, &setup, r)?;
    let a_sol = learned::operator_on_tape(tape, spec, sol)?;
    let res = tape.sub(r, a_sol)?;
    Ok(tape.sum_squares(res))
}

/// Finite-difference check of every weight gradient of [`residual_loss`] on
/// one random problem with freshly initialized weights.
pub fn grad_check_solver(
    channels: usize,
    size: usize,
    level: usize,
    seed: u64,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    learned::check_levels(size, level)?;
    let cfg = TrainConfig {
        channels,
        seed,
        ..TrainConfig::default()
    };
    let mut weights = SolverWeights::<f64>::init(channels, seed)?;
    let layout = weights.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(batch_seed(seed, 0));
    let (spec, rhs) = sample_problem::<f64>(&cfg, size, &mut rng)?;
    grad_check(
        weights.store_mut(),
        |tape| residual_loss(tape, &layout, &spec, &rhs, level),
        opts,
    )
}

/// Mean of [`residual_loss`] over a batch, with gradients accumulated into
/// `grads`. Samples are processed independently and merged in index order.
pub fn batch_loss_and_grads<T: Real>(
    weights: &SolverWeights<T>,
    batch: &[(ProblemSpec<T>, GridTensor<T>)],
    level: usize,
    grads: &mut Gradients<T>,
    threads: usize,
) -> Result<f64> {
    let scale = T::from_f64_lossy(1.0 / batch.len() as f64);
    let one = |(spec, rhs): &(ProblemSpec<T>, GridTensor<T>)| -> Result<(f64, Gradients<T>)> {
        let mut g = Gradients::zeros_for(weights.store());
        let mut tape = Tape::new(weights.store());
        let l = residual_loss(&mut tape, weights, spec, rhs, level)?;
        let l = tape.scale(l, scale);
        let value = tape.scalar(l)?.to_f64().unwrap_or(f64::NAN);
        tape.backward(l, &mut g)?;
        Ok((value, g))
    };
    let results = run_samples(batch, threads, one)?;
    let mut loss = 0.0;
    for (value, g) in &results {
        loss += value;
        grads.accumulate(g);
    }
    Ok(loss)
}

#[cfg(feature = "parallel")]
fn run_samples<I: Sync, O: Send>(
    items: &[I],
    threads: usize,
    f: impl Fn(&I) -> Result<O> + Sync + Send,
) -> Result<Vec<O>> {
    use rayon::prelude::*;
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}

#[cfg(not(feature = "parallel"))]
fn run_samples<I, O>(items: &[I], _threads: usize, f: impl Fn(&I) -> Result<O>) -> Result<Vec<O>> {
    items.iter().map(f).collect()
}

/// One row of the training history log.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    pub lr: f64,
    pub size: usize,
    pub level: usize,
    pub batch_size: usize,
    /// Wall time since training started.
    pub seconds: f64,
    pub peak_bytes: u64,
}

impl HistoryRow {
    pub const CSV_HEADER: [&'static str; 9] = [
        "epoch",
        "batch",
        "loss",
        "lr",
        "size",
        "level",
        "batch_size",
        "seconds",
        "peak_bytes",
    ];

    pub fn csv_record(&self) -> [String; 9] {
        [
            self.epoch.to_string(),
            self.batch.to_string(),
            format!("{:e}", self.loss),
            format!("{:e}", self.lr),
            self.size.to_string(),
            self.level.to_string(),
            self.batch_size.to_string(),
            format!("{:.6}", self.seconds),
            self.peak_bytes.to_string(),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub weights: SolverWeights<T>,
    pub history: Vec<HistoryRow>,
    pub epoch_seconds: Vec<f64>,
}

/// Peak resident set size of this process, 0 where unavailable.
pub fn peak_memory_bytes() -> u64 {
    std::fs::read_to_string("/proc/self/status")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("VmHWM:"))
                .and_then(|l| l.split_whitespace().nth(1)?.parse::<u64>().ok())
        })
        .map_or(0, |kb| kb * 1024)
}

/// Seed of one training batch, a SplitMix64 hash of the run seed and the
/// global batch index.
pub fn batch_seed(seed: u64, global_batch: u64) -> u64 {
    let mut z = seed ^ global_batch.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws one training problem: a coefficient field from the distribution and
/// a standard normal right-hand side.
pub fn sample_problem<T: Real>(
    cfg: &TrainConfig,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(ProblemSpec<T>, GridTensor<T>)> {
    let r = datasets::sample_with_rng(&cfg.coef_distribution, size, rng)?;
    let coef = coef_from_random(&r.cast::<T>(), cfg.re_limit)?;
    let spec = ProblemSpec::new(Velocity::benchmark(), cfg.re_limit, coef)?;
    let rhs = GridTensor::from_fn(1, size, size, |_, _, _| {
        T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal))
    });
    Ok((spec, rhs))
}

/// Trains from freshly initialized weights.
pub fn train<T: Real>(cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    let weights = SolverWeights::<T>::init(cfg.channels, cfg.seed)?;
    train_from(cfg, weights, |_| {})
}

/// Trains starting from `weights`; `on_epoch` sees each finished epoch's
/// history rows.
pub fn train_from<T: Real>(
    cfg: &TrainConfig,
    mut weights: SolverWeights<T>,
    mut on_epoch: impl FnMut(&[HistoryRow]),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if weights.channels() != cfg.channels {
        return Err(Error::Config(format!(
            "weights have {} channels, config asks for {}",
            weights.channels(),
            cfg.channels
        )));
    }
    let mut adam = AdamState::new(weights.store());
    let mut history = Vec::with_capacity(cfg.epochs * cfg.batches_per_epoch);
    let mut epoch_seconds = Vec::with_capacity(cfg.epochs);
    let watch = Stopwatch::start();
    for epoch in 0..cfg.epochs {
        let epoch_watch = Stopwatch::start();
        let stage = cfg.stage(epoch);
        let lr = lr_schedule(epoch, cfg);
        let first_row = history.len();
        for b in 0..cfg.batches_per_epoch {
            let seed = batch_seed(cfg.seed, (epoch * cfg.batches_per_epoch + b) as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let batch = (0..stage.batch_size)
                .map(|_| sample_problem::<T>(cfg, stage.size, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            weights.store_mut().zero_grad();
            let mut grads = weights.store().grads().clone();
            let loss = batch_loss_and_grads(&weights, &batch, stage.level, &mut grads, cfg.threads)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {epoch}, batch {b} (batch seed {seed})"
                )));
            }
            if loss < 0.0 {
                return Err(Error::InvalidData(format!(
                    "negative loss {loss} at epoch {epoch}, batch {b}"
                )));
            }
            weights.store_mut().accumulate_grads(&grads);
            adam_step(weights.store_mut(), &mut adam, lr);
            history.push(HistoryRow {
                epoch,
                batch: b,
                loss,
                lr,
                size: stage.size,
                level: stage.level,
                batch_size: stage.batch_size,
                seconds: watch.elapsed_seconds(),
                peak_bytes: peak_memory_bytes(),
            });
        }
        epoch_seconds.push(epoch_watch.elapsed_seconds());
        let rows = &history[first_row..];
        let mean = rows.iter().map(|r| r.loss).sum::<f64>() / rows.len() as f64;
        log::info!(
            "epoch {epoch}: size {} level {} batch {} lr {lr:.3e} mean loss {mean:.4e} ({:.1}s)",
            stage.size,
            stage.level,
            stage.batch_size,
            epoch_seconds[epoch]
        );
        on_epoch(rows);
    }
    Ok(TrainOutcome {
        weights,
        history,
        epoch_seconds,
    })
}
