//! The learnable multigrid-shaped solver.
//!
//! A nonlinear setup network maps the coefficient field to one `c`-channel
//! tensor per level. The solve network is linear in the right-hand side: a
//! down and an up sweep over the levels, each level updating its state as
//! `x <- K (s_l * x) + x`, with strided convolutions between levels. One set
//! of kernels is shared by every level and grid size.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{KernelRef, NodeId, ParamId, ParamStore, ParamValue, Tape};
use crate::discretization::{is_nested_size, ProblemSpec};
use crate::error::{Error, Result};
use crate::iteration::LinearMap;
use crate::tensor::{self, ConvKernel, GridTensor, Real, Stride};
use crate::timing::Stopwatch;

pub const DEFAULT_CHANNELS: usize = 8;
pub const RESNET_LAYERS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct WeightIds {
    coef_rechannel: ParamId,
    setup_rcnn: ParamId,
    setup_resnet: [(ParamId, ParamId); RESNET_LAYERS],
    rhs_rechannel: ParamId,
    k_down: ParamId,
    k_up: ParamId,
    solve_rcnn: ParamId,
    solve_tcnn: ParamId,
    sol_rechannel: ParamId,
}

/// Parameter names in storage and file order, with `(out, in)` channel
/// layout for kernels and `None` for biases.
fn registry(c: usize) -> Vec<(String, Option<(usize, usize)>)> {
    let mut r = vec![
        ("coef_rechannel".to_string(), Some((c, 1))),
        ("setup_rcnn".to_string(), Some((c, c))),
    ];
    for i in 0..RESNET_LAYERS {
        r.push((format!("setup_resnet.{i}.kernel"), Some((c, c))));
        r.push((format!("setup_resnet.{i}.bias"), None));
    }
    for name in [
        "rhs_rechannel",
        "k_down",
        "k_up",
        "solve_rcnn",
        "solve_tcnn",
        "sol_rechannel",
    ] {
        let layout = match name {
            "rhs_rechannel" => (c, 1),
            "sol_rechannel" => (1, c),
            _ => (c, c),
        };
        r.push((name.to_string(), Some(layout)));
    }
    r
}

/// All parameter names of a solver, in file order.
pub fn parameter_names() -> Vec<String> {
    registry(1).into_iter().map(|(n, _)| n).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverWeights<T> {
    store: ParamStore<T>,
    ids: WeightIds,
    channels: usize,
}

impl<T: Real> SolverWeights<T> {
    /// Kernel entries uniform in `[-a, a]` with `a = sqrt(1 / (9 in_channels))`,
    /// biases zero.
    pub fn init(channels: usize, seed: u64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::OutOfRange("channels must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, layout) in registry(channels) {
            let value = match layout {
                Some((o, i)) => {
                    let a = (1.0 / (9.0 * i as f64)).sqrt();
                    let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
                    let w = (0..o * i * 9)
                        .map(|_| T::from_f64_lossy(dist.sample(&mut rng)))
                        .collect();
                    ParamValue::Kernel(ConvKernel::from_vec(o, i, w)?)
                }
                None => ParamValue::Bias(vec![T::zero(); channels]),
            };
            store.insert(name, value)?;
        }
        Self::from_store(store)
    }

    /// Wraps a store holding exactly the registry parameters with consistent
    /// channel counts.
    pub fn from_store(store: ParamStore<T>) -> Result<Self> {
        let first = store
            .id("coef_rechannel")
            .ok_or_else(|| Error::WeightFormat("missing parameter 'coef_rechannel'".into()))?;
        let channels = store.get(first).dims()[0];
        let reg = registry(channels);
        if store.len() != reg.len() {
            return Err(Error::WeightFormat(format!(
                "expected {} parameters, found {}",
                reg.len(),
                store.len()
            )));
        }
        let mut ids = Vec::with_capacity(reg.len());
        for (name, layout) in &reg {
            let id = store
                .id(name)
                .ok_or_else(|| Error::WeightFormat(format!("missing parameter '{name}'")))?;
            let want = match layout {
                Some((o, i)) => vec![*o, *i, 3, 3],
                None => vec![channels],
            };
            let is_kernel = matches!(store.get(id), ParamValue::Kernel(_));
            if store.get(id).dims() != want || is_kernel != layout.is_some() {
                return Err(Error::WeightFormat(format!(
                    "parameter '{name}' has dims {:?}, expected {want:?}",
                    store.get(id).dims()
                )));
            }
            ids.push(id);
        }
        let mut resnet = [(0, 0); RESNET_LAYERS];
        for (i, slot) in resnet.iter_mut().enumerate() {
            *slot = (ids[2 + 2 * i], ids[3 + 2 * i]);
        }
        let rest = 2 + 2 * RESNET_LAYERS;
        let ids = WeightIds {
            coef_rechannel: ids[0],
            setup_rcnn: ids[1],
            setup_resnet: resnet,
            rhs_rechannel: ids[rest],
            k_down: ids[rest + 1],
            k_up: ids[rest + 2],
            solve_rcnn: ids[rest + 3],
            solve_tcnn: ids[rest + 4],
            sol_rechannel: ids[rest + 5],
        };
        Ok(SolverWeights { store, ids, channels })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn into_store(self) -> ParamStore<T> {
        self.store
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn cast<U: Real>(&self) -> SolverWeights<U> {
        SolverWeights {
            store: self.store.cast(),
            ids: self.ids,
            channels: self.channels,
        }
    }

    fn k(&self, id: ParamId) -> &ConvKernel<T> {
        self.store.kernel(id)
    }
}

/// `log2(grid_n + 1) - 1`, the level count whose coarsest grid is 3x3.
pub fn level_for_grid(grid_n: usize) -> Result<usize> {
    if !is_nested_size(grid_n) || grid_n < 15 {
        return Err(Error::InvalidGridSize {
            size: grid_n,
            reason: "learned solver grids are 2^k - 1 with k >= 4",
        });
    }
    Ok((grid_n + 1).trailing_zeros() as usize - 1)
}

/// Whether a grid of size `n` survives `level - 1` stride-2 halvings.
pub fn check_levels(n: usize, level: usize) -> Result<()> {
    if level == 0 {
        return Err(Error::OutOfRange("level must be at least 1".into()));
    }
    let mut m = n;
    for _ in 1..level {
        if m < 3 || m.is_multiple_of(2) {
            return Err(Error::InvalidGridSize {
                size: n,
                reason: "grid does not admit the requested number of halvings",
            });
        }
        m = tensor::coarse_len(m);
    }
    Ok(())
}

/// Per-level setup tensors, finest first.
#[derive(Clone, Debug, PartialEq)]
pub struct SetupOutputs<T> {
    levels: Vec<GridTensor<T>>,
}

impl<T: Real> SetupOutputs<T> {
    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, l: usize) -> &GridTensor<T> {
        &self.levels[l]
    }

    pub fn iter(&self) -> impl Iterator<Item = &GridTensor<T>> {
        self.levels.iter()
    }
}

fn add_bias_in_place<T: Real>(x: &mut GridTensor<T>, bias: &[T]) {
    for (c, &b) in bias.iter().enumerate() {
        x.channel_mut(c).iter_mut().for_each(|v| *v += b);
    }
}

fn resnet<T: Real>(w: &SolverWeights<T>, mut x: GridTensor<T>) -> Result<GridTensor<T>> {
    for &(k, b) in &w.ids.setup_resnet {
        let mut y = tensor::conv2d(&x, w.k(k), Stride::One)?;
        add_bias_in_place(&mut y, w.store.bias(b));
        for (xv, yv) in x.data_mut().iter_mut().zip(y.data()) {
            *xv += yv.tanh();
        }
    }
    Ok(x)
}

fn check_coef<T: Real>(coef: &GridTensor<T>, level: usize) -> Result<()> {
    if coef.channels() != 1 || coef.height() != coef.width() {
        return Err(Error::InvalidData(format!(
            "coefficient must be a single-channel square grid, got {}",
            coef.shape()
        )));
    }
    check_levels(coef.height(), level)
}

/// Runs the setup network on a coefficient field.
pub fn setup<T: Real>(w: &SolverWeights<T>, coef: &GridTensor<T>, level: usize) -> Result<SetupOutputs<T>> {
    check_coef(coef, level)?;
    let mut c = tensor::conv2d(coef, w.k(w.ids.coef_rechannel), Stride::One)?;
    let mut levels = Vec::with_capacity(level);
    for l in 0..level {
        levels.push(resnet(w, c.clone())?);
        if l + 1 < level {
            c = tensor::conv2d(&c, w.k(w.ids.setup_rcnn), Stride::Two)?;
        }
    }
    Ok(SetupOutputs { levels })
}

fn smooth<T: Real>(k: &ConvKernel<T>, s: &GridTensor<T>, x: &mut GridTensor<T>) -> Result<()> {
    let y = tensor::conv2d(&tensor::mul(s, x)?, k, Stride::One)?;
    x.add_assign(&y)
}

/// Applies the solve network to one right-hand side.
pub fn solve_apply<T: Real>(
    w: &SolverWeights<T>,
    setup_outs: &SetupOutputs<T>,
    rhs: &GridTensor<T>,
) -> Result<GridTensor<T>> {
    let level = setup_outs.levels();
    let first = setup_outs.level(0);
    if rhs.channels() != 1 || rhs.height() != first.height() || rhs.width() != first.width() {
        return Err(Error::ShapeMismatch {
            op: "solve_apply",
            expected: tensor::Shape::new(1, first.height(), first.width()),
            found: rhs.shape(),
        });
    }
    let mut xs: Vec<GridTensor<T>> = Vec::with_capacity(level);
    let mut x = tensor::conv2d(rhs, w.k(w.ids.rhs_rechannel), Stride::One)?;
    for l in 0..level {
        smooth(w.k(w.ids.k_down), setup_outs.level(l), &mut x)?;
        let next = if l + 1 < level {
            Some(tensor::conv2d(&x, w.k(w.ids.solve_rcnn), Stride::Two)?)
        } else {
            None
        };
        xs.push(x);
        match next {
            Some(n) => x = n,
            None => break,
        }
    }
    for l in (0..level).rev() {
        smooth(w.k(w.ids.k_up), setup_outs.level(l), &mut xs[l])?;
        if l > 0 {
            let up = tensor::transposed_conv2d(&xs[l], w.k(w.ids.solve_tcnn))?;
            xs[l - 1].add_assign(&up)?;
        }
    }
    tensor::conv2d(&xs[0], w.k(w.ids.sol_rechannel), Stride::One)
}

/// Records the setup network on a tape; returns one node per level.
pub fn setup_on_tape<T: Real>(
    tape: &mut Tape<'_, T>,
    w: &SolverWeights<T>,
    coef: NodeId,
    level: usize,
) -> Result<Vec<NodeId>> {
    check_coef(tape.value(coef), level)?;
    let ids = &w.ids;
    let mut c = tape.conv2d(coef, KernelRef::Param(ids.coef_rechannel), Stride::One)?;
    let mut outs = Vec::with_capacity(level);
    for l in 0..level {
        let mut x = c;
        for &(k, b) in &ids.setup_resnet {
            let y = tape.conv2d(x, KernelRef::Param(k), Stride::One)?;
            let y = tape.add_bias(y, b)?;
            let y = tape.tanh(y);
            x = tape.add(y, x)?;
        }
        outs.push(x);
        if l + 1 < level {
            c = tape.conv2d(c, KernelRef::Param(ids.setup_rcnn), Stride::Two)?;
        }
    }
    Ok(outs)
}

/// Records the solve network on a tape.
pub fn solve_on_tape<T: Real>(
    tape: &mut Tape<'_, T>,
    w: &SolverWeights<T>,
    setup_outs: &[NodeId],
    rhs: NodeId,
) -> Result<NodeId> {
    let ids = &w.ids;
    let level = setup_outs.len();
    if level == 0 {
        return Err(Error::OutOfRange("no setup levels".into()));
    }
    let mut xs = Vec::with_capacity(level);
    let mut x = tape.conv2d(rhs, KernelRef::Param(ids.rhs_rechannel), Stride::One)?;
    for (l, &s) in setup_outs.iter().enumerate() {
        let sx = tape.mul(s, x)?;
        let y = tape.conv2d(sx, KernelRef::Param(ids.k_down), Stride::One)?;
        x = tape.add(y, x)?;
        xs.push(x);
        if l + 1 < level {
            x = tape.conv2d(x, KernelRef::Param(ids.solve_rcnn), Stride::Two)?;
        }
    }
    for l in (0..level).rev() {
        let sx = tape.mul(setup_outs[l], xs[l])?;
        let y = tape.conv2d(sx, KernelRef::Param(ids.k_up), Stride::One)?;
        xs[l] = tape.add(y, xs[l])?;
        if l > 0 {
            let up = tape.transposed_conv2d(xs[l], KernelRef::Param(ids.solve_tcnn))?;
            xs[l - 1] = tape.add(xs[l - 1], up)?;
        }
    }
    tape.conv2d(xs[0], KernelRef::Param(ids.sol_rechannel), Stride::One)
}

/// A learned solver bound to one problem: setup runs once at construction
/// and every application reuses its outputs.
#[derive(Debug)]
pub struct LearnedSolver<'w, T> {
    weights: &'w SolverWeights<T>,
    setup: SetupOutputs<T>,
    setup_seconds: f64,
    setup_runs: usize,
    applications: AtomicUsize,
}

impl<'w, T: Real> LearnedSolver<'w, T> {
    pub fn new(weights: &'w SolverWeights<T>, spec: &ProblemSpec<T>, level: usize) -> Result<Self> {
        let watch = Stopwatch::start();
        let setup = setup(weights, spec.coef(), level)?;
        Ok(LearnedSolver {
            weights,
            setup,
            setup_seconds: watch.elapsed_seconds(),
            setup_runs: 1,
            applications: AtomicUsize::new(0),
        })
    }

    pub fn setup_outputs(&self) -> &SetupOutputs<T> {
        &self.setup
    }

    pub fn level(&self) -> usize {
        self.setup.levels()
    }

    pub fn setup_seconds(&self) -> f64 {
        self.setup_seconds
    }

    pub fn setup_runs(&self) -> usize {
        self.setup_runs
    }

    pub fn applications(&self) -> usize {
        self.applications.load(Ordering::Relaxed)
    }
}

impl<T: Real> LinearMap<T> for LearnedSolver<'_, T> {
    fn apply(&self, rhs: &GridTensor<T>) -> Result<GridTensor<T>> {
        self.applications.fetch_add(1, Ordering::Relaxed);
        solve_apply(self.weights, &self.setup, rhs)
    }
}

/// Builds the linear operator `rhs -> A sol` on a tape for a fixed problem.
pub fn operator_on_tape<T: Real>(tape: &mut Tape<'_, T>, spec: &ProblemSpec<T>, sol: NodeId) -> Result<NodeId> {
    let st = spec.stencil();
    let lap = KernelRef::Fixed(Arc::new(st.laplacian_kernel()));
    let upwind = KernelRef::Fixed(Arc::new(st.upwind_kernel()));
    let coef = tape.leaf(spec.coef().clone());
    let l = tape.conv2d(sol, lap, Stride::One)?;
    let l = tape.mul(coef, l)?;
    let u = tape.conv2d(sol, upwind, Stride::One)?;
    tape.add(l, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Gradients;
    use crate::discretization::Velocity;
    use rand::Rng;

    fn random_grid(rng: &mut ChaCha8Rng, n: usize) -> GridTensor<f64> {
        GridTensor::from_fn(1, n, n, |_, _, _| rng.random_range(-1.0..1.0))
    }

    fn random_coef(rng: &mut ChaCha8Rng, n: usize) -> GridTensor<f64> {
        GridTensor::from_fn(1, n, n, |_, _, _| rng.random_range(0.001..1.0))
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = SolverWeights::<f64>::init(8, 3).unwrap();
        let b = SolverWeights::<f64>::init(8, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, SolverWeights::<f64>::init(8, 4).unwrap());
        assert_eq!(a.parameter_count(), 5432);
        for (name, v) in a.store().iter() {
            match v {
                ParamValue::Kernel(k) => {
                    let bound = (1.0 / (9.0 * k.in_channels() as f64)).sqrt();
                    assert!(k.weights().iter().all(|w| w.abs() <= bound), "{name}");
                }
                ParamValue::Bias(b) => assert!(b.iter().all(|&x| x == 0.0)),
            }
        }
        assert!(SolverWeights::<f64>::init(0, 1).is_err());
    }

    #[test]
    fn registry_order() {
        let names = parameter_names();
        assert_eq!(names.len(), 16);
        assert_eq!(names[0], "coef_rechannel");
        assert_eq!(names[2], "setup_resnet.0.kernel");
        assert_eq!(names[3], "setup_resnet.0.bias");
        assert_eq!(names[15], "sol_rechannel");
        let w = SolverWeights::<f64>::init(3, 0).unwrap();
        assert_eq!(w.store().names(), names.as_slice());
    }

    #[test]
    fn from_store_rejects_incomplete_or_misshaped() {
        let w = SolverWeights::<f64>::init(4, 0).unwrap();
        assert!(SolverWeights::from_store(ParamStore::<f64>::new()).is_err());
        let mut store = ParamStore::new();
        for (name, v) in w.store().iter().take(5) {
            store.insert(name, v.clone()).unwrap();
        }
        assert!(SolverWeights::from_store(store).is_err());
        let mut store = ParamStore::new();
        for (name, v) in w.store().iter() {
            let v = if name == "k_up" {
                ParamValue::Kernel(ConvKernel::zeros(4, 3))
            } else {
                v.clone()
            };
            store.insert(name, v).unwrap();
        }
        assert!(SolverWeights::from_store(store).is_err());
    }

    #[test]
    fn levels_for_grids() {
        let want = [
            (15, 3),
            (31, 4),
            (63, 5),
            (127, 6),
            (255, 7),
            (511, 8),
            (1023, 9),
            (2047, 10),
            (4095, 11),
        ];
        for (n, l) in want {
            assert_eq!(level_for_grid(n).unwrap(), l);
        }
        assert!(level_for_grid(7).is_err());
        assert!(level_for_grid(30).is_err());
    }

    #[test]
    fn setup_shapes() {
        let w = SolverWeights::<f64>::init(4, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = setup(&w, &random_coef(&mut rng, 31), 4).unwrap();
        let sizes: Vec<usize> = s.iter().map(|t| t.height()).collect();
        assert_eq!(sizes, vec![31, 15, 7, 3]);
        assert!(s.iter().all(|t| t.channels() == 4));
        assert_eq!(setup(&w, &random_coef(&mut rng, 31), 1).unwrap().levels(), 1);
        assert!(setup(&w, &random_coef(&mut rng, 7), 4).is_err());
    }

    #[test]
    fn zero_network_gives_zero_setup() {
        let mut w = SolverWeights::<f64>::init(4, 1).unwrap();
        for id in 0..w.store().len() {
            let z = w.store().get(id).zeros_like();
            w.store_mut().set(id, z).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = setup(&w, &random_coef(&mut rng, 15), 3).unwrap();
        assert!(s.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn solve_is_linear_and_zero_preserving() {
        let w = SolverWeights::<f64>::init(4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = setup(&w, &random_coef(&mut rng, 15), 2).unwrap();
        let zero = solve_apply(&w, &s, &GridTensor::zeros(1, 15, 15)).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
        let (r1, r2) = (random_grid(&mut rng, 15), random_grid(&mut rng, 15));
        let (a, b) = (0.7, -1.3);
        let combo = tensor::axpy(&r1, &tensor::scale(&r2, b), a).unwrap();
        let lhs = solve_apply(&w, &s, &combo).unwrap();
        let rhs = tensor::axpy(
            &solve_apply(&w, &s, &r1).unwrap(),
            &tensor::scale(&solve_apply(&w, &s, &r2).unwrap(), b),
            a,
        )
        .unwrap();
        let err = tensor::norm2(&tensor::sub(&lhs, &rhs).unwrap()) / tensor::norm2(&rhs);
        assert!(err < 1e-12, "{err}");
        assert!(solve_apply(&w, &s, &GridTensor::zeros(1, 31, 31)).is_err());
    }

    #[test]
    fn tape_matches_direct_evaluation() {
        let w = SolverWeights::<f64>::init(3, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let coef = random_coef(&mut rng, 15);
        let rhs = random_grid(&mut rng, 15);
        let s = setup(&w, &coef, 3).unwrap();
        let direct = solve_apply(&w, &s, &rhs).unwrap();
        let mut tape = Tape::new(w.store());
        let c = tape.leaf(coef);
        let outs = setup_on_tape(&mut tape, &w, c, 3).unwrap();
        for (node, t) in outs.iter().zip(s.iter()) {
            assert_eq!(tape.value(*node), t);
        }
        let r = tape.leaf(rhs);
        let sol = solve_on_tape(&mut tape, &w, &outs, r).unwrap();
        assert_eq!(tape.value(sol), &direct);
        let loss = tape.sum_squares(sol);
        let mut g = Gradients::zeros_for(w.store());
        tape.backward(loss, &mut g).unwrap();
        assert!(g.all_finite());
    }

    #[test]
    fn handle_runs_setup_once() {
        let w = SolverWeights::<f64>::init(4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = ProblemSpec::new(Velocity::benchmark(), 1000.0, random_coef(&mut rng, 31)).unwrap();
        let b = LearnedSolver::new(&w, &spec, 4).unwrap();
        let rhs = random_grid(&mut rng, 31);
        let x1 = b.apply(&rhs).unwrap();
        let x2 = b.apply(&rhs).unwrap();
        assert_eq!(x1, x2);
        assert_eq!(b.applications(), 2);
        assert_eq!(b.setup_runs(), 1);
        assert_eq!(b.level(), 4);
    }

    #[test]
    fn operator_tape_matches_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let spec = ProblemSpec::new(Velocity::benchmark(), 1000.0, random_coef(&mut rng, 15)).unwrap();
        let u = random_grid(&mut rng, 15);
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let x = tape.leaf(u.clone());
        let y = operator_on_tape(&mut tape, &spec, x).unwrap();
        let want = crate::discretization::apply_operator(&spec, &u).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
