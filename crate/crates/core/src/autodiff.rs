//! Reverse-mode differentiation over the fixed tensor op set.
//!
//! A [`Tape`] records a forward computation as a list of nodes in
//! topological order. Learnable weights live in a [`ParamStore`] that the
//! tape borrows read-only; [`Tape::backward`] accumulates parameter gradients
//! into a caller-owned [`Gradients`] buffer. Several tapes can therefore run
//! over one store at once, each with private gradients merged afterwards.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{self, ConvKernel, GridTensor, Real, Stride};

pub type ParamId = usize;

#[derive(Clone, Debug, PartialEq)]
pub enum ParamValue<T> {
    Kernel(ConvKernel<T>),
    /// One bias per channel.
    Bias(Vec<T>),
}

impl<T: Real> ParamValue<T> {
    pub fn zeros_like(&self) -> Self {
        match self {
            ParamValue::Kernel(k) => ParamValue::Kernel(ConvKernel::zeros(k.out_channels(), k.in_channels())),
            ParamValue::Bias(b) => ParamValue::Bias(vec![T::zero(); b.len()]),
        }
    }

    pub fn as_slice(&self) -> &[T] {
        match self {
            ParamValue::Kernel(k) => k.weights(),
            ParamValue::Bias(b) => b,
        }
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        match self {
            ParamValue::Kernel(k) => k.weights_mut(),
            ParamValue::Bias(b) => b,
        }
    }

    pub fn len(&self) -> usize {
        self.as_slice().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tensor dimensions: `[out, in, 3, 3]` for kernels, `[channels]` for biases.
    pub fn dims(&self) -> Vec<usize> {
        match self {
            ParamValue::Kernel(k) => vec![k.out_channels(), k.in_channels(), 3, 3],
            ParamValue::Bias(b) => vec![b.len()],
        }
    }

    pub fn cast<U: Real>(&self) -> ParamValue<U> {
        match self {
            ParamValue::Kernel(k) => ParamValue::Kernel(k.cast()),
            ParamValue::Bias(b) => ParamValue::Bias(
                b.iter()
                    .map(|v| U::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN)))
                    .collect(),
            ),
        }
    }

    fn same_layout(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }
}

/// Gradient accumulators shaped like the parameters of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    values: Vec<ParamValue<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_for(store: &ParamStore<T>) -> Self {
        Gradients {
            values: store.values.iter().map(ParamValue::zeros_like).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &ParamValue<T> {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamValue<T> {
        &mut self.values[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamValue<T>> {
        self.values.iter()
    }

    pub fn zero(&mut self) {
        for v in &mut self.values {
            v.as_mut_slice().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// `self += other`, entry by entry.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, &y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.values {
            v.as_mut_slice().iter_mut().for_each(|g| *g *= s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.as_slice().iter().all(|g| g.is_finite()))
    }

    fn kernel_mut(&mut self, id: ParamId) -> &mut ConvKernel<T> {
        match &mut self.values[id] {
            ParamValue::Kernel(k) => k,
            ParamValue::Bias(_) => unreachable!("parameter {id} is a bias"),
        }
    }

    fn bias_mut(&mut self, id: ParamId) -> &mut [T] {
        match &mut self.values[id] {
            ParamValue::Bias(b) => b,
            ParamValue::Kernel(_) => unreachable!("parameter {id} is a kernel"),
        }
    }
}

/// Named learnable parameters with same-shaped gradient accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<ParamValue<T>>,
    grads: Gradients<T>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            grads: Gradients { values: Vec::new() },
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ParamValue<T>) -> Result<ParamId> {
        let name = name.into();
        if self.id(&name).is_some() {
            return Err(Error::InvalidData(format!("duplicate parameter name '{name}'")));
        }
        self.names.push(name);
        self.grads.values.push(value.zeros_like());
        self.values.push(value);
        Ok(self.values.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(ParamValue::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &ParamValue<T> {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamValue<T> {
        &mut self.values[id]
    }

    /// Replaces a value with one of identical layout.
    pub fn set(&mut self, id: ParamId, value: ParamValue<T>) -> Result<()> {
        if !self.values[id].same_layout(&value) {
            return Err(Error::InvalidData(format!(
                "parameter '{}' expects dims {:?}, got {:?}",
                self.names[id],
                self.values[id].dims(),
                value.dims()
            )));
        }
        self.values[id] = value;
        Ok(())
    }

    pub fn kernel(&self, id: ParamId) -> &ConvKernel<T> {
        match &self.values[id] {
            ParamValue::Kernel(k) => k,
            ParamValue::Bias(_) => panic!("parameter '{}' is not a kernel", self.names[id]),
        }
    }

    pub fn bias(&self, id: ParamId) -> &[T] {
        match &self.values[id] {
            ParamValue::Bias(b) => b,
            ParamValue::Kernel(_) => panic!("parameter '{}' is not a bias", self.names[id]),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamValue<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn grads(&self) -> &Gradients<T> {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut Gradients<T> {
        &mut self.grads
    }

    pub fn zero_grad(&mut self) {
        self.grads.zero();
    }

    pub fn accumulate_grads(&mut self, grads: &Gradients<T>) {
        self.grads.accumulate(grads);
    }

    /// Values and gradients as parallel mutable slices, for optimizers.
    pub fn values_and_grads_mut(&mut self) -> impl Iterator<Item = (&mut [T], &[T])> {
        self.values
            .iter_mut()
            .zip(&self.grads.values)
            .map(|(v, g)| (v.as_mut_slice(), g.as_slice()))
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let values: Vec<ParamValue<U>> = self.values.iter().map(ParamValue::cast).collect();
        ParamStore {
            names: self.names.clone(),
            grads: Gradients {
                values: values.iter().map(ParamValue::zeros_like).collect(),
            },
            values,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
pub enum KernelRef<T> {
    Param(ParamId),
    Fixed(Arc<ConvKernel<T>>),
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv {
        input: NodeId,
        kernel: KernelRef<T>,
        stride: Stride,
    },
    TransposedConv {
        input: NodeId,
        kernel: KernelRef<T>,
    },
    Mul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    AddBias {
        input: NodeId,
        bias: ParamId,
    },
    Tanh(NodeId),
    Scale(NodeId, T),
    SumSquares(NodeId),
    Sum(NodeId),
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: GridTensor<T>,
}

/// Node adjoints produced by one backward pass.
#[derive(Debug)]
pub struct NodeGrads<T> {
    adjoints: Vec<Option<GridTensor<T>>>,
}

impl<T: Real> NodeGrads<T> {
    /// Gradient of the loss with respect to a leaf node, `None` if the loss
    /// does not depend on it. Interior adjoints are not retained.
    pub fn get(&self, node: NodeId) -> Option<&GridTensor<T>> {
        self.adjoints[node.0].as_ref()
    }
}

pub struct Tape<'p, T> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    corrupt_backward: bool,
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            corrupt_backward: false,
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Negative-control hook: kernel gradients come out perturbed so that
    /// gradient checks can be shown to fail.
    #[doc(hidden)]
    pub fn set_corrupt_backward(&mut self, on: bool) {
        self.corrupt_backward = on;
    }

    pub fn value(&self, node: NodeId) -> &GridTensor<T> {
        &self.nodes[node.0].value
    }

    /// Scalar value of a `1x1x1` node.
    pub fn scalar(&self, node: NodeId) -> Result<T> {
        let v = self.value(node);
        if v.len() != 1 {
            return Err(Error::NonScalarLoss);
        }
        Ok(v.data()[0])
    }

    fn push(&mut self, op: Op<T>, value: GridTensor<T>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn kernel<'a>(&'a self, k: &'a KernelRef<T>) -> &'a ConvKernel<T> {
        match k {
            KernelRef::Param(id) => self.params.kernel(*id),
            KernelRef::Fixed(k) => k,
        }
    }

    pub fn leaf(&mut self, value: GridTensor<T>) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn conv2d(&mut self, input: NodeId, kernel: KernelRef<T>, stride: Stride) -> Result<NodeId> {
        let value = tensor::conv2d(self.value(input), self.kernel(&kernel), stride)?;
        Ok(self.push(Op::Conv { input, kernel, stride }, value))
    }

    pub fn transposed_conv2d(&mut self, input: NodeId, kernel: KernelRef<T>) -> Result<NodeId> {
        let value = tensor::transposed_conv2d(self.value(input), self.kernel(&kernel))?;
        Ok(self.push(Op::TransposedConv { input, kernel }, value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = tensor::mul(self.value(a), self.value(b))?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = tensor::sub(self.value(a), self.value(b))?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn add_bias(&mut self, input: NodeId, bias: ParamId) -> Result<NodeId> {
        let b = self.params.bias(bias);
        let x = self.value(input);
        if b.len() != x.channels() {
            return Err(Error::ChannelMismatch {
                op: "add_bias",
                expected: b.len(),
                found: x.channels(),
            });
        }
        let mut value = x.clone();
        for (c, &bc) in b.iter().enumerate() {
            value.channel_mut(c).iter_mut().for_each(|v| *v += bc);
        }
        Ok(self.push(Op::AddBias { input, bias }, value))
    }

    pub fn tanh(&mut self, input: NodeId) -> NodeId {
        let value = tensor::tanh_map(self.value(input));
        self.push(Op::Tanh(input), value)
    }

    pub fn scale(&mut self, input: NodeId, s: T) -> NodeId {
        let value = tensor::scale(self.value(input), s);
        self.push(Op::Scale(input, s), value)
    }

    /// Scalar `||x||^2`.
    pub fn sum_squares(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let v = tensor::dot(x, x).expect("same tensor");
        self.push(Op::SumSquares(input), GridTensor::filled(1, 1, 1, v))
    }

    /// Scalar sum of all entries.
    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let v = self.value(input).sum();
        self.push(Op::Sum(input), GridTensor::filled(1, 1, 1, v))
    }

    /// Back-propagates from the scalar `loss`, adding parameter gradients to
    /// `grads` (which must be shaped for this tape's store).
    pub fn backward(&self, loss: NodeId, grads: &mut Gradients<T>) -> Result<NodeGrads<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss);
        }
        let mut adj: Vec<Option<GridTensor<T>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(GridTensor::filled(1, 1, 1, T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => adj[idx] = Some(g),
                Op::Conv { input, kernel, stride } => {
                    let k = self.kernel(kernel);
                    let gx = tensor::conv2d_input_grad(&g, k, *stride)?;
                    accumulate(&mut adj, *input, gx)?;
                    if let KernelRef::Param(id) = kernel {
                        self.kernel_grad(*id, grads, |acc| {
                            tensor::conv2d_kernel_grad_acc(self.value(*input), &g, *stride, acc)
                        });
                    }
                }
                Op::TransposedConv { input, kernel } => {
                    let k = self.kernel(kernel);
                    let gx = tensor::conv2d(&g, k, Stride::Two)?;
                    accumulate(&mut adj, *input, gx)?;
                    if let KernelRef::Param(id) = kernel {
                        self.kernel_grad(*id, grads, |acc| {
                            tensor::transposed_conv2d_kernel_grad_acc(self.value(*input), &g, acc)
                        });
                    }
                }
                Op::Mul(a, b) => {
                    let ga = tensor::mul(&g, self.value(*b))?;
                    let gb = tensor::mul(&g, self.value(*a))?;
                    accumulate(&mut adj, *a, ga)?;
                    accumulate(&mut adj, *b, gb)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone())?;
                    accumulate(&mut adj, *b, g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, tensor::scale(&g, -T::one()))?;
                    accumulate(&mut adj, *a, g)?;
                }
                Op::AddBias { input, bias } => {
                    let gb = grads.bias_mut(*bias);
                    for (c, acc) in gb.iter_mut().enumerate() {
                        *acc += g.channel(c).iter().copied().sum::<T>();
                    }
                    accumulate(&mut adj, *input, g)?;
                }
                Op::Tanh(input) => {
                    let mut gx = g;
                    for (gv, &y) in gx.data_mut().iter_mut().zip(node.value.data()) {
                        *gv *= T::one() - y * y;
                    }
                    accumulate(&mut adj, *input, gx)?;
                }
                Op::Scale(input, s) => {
                    accumulate(&mut adj, *input, tensor::scale(&g, *s))?;
                }
                Op::SumSquares(input) => {
                    let two_g = g.data()[0] + g.data()[0];
                    accumulate(&mut adj, *input, tensor::scale(self.value(*input), two_g))?;
                }
                Op::Sum(input) => {
                    let x = self.value(*input);
                    let gx = GridTensor::filled(x.channels(), x.height(), x.width(), g.data()[0]);
                    accumulate(&mut adj, *input, gx)?;
                }
            }
        }
        Ok(NodeGrads { adjoints: adj })
    }

    fn kernel_grad(&self, id: ParamId, grads: &mut Gradients<T>, f: impl FnOnce(&mut ConvKernel<T>)) {
        let acc = grads.kernel_mut(id);
        if self.corrupt_backward {
            let mut tmp = ConvKernel::zeros(acc.out_channels(), acc.in_channels());
            f(&mut tmp);
            let factor = T::from_f64_lossy(1.1);
            for (a, &t) in acc.weights_mut().iter_mut().zip(tmp.weights()) {
                *a += t * factor;
            }
        } else {
            f(acc);
        }
    }
}

fn accumulate<T: Real>(adj: &mut [Option<GridTensor<T>>], node: NodeId, g: GridTensor<T>) -> Result<()> {
    match &mut adj[node.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Largest acceptable relative error.
    pub tol: f64,
    /// Negative control: perturb kernel gradients before comparing.
    pub corrupt_backward: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-4,
            tol: 1e-5,
            corrupt_backward: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares every analytic parameter gradient against the central difference
/// `(f(p + eps) - f(p - eps)) / (2 eps)`.
///
/// The relative error of one entry is `|a - n| / max(|a|, |n|, floor)` where
/// `floor = 1e-6 * max_k |n_k|`: entries many orders of magnitude below the
/// largest gradient are judged on the scale of the whole gradient, since
/// their difference quotient is dominated by round-off in the loss.
pub fn grad_check<F>(params: &mut ParamStore<f64>, build: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<NodeId>,
{
    let mut analytic = Gradients::zeros_for(params);
    {
        let mut tape = Tape::new(params);
        tape.set_corrupt_backward(opts.corrupt_backward);
        let loss = build(&mut tape)?;
        let value = tape.scalar(loss)?;
        if !value.is_finite() {
            return Err(Error::NonFinite("grad_check loss".into()));
        }
        tape.backward(loss, &mut analytic)?;
    }
    if !analytic.all_finite() {
        return Err(Error::NonFinite("grad_check analytic gradient".into()));
    }

    let eval = |params: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new(params);
        let loss = build(&mut tape)?;
        let v = tape.scalar(loss)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("grad_check perturbed loss".into()))
        }
    };

    let mut numeric: Vec<Vec<f64>> = Vec::with_capacity(params.len());
    for id in 0..params.len() {
        let n = params.get(id).len();
        let mut col = Vec::with_capacity(n);
        for k in 0..n {
            let orig = params.get(id).as_slice()[k];
            params.get_mut(id).as_mut_slice()[k] = orig + opts.eps;
            let plus = eval(params);
            params.get_mut(id).as_mut_slice()[k] = orig - opts.eps;
            let minus = eval(params);
            params.get_mut(id).as_mut_slice()[k] = orig;
            col.push((plus? - minus?) / (2.0 * opts.eps));
        }
        numeric.push(col);
    }

    let scale = numeric.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-6 * scale).max(f64::MIN_POSITIVE);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        entries: 0,
        tolerance: opts.tol,
        passed: true,
    };
    for (id, col) in numeric.iter().enumerate() {
        for (k, &n) in col.iter().enumerate() {
            let a = analytic.get(id).as_slice()[k];
            let abs = (a - n).abs();
            let rel = abs / a.abs().max(n.abs()).max(floor);
            report.entries += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((params.name(id).to_string(), k));
            }
        }
    }
    report.passed = report.max_relative_error < opts.tol;
    Ok(report)
}
