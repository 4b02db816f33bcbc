use std::sync::Arc;

use super::kernels::{self, ConvGeometry, Neighborhoods, SparseMatrix};
use super::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) type ElementwiseDerivative<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

pub(crate) enum Op<T: Real> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul(Var, Var),
    SparseMatMul(Arc<SparseMatrix<T>>, Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    SumAxis {
        input: Var,
        axis: usize,
    },
    MeanAxis {
        input: Var,
        axis: usize,
    },
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Softmax {
        input: Var,
        axis: usize,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample2(Var),
    Attention {
        z: Var,
        attn: Var,
        nbr: Arc<Neighborhoods>,
        slope: T,
        alpha: Vec<T>,
        pre: Vec<T>,
    },
    CenterOfMass {
        input: Var,
        probs: Vec<T>,
    },
    Map {
        input: Var,
        deriv: ElementwiseDerivative<T>,
    },
}

pub(crate) struct Node<T: Real> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Ordered record of executed primitives. Every node's inputs precede it, so a
/// single reverse sweep visits nodes in a valid order.
pub struct Tape<T: Real> {
    pub(crate) nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::UnknownVar(v.0))
        }
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar loss. Returns gradients of every leaf that
    /// requires one. The tape is dead afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::DeadTape);
        }
        self.check(loss)?;
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads);
        }
        let leaves = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, g) {
                (Op::Leaf, Some(g)) if node.requires_grad => {
                    Some(Tensor::from_parts(node.value.shape().to_vec(), g))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads: leaves })
    }

    fn backprop(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| {
                    for (x, &y) in gb.iter_mut().zip(g) {
                        *x -= y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.data(*a);
                let bv = self.data(*b);
                self.acc(grads, *a, |ga| {
                    for ((x, &y), &bb) in ga.iter_mut().zip(g).zip(bv) {
                        *x += y * bb;
                    }
                });
                self.acc(grads, *b, |gb| {
                    for ((x, &y), &aa) in gb.iter_mut().zip(g).zip(av) {
                        *x += y * aa;
                    }
                });
            }
            Op::Div(a, b) => {
                let av = self.data(*a);
                let bv = self.data(*b);
                let floor = T::of(kernels::CLAMP_FLOOR);
                self.acc(grads, *a, |ga| {
                    for ((x, &y), &bb) in ga.iter_mut().zip(g).zip(bv) {
                        *x += y / bb.max(floor);
                    }
                });
                self.acc(grads, *b, |gb| {
                    for (((x, &y), &aa), &bb) in gb.iter_mut().zip(g).zip(av).zip(bv) {
                        if bb > floor {
                            *x -= y * aa / (bb * bb);
                        }
                    }
                });
            }
            Op::Scale(a, c) => {
                self.acc(grads, *a, |ga| {
                    for (x, &y) in ga.iter_mut().zip(g) {
                        *x += y * *c;
                    }
                });
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
            }
            Op::MatMul(a, b) => {
                let (m, k) = dims2(self.shape(*a));
                let n = self.shape(*b)[1];
                let av = self.data(*a);
                let bv = self.data(*b);
                self.acc(grads, *a, |ga| kernels::matmul_a_bt(g, bv, ga, m, n, k));
                self.acc(grads, *b, |gb| kernels::matmul_at_b(av, g, gb, m, k, n));
            }
            Op::SparseMatMul(sp, x) => {
                let cols = self.shape(*x)[1];
                self.acc(grads, *x, |gx| sp.transpose_mul_into(g, cols, gx));
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for v in inputs {
                    let width = self.shape(*v)[*axis] * inner;
                    self.acc(grads, *v, |gv| {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + width];
                            add_into(&mut gv[o * width..(o + 1) * width], src);
                        }
                    });
                    offset += width;
                }
            }
            Op::Slice { input, axis, start } => {
                let in_shape = self.shape(*input);
                let outer: usize = in_shape[..*axis].iter().product();
                let inner: usize = in_shape[axis + 1..].iter().product();
                let in_total = in_shape[*axis] * inner;
                let width = node.value.shape()[*axis] * inner;
                self.acc(grads, *input, |gi| {
                    for o in 0..outer {
                        let dst = &mut gi
                            [o * in_total + start * inner..o * in_total + start * inner + width];
                        add_into(dst, &g[o * width..(o + 1) * width]);
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = dims2(self.shape(*a));
                self.acc(grads, *a, |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let y = g[0];
                self.acc(grads, *a, |ga| ga.iter_mut().for_each(|x| *x += y));
            }
            Op::Mean(a) => {
                let y = g[0] / T::of(self.data(*a).len() as f64);
                self.acc(grads, *a, |ga| ga.iter_mut().for_each(|x| *x += y));
            }
            Op::SumAxis { input, axis } | Op::MeanAxis { input, axis } => {
                let shape = self.shape(*input);
                let (outer, n, inner) = split_axis(shape, *axis);
                let factor = match node.op {
                    Op::MeanAxis { .. } => T::one() / T::of(n as f64),
                    _ => T::one(),
                };
                self.acc(grads, *input, |gi| {
                    for o in 0..outer {
                        for k in 0..n {
                            for j in 0..inner {
                                gi[(o * n + k) * inner + j] += g[o * inner + j] * factor;
                            }
                        }
                    }
                });
            }
            Op::Exp(a) => {
                self.acc(grads, *a, |ga| {
                    for ((x, &y), &e) in ga.iter_mut().zip(g).zip(out) {
                        *x += y * e;
                    }
                });
            }
            Op::Log(a) => {
                let av = self.data(*a);
                let floor = T::of(kernels::CLAMP_FLOOR);
                self.acc(grads, *a, |ga| {
                    for ((x, &y), &v) in ga.iter_mut().zip(g).zip(av) {
                        if v > floor {
                            *x += y / v;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                self.acc(grads, *a, |ga| {
                    for ((x, &y), &s) in ga.iter_mut().zip(g).zip(out) {
                        *x += y * s * (T::one() - s);
                    }
                });
            }
            Op::Relu(a) => {
                let av = self.data(*a);
                self.acc(grads, *a, |ga| {
                    for ((x, &y), &v) in ga.iter_mut().zip(g).zip(av) {
                        if v > T::zero() {
                            *x += y;
                        }
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let av = self.data(*a);
                self.acc(grads, *a, |ga| {
                    for ((x, &y), &v) in ga.iter_mut().zip(g).zip(av) {
                        *x += if v > T::zero() { y } else { y * *slope };
                    }
                });
            }
            Op::Softmax { input, axis } => {
                let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                self.acc(grads, *input, |gi| {
                    for o in 0..outer {
                        for j in 0..inner {
                            let idx = |k: usize| (o * n + k) * inner + j;
                            let dot: T = (0..n).map(|k| g[idx(k)] * out[idx(k)]).sum();
                            for k in 0..n {
                                gi[idx(k)] += out[idx(k)] * (g[idx(k)] - dot);
                            }
                        }
                    }
                });
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let x = self.data(*input);
                let w = self.data(*kernel);
                self.acc(grads, *input, |gx| {
                    kernels::conv2d_backward_input(geom, w, g, gx)
                });
                self.acc(grads, *kernel, |gw| {
                    kernels::conv2d_backward_kernel(geom, x, g, gw)
                });
                if let Some(b) = bias {
                    self.acc(grads, *b, |gb| kernels::conv2d_backward_bias(geom, g, gb));
                }
            }
            Op::MaxPool2 { input, argmax } => {
                self.acc(grads, *input, |gi| {
                    for (&src, &y) in argmax.iter().zip(g) {
                        gi[src] += y;
                    }
                });
            }
            Op::Upsample2(a) => {
                let shape = self.shape(*a).to_vec();
                self.acc(grads, *a, |ga| kernels::upsample2_backward(&shape, g, ga));
            }
            Op::Attention {
                z,
                attn,
                nbr,
                slope,
                alpha,
                pre,
            } => {
                let zv = self.data(*z);
                let av = self.data(*attn);
                let f = self.shape(*z)[1];
                let mut gz = vec![T::zero(); zv.len()];
                let mut ga = vec![T::zero(); av.len()];
                kernels::attention_backward(
                    nbr, zv, av, f, *slope, alpha, pre, g, &mut gz, &mut ga,
                );
                self.acc(grads, *z, |d| add_into(d, &gz));
                self.acc(grads, *attn, |d| add_into(d, &ga));
            }
            Op::CenterOfMass { input, probs } => {
                let shape = self.shape(*input).to_vec();
                self.acc(grads, *input, |gi| {
                    kernels::center_of_mass_backward(&shape, probs, out, g, gi)
                });
            }
            Op::Map { input, deriv } => {
                let av = self.data(*input);
                self.acc(grads, *input, |ga| {
                    for ((x, &y), &v) in ga.iter_mut().zip(g).zip(av) {
                        *x += y * deriv(v);
                    }
                });
            }
        }
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.len()]);
        f(slot);
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf; `None` for leaves that do not require grad or were not
    /// reached by the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Like [`get`](Self::get), but an unreached parameter yields zeros of `shape`.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (x, &y) in dst.iter_mut().zip(src) {
        *x += y;
    }
}

pub(crate) fn dims2(shape: &[usize]) -> (usize, usize) {
    (shape[0], shape[1])
}

/// `(outer, extent, inner)` around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
