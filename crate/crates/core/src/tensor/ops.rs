use std::sync::Arc;

use super::kernels::{self, ConvGeometry, Neighborhoods, SparseMatrix, CLAMP_FLOOR};
use super::tape::{split_axis, Op, Tape, Var};
use super::{same_shape, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;

impl<T: Real> Tape<T> {
    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        record: fn(Var, Var) -> Op<T>,
    ) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        same_shape(op, self.shape(a), self.shape(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_parts(self.shape(a).to_vec(), data);
        Ok(self.push(value, record(a, b), &[a, b]))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        self.check(a)?;
        let value = self.value(a).map(f);
        Ok(self.push(value, op, &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// Elementwise quotient; the denominator is clamped to at least 1e-12.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let floor = T::of(CLAMP_FLOOR);
        self.binary("div", a, b, move |x, y| x / y.max(floor), Op::Div)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// `[m,k] · [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], data),
            Op::MatMul(a, b),
            &[a, b],
        ))
    }

    /// Constant sparse matrix times a dense `[cols, f]` block.
    pub fn sparse_matmul(&mut self, s: &Arc<SparseMatrix<T>>, x: Var) -> Result<Var> {
        self.check(x)?;
        let sx = self.shape(x);
        if sx.len() != 2 || sx[0] != s.cols() {
            return Err(Error::shape("sparse_matmul", &[s.rows(), s.cols()], sx));
        }
        let f = sx[1];
        let data = s.mul_dense(self.value(x).data(), f);
        Ok(self.push(
            Tensor::from_parts(vec![s.rows(), f], data),
            Op::SparseMatMul(Arc::clone(s), x),
            &[x],
        ))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        for &v in inputs {
            self.check(v)?;
        }
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid(
                "concat",
                format!("axis {axis} out of range for {base:?}"),
            ));
        }
        let mut extent = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            extent += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * extent * inner);
        for o in 0..outer {
            for &v in inputs {
                let width = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * width..(o + 1) * width]);
            }
        }
        let mut shape = base;
        shape[axis] = extent;
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check(a)?;
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, extent, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * extent * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Slice {
                input: a,
                axis,
                start,
            },
            &[a],
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a)?;
        if shape.iter().product::<usize>() != self.value(a).len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("reshape", self.shape(a), shape));
        }
        let value = Tensor::from_parts(shape.to_vec(), self.value(a).data().to_vec());
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// 2D transpose.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::shape("transpose", s, &[0, 0]));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.push(Tensor::from_parts(vec![c, r], data), Op::Transpose(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let total: T = self.value(a).data().iter().copied().sum();
        Ok(self.push(Tensor::scalar(total), Op::Sum(a), &[a]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let v = self.value(a);
        let total: T = v.data().iter().copied().sum();
        let mean = total / T::of(v.len() as f64);
        Ok(self.push(Tensor::scalar(mean), Op::Mean(a), &[a]))
    }

    fn reduce_axis(&mut self, a: Var, axis: usize, mean: bool) -> Result<Var> {
        self.check(a)?;
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid(
                "sum_axis",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..n {
                for j in 0..inner {
                    data[o * inner + j] += src[(o * n + k) * inner + j];
                }
            }
        }
        if mean {
            let scale = T::one() / T::of(n as f64);
            data.iter_mut().for_each(|x| *x *= scale);
        }
        let mut out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|&(d, _)| d != axis)
            .map(|(_, &e)| e)
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let op = if mean {
            Op::MeanAxis { input: a, axis }
        } else {
            Op::SumAxis { input: a, axis }
        };
        Ok(self.push(Tensor::from_parts(out_shape, data), op, &[a]))
    }

    /// Sum over one axis; the axis is removed from the shape.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, false)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, true)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    /// Natural log of `max(x, 1e-12)`.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let floor = T::of(CLAMP_FLOOR);
        self.unary(a, move |x| x.max(floor).ln(), Op::Log(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var> {
        self.unary(
            a,
            move |x| kernels::leaky(x, slope),
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check(a)?;
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid(
                "softmax",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let mut data = self.value(a).data().to_vec();
        for o in 0..outer {
            for j in 0..inner {
                let idx = |k: usize| (o * n + k) * inner + j;
                let max = (0..n).map(|k| data[idx(k)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for k in 0..n {
                    let e = (data[idx(k)] - max).exp();
                    data[idx(k)] = e;
                    total += e;
                }
                for k in 0..n {
                    data[idx(k)] /= total;
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Softmax { input: a, axis },
            &[a],
        ))
    }

    /// Elementwise map with a caller-supplied derivative.
    pub fn map_with_derivative(
        &mut self,
        a: Var,
        f: impl Fn(T) -> T,
        derivative: impl Fn(T) -> T + Send + Sync + 'static,
    ) -> Result<Var> {
        self.unary(
            a,
            f,
            Op::Map {
                input: a,
                deriv: Arc::new(derivative),
            },
        )
    }

    /// Zero-padded cross-correlation of a `C_in×H×W` input with a
    /// `C_out×C_in×k×k` kernel.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        dilation: usize,
        padding: usize,
    ) -> Result<Var> {
        self.check(input)?;
        self.check(kernel)?;
        let xs = self.shape(input).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 3 || ks.len() != 4 || ks[1] != xs[0] || ks[2] != ks[3] {
            return Err(Error::shape("conv2d", &xs, &ks));
        }
        if let Some(b) = bias {
            self.check(b)?;
            if self.shape(b) != [ks[0]] {
                return Err(Error::shape("conv2d bias", self.shape(b), &[ks[0]]));
            }
        }
        let geom = ConvGeometry::new(xs[0], xs[1], xs[2], ks[0], ks[2], stride, dilation, padding)
            .ok_or_else(|| Error::shape("conv2d: kernel larger than padded input", &xs, &ks))?;
        let data = kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::from_parts(vec![geom.c_out, geom.out_h, geom.out_w], data);
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            &inputs,
        ))
    }

    /// 2×2 max-pool of a `C×H×W` map with even `H`, `W`.
    pub fn maxpool2(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s = self.shape(a).to_vec();
        if s.len() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0 {
            return Err(Error::invalid(
                "maxpool2",
                format!("needs C×H×W with even H and W, got {s:?}"),
            ));
        }
        let (data, argmax) = kernels::maxpool2_forward(&s, self.value(a).data());
        let value = Tensor::from_parts(vec![s[0], s[1] / 2, s[2] / 2], data);
        Ok(self.push(value, Op::MaxPool2 { input: a, argmax }, &[a]))
    }

    /// Nearest-neighbour 2× upsampling of a `C×H×W` map.
    pub fn upsample2(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s = self.shape(a).to_vec();
        if s.len() != 3 {
            return Err(Error::invalid(
                "upsample2",
                format!("needs C×H×W, got {s:?}"),
            ));
        }
        let data = kernels::upsample2_forward(&s, self.value(a).data());
        Ok(self.push(
            Tensor::from_parts(vec![s[0], 2 * s[1], 2 * s[2]], data),
            Op::Upsample2(a),
            &[a],
        ))
    }

    /// Attention-weighted neighbourhood aggregation over `z: N×F` with attention
    /// vector `attn: [2F]`. Returns the aggregated `N×F` features and the
    /// coefficients, laid out like `nbr`.
    pub fn attention_aggregate(
        &mut self,
        z: Var,
        attn: Var,
        nbr: &Arc<Neighborhoods>,
        slope: T,
    ) -> Result<(Var, Vec<T>)> {
        self.check(z)?;
        self.check(attn)?;
        let zs = self.shape(z).to_vec();
        if zs.len() != 2 || zs[0] != nbr.node_count() {
            return Err(Error::shape("attention", &zs, &[nbr.node_count(), 0]));
        }
        let f = zs[1];
        if self.shape(attn) != [2 * f] {
            return Err(Error::shape("attention vector", self.shape(attn), &[2 * f]));
        }
        let fwd = kernels::attention_forward(
            nbr,
            self.value(z).data(),
            self.value(attn).data(),
            f,
            slope,
        );
        let alpha = fwd.alpha.clone();
        let out = self.push(
            Tensor::from_parts(zs, fwd.out),
            Op::Attention {
                z,
                attn,
                nbr: Arc::clone(nbr),
                slope,
                alpha: fwd.alpha,
                pre: fwd.pre,
            },
            &[z, attn],
        );
        Ok((out, alpha))
    }

    /// Per-channel softmax-weighted centroid of a `C×H×W` map, as `C×2`
    /// (row, col) coordinates normalized to `[0, 1]`.
    pub fn center_of_mass(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s = self.shape(a).to_vec();
        if s.len() != 3 {
            return Err(Error::invalid(
                "center_of_mass",
                format!("needs C×H×W, got {s:?}"),
            ));
        }
        let (out, probs) = kernels::center_of_mass_forward(&s, self.value(a).data());
        Ok(self.push(
            Tensor::from_parts(vec![s[0], 2], out),
            Op::CenterOfMass { input: a, probs },
            &[a],
        ))
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
