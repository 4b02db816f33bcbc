//! Convolutional building blocks of the encoder/decoder and the two training losses.

mod loss;

pub use loss::{bce_loss, dice_loss, DICE_EPS};

use rand::Rng;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Tape, Tensor, Var};

/// Square-kernel convolution: `kernel` is `C_out×C_in×k×k`, `bias` is `C_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl<T: Real> ConvParams<T> {
    /// Stride-1 convolution padded so the output keeps the input's spatial size.
    pub fn same(kernel: Tensor<T>, bias: Tensor<T>, dilation: usize) -> Result<Self> {
        let ks = kernel.shape().to_vec();
        if ks.len() != 4 || ks[2] != ks[3] || ks[2] % 2 == 0 {
            return Err(Error::invalid(
                "conv params",
                format!("kernel must be C_out×C_in×k×k with odd k, got {ks:?}"),
            ));
        }
        if bias.shape() != [ks[0]] {
            return Err(Error::shape("conv params bias", bias.shape(), &[ks[0]]));
        }
        if dilation == 0 {
            return Err(Error::invalid("conv params", "dilation must be at least 1"));
        }
        Ok(ConvParams {
            padding: same_padding(ks[2], dilation),
            kernel,
            bias,
            stride: 1,
            dilation,
        })
    }

    /// Glorot-uniform kernel, zero bias, "same" padding.
    pub fn random<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        k: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        let bound = glorot_bound(c_in * k * k, c_out * k * k);
        ConvParams {
            kernel: Tensor::uniform(vec![c_out, c_in, k, k], -bound, bound, rng),
            bias: Tensor::zeros(vec![c_out]),
            stride: 1,
            dilation,
            padding: same_padding(k, dilation),
        }
    }

    pub fn apply(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let k = tape.param(self.kernel.clone());
        let b = tape.param(self.bias.clone());
        tape.conv2d(x, k, Some(b), self.stride, self.dilation, self.padding)
    }
}

pub fn same_padding(k: usize, dilation: usize) -> usize {
    dilation * (k - 1) / 2
}

/// `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Stride-1 "same" convolution.
pub fn conv2d<T: Real>(tape: &mut Tape<T>, x: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
    dilated_conv2d(tape, x, kernel, bias, 1)
}

/// Stride-1 "same" convolution whose taps are spaced `dilation` pixels apart.
pub fn dilated_conv2d<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    kernel: Var,
    bias: Option<Var>,
    dilation: usize,
) -> Result<Var> {
    let ks = tape.shape(kernel).to_vec();
    if ks.len() != 4 || ks[2] % 2 == 0 {
        return Err(Error::invalid(
            "conv2d",
            format!("kernel must be C_out×C_in×k×k with odd k, got {ks:?}"),
        ));
    }
    tape.conv2d(x, kernel, bias, 1, dilation, same_padding(ks[2], dilation))
}
