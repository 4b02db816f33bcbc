use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Neighborhoods, Tape, Tensor, Var};

/// Negative slope of the LeakyReLU in both the attention logits and the output.
pub const GAT_SLOPE: f64 = 0.2;

/// Single-head graph attention parameters: `weight` is `out × in`, `attn` holds
/// the concatenated source/target halves (`2·out`).
#[derive(Debug, Clone, PartialEq)]
pub struct GatParams<T> {
    pub weight: Tensor<T>,
    pub attn: Tensor<T>,
}

impl<T: Real> GatParams<T> {
    pub fn new(weight: Tensor<T>, attn: Tensor<T>) -> Result<Self> {
        let ws = weight.shape();
        if ws.len() != 2 || attn.shape() != [2 * ws[0]] {
            return Err(Error::shape("gat params", ws, attn.shape()));
        }
        Ok(GatParams { weight, attn })
    }

    pub fn random<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bw = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let ba = (6.0 / (2 * out_dim + 1) as f64).sqrt();
        GatParams {
            weight: Tensor::uniform(vec![out_dim, in_dim], -bw, bw, rng),
            attn: Tensor::uniform(vec![2 * out_dim], -ba, ba, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Records the layer with its parameters as fresh trainable leaves.
    pub fn apply(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        nbr: &Arc<Neighborhoods>,
    ) -> Result<GatOutput<T>> {
        let w = tape.param(self.weight.clone());
        let a = tape.param(self.attn.clone());
        gat_conv(tape, x, nbr, w, a)
    }
}

#[derive(Debug, Clone)]
pub struct GatOutput<T> {
    pub output: Var,
    /// Attention coefficients laid out like the neighbourhood lists; each node's
    /// slice sums to one.
    pub attention: Vec<T>,
}

/// Graph attention over node features `x: N×F`:
/// `e_ij = LeakyReLU(aᵀ[W h_i ‖ W h_j])`, `α_ij = softmax_j(e_ij)` over the
/// neighbourhood of `i` (itself included), output `LeakyReLU(Σ_j α_ij W h_j)`.
pub fn gat_conv<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    nbr: &Arc<Neighborhoods>,
    weight: Var,
    attn: Var,
) -> Result<GatOutput<T>> {
    let (xs, ws) = (tape.shape(x).to_vec(), tape.shape(weight).to_vec());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
        return Err(Error::shape("gat_conv", &xs, &ws));
    }
    let slope = T::of(GAT_SLOPE);
    let wt = tape.transpose(weight)?;
    let z = tape.matmul(x, wt)?;
    let (agg, attention) = tape.attention_aggregate(z, attn, nbr, slope)?;
    let output = tape.leaky_relu(agg, slope)?;
    Ok(GatOutput { output, attention })
}
