use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{SparseMatrix, Tape, Tensor, Var};

/// Chebyshev filter weights `θ_0..θ_K`, each `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebParams<T> {
    pub thetas: Vec<Tensor<T>>,
}

impl<T: Real> ChebParams<T> {
    pub fn new(thetas: Vec<Tensor<T>>) -> Result<Self> {
        let first = thetas
            .first()
            .ok_or_else(|| Error::invalid("cheb params", "need at least θ_0"))?;
        if first.rank() != 2 {
            return Err(Error::shape("cheb params", first.shape(), &[0, 0]));
        }
        for t in &thetas {
            if t.shape() != first.shape() {
                return Err(Error::shape("cheb params", first.shape(), t.shape()));
            }
        }
        Ok(ChebParams { thetas })
    }

    pub fn random<R: Rng + ?Sized>(
        order: usize,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        ChebParams {
            thetas: (0..=order)
                .map(|_| Tensor::uniform(vec![out_dim, in_dim], -bound, bound, rng))
                .collect(),
        }
    }

    /// Polynomial order `K`.
    pub fn order(&self) -> usize {
        self.thetas.len() - 1
    }

    pub fn apply(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        scaled_laplacian: &Arc<SparseMatrix<T>>,
    ) -> Result<Var> {
        let thetas: Vec<Var> = self.thetas.iter().map(|t| tape.param(t.clone())).collect();
        cheb_conv(tape, x, scaled_laplacian, &thetas)
    }
}

/// `Y = Σ_k T_k(L̃) X θ_kᵀ` using the recurrence `T_0 X = X`, `T_1 X = L̃X`,
/// `T_k X = 2 L̃ T_{k-1} X - T_{k-2} X`.
pub fn cheb_conv<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    scaled_laplacian: &Arc<SparseMatrix<T>>,
    thetas: &[Var],
) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let first = *thetas
        .first()
        .ok_or_else(|| Error::invalid("cheb_conv", "need at least θ_0"))?;
    for &t in thetas {
        let ts = tape.shape(t);
        if xs.len() != 2 || ts.len() != 2 || ts[1] != xs[1] || ts != tape.shape(first) {
            return Err(Error::shape("cheb_conv", &xs, ts));
        }
    }
    let mut prev: Option<Var> = None;
    let mut cur = x;
    let mut y: Option<Var> = None;
    for (k, &theta) in thetas.iter().enumerate() {
        if k == 1 {
            prev = Some(cur);
            cur = tape.sparse_matmul(scaled_laplacian, x)?;
        } else if k > 1 {
            let lt = tape.sparse_matmul(scaled_laplacian, cur)?;
            let twice = tape.scale(lt, T::of(2.0))?;
            let next = tape.sub(twice, prev.expect("k > 1 has T_{k-2}"))?;
            prev = Some(cur);
            cur = next;
        }
        let tt = tape.transpose(theta)?;
        let term = tape.matmul(cur, tt)?;
        y = Some(match y {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok(y.expect("at least one term"))
}
