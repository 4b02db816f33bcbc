#![allow(dead_code)]

use gacunet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::uniform(shape.to_vec(), lo, hi, rng)
}

pub fn random_mask(len: usize, p: f64, rng: &mut impl Rng) -> Vec<bool> {
    (0..len).map(|_| rng.gen_bool(p)).collect()
}

/// Random connected graph on `n` nodes: a random spanning tree plus extra edges.
pub fn random_connected_edges(n: usize, extra: f64, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut edges = std::collections::BTreeSet::new();
    for i in 1..n {
        let j = rng.gen_range(0..i);
        edges.insert((j, i));
    }
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(extra) {
                edges.insert((a, b));
            }
        }
    }
    edges.into_iter().collect()
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "{what}[{i}]: {x} vs {y}");
    }
}

/// Dense `L̃ = -D^{-1/2} A D^{-1/2}` (isolated nodes: -1 on the diagonal), built
/// directly from the edge list.
pub fn scaled_laplacian_dense(n: usize, edges: &[(usize, usize)]) -> nalgebra::DMatrix<f64> {
    let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
    for &(i, j) in edges {
        a[(i, j)] = 1.0;
        a[(j, i)] = 1.0;
    }
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    let mut l = nalgebra::DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        if deg[i] == 0.0 {
            l[(i, i)] = 0.0;
        }
        for j in 0..n {
            if a[(i, j)] != 0.0 {
                l[(i, j)] -= 1.0 / (deg[i] * deg[j]).sqrt();
            }
        }
    }
    l - nalgebra::DMatrix::<f64>::identity(n, n)
}

/// `Σ_k U T_k(Λ) Uᵀ X θ_kᵀ` with `T_k(λ) = cos(k·acos λ)` on the eigenvalues of `L̃`.
pub fn cheb_spectral_oracle(
    n: usize,
    edges: &[(usize, usize)],
    x: &Tensor<f64>,
    thetas: &[Tensor<f64>],
) -> Vec<f64> {
    let f = x.shape()[1];
    let eig = nalgebra::SymmetricEigen::new(scaled_laplacian_dense(n, edges));
    let u = &eig.eigenvectors;
    let xm = nalgebra::DMatrix::from_row_slice(n, f, x.data());
    let mut y = nalgebra::DMatrix::<f64>::zeros(n, thetas[0].shape()[0]);
    for (k, theta) in thetas.iter().enumerate() {
        let tk = nalgebra::DMatrix::from_diagonal(&eig.eigenvalues.map(|l| (k as f64 * l.clamp(-1.0, 1.0).acos()).cos()));
        let th = nalgebra::DMatrix::from_row_slice(theta.shape()[0], theta.shape()[1], theta.data());
        y += u * tk * u.transpose() * &xm * th.transpose();
    }
    (0..n).flat_map(|i| (0..y.ncols()).map(move |j| (i, j))).map(|(i, j)| y[(i, j)]).collect()
}

/// Literal single-head graph attention for one node set, neighbourhoods with self.
pub fn gat_scalar_oracle(
    n: usize,
    edges: &[(usize, usize)],
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    a: &Tensor<f64>,
) -> Vec<f64> {
    let lrelu = |v: f64| if v > 0.0 { v } else { 0.2 * v };
    let (fo, fi) = (w.shape()[0], w.shape()[1]);
    let z: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..fo)
                .map(|o| (0..fi).map(|k| w.data()[o * fi + k] * x.data()[i * fi + k]).sum())
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for i in 0..n {
        let mut nb = vec![i];
        for &(p, q) in edges {
            if p == i {
                nb.push(q);
            } else if q == i {
                nb.push(p);
            }
        }
        let e: Vec<f64> = nb
            .iter()
            .map(|&j| {
                lrelu((0..fo).map(|k| a.data()[k] * z[i][k] + a.data()[fo + k] * z[j][k]).sum())
            })
            .collect();
        let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = e.iter().map(|v| (v - m).exp()).sum();
        for o in 0..fo {
            let agg: f64 = nb.iter().zip(&e).map(|(&j, ev)| (ev - m).exp() / s * z[j][o]).sum();
            out.push(lrelu(agg));
        }
    }
    out
}
