mod common;

use std::sync::Arc;

use common::{assert_close, cheb_spectral_oracle, gat_scalar_oracle, random_connected_edges, rng, uniform};
use gacunet::graph::{build_grid_graph, center_of_mass, cheb_conv, gat_conv, Connectivity, Graph, NormalizedLaplacian};
use gacunet::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

#[test]
fn laplacian_spectrum_bounds() {
    let mut r = rng(1);
    for n in 2..=9 {
        let edges = random_connected_edges(n, 0.3, &mut r);
        let lap = NormalizedLaplacian::new(&Graph::new(n, edges.clone()).unwrap());
        let sym = nalgebra::DMatrix::from_row_slice(n, n, &lap.sym_dense());
        assert!((&sym - sym.transpose()).amax() < 1e-12);
        for l in nalgebra::SymmetricEigen::new(sym).eigenvalues.iter() {
            assert!((-1e-12..=2.0 + 1e-12).contains(l), "{l}");
        }
        let scaled = nalgebra::DMatrix::from_row_slice(n, n, &lap.scaled_dense());
        assert!((scaled - common::scaled_laplacian_dense(n, &edges)).amax() < 1e-14);
    }
}

#[test]
fn two_node_path_eigenvalues_are_zero_and_two() {
    let lap = NormalizedLaplacian::new(&Graph::new(2, [(0, 1)]).unwrap());
    let m = nalgebra::DMatrix::from_row_slice(2, 2, &lap.sym_dense());
    let mut ev: Vec<f64> = nalgebra::SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_close(&ev, &[0.0, 2.0], 1e-12, "eigenvalues");
}

#[test]
fn grid_graph_counts() {
    for (h, w) in [(1, 1), (2, 2), (3, 3), (4, 7)] {
        let g = build_grid_graph(h, w, Connectivity::Four).unwrap();
        assert_eq!(g.edge_count(), h * (w - 1) + w * (h - 1));
        let g8 = build_grid_graph(h, w, Connectivity::Eight).unwrap();
        assert_eq!(g8.edge_count(), h * (w - 1) + w * (h - 1) + 2 * (h - 1) * (w - 1));
    }
}

#[test]
fn cheb_matches_dense_spectral_filter() {
    let mut r = rng(2);
    for n in 1..=10 {
        for k in 0..=4 {
            let edges = random_connected_edges(n, 0.25, &mut r);
            let x = uniform(&[n, 3], -1.0, 1.0, &mut r);
            let thetas: Vec<Tensor<f64>> = (0..=k).map(|_| uniform(&[2, 3], -1.0, 1.0, &mut r)).collect();
            let lap = NormalizedLaplacian::new(&Graph::new(n, edges.clone()).unwrap()).scaled_operator::<f64>();
            let mut tape = Tape::new();
            let vx = tape.constant(x.clone());
            let vt: Vec<_> = thetas.iter().map(|t| tape.constant(t.clone())).collect();
            let y = cheb_conv(&mut tape, vx, &lap, &vt).unwrap();
            assert_close(tape.value(y).data(), &cheb_spectral_oracle(n, &edges, &x, &thetas), 1e-8, "cheb");
        }
    }
}

#[test]
fn gat_matches_literal_attention_on_a_path() {
    let mut r = rng(3);
    for _ in 0..10 {
        let edges = vec![(0, 1), (1, 2)];
        let x = uniform(&[3, 4], -1.0, 1.0, &mut r);
        let w = uniform(&[5, 4], -1.0, 1.0, &mut r);
        let a = uniform(&[10], -1.0, 1.0, &mut r);
        let nbr = Arc::new(Graph::new(3, edges.clone()).unwrap().neighborhoods());
        let mut tape = Tape::new();
        let (vx, vw, va) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(a.clone()));
        let out = gat_conv(&mut tape, vx, &nbr, vw, va).unwrap();
        assert_close(tape.value(out.output).data(), &gat_scalar_oracle(3, &edges, &x, &w, &a), 1e-10, "gat");
    }
}

#[test]
fn gat_attention_rows_sum_to_one_and_layer_is_permutation_equivariant() {
    let mut r = rng(4);
    for _ in 0..50 {
        let n = 6;
        let edges = random_connected_edges(n, 0.3, &mut r);
        let x = uniform(&[n, 3], -2.0, 2.0, &mut r);
        let w = uniform(&[4, 3], -1.0, 1.0, &mut r);
        let a = uniform(&[8], -1.0, 1.0, &mut r);
        let run = |edges: &[(usize, usize)], x: &Tensor<f64>| {
            let g = Graph::new(n, edges.iter().copied()).unwrap();
            let nbr = Arc::new(g.neighborhoods());
            let mut tape = Tape::new();
            let (vx, vw, va) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(a.clone()));
            let out = gat_conv(&mut tape, vx, &nbr, vw, va).unwrap();
            for i in 0..n {
                let s: f64 = out.attention[nbr.span(i)].iter().sum();
                assert!((s - 1.0).abs() < 1e-6, "row {i} sums to {s}");
            }
            tape.value(out.output).data().to_vec()
        };
        let y = run(&edges, &x);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let pedges: Vec<(usize, usize)> = edges.iter().map(|&(p, q)| (perm[p], perm[q])).collect();
        let mut px = vec![0.0; n * 3];
        for i in 0..n {
            px[perm[i] * 3..perm[i] * 3 + 3].copy_from_slice(&x.data()[i * 3..i * 3 + 3]);
        }
        let py = run(&pedges, &Tensor::new(vec![n, 3], px).unwrap());
        for i in 0..n {
            assert_close(&py[perm[i] * 4..perm[i] * 4 + 4], &y[i * 4..i * 4 + 4], 1e-10, "equivariance");
        }
    }
}

#[test]
fn center_of_mass_range_and_shift_invariance() {
    let mut r = rng(5);
    for _ in 0..20 {
        let (c, h, w) = (r.gen_range(1..4), r.gen_range(1..6), r.gen_range(1..6));
        let x = uniform(&[c, h, w], -3.0, 3.0, &mut r);
        let shift = r.gen_range(-5.0..5.0);
        let centroids = |x: Tensor<f64>| {
            let mut tape = Tape::new();
            let v = tape.constant(x);
            let out = center_of_mass(&mut tape, v).unwrap();
            tape.value(out.centroids).data().to_vec()
        };
        let a = centroids(x.clone());
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_close(&a, &centroids(x.map(|v| v + shift)), 1e-12, "shift");
    }
}
