//! Pixel-grid graphs over bottleneck feature maps and the three graph layers that
//! run on them: graph attention, Chebyshev spectral filtering and center of mass.

mod cheb;
mod com;
mod gat;

use std::collections::BTreeSet;
use std::sync::Arc;

pub use cheb::{cheb_conv, ChebParams};
pub use com::{center_of_mass, CenterOfMassOutput};
pub use gat::{gat_conv, GatOutput, GatParams, GAT_SLOPE};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Neighborhoods, SparseMatrix};

/// Pixel adjacency used for grid graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(Error::invalid(
                "grid graph",
                format!("connectivity must be 4 or 8, got {other}"),
            )),
        }
    }

    pub fn count(self) -> u32 {
        match self {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

/// Undirected simple graph. Edges are stored once as `(lo, hi)` with `lo < hi`;
/// self-loops are not edges and are only added to attention neighbourhoods.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    degree: Vec<usize>,
    self_loops: bool,
}

impl Graph {
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut degree = vec![0; node_count];
        for (a, b) in edges {
            if a >= node_count || b >= node_count {
                return Err(Error::invalid(
                    "graph",
                    format!("edge ({a},{b}) outside {node_count} nodes"),
                ));
            }
            if a == b {
                return Err(Error::invalid("graph", format!("self-edge at node {a}")));
            }
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                return Err(Error::invalid("graph", format!("duplicate edge {key:?}")));
            }
            degree[a] += 1;
            degree[b] += 1;
        }
        Ok(Graph {
            node_count,
            edges: seen.into_iter().collect(),
            degree,
            self_loops: true,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn degree(&self) -> &[usize] {
        &self.degree
    }

    /// Whether attention neighbourhoods include the node itself.
    pub fn self_loops(&self) -> bool {
        self.self_loops
    }

    pub fn without_self_loops(mut self) -> Self {
        self.self_loops = false;
        self
    }

    /// Attention neighbourhoods: the node itself first (when self-loops are on),
    /// then its neighbours in ascending order.
    pub fn neighborhoods(&self) -> Neighborhoods {
        let mut lists: Vec<Vec<usize>> = (0..self.node_count)
            .map(|i| if self.self_loops { vec![i] } else { Vec::new() })
            .collect();
        for &(a, b) in &self.edges {
            lists[a].push(b);
            lists[b].push(a);
        }
        for (i, list) in lists.iter_mut().enumerate() {
            let skip = usize::from(self.self_loops);
            list[skip..].sort_unstable();
            debug_assert!(!self.self_loops || list[0] == i);
        }
        Neighborhoods::new(lists)
    }

    pub fn adjacency_dense(&self) -> Vec<f64> {
        let n = self.node_count;
        let mut a = vec![0.0; n * n];
        for &(i, j) in &self.edges {
            a[i * n + j] = 1.0;
            a[j * n + i] = 1.0;
        }
        a
    }

    /// Same graph with nodes relabelled: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut g = Graph::new(
            self.node_count,
            self.edges.iter().map(|&(a, b)| (perm[a], perm[b])),
        )?;
        g.self_loops = self.self_loops;
        Ok(g)
    }
}

/// `h×w` pixel grid with nodes in row-major order.
pub fn build_grid_graph(h: usize, w: usize, connectivity: Connectivity) -> Result<Graph> {
    if h == 0 || w == 0 {
        return Err(Error::invalid(
            "grid graph",
            format!("extents must be positive, got {h}x{w}"),
        ));
    }
    let id = |r: usize, c: usize| r * w + c;
    let mut edges = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if c + 1 < w {
                edges.push((id(r, c), id(r, c + 1)));
            }
            if r + 1 < h {
                edges.push((id(r, c), id(r + 1, c)));
            }
            if connectivity == Connectivity::Eight && r + 1 < h {
                if c + 1 < w {
                    edges.push((id(r, c), id(r + 1, c + 1)));
                }
                if c > 0 {
                    edges.push((id(r, c), id(r + 1, c - 1)));
                }
            }
        }
    }
    Graph::new(h * w, edges)
}

/// Symmetric normalized Laplacian `L = I - D^{-1/2} A D^{-1/2}` (isolated nodes get an
/// all-zero row) and its Chebyshev-domain rescaling `L̃ = L - I`, which assumes the
/// spectral bound λ_max = 2.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedLaplacian {
    node_count: usize,
    sym: SparseMatrix<f64>,
    scaled: SparseMatrix<f64>,
}

impl NormalizedLaplacian {
    pub fn new(graph: &Graph) -> Self {
        let n = graph.node_count();
        let deg = graph.degree();
        let mut sym = Vec::new();
        let mut scaled = Vec::new();
        for i in 0..n {
            if deg[i] > 0 {
                sym.push((i, i, 1.0));
            } else {
                scaled.push((i, i, -1.0));
            }
        }
        for &(a, b) in graph.edges() {
            let v = -1.0 / ((deg[a] * deg[b]) as f64).sqrt();
            for (r, c) in [(a, b), (b, a)] {
                sym.push((r, c, v));
                scaled.push((r, c, v));
            }
        }
        NormalizedLaplacian {
            node_count: n,
            sym: SparseMatrix::from_triplets(n, n, sym),
            scaled: SparseMatrix::from_triplets(n, n, scaled),
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Dense row-major `L`.
    pub fn sym_dense(&self) -> Vec<f64> {
        self.sym.to_dense()
    }

    /// Dense row-major `L̃ = L - I`.
    pub fn scaled_dense(&self) -> Vec<f64> {
        self.scaled.to_dense()
    }

    /// `L̃` as a sparse operator in the requested float width.
    pub fn scaled_operator<T: Real>(&self) -> Arc<SparseMatrix<T>> {
        let triplets = (0..self.node_count)
            .flat_map(|r| self.scaled.row(r).map(move |(c, v)| (r, c, T::of(v))))
            .collect();
        Arc::new(SparseMatrix::from_triplets(
            self.node_count,
            self.node_count,
            triplets,
        ))
    }
}

pub fn normalized_laplacian(graph: &Graph) -> NormalizedLaplacian {
    NormalizedLaplacian::new(graph)
}
