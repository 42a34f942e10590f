//! Dual-threshold patch graph: spatial distance below `tau_spatial` and
//! feature cosine similarity above `tau_tissue`.

use std::collections::HashMap;

use super::bag::PatchBag;
use crate::error::{Error, Result};
use crate::numkit::matrix::dot;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpatialGraph {
    num_vertices: usize,
    /// Unordered pairs stored as `(i, j)` with `i < j`, sorted.
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl SpatialGraph {
    /// Builds a graph from arbitrary pairs; self-loops and duplicates are dropped.
    pub fn from_edges(num_vertices: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut edges = Vec::new();
        for (a, b) in pairs {
            if a >= num_vertices || b >= num_vertices {
                return Err(Error::InvalidArgument(format!("edge ({a}, {b}) out of range for {num_vertices} vertices")));
            }
            if a != b {
                edges.push((a.min(b), a.max(b)));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let mut adjacency = vec![Vec::new(); num_vertices];
        for &(i, j) in &edges {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for a in &mut adjacency {
            a.sort_unstable();
        }
        Ok(Self { num_vertices, edges, adjacency })
    }

    pub fn empty(num_vertices: usize) -> Self {
        Self { num_vertices, edges: Vec::new(), adjacency: vec![Vec::new(); num_vertices] }
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Sorted neighbours of `i`, excluding `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.num_vertices && self.adjacency[i].binary_search(&j).is_ok()
    }

    /// The same graph with vertex `perm[k]` renamed to `k`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inv = vec![0; perm.len()];
        for (k, &p) in perm.iter().enumerate() {
            inv[p] = k;
        }
        Self::from_edges(self.num_vertices, self.edges.iter().map(|&(i, j)| (inv[i], inv[j])))
            .expect("permutation keeps indices in range")
    }
}

#[inline]
pub(crate) fn euclidean(a: [f32; 2], b: [f32; 2]) -> f64 {
    let dx = a[0] as f64 - b[0] as f64;
    let dy = a[1] as f64 - b[1] as f64;
    (dx * dx + dy * dy).sqrt()
}

/// Builds the patch graph with a uniform grid of cell size `tau_spatial`,
/// so only the 3×3 block of cells around each patch is scanned.
pub fn build_graph(bag: &PatchBag, tau_spatial: f64, tau_tissue: f64) -> Result<SpatialGraph> {
    let n = bag.len();
    if n == 0 {
        return Err(Error::EmptyBag);
    }
    if !(tau_spatial > 0.0 && tau_spatial.is_finite()) {
        return Err(Error::InvalidArgument(format!("tau_spatial must be positive, got {tau_spatial}")));
    }
    if !(-1.0..=1.0).contains(&tau_tissue) {
        return Err(Error::InvalidArgument(format!("tau_tissue must lie in [-1, 1], got {tau_tissue}")));
    }

    let feats: Vec<Vec<f64>> = (0..n).map(|i| bag.features.row(i).iter().map(|&v| v as f64).collect()).collect();
    let norms: Vec<f64> = feats.iter().map(|f| dot(f, f).sqrt()).collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::Degenerate(format!("patch {i} has an all-zero feature vector")));
    }

    let cell = |c: [f32; 2]| -> (i64, i64) {
        ((c[0] as f64 / tau_spatial).floor() as i64, (c[1] as f64 / tau_spatial).floor() as i64)
    };
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, &c) in bag.coords.iter().enumerate() {
        grid.entry(cell(c)).or_default().push(i);
    }

    let mut pairs = Vec::new();
    for i in 0..n {
        let (cx, cy) = cell(bag.coords[i]);
        for gx in cx - 1..=cx + 1 {
            for gy in cy - 1..=cy + 1 {
                let Some(bucket) = grid.get(&(gx, gy)) else { continue };
                for &j in bucket {
                    if j <= i {
                        continue;
                    }
                    if euclidean(bag.coords[i], bag.coords[j]) >= tau_spatial {
                        continue;
                    }
                    let sim = (dot(&feats[i], &feats[j]) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
                    if sim > tau_tissue {
                        pairs.push((i, j));
                    }
                }
            }
        }
    }
    SpatialGraph::from_edges(n, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Matrix;

    fn bag(coords: Vec<[f32; 2]>, feats: Vec<Vec<f32>>) -> PatchBag {
        PatchBag::new("t", Matrix::from_rows(&feats), coords).unwrap()
    }

    #[test]
    fn three_four_five_is_not_an_edge() {
        let b = bag(vec![[0.0, 0.0], [3.0, 4.0]], vec![vec![1.0, 2.0], vec![1.0, 2.0]]);
        assert_eq!(build_graph(&b, 4.9, 0.5).unwrap().num_edges(), 0);
        assert_eq!(build_graph(&b, 5.1, 0.5).unwrap().num_edges(), 1);
    }

    #[test]
    fn colocated_identical_patches_connect() {
        let b = bag(vec![[7.0, 7.0], [7.0, 7.0]], vec![vec![0.5, 1.0], vec![0.5, 1.0]]);
        let g = build_graph(&b, 1.0, 0.5).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
        assert!(g.has_edge(1, 0) && g.has_edge(0, 1));
        assert_eq!(g.degree(0), 1);
    }

    #[test]
    fn dissimilar_neighbours_do_not_connect() {
        let b = bag(vec![[0.0, 0.0], [1.0, 0.0]], vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(build_graph(&b, 2.0, 0.5).unwrap().num_edges(), 0);
    }

    #[test]
    fn argument_errors() {
        let b = bag(vec![[0.0, 0.0]], vec![vec![1.0]]);
        assert!(build_graph(&b, 0.0, 0.5).is_err());
        assert!(build_graph(&b, 1.0, 1.5).is_err());
        let z = bag(vec![[0.0, 0.0], [0.0, 1.0]], vec![vec![0.0], vec![1.0]]);
        assert!(matches!(build_graph(&z, 2.0, 0.5), Err(Error::Degenerate(_))));
        assert!(matches!(PatchBag::new("e", Matrix::zeros(0, 3), vec![]), Err(Error::EmptyBag)));
    }

    #[test]
    fn from_edges_normalizes() {
        let g = SpatialGraph::from_edges(3, [(1, 0), (0, 1), (2, 2), (2, 1)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert!(SpatialGraph::from_edges(2, [(0, 5)]).is_err());
    }
}
