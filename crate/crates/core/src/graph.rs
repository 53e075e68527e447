//! Undirected graphs with oriented incidence and Laplacian views.
//!
//! Vertices are 0-based in the API. Files and scenario configs use 1-based indices and
//! are converted on load.

use std::collections::{HashSet, VecDeque};
use std::io::Read;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::numerics::{symmetric_eigenvalues_jacobi, Matrix, NumericsError};
use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge {edge} is a self-loop on vertex {vertex}")]
    SelfLoop { edge: usize, vertex: usize },
    #[error("edge {edge} ({i}, {j}) duplicates an earlier edge")]
    DuplicateEdge { edge: usize, i: usize, j: usize },
    #[error("edge {edge} references vertex {vertex}, but the graph has {n} vertices")]
    VertexOutOfRange { edge: usize, vertex: usize, n: usize },
    #[error("edge {edge} has non-positive weight {weight}")]
    NonPositiveWeight { edge: usize, weight: f64 },
    #[error("{weights} weights given for {edges} edges")]
    WeightCount { weights: usize, edges: usize },
    #[error("a disagreement basis needs n >= 2, got {0}")]
    TooFewVertices(usize),
    #[error("graph file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph<T: Real> {
    n: usize,
    edges: Vec<(usize, usize)>,
    weights: Option<Vec<T>>,
}

impl<T: Real> Graph<T> {
    /// Unweighted graph from 0-based edge pairs.
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> Result<Self, GraphError> {
        Self::build(n, edges, None)
    }

    pub fn with_weights(n: usize, edges: Vec<(usize, usize)>, weights: Vec<T>) -> Result<Self, GraphError> {
        Self::build(n, edges, Some(weights))
    }

    fn build(n: usize, edges: Vec<(usize, usize)>, weights: Option<Vec<T>>) -> Result<Self, GraphError> {
        let mut seen = HashSet::new();
        for (k, &(i, j)) in edges.iter().enumerate() {
            for v in [i, j] {
                if v >= n {
                    return Err(GraphError::VertexOutOfRange { edge: k, vertex: v, n });
                }
            }
            if i == j {
                return Err(GraphError::SelfLoop { edge: k, vertex: i });
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(GraphError::DuplicateEdge { edge: k, i, j });
            }
        }
        if let Some(w) = &weights {
            if w.len() != edges.len() {
                return Err(GraphError::WeightCount { weights: w.len(), edges: edges.len() });
            }
            if let Some((k, &bad)) = w.iter().enumerate().find(|(_, &x)| !(x > T::zero()) || !x.is_finite()) {
                return Err(GraphError::NonPositiveWeight { edge: k, weight: bad.to_f64_lossy() });
            }
        }
        Ok(Self { n, edges, weights })
    }

    /// Path `0 - 1 - ... - (n-1)`.
    pub fn path(n: usize) -> Self {
        Self::new(n, (1..n).map(|i| (i - 1, i)).collect()).expect("path graph is valid")
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
        Self::new(n, edges).expect("complete graph is valid")
    }

    /// Star with centre 0.
    pub fn star(n: usize) -> Self {
        Self::new(n, (1..n).map(|i| (0, i)).collect()).expect("star graph is valid")
    }

    pub fn ring(n: usize) -> Self {
        assert!(n >= 3, "a ring needs at least 3 vertices");
        let mut edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        edges.push((0, n - 1));
        Self::new(n, edges).expect("ring graph is valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weight(&self, edge: usize) -> T {
        self.weights.as_ref().map_or(T::one(), |w| w[edge])
    }

    pub fn is_weighted(&self) -> bool {
        self.weights.is_some()
    }

    /// Same topology with every weight reset to one.
    pub fn unweighted(&self) -> Self {
        Self { n: self.n, edges: self.edges.clone(), weights: None }
    }

    /// Column `k` has `+1` at the lower endpoint of edge `k` and `-1` at the higher one.
    pub fn incidence_matrix(&self) -> Matrix<T> {
        let mut b = Matrix::zeros(self.n, self.edges.len());
        for (k, &(i, j)) in self.edges.iter().enumerate() {
            b[(i.min(j), k)] = T::one();
            b[(i.max(j), k)] = -T::one();
        }
        b
    }

    pub fn laplacian(&self, weighted: bool) -> Matrix<T> {
        let mut l = Matrix::zeros(self.n, self.n);
        for (k, &(i, j)) in self.edges.iter().enumerate() {
            let w = if weighted { self.weight(k) } else { T::one() };
            l[(i, i)] += w;
            l[(j, j)] += w;
            l[(i, j)] -= w;
            l[(j, i)] -= w;
        }
        l
    }

    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(i, j)| if i == v { Some(j) } else if j == v { Some(i) } else { None })
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        if self.n <= 1 {
            return true;
        }
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == self.n
    }

    /// Reads `i,j[,weight]` rows with 1-based vertices; `n` is the largest index seen
    /// unless `n` is given.
    pub fn from_csv_reader(reader: impl Read, n: Option<usize>) -> Result<Self, GraphError> {
        #[derive(Deserialize)]
        struct Row {
            i: usize,
            j: usize,
            weight: Option<f64>,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
        let mut edges = Vec::new();
        let mut weights = Vec::new();
        let mut any_weight = false;
        for (line, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| GraphError::Parse(format!("row {}: {e}", line + 1)))?;
            if row.i == 0 || row.j == 0 {
                return Err(GraphError::Parse(format!("row {}: vertex indices are 1-based", line + 1)));
            }
            edges.push((row.i - 1, row.j - 1));
            any_weight |= row.weight.is_some();
            weights.push(T::lit(row.weight.unwrap_or(1.0)));
        }
        let max_vertex = edges.iter().map(|&(i, j)| i.max(j) + 1).max().unwrap_or(0);
        let n = n.unwrap_or(max_vertex);
        Self::build(n, edges, any_weight.then_some(weights))
    }

    pub fn from_csv_path(path: &Path, n: Option<usize>) -> Result<Self, GraphError> {
        let file = std::fs::File::open(path).map_err(|e| GraphError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(file, n)
    }
}

/// Eigenvalues of a symmetric matrix, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricSpectrum<T> {
    pub eigenvalues: Vec<T>,
}

impl<T: Real> SymmetricSpectrum<T> {
    /// Second-smallest eigenvalue; the algebraic connectivity for a Laplacian.
    pub fn lambda2(&self) -> Option<T> {
        self.eigenvalues.get(1).copied()
    }
}

pub fn symmetric_eigenvalues<T: Real>(m: &Matrix<T>) -> Result<SymmetricSpectrum<T>, NumericsError> {
    Ok(SymmetricSpectrum { eigenvalues: symmetric_eigenvalues_jacobi(m)? })
}

/// Helmert basis of the disagreement subspace: `n x (n-1)`, orthonormal columns, each
/// orthogonal to the all-ones vector.
pub fn disagreement_basis<T: Real>(n: usize) -> Result<Matrix<T>, GraphError> {
    if n < 2 {
        return Err(GraphError::TooFewVertices(n));
    }
    let mut s = Matrix::zeros(n, n - 1);
    for k in 1..n {
        let kf = T::from_usize_lossy(k);
        let norm = (kf * (kf + T::one())).sqrt();
        for i in 0..k {
            s[(i, k - 1)] = T::one() / norm;
        }
        s[(k, k - 1)] = -kf / norm;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_edge_incidence() {
        let g = Graph::<f64>::new(2, vec![(1, 0)]).unwrap();
        assert_eq!(g.incidence_matrix(), Matrix::from_rows(&[vec![1.0], vec![-1.0]]));
    }

    #[test]
    fn path_laplacian_by_hand() {
        let g = Graph::<f64>::path(3);
        let b = g.incidence_matrix();
        let expected = Matrix::from_rows(&[vec![1.0, -1.0, 0.0], vec![-1.0, 2.0, -1.0], vec![0.0, -1.0, 1.0]]);
        assert_eq!(b.matmul(&b.transpose()), expected);
        assert_eq!(g.laplacian(false), expected);
    }

    #[test]
    fn empty_edge_set() {
        let g = Graph::<f64>::new(3, vec![]).unwrap();
        assert_eq!(g.incidence_matrix().cols(), 0);
        assert_eq!(g.laplacian(false), Matrix::zeros(3, 3));
        assert!(!g.is_connected());
    }

    #[test]
    fn weighted_laplacian() {
        let g = Graph::with_weights(2, vec![(0, 1)], vec![5.0]).unwrap();
        assert_eq!(g.laplacian(true), Matrix::from_rows(&[vec![5.0, -5.0], vec![-5.0, 5.0]]));
        // Dyadic weights sum without rounding, so the row sums are exactly zero.
        let star = Graph::with_weights(4, vec![(0, 1), (0, 2), (0, 3)], vec![0.25, 1.5, 2.75]).unwrap();
        let l = star.laplacian(true);
        for i in 0..4 {
            assert_eq!(l.row(i).iter().sum::<f64>(), 0.0);
        }
        let star = Graph::with_weights(4, vec![(0, 1), (0, 2), (0, 3)], vec![0.3, 1.7, 2.9]).unwrap();
        let l = star.laplacian(true);
        for i in 0..4 {
            assert!(l.row(i).iter().sum::<f64>().abs() <= 8.0 * f64::EPSILON * 4.9);
        }
    }

    #[test]
    fn invalid_graphs_are_rejected() {
        assert!(matches!(Graph::<f64>::new(2, vec![(0, 0)]), Err(GraphError::SelfLoop { .. })));
        assert!(matches!(Graph::<f64>::new(2, vec![(0, 1), (1, 0)]), Err(GraphError::DuplicateEdge { .. })));
        assert!(matches!(Graph::<f64>::new(2, vec![(0, 2)]), Err(GraphError::VertexOutOfRange { .. })));
        assert!(matches!(
            Graph::with_weights(2, vec![(0, 1)], vec![0.0]),
            Err(GraphError::NonPositiveWeight { .. })
        ));
    }

    #[test]
    fn connectivity() {
        assert!(Graph::<f64>::path(5).is_connected());
        assert!(!Graph::<f64>::new(4, vec![(0, 1), (2, 3)]).unwrap().is_connected());
        assert!(Graph::<f64>::new(1, vec![]).unwrap().is_connected());
    }

    #[test]
    fn laplacian_spectra() {
        let p3 = symmetric_eigenvalues(&Graph::<f64>::path(3).laplacian(false)).unwrap();
        for (e, x) in p3.eigenvalues.iter().zip([0.0, 1.0, 3.0]) {
            assert!((e - x).abs() < 1e-12);
        }
        let k3 = symmetric_eigenvalues(&Graph::<f64>::complete(3).laplacian(false)).unwrap();
        for (e, x) in k3.eigenvalues.iter().zip([0.0, 3.0, 3.0]) {
            assert!((e - x).abs() < 1e-12);
        }
        assert!((k3.lambda2().unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn basis_for_two_vertices() {
        let s = disagreement_basis::<f64>(2).unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert!((s[(0, 0)] - r).abs() < 1e-15 && (s[(1, 0)] + r).abs() < 1e-15);
        assert!(matches!(disagreement_basis::<f64>(1), Err(GraphError::TooFewVertices(1))));
    }

    #[test]
    fn csv_round_trip_is_one_based() {
        let g = Graph::<f64>::from_csv_reader("i,j,weight\n1,2,2.5\n2,3,\n".as_bytes(), None).unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.weight(0), 2.5);
        assert_eq!(g.weight(1), 1.0);
        let g = Graph::<f64>::from_csv_reader("i,j\n1,2\n".as_bytes(), Some(4)).unwrap();
        assert!(!g.is_weighted());
        assert_eq!(g.n(), 4);
    }
}
