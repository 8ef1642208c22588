//! Neighbor graphs over feature points and shortest-path graph distances.
//!
//! The graph is built once over all `N` feature points (labeled rows first,
//! then unlabeled). A new query is inserted virtually: it is linked to its
//! neighbors for the duration of one Dijkstra run and the stored graph is
//! never modified.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io;

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("feature row {row} has a non-finite entry")]
    NonFinite { row: usize },
    #[error("labeled count {labeled} exceeds number of rows {rows}")]
    LabeledExceedsRows { labeled: usize, rows: usize },
    #[error("need at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("invalid graph rule: {0}")]
    InvalidRule(String),
    #[error("all feature points coincide; the default radius would be zero")]
    ZeroRadius,
}

impl GraphError {
    /// `module::Variant` label used in user-facing diagnostics.
    pub fn case(&self) -> String {
        format!("manifold_graph::{}", crate::variant_name(self))
    }
}

/// `N` feature vectors in ℝ^p stored row-major; the first `labeled` rows
/// carry responses.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    dim: usize,
    labeled: usize,
}

impl FeatureMatrix {
    pub fn new(rows: &[Vec<f64>], labeled: usize) -> Result<Self, GraphError> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(GraphError::DimensionMismatch { expected: dim, found: row.len() });
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(data, dim, labeled)
    }

    pub fn from_flat(data: Vec<f64>, dim: usize, labeled: usize) -> Result<Self, GraphError> {
        if dim == 0 {
            return Err(GraphError::DimensionMismatch { expected: 1, found: 0 });
        }
        if data.len() % dim != 0 {
            return Err(GraphError::DimensionMismatch { expected: dim, found: data.len() % dim });
        }
        let rows = data.len() / dim;
        if labeled > rows {
            return Err(GraphError::LabeledExceedsRows { labeled, rows });
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(GraphError::NonFinite { row: pos / dim });
        }
        Ok(FeatureMatrix { data, dim, labeled })
    }

    /// Labeled rows followed by unlabeled rows.
    pub fn stack(labeled: &[Vec<f64>], unlabeled: &[Vec<f64>]) -> Result<Self, GraphError> {
        let rows: Vec<Vec<f64>> = labeled.iter().chain(unlabeled).cloned().collect();
        Self::new(&rows, labeled.len())
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// The first `n` rows, all labeled.
    pub fn labeled_rows(&self) -> FeatureMatrix {
        FeatureMatrix { data: self.data[..self.labeled * self.dim].to_vec(), dim: self.dim, labeled: self.labeled }
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Candidate search used for graph construction and query insertion.
pub trait NeighborSearch: Sync {
    /// All points within `radius` of `query` (inclusive), by index.
    fn within_radius(&self, query: &[f64], radius: f64, skip: Option<usize>) -> Vec<(usize, f64)>;

    /// The `k` nearest points, ordered by distance then index.
    fn k_nearest(&self, query: &[f64], k: usize, skip: Option<usize>) -> Vec<(usize, f64)>;
}

/// Linear scan over every point.
pub struct BruteForce<'a> {
    features: &'a FeatureMatrix,
}

impl<'a> BruteForce<'a> {
    pub fn new(features: &'a FeatureMatrix) -> Self {
        BruteForce { features }
    }
}

impl NeighborSearch for BruteForce<'_> {
    fn within_radius(&self, query: &[f64], radius: f64, skip: Option<usize>) -> Vec<(usize, f64)> {
        self.features
            .rows()
            .enumerate()
            .filter(|(j, _)| Some(*j) != skip)
            .map(|(j, row)| (j, euclidean(query, row)))
            .filter(|&(_, d)| d <= radius)
            .collect()
    }

    fn k_nearest(&self, query: &[f64], k: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = self
            .features
            .rows()
            .enumerate()
            .filter(|(j, _)| Some(*j) != skip)
            .map(|(j, row)| (j, euclidean(query, row)))
            .collect();
        let by_dist = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        if k < all.len() {
            all.select_nth_unstable_by(k, by_dist);
            all.truncate(k);
        }
        all.sort_by(by_dist);
        all
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphRule {
    /// Connect points at Euclidean distance ≤ r.
    Radius(f64),
    /// Connect each point to its k nearest neighbors, symmetrized by union.
    Knn(usize),
}

/// Undirected weighted graph over the `N` feature points.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    adjacency: Vec<Vec<(usize, f64)>>,
    rule: GraphRule,
    fermat_s: f64,
    labeled: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphStats {
    pub vertices: usize,
    pub edges: usize,
    pub components: usize,
    pub isolated: usize,
    pub min_degree: usize,
    pub max_degree: usize,
    pub mean_degree: f64,
}

fn edge_weight(d: f64, s: f64) -> f64 {
    if s == 1.0 {
        d
    } else {
        d.powf(s)
    }
}

fn check_rule(rule: GraphRule, n_points: usize, fermat_s: f64) -> Result<(), GraphError> {
    if !(fermat_s >= 1.0) || !fermat_s.is_finite() {
        return Err(GraphError::InvalidRule(format!("fermat exponent must be >= 1, got {fermat_s}")));
    }
    match rule {
        GraphRule::Radius(r) if !(r > 0.0) || !r.is_finite() => {
            Err(GraphError::InvalidRule(format!("radius must be positive and finite, got {r}")))
        }
        GraphRule::Knn(k) if k == 0 || k >= n_points => {
            Err(GraphError::InvalidRule(format!("k must satisfy 1 <= k < N = {n_points}, got {k}")))
        }
        _ => Ok(()),
    }
}

/// Builds the neighbor graph with the default brute-force search.
pub fn build_graph(features: &FeatureMatrix, rule: GraphRule, fermat_s: f64) -> Result<NeighborGraph, GraphError> {
    build_graph_with(features, &BruteForce::new(features), rule, fermat_s)
}

/// Builds the neighbor graph using `search` for candidate lookup.
pub fn build_graph_with(
    features: &FeatureMatrix,
    search: &dyn NeighborSearch,
    rule: GraphRule,
    fermat_s: f64,
) -> Result<NeighborGraph, GraphError> {
    let n_points = features.len();
    check_rule(rule, n_points, fermat_s)?;

    let directed: Vec<Vec<(usize, f64)>> = (0..n_points)
        .into_par_iter()
        .map(|i| {
            let q = features.row(i);
            match rule {
                GraphRule::Radius(r) => search.within_radius(q, r, Some(i)),
                GraphRule::Knn(k) => search.k_nearest(q, k, Some(i)),
            }
        })
        .collect();

    let mut adjacency: Vec<Vec<(usize, f64)>> = match rule {
        // symmetric already: d(i, j) and d(j, i) are bitwise equal
        GraphRule::Radius(_) => directed,
        GraphRule::Knn(_) => {
            let mut adj = vec![Vec::new(); n_points];
            for (i, nbrs) in directed.into_iter().enumerate() {
                for (j, d) in nbrs {
                    adj[i].push((j, d));
                    adj[j].push((i, d));
                }
            }
            adj
        }
    };
    for list in &mut adjacency {
        list.sort_by(|a, b| a.0.cmp(&b.0));
        list.dedup_by_key(|e| e.0);
        for e in list.iter_mut() {
            e.1 = edge_weight(e.1, fermat_s);
        }
    }
    Ok(NeighborGraph { adjacency, rule, fermat_s, labeled: features.labeled_count() })
}

/// `1.2 · maxᵢ minⱼ≠ᵢ ‖Xᵢ − Xⱼ‖₂`.
pub fn default_radius(features: &FeatureMatrix) -> Result<f64, GraphError> {
    let n = features.len();
    if n < 2 {
        return Err(GraphError::TooFewPoints(n));
    }
    let max_min = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = features.row(i);
            (0..n).filter(|&j| j != i).map(|j| euclidean(xi, features.row(j))).fold(f64::INFINITY, f64::min)
        })
        .reduce(|| 0.0, f64::max);
    if max_min == 0.0 {
        return Err(GraphError::ZeroRadius);
    }
    Ok(1.2 * max_min)
}

impl NeighborGraph {
    pub fn rule(&self) -> GraphRule {
        self.rule
    }

    pub fn fermat_s(&self) -> f64 {
        self.fermat_s
    }

    pub fn vertex_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled
    }

    /// Neighbors of `i` sorted by index, with edge weights.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Each undirected edge once, as `(src, dst, weight)` with `src < dst`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, nbrs)| nbrs.iter().filter(move |(j, _)| *j > i).map(move |&(j, w)| (i, j, w)))
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Component label per vertex, numbered in order of first appearance.
    pub fn components(&self) -> Vec<usize> {
        let n = self.vertex_count();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = next;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for &(u, _) in &self.adjacency[v] {
                    if label[u] == usize::MAX {
                        label[u] = next;
                        stack.push(u);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn stats(&self) -> GraphStats {
        let degrees: Vec<usize> = self.adjacency.iter().map(Vec::len).collect();
        let n = degrees.len();
        GraphStats {
            vertices: n,
            edges: self.edge_count(),
            components: self.components().iter().max().map_or(0, |m| m + 1),
            isolated: degrees.iter().filter(|&&d| d == 0).count(),
            min_degree: degrees.iter().copied().min().unwrap_or(0),
            max_degree: degrees.iter().copied().max().unwrap_or(0),
            mean_degree: if n == 0 { 0.0 } else { degrees.iter().sum::<usize>() as f64 / n as f64 },
        }
    }

    /// Edge list as CSV with header `src,dst,weight`.
    pub fn write_edge_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["src", "dst", "weight"])?;
        for (i, j, weight) in self.edges() {
            w.write_record([i.to_string(), j.to_string(), weight.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Shortest-path lengths from a set of seeded vertices, stopping once the
    /// first `targets` vertices are settled.
    fn dijkstra(&self, seeds: &[(usize, f64)], targets: usize) -> Vec<f64> {
        let n = self.vertex_count();
        let mut dist = vec![f64::INFINITY; n];
        let mut settled = vec![false; n];
        let mut heap = BinaryHeap::new();
        for &(v, d) in seeds {
            if d < dist[v] {
                dist[v] = d;
                heap.push(HeapEntry { dist: d, vertex: v });
            }
        }
        let mut remaining = targets;
        while let Some(HeapEntry { dist: d, vertex: v }) = heap.pop() {
            if settled[v] {
                continue;
            }
            settled[v] = true;
            if v < targets {
                remaining -= 1;
                if remaining == 0 {
                    break;
                }
            }
            for &(u, w) in &self.adjacency[v] {
                let nd = d + w;
                if nd < dist[u] {
                    dist[u] = nd;
                    heap.push(HeapEntry { dist: nd, vertex: u });
                }
            }
        }
        dist.truncate(targets);
        dist
    }
}

#[derive(Debug, Clone, Copy)]
struct HeapEntry {
    dist: f64,
    vertex: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.vertex.cmp(&self.vertex))
    }
}

/// Graph distances from one query to every labeled vertex (`+∞` if unreachable).
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    pub query: Vec<f64>,
    pub dists: Vec<f64>,
}

impl DistanceField {
    pub fn is_isolated(&self) -> bool {
        self.dists.iter().all(|d| d.is_infinite())
    }
}

/// Inserts `query` as a temporary vertex and runs Dijkstra to the labeled
/// vertices.
///
/// Radius graphs link the query to every vertex within `r`; kNN graphs link it
/// to its `k` nearest vertices only (existing edges are left alone).
pub fn query_distances(
    graph: &NeighborGraph,
    features: &FeatureMatrix,
    query: &[f64],
) -> Result<DistanceField, GraphError> {
    query_distances_with(graph, features, &BruteForce::new(features), query)
}

pub fn query_distances_with(
    graph: &NeighborGraph,
    features: &FeatureMatrix,
    search: &dyn NeighborSearch,
    query: &[f64],
) -> Result<DistanceField, GraphError> {
    if query.len() != features.dim() {
        return Err(GraphError::DimensionMismatch { expected: features.dim(), found: query.len() });
    }
    debug_assert_eq!(features.len(), graph.vertex_count());
    let mut seeds = match graph.rule {
        GraphRule::Radius(r) => search.within_radius(query, r, None),
        GraphRule::Knn(k) => search.k_nearest(query, k, None),
    };
    for s in &mut seeds {
        s.1 = edge_weight(s.1, graph.fermat_s);
    }
    let dists = graph.dijkstra(&seeds, features.labeled_count());
    Ok(DistanceField { query: query.to_vec(), dists })
}

/// `n × n` graph distances among labeled vertices over the full graph.
pub fn pairwise_labeled_distances(graph: &NeighborGraph) -> DMatrix<f64> {
    let n = graph.labeled_count();
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|i| graph.dijkstra(&[(i, 0.0)], n)).collect();
    let mut m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    // reverse paths can differ in the last ulp
    for i in 0..n {
        m[(i, i)] = 0.0;
        for j in (i + 1)..n {
            let d = m[(i, j)].min(m[(j, i)]);
            m[(i, j)] = d;
            m[(j, i)] = d;
        }
    }
    m
}

/// `n × n` Euclidean distances among the rows of `features`.
pub fn pairwise_euclidean(features: &FeatureMatrix) -> DMatrix<f64> {
    let n = features.len();
    DMatrix::from_fn(n, n, |i, j| euclidean(features.row(i), features.row(j)))
}
