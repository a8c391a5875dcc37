//! Weighted sensor graphs.
//!
//! A [`SensorGraph`] is a symmetric, zero-diagonal, non-negative dense
//! adjacency matrix. Graphs begin life holding raw pairwise distances
//! (from an explicit link list or from coordinates) and are turned into
//! edge weights by [`SensorGraph::normalize`], which applies a Gaussian-
//! style decay and an optional threshold.

mod bcc;
mod io;

pub use bcc::{find_bccs, BccDecomposition};
pub use io::{read_coordinates, read_edge_list, write_edge_list};

use crate::{Error, Result};

/// Which side of the threshold survives normalization.
///
/// `KeepBelow` keeps an edge when its decayed weight is strictly below the
/// threshold and is the default; passing `f64::INFINITY` as the threshold
/// then keeps every edge. `KeepAbove` keeps weights at or above the
/// threshold instead, which prunes the weakest links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdMode {
    #[default]
    KeepBelow,
    KeepAbove,
}

/// Symmetric weighted graph over sensor nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorGraph {
    n: usize,
    weights: Vec<f64>,
    normalized: bool,
}

/// Mean Earth radius in kilometers.
const EARTH_RADIUS_KM: f64 = 6371.0;

/// Great-circle distance in kilometers between two (latitude, longitude)
/// points given in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().asin()
}

impl SensorGraph {
    /// Empty graph (no edges) over `n` nodes.
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            weights: vec![0.0; n * n],
            normalized: false,
        }
    }

    /// Builds a graph from a full weight matrix, validating symmetry, a
    /// zero diagonal, and non-negative finite entries.
    pub fn from_weights(n: usize, weights: Vec<f64>, normalized: bool) -> Result<Self> {
        if weights.len() != n * n {
            return Err(Error::Graph(format!(
                "weight matrix has {} entries, expected {}",
                weights.len(),
                n * n
            )));
        }
        for i in 0..n {
            if weights[i * n + i] != 0.0 {
                return Err(Error::Graph(format!("nonzero diagonal at node {}", i)));
            }
            for j in 0..n {
                let w = weights[i * n + j];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::Graph(format!(
                        "invalid weight {} at ({}, {})",
                        w, i, j
                    )));
                }
                if w != weights[j * n + i] {
                    return Err(Error::Graph(format!(
                        "asymmetric weights at ({}, {}): {} vs {}",
                        i,
                        j,
                        w,
                        weights[j * n + i]
                    )));
                }
            }
        }
        Ok(Self {
            n,
            weights,
            normalized,
        })
    }

    /// Proximity graph from an explicit link list: the adjacency entry for
    /// a linked pair is the given distance, all other pairs stay
    /// disconnected. Distances must be positive; duplicate links are
    /// rejected.
    pub fn from_links(n_nodes: usize, links: &[(usize, usize, f64)]) -> Result<Self> {
        let mut g = Self::empty(n_nodes);
        for &(i, j, d) in links {
            if i >= n_nodes || j >= n_nodes {
                return Err(Error::Graph(format!(
                    "link ({}, {}) out of bounds for {} nodes",
                    i, j, n_nodes
                )));
            }
            if i == j {
                return Err(Error::Graph(format!("self-link at node {}", i)));
            }
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::Graph(format!(
                    "link ({}, {}) has invalid distance {}",
                    i, j, d
                )));
            }
            if g.weights[i * n_nodes + j] != 0.0 {
                return Err(Error::Graph(format!("duplicate link ({}, {})", i, j)));
            }
            g.weights[i * n_nodes + j] = d;
            g.weights[j * n_nodes + i] = d;
        }
        Ok(g)
    }

    /// Complete pairwise-distance graph over geographic coordinates
    /// (latitude, longitude in degrees), using great-circle kilometers.
    pub fn from_coordinates(coords: &[(f64, f64)]) -> Result<Self> {
        let n = coords.len();
        for (i, &(lat, lon)) in coords.iter().enumerate() {
            if !(lat.is_finite() && lon.is_finite() && (-90.0..=90.0).contains(&lat)) {
                return Err(Error::Graph(format!(
                    "node {} has invalid coordinates ({}, {})",
                    i, lat, lon
                )));
            }
        }
        let mut g = Self::empty(n);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = haversine_km(coords[i], coords[j]);
                g.weights[i * n + j] = d;
                g.weights[j * n + i] = d;
            }
        }
        Ok(g)
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    /// Row-major dense weight matrix.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn set_edge(&mut self, i: usize, j: usize, w: f64) {
        debug_assert!(i != j && w >= 0.0 && w.is_finite());
        self.weights[i * self.n + j] = w;
        self.weights[j * self.n + i] = w;
    }

    /// Neighbors of `i` with positive weight, ascending by node index.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let row = &self.weights[i * self.n..(i + 1) * self.n];
        row.iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(j, &w)| (j, w))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).count()
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        let mut count = 0;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.weight(i, j) > 0.0 {
                    count += 1;
                }
            }
        }
        count
    }

    /// Edge density `|E| / (N ln N)`, the activation statistic for edge
    /// denoising. Needs at least two nodes.
    pub fn density(&self) -> Result<f64> {
        if self.n < 2 {
            return Err(Error::Graph(format!(
                "density undefined for {} nodes",
                self.n
            )));
        }
        Ok(self.edge_count() as f64 / (self.n as f64 * (self.n as f64).ln()))
    }

    /// Converts raw distances into edge weights `exp(-d) / sigma` and
    /// applies the threshold. Already-normalized graphs are rejected so the
    /// decay cannot be applied twice.
    pub fn normalize(&self, sigma: f64, epsilon: f64, mode: ThresholdMode) -> Result<SensorGraph> {
        if self.normalized {
            return Err(Error::Graph(
                "graph is already normalized; refusing to normalize twice".into(),
            ));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::Graph(format!("sigma {} must be positive", sigma)));
        }
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(Error::Graph(format!(
                "epsilon {} must be positive (infinity keeps all edges)",
                epsilon
            )));
        }
        let mut out = SensorGraph::empty(self.n);
        out.normalized = true;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let d = self.weight(i, j);
                if d == 0.0 {
                    continue;
                }
                let w = (-d).exp() / sigma;
                let keep = match mode {
                    ThresholdMode::KeepBelow => w < epsilon,
                    ThresholdMode::KeepAbove => w >= epsilon,
                };
                if keep {
                    out.set_edge(i, j, w);
                }
            }
        }
        Ok(out)
    }

    /// Induced subgraph on `keep`, with nodes re-indexed densely in the
    /// given order. Returns the new graph and the map from new index to
    /// old index.
    pub fn subgraph(&self, keep: &[usize]) -> Result<(SensorGraph, Vec<usize>)> {
        let mut seen = vec![false; self.n];
        for &v in keep {
            if v >= self.n {
                return Err(Error::Graph(format!(
                    "subgraph node {} out of bounds for {} nodes",
                    v, self.n
                )));
            }
            if seen[v] {
                return Err(Error::Graph(format!("duplicate subgraph node {}", v)));
            }
            seen[v] = true;
        }
        let m = keep.len();
        let mut g = SensorGraph::empty(m);
        g.normalized = self.normalized;
        for a in 0..m {
            for b in (a + 1)..m {
                let w = self.weight(keep[a], keep[b]);
                if w > 0.0 {
                    g.set_edge(a, b, w);
                }
            }
        }
        Ok((g, keep.to_vec()))
    }

    /// Row-stochastic copy of the weight matrix: each nonzero row is
    /// divided by its sum, zero rows stay zero. Used as the aggregation
    /// operator in message passing.
    pub fn row_normalized(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = self.weights.clone();
        for i in 0..n {
            let row = &mut out[i * n..(i + 1) * n];
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                for w in row.iter_mut() {
                    *w /= sum;
                }
            }
        }
        out
    }
}
