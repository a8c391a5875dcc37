//! Edge downweighting for dense graphs.
//!
//! Dense sensor graphs tend to connect virtual nodes to neighbors whose
//! dynamics have little in common, and message passing then mixes noise
//! into exactly the rows the model must reconstruct. When the edge density
//! `|E| / (N ln N)` exceeds a threshold, each virtual node scores its
//! incident edges by a blend of prototype-level and node-level cosine
//! similarity and the bottom fraction is reduced to a small weight
//! `omega`. Below the threshold the graph passes through bit-identical.

use crate::autodiff::Tensor;
use crate::contrast::prototype_values;
use crate::{linalg, BccDecomposition, Error, Result, SensorGraph};

/// Settings for [`denoise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiseConfig {
    /// Fraction of each virtual node's edges to downweight, in (0, 1).
    pub beta: f64,
    /// Replacement weight for downweighted edges.
    pub omega: f64,
    /// Density above which denoising activates.
    pub activation_threshold: f64,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            beta: 0.2,
            omega: 0.01,
            activation_threshold: 1.0,
        }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!(
                "denoise beta {} outside (0, 1)",
                self.beta
            )));
        }
        if !(self.omega.is_finite() && self.omega >= 0.0) {
            return Err(Error::Config(format!(
                "denoise omega {} must be non-negative",
                self.omega
            )));
        }
        if !self.activation_threshold.is_finite() {
            return Err(Error::Config("activation threshold must be finite".into()));
        }
        Ok(())
    }
}

/// How much the prototype similarity contributes to an edge score:
/// `1 / density`, clamped into [0, 1]. Sparse graphs (density below 1)
/// lean entirely on prototypes; very dense graphs lean on node states.
pub fn blend_coefficient(density: f64) -> Result<f64> {
    if density.is_nan() || density < 0.0 {
        return Err(Error::Domain {
            op: "blend_coefficient",
            msg: format!("density {} must be non-negative", density),
        });
    }
    Ok((1.0 / density).clamp(0.0, 1.0))
}

/// The component-level representative of one node: the mean of its
/// components' prototype rows, or the node's own hidden row if it belongs
/// to no component.
fn node_prototype(node: usize, hidden: &Tensor, prototypes: &Tensor, bccs: &BccDecomposition) -> Vec<f64> {
    let comps = bccs.components_of(node);
    let d = hidden.shape()[1];
    if comps.is_empty() {
        return hidden.row(node).to_vec();
    }
    let mut out = vec![0.0; d];
    for &c in comps {
        for (o, &v) in out.iter_mut().zip(prototypes.row(c)) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= comps.len() as f64;
    }
    out
}

/// Blended similarity score for the edge `(i, j)`:
/// `alpha * cos(P_i, P_j) + (1 - alpha) * cos(H_i, H_j)` where `P` are
/// node prototypes and `H` hidden rows. `j` must be a current neighbor of
/// `i`.
pub fn edge_similarity(
    graph: &SensorGraph,
    i: usize,
    j: usize,
    hidden: &Tensor,
    prototypes: &Tensor,
    bccs: &BccDecomposition,
    alpha: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) || alpha.is_nan() {
        return Err(Error::Domain {
            op: "edge_similarity",
            msg: format!("blend coefficient {} outside [0, 1]", alpha),
        });
    }
    if i >= graph.n_nodes() || j >= graph.n_nodes() || graph.weight(i, j) == 0.0 {
        return Err(Error::Domain {
            op: "edge_similarity",
            msg: format!("{} is not a neighbor of {}", j, i),
        });
    }
    let p_i = node_prototype(i, hidden, prototypes, bccs);
    let p_j = node_prototype(j, hidden, prototypes, bccs);
    let proto_sim = linalg::cosine(&p_i, &p_j);
    let state_sim = linalg::cosine(hidden.row(i), hidden.row(j));
    Ok(alpha * proto_sim + (1.0 - alpha) * state_sim)
}

/// Result of a denoising pass.
pub struct DenoiseOutcome {
    pub graph: SensorGraph,
    /// Distinct undirected edges that were set to `omega`, sorted.
    pub downweighted: Vec<(usize, usize)>,
    /// Whether the density gate fired; if not, `graph` is a bit-identical
    /// copy of the input.
    pub active: bool,
}

/// Downweights the least-similar fraction of each virtual node's edges.
///
/// For every virtual node with degree `deg`, the `floor(deg * beta)`
/// lowest-scoring incident edges (ties broken towards the lower neighbor
/// index) are symmetrically set to `omega`. All scores are computed
/// against the input graph before any edge changes, so the outcome does
/// not depend on the order virtual nodes are processed in.
pub fn denoise(
    graph: &SensorGraph,
    hidden: &Tensor,
    bccs: &BccDecomposition,
    virtual_nodes: &[usize],
    config: &DenoiseConfig,
    density: f64,
) -> Result<DenoiseOutcome> {
    config.validate()?;
    if hidden.rank() != 2 || hidden.shape()[0] != graph.n_nodes() {
        return Err(Error::Domain {
            op: "denoise",
            msg: format!(
                "hidden shape {:?} does not cover {} nodes",
                hidden.shape(),
                graph.n_nodes()
            ),
        });
    }
    if density.is_nan() {
        return Err(Error::Domain {
            op: "denoise",
            msg: "density is NaN".into(),
        });
    }
    if density <= config.activation_threshold {
        return Ok(DenoiseOutcome {
            graph: graph.clone(),
            downweighted: Vec::new(),
            active: false,
        });
    }

    let prototypes = prototype_values(hidden, bccs)?;
    let alpha = blend_coefficient(density)?;

    let mut selected = std::collections::BTreeSet::new();
    for &v in virtual_nodes {
        if v >= graph.n_nodes() {
            return Err(Error::Domain {
                op: "denoise",
                msg: format!("virtual node {} out of bounds", v),
            });
        }
        let neighbors: Vec<usize> = graph.neighbors(v).map(|(j, _)| j).collect();
        let k = (neighbors.len() as f64 * config.beta).floor() as usize;
        if k == 0 {
            continue;
        }
        let mut scored: Vec<(f64, usize)> = neighbors
            .into_iter()
            .map(|j| {
                edge_similarity(graph, v, j, hidden, &prototypes, bccs, alpha)
                    .map(|gamma| (gamma, j))
            })
            .collect::<Result<_>>()?;
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, j) in scored.iter().take(k) {
            selected.insert((v.min(j), v.max(j)));
        }
    }

    let mut out = graph.clone();
    for &(a, b) in &selected {
        out.set_edge(a, b, config.omega);
    }
    Ok(DenoiseOutcome {
        graph: out,
        downweighted: selected.into_iter().collect(),
        active: true,
    })
}
