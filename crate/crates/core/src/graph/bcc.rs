//! Biconnected components of a thresholded sensor graph.
//!
//! Components are found with an iterative articulation-point search
//! (Hopcroft-Tarjan): one depth-first pass tracking discovery times and
//! low-links, popping an edge stack whenever a subtree cannot reach above
//! its attachment point. Only edges with weight strictly greater than the
//! threshold participate, so the caller controls how tightly "connected"
//! is interpreted.

use crate::{Error, Result, SensorGraph};

/// Decomposition of a graph into biconnected components.
///
/// Each component is the sorted node set of a maximal subgraph that stays
/// connected after removing any single node (a lone edge also counts).
/// Components are sorted by their smallest node, then lexicographically.
/// Isolated nodes belong to no component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BccDecomposition {
    components: Vec<Vec<usize>>,
    membership: Vec<Vec<usize>>,
    articulation: Vec<usize>,
}

impl BccDecomposition {
    pub fn components(&self) -> &[Vec<usize>] {
        &self.components
    }

    /// Indices into [`components`](Self::components) of the components
    /// containing `node`, ascending.
    pub fn components_of(&self, node: usize) -> &[usize] {
        &self.membership[node]
    }

    /// Nodes whose removal would disconnect some component pair; exactly
    /// the nodes belonging to two or more components.
    pub fn articulation_points(&self) -> &[usize] {
        &self.articulation
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn n_nodes(&self) -> usize {
        self.membership.len()
    }
}

struct Frame {
    v: usize,
    parent: Option<usize>,
    next: usize,
}

/// Finds the biconnected components of `graph` restricted to edges with
/// weight strictly greater than `mu`.
pub fn find_bccs(graph: &SensorGraph, mu: f64) -> Result<BccDecomposition> {
    if mu.is_nan() {
        return Err(Error::Graph("component threshold is NaN".into()));
    }
    let n = graph.n_nodes();
    let adjacency: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            graph
                .neighbors(i)
                .filter(|&(_, w)| w > mu)
                .map(|(j, _)| j)
                .collect()
        })
        .collect();

    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut timer = 0usize;
    let mut edge_stack: Vec<(usize, usize)> = Vec::new();
    let mut components: Vec<Vec<usize>> = Vec::new();

    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        let mut stack = vec![Frame {
            v: root,
            parent: None,
            next: 0,
        }];

        while let Some(frame) = stack.last_mut() {
            let v = frame.v;
            if frame.next < adjacency[v].len() {
                let w = adjacency[v][frame.next];
                frame.next += 1;
                if Some(w) == frame.parent {
                    continue;
                }
                if disc[w] == usize::MAX {
                    edge_stack.push((v, w));
                    disc[w] = timer;
                    low[w] = timer;
                    timer += 1;
                    stack.push(Frame {
                        v: w,
                        parent: Some(v),
                        next: 0,
                    });
                } else if disc[w] < disc[v] {
                    edge_stack.push((v, w));
                    low[v] = low[v].min(disc[w]);
                }
            } else {
                stack.pop();
                if let Some(parent_frame) = stack.last_mut() {
                    let p = parent_frame.v;
                    low[p] = low[p].min(low[v]);
                    if low[v] >= disc[p] {
                        // The subtree rooted at v cannot climb above p:
                        // everything on the edge stack down to (p, v) is one
                        // biconnected component.
                        let mut nodes = std::collections::BTreeSet::new();
                        while let Some(&(a, b)) = edge_stack.last() {
                            edge_stack.pop();
                            nodes.insert(a);
                            nodes.insert(b);
                            if (a, b) == (p, v) {
                                break;
                            }
                        }
                        components.push(nodes.into_iter().collect());
                    }
                }
            }
        }
        debug_assert!(edge_stack.is_empty());
    }

    components.sort();
    let mut membership = vec![Vec::new(); n];
    for (ci, comp) in components.iter().enumerate() {
        for &v in comp {
            membership[v].push(ci);
        }
    }
    let articulation = (0..n).filter(|&v| membership[v].len() >= 2).collect();
    Ok(BccDecomposition {
        components,
        membership,
        articulation,
    })
}
