//! Contrastive regularization over biconnected components.
//!
//! During training a second, stochastically perturbed view of each window
//! is encoded: some observed readings are zeroed ([`augment_temporal`])
//! and a few extra edges are inserted ([`augment_topology`]). Hidden
//! states from that view are pooled into one prototype per biconnected
//! component ([`compute_prototypes`]). Each virtual node is then pulled
//! towards the prototypes of its own components and pushed away from
//! provably unrelated ones: a component is a valid negative only if it
//! shares no node with any of the anchor's components
//! ([`select_samples`]), which keeps overlapping neighborhoods from being
//! treated as false negatives.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::encoder::SeriesWindow;
use crate::{BccDecomposition, Error, Result, SensorGraph};

/// A perturbed copy of a window plus the cells that were zeroed.
#[derive(Debug, Clone)]
pub struct AugmentedWindow {
    pub window: SeriesWindow,
    /// `(node, step)` positions that were masked, in sampling order.
    pub masked: Vec<(usize, usize)>,
}

fn check_probability(op: &'static str, p: f64) -> Result<()> {
    if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
        return Err(Error::Domain {
            op,
            msg: format!("probability {} outside [0, 1]", p),
        });
    }
    Ok(())
}

/// Zeroes each observed reading independently with probability `p_t`.
/// The input window is untouched; unobserved rows are never sampled.
pub fn augment_temporal(
    window: &SeriesWindow,
    p_t: f64,
    rng: &mut ChaCha8Rng,
) -> Result<AugmentedWindow> {
    check_probability("augment_temporal", p_t)?;
    let p = window.window_len();
    let mut values = window.values().clone();
    let mut masked = Vec::new();
    for node in 0..window.n_nodes() {
        if !window.is_observed(node) {
            continue;
        }
        for step in 0..p {
            if rng.gen_bool(p_t) {
                values.data_mut()[node * p + step] = 0.0;
                masked.push((node, step));
            }
        }
    }
    Ok(AugmentedWindow {
        window: SeriesWindow::new(values, window.observed_mask().to_vec())?,
        masked,
    })
}

/// Inserts each missing edge independently with probability `p_s`, at the
/// mean weight of the existing edges (1.0 on an edgeless graph). The input
/// graph is untouched.
pub fn augment_topology(
    graph: &SensorGraph,
    p_s: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SensorGraph> {
    check_probability("augment_topology", p_s)?;
    let n = graph.n_nodes();
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            let w = graph.weight(i, j);
            if w > 0.0 {
                sum += w;
                count += 1;
            }
        }
    }
    let new_weight = if count > 0 { sum / count as f64 } else { 1.0 };

    let mut weights = graph.weights().to_vec();
    for i in 0..n {
        for j in (i + 1)..n {
            if weights[i * n + j] == 0.0 && rng.gen_bool(p_s) {
                weights[i * n + j] = new_weight;
                weights[j * n + i] = new_weight;
            }
        }
    }
    SensorGraph::from_weights(n, weights, graph.is_normalized())
}

/// Per-component mean hidden states, stacked `n_components x dim`.
pub struct PrototypeSet {
    pub prototypes: Var,
    pub n_components: usize,
}

/// Pools hidden rows into one prototype per biconnected component by
/// averaging the rows of each component's members.
pub fn compute_prototypes(
    tape: &mut Tape,
    hidden: Var,
    bccs: &BccDecomposition,
) -> Result<PrototypeSet> {
    let shape = tape.value(hidden).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::Domain {
            op: "compute_prototypes",
            msg: format!("hidden states must be 2-D, got {:?}", shape),
        });
    }
    let n = shape[0];
    if bccs.n_nodes() != n {
        return Err(Error::Domain {
            op: "compute_prototypes",
            msg: format!(
                "decomposition covers {} nodes but hidden states have {}",
                bccs.n_nodes(),
                n
            ),
        });
    }
    let m = bccs.len();
    let mut selector = Tensor::zeros(vec![m.max(1), n]);
    for (c, comp) in bccs.components().iter().enumerate() {
        let share = 1.0 / comp.len() as f64;
        for &v in comp {
            selector.data_mut()[c * n + v] = share;
        }
    }
    let sel = tape.constant(selector)?;
    let prototypes = tape.matmul(sel, hidden)?;
    Ok(PrototypeSet {
        prototypes,
        n_components: m,
    })
}

/// The same pooling on plain values, for code paths that do not need
/// gradients (edge denoising, inference).
pub fn prototype_values(hidden: &Tensor, bccs: &BccDecomposition) -> Result<Tensor> {
    if hidden.rank() != 2 || bccs.n_nodes() != hidden.shape()[0] {
        return Err(Error::Domain {
            op: "prototype_values",
            msg: format!(
                "hidden shape {:?} does not cover {} nodes",
                hidden.shape(),
                bccs.n_nodes()
            ),
        });
    }
    let d = hidden.shape()[1];
    let m = bccs.len();
    let mut out = Tensor::zeros(vec![m.max(1), d]);
    for (c, comp) in bccs.components().iter().enumerate() {
        let share = 1.0 / comp.len() as f64;
        for &v in comp {
            for k in 0..d {
                out.data_mut()[c * d + k] += share * hidden.data()[v * d + k];
            }
        }
    }
    Ok(out)
}

/// Positive and negative component indices for one anchor node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastAssignment {
    pub anchor: usize,
    /// Components containing the anchor.
    pub positives: Vec<usize>,
    /// Components sharing no node with any positive component.
    pub negatives: Vec<usize>,
}

/// Chooses contrastive samples for `anchor`. Components that overlap a
/// positive component are excluded from the negatives but do not trigger
/// further exclusion themselves (overlap is checked against the anchor's
/// own components only).
pub fn select_samples(anchor: usize, bccs: &BccDecomposition) -> ContrastAssignment {
    let positives = bccs.components_of(anchor).to_vec();
    if positives.is_empty() {
        return ContrastAssignment {
            anchor,
            positives,
            negatives: Vec::new(),
        };
    }
    let mut excluded = vec![false; bccs.len()];
    for &c in &positives {
        for &node in &bccs.components()[c] {
            for &other in bccs.components_of(node) {
                excluded[other] = true;
            }
        }
    }
    let negatives: Vec<usize> = (0..bccs.len()).filter(|&c| !excluded[c]).collect();
    debug_assert!(negatives.iter().all(|&neg| {
        bccs.components()[neg].iter().all(|v| {
            positives
                .iter()
                .all(|&pos| !bccs.components()[pos].contains(v))
        })
    }));
    ContrastAssignment {
        anchor,
        positives,
        negatives,
    }
}

/// Temperature-scaled contrastive loss for one anchor against prototype
/// rows: the mean over positives of `-log(e_pos / (e_pos + sum(e_neg)))`
/// with cosine-similarity logits. Zero negatives make the loss exactly 0.
pub fn info_nce(
    tape: &mut Tape,
    anchor: Var,
    positives: &[Var],
    negatives: &[Var],
    tau: f64,
) -> Result<Var> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Domain {
            op: "info_nce",
            msg: format!("temperature {} must be positive", tau),
        });
    }
    if positives.is_empty() {
        return Err(Error::Domain {
            op: "info_nce",
            msg: "at least one positive is required".into(),
        });
    }
    let logit = |tape: &mut Tape, other: Var| -> Result<Var> {
        let s = tape.cosine(anchor, other)?;
        let scaled = tape.scale(s, 1.0 / tau)?;
        tape.exp(scaled)
    };

    let mut neg_sum: Option<Var> = None;
    for &neg in negatives {
        let e = logit(tape, neg)?;
        neg_sum = Some(match neg_sum {
            Some(acc) => tape.add(acc, e)?,
            None => e,
        });
    }

    let mut total: Option<Var> = None;
    for &pos in positives {
        let e_pos = logit(tape, pos)?;
        let denom = match neg_sum {
            Some(ns) => tape.add(e_pos, ns)?,
            None => e_pos,
        };
        let frac = tape.div(e_pos, denom)?;
        let log = tape.log(frac)?;
        let term = tape.scale(log, -1.0)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    tape.scale(total.unwrap(), 1.0 / positives.len() as f64)
}

/// Outcome of the component-contrast pass over a set of anchors.
pub struct ContrastOutcome {
    pub loss: Var,
    /// Anchors that belonged to at least one component.
    pub anchors_used: usize,
    /// Anchors skipped for lack of a component.
    pub anchors_skipped: usize,
}

/// Mean [`info_nce`] over the anchors that belong to at least one
/// component: each anchor's hidden row is contrasted against prototype
/// rows chosen by [`select_samples`]. With no usable anchor the loss is a
/// constant 0 and `anchors_used` says so.
pub fn contrastive_loss(
    tape: &mut Tape,
    hidden: Var,
    prototypes: &PrototypeSet,
    bccs: &BccDecomposition,
    anchors: &[usize],
    tau: f64,
) -> Result<ContrastOutcome> {
    if bccs.len() != prototypes.n_components {
        return Err(Error::Domain {
            op: "contrastive_loss",
            msg: format!(
                "{} prototypes for {} components",
                prototypes.n_components,
                bccs.len()
            ),
        });
    }
    let mut total: Option<Var> = None;
    let mut used = 0usize;
    for &anchor in anchors {
        let assignment = select_samples(anchor, bccs);
        if assignment.positives.is_empty() {
            continue;
        }
        used += 1;
        let row = tape.slice(hidden, 0, anchor, 1)?;
        let take_rows = |tape: &mut Tape, idx: &[usize]| -> Result<Vec<Var>> {
            idx.iter()
                .map(|&c| tape.slice(prototypes.prototypes, 0, c, 1))
                .collect()
        };
        let pos = take_rows(tape, &assignment.positives)?;
        let neg = take_rows(tape, &assignment.negatives)?;
        let term = info_nce(tape, row, &pos, &neg, tau)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    let loss = match total {
        Some(acc) => tape.scale(acc, 1.0 / used as f64)?,
        None => tape.constant(Tensor::scalar(0.0))?,
    };
    Ok(ContrastOutcome {
        loss,
        anchors_used: used,
        anchors_skipped: anchors.len() - used,
    })
}
