//! The forward model: a style-modulated message-passing encoder.
//!
//! A window of readings (nodes x steps) is lifted per step into a hidden
//! vector, giving each node a time-major hidden row of length
//! `window * hidden_dim`. Rows of nodes the model must reconstruct are
//! zero-filled before the lift, so the only information about them flows
//! in through the graph. Observed neighbors of those nodes additionally
//! get a multiplicative style gate derived from a trend/seasonal
//! decomposition of their own series, which lets the model reweight a
//! neighbor's temporal profile before mixing. One round of message
//! passing then blends each node with its neighborhood: only observed
//! nodes act as message sources, and each row of the adjacency is
//! normalized over those columns alone, so a node's aggregate is a true
//! weighted average of the neighbors that carry readings. A per-step
//! linear decoder maps hidden vectors back to readings.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::{Error, Result, SensorGraph};

/// One window of readings for every node, `n_nodes x window_len`, plus the
/// mask saying which rows are really observed. Unobserved rows may carry
/// ground-truth values (they serve as training targets); the encoder never
/// reads them.
#[derive(Debug, Clone)]
pub struct SeriesWindow {
    values: Tensor,
    observed_mask: Vec<bool>,
}

impl SeriesWindow {
    pub fn new(values: Tensor, observed_mask: Vec<bool>) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::Data(format!(
                "window values must be 2-D, got shape {:?}",
                values.shape()
            )));
        }
        if values.shape()[0] != observed_mask.len() {
            return Err(Error::Data(format!(
                "window has {} rows but the mask covers {} nodes",
                values.shape()[0],
                observed_mask.len()
            )));
        }
        if values.shape()[1] == 0 {
            return Err(Error::Data("window length must be positive".into()));
        }
        if !values.all_finite() {
            return Err(Error::Data("window contains non-finite values".into()));
        }
        Ok(Self {
            values,
            observed_mask,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn window_len(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn observed_mask(&self) -> &[bool] {
        &self.observed_mask
    }

    pub fn is_observed(&self, node: usize) -> bool {
        self.observed_mask[node]
    }

    /// Nodes the encoder must reconstruct, ascending.
    pub fn virtual_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes())
            .filter(|&i| !self.observed_mask[i])
            .collect()
    }

    pub fn observed_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes())
            .filter(|&i| self.observed_mask[i])
            .collect()
    }

    /// Copy of the values with every unobserved row zeroed; this is what
    /// the encoder actually consumes.
    pub fn zero_filled(&self) -> Tensor {
        let p = self.window_len();
        let mut out = self.values.clone();
        for (i, &obs) in self.observed_mask.iter().enumerate() {
            if !obs {
                out.data_mut()[i * p..(i + 1) * p].fill(0.0);
            }
        }
        out
    }
}

/// Splits a series into a trend (centered moving average with edge
/// replication) and the remainder. The kernel must be odd and shorter
/// than the series. `trend + remainder` reconstructs the input up to the
/// final rounding of each subtraction.
pub fn decompose_series(x: &[f64], kernel: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = x.len();
    if kernel == 0 || kernel % 2 == 0 || kernel > p {
        return Err(Error::Domain {
            op: "decompose_series",
            msg: format!(
                "kernel {} must be odd and no longer than the series ({})",
                kernel, p
            ),
        });
    }
    let half = (kernel / 2) as isize;
    let mut trend = Vec::with_capacity(p);
    for t in 0..p as isize {
        let mut acc = 0.0;
        for d in -half..=half {
            let idx = (t + d).clamp(0, p as isize - 1) as usize;
            acc += x[idx];
        }
        trend.push(acc / kernel as f64);
    }
    let remainder = x.iter().zip(&trend).map(|(&v, &t)| v - t).collect();
    Ok((trend, remainder))
}

/// Weights of the encoder. The shapes are fixed by `window` (steps per
/// window), `hidden_dim` (per-step hidden width), and `ma_kernel` (the
/// trend kernel for style gates).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub window: usize,
    pub hidden_dim: usize,
    pub ma_kernel: usize,
    pub lift_weight: Tensor,
    pub lift_bias: Tensor,
    pub trend_map: Tensor,
    pub seasonal_map: Tensor,
    pub self_weight: Tensor,
    pub self_bias: Tensor,
    pub neighbor_weight: Tensor,
    pub neighbor_bias: Tensor,
    pub decoder_weight: Tensor,
    pub decoder_bias: Tensor,
}

/// Tape handles for every tensor in [`EncoderParams`], in the same order.
#[derive(Debug, Clone, Copy)]
pub struct ParamVars {
    pub lift_weight: Var,
    pub lift_bias: Var,
    pub trend_map: Var,
    pub seasonal_map: Var,
    pub self_weight: Var,
    pub self_bias: Var,
    pub neighbor_weight: Var,
    pub neighbor_bias: Var,
    pub decoder_weight: Var,
    pub decoder_bias: Var,
}

impl ParamVars {
    pub fn all(&self) -> [Var; 10] {
        [
            self.lift_weight,
            self.lift_bias,
            self.trend_map,
            self.seasonal_map,
            self.self_weight,
            self.self_bias,
            self.neighbor_weight,
            self.neighbor_bias,
            self.decoder_weight,
            self.decoder_bias,
        ]
    }
}

impl EncoderParams {
    /// Random initialization, uniform with per-tensor scale.
    pub fn init(window: usize, hidden_dim: usize, ma_kernel: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Self::check_dims(window, hidden_dim, ma_kernel)?;
        let (p, phi) = (window, hidden_dim);
        let mut uniform = |shape: Vec<usize>, scale: f64| {
            let n: usize = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
        };
        let p_scale = 1.0 / (p as f64).sqrt();
        let phi_scale = 1.0 / (phi as f64).sqrt();
        Ok(Self {
            window: p,
            hidden_dim: phi,
            ma_kernel,
            lift_weight: uniform(vec![1, phi], 0.5),
            lift_bias: uniform(vec![phi], 0.1),
            trend_map: uniform(vec![p, p], p_scale),
            seasonal_map: uniform(vec![p, p], p_scale),
            self_weight: uniform(vec![phi, phi], phi_scale),
            self_bias: uniform(vec![phi], 0.1),
            neighbor_weight: uniform(vec![phi, phi], phi_scale),
            neighbor_bias: uniform(vec![phi], 0.1),
            decoder_weight: uniform(vec![phi, 1], phi_scale),
            decoder_bias: uniform(vec![1], 0.1),
        })
    }

    fn check_dims(window: usize, hidden_dim: usize, ma_kernel: usize) -> Result<()> {
        if window < 2 || hidden_dim == 0 {
            return Err(Error::Config(format!(
                "window {} and hidden_dim {} must be at least 2 and 1",
                window, hidden_dim
            )));
        }
        if ma_kernel == 0 || ma_kernel % 2 == 0 || ma_kernel >= window {
            return Err(Error::Config(format!(
                "ma_kernel {} must be odd and shorter than the window {}",
                ma_kernel, window
            )));
        }
        Ok(())
    }

    /// Checks every tensor against the declared dimensions.
    pub fn validate(&self) -> Result<()> {
        Self::check_dims(self.window, self.hidden_dim, self.ma_kernel)?;
        let (p, phi) = (self.window, self.hidden_dim);
        for (name, tensor, shape) in [
            ("lift_weight", &self.lift_weight, vec![1, phi]),
            ("lift_bias", &self.lift_bias, vec![phi]),
            ("trend_map", &self.trend_map, vec![p, p]),
            ("seasonal_map", &self.seasonal_map, vec![p, p]),
            ("self_weight", &self.self_weight, vec![phi, phi]),
            ("self_bias", &self.self_bias, vec![phi]),
            ("neighbor_weight", &self.neighbor_weight, vec![phi, phi]),
            ("neighbor_bias", &self.neighbor_bias, vec![phi]),
            ("decoder_weight", &self.decoder_weight, vec![phi, 1]),
            ("decoder_bias", &self.decoder_bias, vec![1]),
        ] {
            if tensor.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "{} has shape {:?}, expected {:?}",
                    name,
                    tensor.shape(),
                    shape
                )));
            }
            if !tensor.all_finite() {
                return Err(Error::Config(format!("{} has non-finite entries", name)));
            }
        }
        Ok(())
    }

    /// Tensor views in the canonical (checkpoint and optimizer) order.
    pub fn named_tensors(&self) -> [(&'static str, &Tensor); 10] {
        [
            ("lift_weight", &self.lift_weight),
            ("lift_bias", &self.lift_bias),
            ("trend_map", &self.trend_map),
            ("seasonal_map", &self.seasonal_map),
            ("self_weight", &self.self_weight),
            ("self_bias", &self.self_bias),
            ("neighbor_weight", &self.neighbor_weight),
            ("neighbor_bias", &self.neighbor_bias),
            ("decoder_weight", &self.decoder_weight),
            ("decoder_bias", &self.decoder_bias),
        ]
    }

    pub fn named_tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 10] {
        [
            ("lift_weight", &mut self.lift_weight),
            ("lift_bias", &mut self.lift_bias),
            ("trend_map", &mut self.trend_map),
            ("seasonal_map", &mut self.seasonal_map),
            ("self_weight", &mut self.self_weight),
            ("self_bias", &mut self.self_bias),
            ("neighbor_weight", &mut self.neighbor_weight),
            ("neighbor_bias", &mut self.neighbor_bias),
            ("decoder_weight", &mut self.decoder_weight),
            ("decoder_bias", &mut self.decoder_bias),
        ]
    }

    /// Registers every tensor as a trainable parameter.
    pub fn bind(&self, tape: &mut Tape) -> Result<ParamVars> {
        self.bind_with(tape, true)
    }

    /// Registers every tensor as a constant; use for inference and
    /// evaluation where gradients are not needed.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Result<ParamVars> {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape, trainable: bool) -> Result<ParamVars> {
        self.validate()?;
        let mut insert = |t: &Tensor| {
            if trainable {
                tape.parameter(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        Ok(ParamVars {
            lift_weight: insert(&self.lift_weight)?,
            lift_bias: insert(&self.lift_bias)?,
            trend_map: insert(&self.trend_map)?,
            seasonal_map: insert(&self.seasonal_map)?,
            self_weight: insert(&self.self_weight)?,
            self_bias: insert(&self.self_bias)?,
            neighbor_weight: insert(&self.neighbor_weight)?,
            neighbor_bias: insert(&self.neighbor_bias)?,
            decoder_weight: insert(&self.decoder_weight)?,
            decoder_bias: insert(&self.decoder_bias)?,
        })
    }
}

/// Per-node multiplicative style gates, each a `window x hidden_dim`
/// tensor with entries in (0, 1).
pub struct StyleSet {
    pub nodes: Vec<usize>,
    pub styles: Vec<Var>,
}

/// The observed 1-hop neighbors of the window's virtual nodes, ascending.
/// These are the nodes that receive style gates.
pub fn style_targets(window: &SeriesWindow, graph: &SensorGraph) -> Vec<usize> {
    let mut set = std::collections::BTreeSet::new();
    for v in window.virtual_nodes() {
        for (j, _) in graph.neighbors(v) {
            if window.is_observed(j) {
                set.insert(j);
            }
        }
    }
    set.into_iter().collect()
}

/// Lifts the zero-filled window into hidden space: each reading becomes a
/// `hidden_dim` vector, laid out time-major per node, giving an
/// `n_nodes x (window * hidden_dim)` matrix.
pub fn embed_inputs(
    tape: &mut Tape,
    window: &SeriesWindow,
    params: &EncoderParams,
    pv: &ParamVars,
) -> Result<Var> {
    let (n, p, phi) = (window.n_nodes(), params.window, params.hidden_dim);
    let x = tape.constant(window.zero_filled())?;
    let flat = tape.reshape(x, vec![n * p, 1])?;
    let lifted = tape.matmul(flat, pv.lift_weight)?;
    let biased = tape.add(lifted, pv.lift_bias)?;
    tape.reshape(biased, vec![n, p * phi])
}

/// Computes style gates for `nodes` from their own (observed) series: a
/// sigmoid over linear maps of the trend and seasonal parts, broadcast
/// across the hidden dimension.
pub fn style_encode(
    tape: &mut Tape,
    window: &SeriesWindow,
    nodes: &[usize],
    params: &EncoderParams,
    pv: &ParamVars,
) -> Result<StyleSet> {
    let (p, phi) = (params.window, params.hidden_dim);
    if nodes.is_empty() {
        return Ok(StyleSet {
            nodes: Vec::new(),
            styles: Vec::new(),
        });
    }
    let k = nodes.len();
    let mut trend_block = Vec::with_capacity(k * p);
    let mut seasonal_block = Vec::with_capacity(k * p);
    for &node in nodes {
        let (trend, seasonal) = decompose_series(window.values().row(node), params.ma_kernel)?;
        trend_block.extend_from_slice(&trend);
        seasonal_block.extend_from_slice(&seasonal);
    }
    let trend = tape.constant(Tensor::matrix(k, p, trend_block)?)?;
    let seasonal = tape.constant(Tensor::matrix(k, p, seasonal_block)?)?;
    let t_part = tape.matmul(trend, pv.trend_map)?;
    let s_part = tape.matmul(seasonal, pv.seasonal_map)?;
    let pre = tape.add(t_part, s_part)?;
    let gates = tape.sigmoid(pre)?;

    let ones_row = tape.constant(Tensor::ones(vec![1, phi]))?;
    let mut styles = Vec::with_capacity(k);
    for idx in 0..k {
        let row = tape.slice(gates, 0, idx, 1)?;
        let col = tape.reshape(row, vec![p, 1])?;
        styles.push(tape.matmul(col, ones_row)?);
    }
    Ok(StyleSet {
        nodes: nodes.to_vec(),
        styles,
    })
}

/// Applies style gates multiplicatively to the hidden rows of their nodes.
/// Errors if a style targets a node that is not an observed 1-hop neighbor
/// of some virtual node.
pub fn style_fuse(
    tape: &mut Tape,
    hidden: Var,
    styles: &StyleSet,
    window: &SeriesWindow,
    graph: &SensorGraph,
    params: &EncoderParams,
) -> Result<Var> {
    let (n, p, phi) = (window.n_nodes(), params.window, params.hidden_dim);
    let allowed = style_targets(window, graph);
    for &node in &styles.nodes {
        if !allowed.contains(&node) {
            return Err(Error::Domain {
                op: "style_fuse",
                msg: format!(
                    "node {} is not an observed neighbor of any virtual node",
                    node
                ),
            });
        }
    }
    if styles.nodes.is_empty() {
        return Ok(hidden);
    }
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let row = tape.slice(hidden, 0, i, 1)?;
        match styles.nodes.iter().position(|&node| node == i) {
            Some(k) => {
                let grid = tape.reshape(row, vec![p, phi])?;
                let gated = tape.mul(grid, styles.styles[k])?;
                rows.push(tape.reshape(gated, vec![1, p * phi])?);
            }
            None => rows.push(row),
        }
    }
    tape.concat(&rows, 0)
}

/// Adjacency restricted to columns of message sources, rows renormalized to
/// sum to one over what remains. Rows with no admissible neighbor stay zero.
fn aggregation_matrix(graph: &SensorGraph, sources: &[bool]) -> Vec<f64> {
    let n = graph.n_nodes();
    let weights = graph.weights();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let row = &mut out[i * n..(i + 1) * n];
        let mut total = 0.0;
        for j in 0..n {
            if sources[j] {
                row[j] = weights[i * n + j];
                total += row[j];
            }
        }
        if total > 0.0 {
            for v in row.iter_mut() {
                *v /= total;
            }
        }
    }
    out
}

/// One round of message passing: aggregate neighbors through the
/// row-normalized adjacency, apply per-step linear maps to the node's own
/// state and the aggregate, and rectify. Only nodes flagged in `sources`
/// emit messages; their columns alone enter the row normalization, so each
/// node averages over the neighbors that carry actual readings instead of
/// diluting them with placeholder rows.
pub fn message_pass(
    tape: &mut Tape,
    hidden: Var,
    graph: &SensorGraph,
    sources: &[bool],
    params: &EncoderParams,
    pv: &ParamVars,
) -> Result<Var> {
    let n = graph.n_nodes();
    if sources.len() != n {
        return Err(Error::Data(format!(
            "source mask covers {} nodes but the graph has {}",
            sources.len(),
            n
        )));
    }
    let (p, phi) = (params.window, params.hidden_dim);
    let adj = tape.constant(Tensor::matrix(n, n, aggregation_matrix(graph, sources))?)?;
    let agg = tape.matmul(adj, hidden)?;

    let own = tape.reshape(hidden, vec![n * p, phi])?;
    let own = tape.matmul(own, pv.self_weight)?;
    let own = tape.add(own, pv.self_bias)?;

    let nb = tape.reshape(agg, vec![n * p, phi])?;
    let nb = tape.matmul(nb, pv.neighbor_weight)?;
    let nb = tape.add(nb, pv.neighbor_bias)?;

    let sum = tape.add(own, nb)?;
    let act = tape.relu(sum)?;
    tape.reshape(act, vec![n, p * phi])
}

/// Maps hidden rows back to readings, one linear map per step.
pub fn decode(
    tape: &mut Tape,
    hidden: Var,
    n: usize,
    params: &EncoderParams,
    pv: &ParamVars,
) -> Result<Var> {
    let (p, phi) = (params.window, params.hidden_dim);
    let flat = tape.reshape(hidden, vec![n * p, phi])?;
    let out = tape.matmul(flat, pv.decoder_weight)?;
    let out = tape.add(out, pv.decoder_bias)?;
    tape.reshape(out, vec![n, p])
}

/// Everything the rest of the model needs from one encoder pass.
pub struct ForwardPass {
    /// Reconstructed readings, `n_nodes x window`.
    pub predictions: Var,
    /// Post-message-passing hidden states, `n_nodes x (window * hidden_dim)`.
    pub hidden: Var,
    /// Pre-message-passing (styled) hidden states; a second pass over a
    /// denoised graph restarts from here.
    pub fused: Var,
}

/// Full encoder pass over one window under one graph.
pub fn forward(
    tape: &mut Tape,
    window: &SeriesWindow,
    graph: &SensorGraph,
    params: &EncoderParams,
    pv: &ParamVars,
) -> Result<ForwardPass> {
    if window.n_nodes() != graph.n_nodes() {
        return Err(Error::Data(format!(
            "window covers {} nodes but the graph has {}",
            window.n_nodes(),
            graph.n_nodes()
        )));
    }
    if window.window_len() != params.window {
        return Err(Error::Data(format!(
            "window length {} does not match the model's {}",
            window.window_len(),
            params.window
        )));
    }
    let embedded = embed_inputs(tape, window, params, pv)?;
    let targets = style_targets(window, graph);
    let styles = style_encode(tape, window, &targets, params, pv)?;
    let fused = style_fuse(tape, embedded, &styles, window, graph, params)?;
    let (predictions, hidden) =
        continue_forward(tape, fused, graph, window.observed_mask(), params, pv)?;
    Ok(ForwardPass {
        predictions,
        hidden,
        fused,
    })
}

/// Message passing plus decode from an existing fused state. Lets a caller
/// re-run the tail of the encoder under a different (e.g. denoised) graph
/// without recomputing embeddings and styles. `sources` marks the nodes
/// whose states may be aggregated by their neighbors, normally the observed
/// nodes of the window that produced `fused`.
pub fn continue_forward(
    tape: &mut Tape,
    fused: Var,
    graph: &SensorGraph,
    sources: &[bool],
    params: &EncoderParams,
    pv: &ParamVars,
) -> Result<(Var, Var)> {
    let hidden = message_pass(tape, fused, graph, sources, params, pv)?;
    let predictions = decode(tape, hidden, graph.n_nodes(), params, pv)?;
    Ok((predictions, hidden))
}
