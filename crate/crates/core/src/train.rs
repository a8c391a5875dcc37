//! Training loop, joint objective, checkpointing, and inference.
//!
//! Training follows a decrement protocol: every optimizer step draws a
//! fresh pseudo-virtual mask over the working (all-observed) graph, zeroes
//! those inputs, and reconstructs them from the remaining nodes. The
//! trained model is inductive: at inference the graph may contain nodes
//! that never existed during training.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::contrast::{augment_temporal, augment_topology, compute_prototypes, contrastive_loss};
use crate::data::{extract_window, sample_decrement_mask, MaskSpec, NormStats};
use crate::denoise::{denoise, DenoiseConfig};
use crate::encoder::{continue_forward, forward, EncoderParams, SeriesWindow};
use crate::graph::find_bccs;
use crate::{BccDecomposition, Error, Result, SensorGraph};

// Independent RNG streams derived from one seed.
const STREAM_INIT: u64 = 10;
const STREAM_MASK: u64 = 11;
const STREAM_AUGMENT: u64 = 12;
const STREAM_SHUFFLE: u64 = 13;
const STREAM_VAL_MASK: u64 = 14;

/// Validation masks pooled into the early-stopping score. One draw watches
/// too few nodes to rank checkpoints reliably.
const VAL_MASK_DRAWS: usize = 3;

/// Every knob of one training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Weight of the contrastive term in the joint loss.
    pub eta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Window length in steps.
    pub window: usize,
    /// InfoNCE temperature.
    pub tau: f64,
    /// Edge-weight threshold when forming biconnected components.
    pub mu: f64,
    /// Fraction of each virtual node's edges the denoiser may downweight.
    pub beta: f64,
    /// Replacement weight for downweighted edges.
    pub omega: f64,
    /// Per-cell probability of masking an observed reading in the
    /// temporal augmentation.
    pub p_t: f64,
    /// Per-pair probability of inserting a missing edge in the topology
    /// augmentation.
    pub p_s: f64,
    pub seed: u64,
    /// Moving-average kernel of the trend extraction; odd, below window.
    pub ma_kernel: usize,
    pub hidden_dim: usize,
    /// Observed-to-virtual ratio for decrement masks, e.g. (3, 1).
    pub ratio: (u32, u32),
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Graph denoising between the two encoder passes.
    pub denoise_enabled: bool,
    /// Builds the contrastive branch even when `eta` is zero. Exists to
    /// verify that an inactive branch does not alter the parameter
    /// trajectory; costs a full extra forward pass per window.
    pub contrast_when_inactive: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 8,
            window: 24,
            tau: 0.5,
            mu: 0.3,
            beta: 0.2,
            omega: 0.01,
            p_t: 0.2,
            p_s: 0.003,
            seed: 0,
            ma_kernel: 5,
            hidden_dim: 16,
            ratio: (3, 1),
            patience: 10,
            denoise_enabled: true,
            contrast_when_inactive: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::Config(format!("eta {} must be non-negative", self.eta)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config(
                "epochs, batch_size, and patience must be positive".into(),
            ));
        }
        if self.window < 2 {
            return Err(Error::Config(format!(
                "window {} must be at least 2",
                self.window
            )));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config("tau must be positive".into()));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::Config("mu must be non-negative".into()));
        }
        for (name, p) in [("p_t", self.p_t), ("p_s", self.p_s)] {
            if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
                return Err(Error::Config(format!("{} {} outside [0, 1]", name, p)));
            }
        }
        if self.ma_kernel % 2 == 0 || self.ma_kernel >= self.window {
            return Err(Error::Config(format!(
                "ma_kernel {} must be odd and below the window {}",
                self.ma_kernel, self.window
            )));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be positive".into()));
        }
        if self.ratio.0 == 0 || self.ratio.1 == 0 {
            return Err(Error::Config(format!(
                "ratio {}:{} must have positive parts",
                self.ratio.0, self.ratio.1
            )));
        }
        self.denoise_config().validate()
    }

    fn denoise_config(&self) -> DenoiseConfig {
        DenoiseConfig {
            beta: self.beta,
            omega: self.omega,
            ..DenoiseConfig::default()
        }
    }
}

/// Frozen outcome of a training run: parameters plus everything needed to
/// reproduce its input normalization.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: EncoderParams,
    pub stats: NormStats,
    pub config: TrainConfig,
}

/// The reconstruction-plus-contrast objective of one window:
/// the squared error averaged over the virtual cells, plus `eta` times
/// the contrastive term when one is supplied and `eta` is nonzero.
pub fn joint_loss(
    tape: &mut Tape,
    predictions: Var,
    window: &SeriesWindow,
    contrast: Option<Var>,
    eta: f64,
) -> Result<Var> {
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(Error::Domain {
            op: "joint_loss",
            msg: format!("eta {} must be non-negative", eta),
        });
    }
    let virtual_nodes = window.virtual_nodes();
    if virtual_nodes.is_empty() {
        return Err(Error::Domain {
            op: "joint_loss",
            msg: "window has no virtual nodes to score".into(),
        });
    }
    let p = window.window_len();
    let targets = tape.constant(window.values().clone())?;
    let diff = tape.sub(predictions, targets)?;
    let mut rows = Vec::with_capacity(virtual_nodes.len());
    for &v in &virtual_nodes {
        rows.push(tape.slice(diff, 0, v, 1)?);
    }
    let stacked = if rows.len() == 1 {
        rows[0]
    } else {
        tape.concat(&rows, 0)?
    };
    let squared = tape.mul(stacked, stacked)?;
    let total = tape.sum_all(squared)?;
    let mse = tape.scale(total, 1.0 / (virtual_nodes.len() * p) as f64)?;
    match contrast {
        Some(l_rs) if eta != 0.0 => {
            let weighted = tape.scale(l_rs, eta)?;
            tape.add(mse, weighted)
        }
        _ => Ok(mse),
    }
}

/// Adaptive moment optimizer over the canonical parameter order.
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(lr: f64, params: &EncoderParams) -> Self {
        let sizes: Vec<usize> = params.named_tensors().iter().map(|(_, t)| t.len()).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    fn update(&mut self, params: &mut EncoderParams, vars: &[Var; 10], grads: &Gradients) -> Result<()> {
        self.t += 1;
        let bias1 = 1.0 - self.beta1.powi(self.t as i32);
        let bias2 = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, (name, tensor)) in params.named_tensors_mut().into_iter().enumerate() {
            let grad = grads.get(vars[idx]).ok_or_else(|| Error::Domain {
                op: "optimizer",
                msg: format!("missing gradient for {}", name),
            })?;
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for (i, (&g, x)) in grad.data().iter().zip(tensor.data_mut()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

struct WorkingGraph<'a> {
    graph: &'a SensorGraph,
    bccs: BccDecomposition,
    density: f64,
}

/// One optimizer step over a batch of window offsets under one mask.
/// Returns the batch loss before the update.
fn run_step(
    params: &mut EncoderParams,
    adam: &mut Adam,
    train_data: &Tensor,
    batch: &[usize],
    mask: &MaskSpec,
    working: &WorkingGraph,
    config: &TrainConfig,
    aug_rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut tape = Tape::new();
    let pv = params.bind(&mut tape)?;
    let vars = pv.all();
    let build_contrast = config.eta != 0.0 || config.contrast_when_inactive;
    let aug_graph = if build_contrast {
        Some(augment_topology(working.graph, config.p_s, aug_rng)?)
    } else {
        None
    };
    let flags = mask.observed_flags();
    let denoise_config = config.denoise_config();

    let mut losses = Vec::with_capacity(batch.len());
    for &start in batch {
        let window = extract_window(train_data, start, config.window, &flags)?;
        let pass = forward(&mut tape, &window, working.graph, params, &pv)?;
        let (predictions, hidden) = if config.denoise_enabled
            && working.density > denoise_config.activation_threshold
        {
            let states = tape.value(pass.hidden).clone();
            let cleaned = denoise(
                working.graph,
                &states,
                &working.bccs,
                mask.virtual_nodes(),
                &denoise_config,
                working.density,
            )?;
            continue_forward(
                &mut tape,
                pass.fused,
                &cleaned.graph,
                window.observed_mask(),
                params,
                &pv,
            )?
        } else {
            (pass.predictions, pass.hidden)
        };
        let contrast = if build_contrast {
            let augmented = augment_temporal(&window, config.p_t, aug_rng)?;
            let aug_pass = forward(
                &mut tape,
                &augmented.window,
                aug_graph.as_ref().unwrap(),
                params,
                &pv,
            )?;
            let prototypes = compute_prototypes(&mut tape, aug_pass.hidden, &working.bccs)?;
            let outcome = contrastive_loss(
                &mut tape,
                hidden,
                &prototypes,
                &working.bccs,
                mask.virtual_nodes(),
                config.tau,
            )?;
            Some(outcome.loss)
        } else {
            None
        };
        losses.push(joint_loss(&mut tape, predictions, &window, contrast, config.eta)?);
    }

    let mut total = losses[0];
    for &l in &losses[1..] {
        total = tape.add(total, l)?;
    }
    let batch_loss = tape.scale(total, 1.0 / losses.len() as f64)?;
    let loss_value = tape.value(batch_loss).item()?;
    let grads = tape.backward(batch_loss)?;
    adam.update(params, &vars, &grads)?;
    Ok(loss_value)
}

/// Mean absolute error over virtual cells of the given windows, in
/// normalized units, under frozen parameters.
fn validation_mae(
    params: &EncoderParams,
    data: &Tensor,
    starts: &[usize],
    masks: &[MaskSpec],
    graph: &SensorGraph,
    bccs: &BccDecomposition,
    density: f64,
    config: &TrainConfig,
) -> Result<f64> {
    let mut abs_sum = 0.0;
    let mut count = 0usize;
    for mask in masks {
        let flags = mask.observed_flags();
        for &start in starts {
            let window = extract_window(data, start, config.window, &flags)?;
            let predicted = predict_window(params, &window, graph, bccs, density, config)?;
            for (row, &v) in mask.virtual_nodes().iter().enumerate() {
                for t in 0..config.window {
                    abs_sum += (predicted.row(row)[t] - window.values().row(v)[t]).abs();
                    count += 1;
                }
            }
        }
    }
    Ok(abs_sum / count as f64)
}

/// Frozen forward pass over one window; returns the virtual rows of the
/// prediction in ascending virtual-node order, still normalized. Input
/// values at virtual rows are ignored entirely.
fn predict_window(
    params: &EncoderParams,
    window: &SeriesWindow,
    graph: &SensorGraph,
    bccs: &BccDecomposition,
    density: f64,
    config: &TrainConfig,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let pv = params.bind_frozen(&mut tape)?;
    let pass = forward(&mut tape, window, graph, params, &pv)?;
    let denoise_config = config.denoise_config();
    let predictions = if config.denoise_enabled && density > denoise_config.activation_threshold {
        let states = tape.value(pass.hidden).clone();
        let cleaned = denoise(
            graph,
            &states,
            bccs,
            &window.virtual_nodes(),
            &denoise_config,
            density,
        )?;
        continue_forward(
            &mut tape,
            pass.fused,
            &cleaned.graph,
            window.observed_mask(),
            params,
            &pv,
        )?
        .0
    } else {
        pass.predictions
    };
    let values = tape.value(predictions);
    let virtual_nodes = window.virtual_nodes();
    let p = config.window;
    let mut out = Vec::with_capacity(virtual_nodes.len() * p);
    for &v in &virtual_nodes {
        out.extend_from_slice(values.row(v));
    }
    Tensor::matrix(virtual_nodes.len(), p, out)
}

fn window_starts(rows: usize, window: usize) -> Vec<usize> {
    if rows < window {
        return Vec::new();
    }
    (0..=rows - window).step_by(window).collect()
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains on normalized, all-observed readings over their working graph.
///
/// `train_data` and `val_data` are time-major matrices whose columns all
/// correspond to real sensors; pseudo-virtual masks are drawn among them
/// every step. Early stopping watches validation MAE pooled over a fixed
/// set of masks and restores the best parameters seen.
///
/// `gate_density` drives the denoise activation gate and the similarity
/// blend. It is a property of the network the model will serve, so callers
/// evaluating on a larger graph should pass that graph's density; training
/// and inference then agree on whether the second encoding pass runs.
pub fn train(
    train_data: &Tensor,
    val_data: &Tensor,
    graph: &SensorGraph,
    gate_density: f64,
    stats: NormStats,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    if !(gate_density.is_finite() && gate_density > 0.0) {
        return Err(Error::Config(format!(
            "gate density {} must be positive and finite",
            gate_density
        )));
    }
    if stats.std <= 0.0 {
        return Err(Error::Config("normalization std must be positive".into()));
    }
    let n = graph.n_nodes();
    for (name, data) in [("training", train_data), ("validation", val_data)] {
        if data.rank() != 2 || data.shape()[1] != n {
            return Err(Error::Data(format!(
                "{} data shape {:?} does not match the {}-node graph",
                name,
                data.shape(),
                n
            )));
        }
    }
    let starts = window_starts(train_data.shape()[0], config.window);
    if starts.is_empty() {
        return Err(Error::Data(format!(
            "training split has {} rows, below one {}-step window",
            train_data.shape()[0],
            config.window
        )));
    }

    let working = WorkingGraph {
        graph,
        bccs: find_bccs(graph, config.mu)?,
        density: gate_density,
    };

    let mut init_rng = stream_rng(config.seed, STREAM_INIT);
    let mut mask_rng = stream_rng(config.seed, STREAM_MASK);
    let mut aug_rng = stream_rng(config.seed, STREAM_AUGMENT);
    let mut shuffle_rng = stream_rng(config.seed, STREAM_SHUFFLE);
    let mut val_rng = stream_rng(config.seed, STREAM_VAL_MASK);

    let mut params =
        EncoderParams::init(config.window, config.hidden_dim, config.ma_kernel, &mut init_rng)?;
    let mut adam = Adam::new(config.learning_rate, &params);

    let val_starts = window_starts(val_data.shape()[0], config.window);
    let val_masks: Vec<MaskSpec> = (0..VAL_MASK_DRAWS)
        .map(|_| sample_decrement_mask(n, config.ratio, &mut val_rng))
        .collect::<Result<_>>()?;

    let mut best_params = params.clone();
    let mut best_mae = f64::INFINITY;
    let mut stale_epochs = 0usize;
    let mut order = starts;
    let mut step_index = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(config.batch_size) {
            step_index += 1;
            let mask = sample_decrement_mask(n, config.ratio, &mut mask_rng)?;
            run_step(
                &mut params,
                &mut adam,
                train_data,
                batch,
                &mask,
                &working,
                config,
                &mut aug_rng,
            )
            .map_err(|e| match e {
                Error::NonFinite { .. } | Error::Domain { .. } => Error::Divergence {
                    epoch,
                    step: step_index,
                    msg: e.to_string(),
                },
                other => other,
            })?;
        }

        if val_starts.is_empty() {
            best_params = params.clone();
            continue;
        }
        let mae = validation_mae(
            &params,
            val_data,
            &val_starts,
            &val_masks,
            graph,
            &working.bccs,
            working.density,
            config,
        )?;
        if mae < best_mae {
            best_mae = mae;
            best_params = params.clone();
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= config.patience {
                break;
            }
        }
    }

    Ok(TrainedModel {
        params: best_params,
        stats,
        config: *config,
    })
}

/// Inductive inference: reconstructs the virtual rows of a raw-valued
/// window over the full graph. Values at virtual rows of the input are
/// never read. Returns de-normalized predictions, one row per virtual
/// node in ascending order.
pub fn infer(
    window: &SeriesWindow,
    graph: &SensorGraph,
    model: &TrainedModel,
) -> Result<Tensor> {
    let config = &model.config;
    if window.n_nodes() != graph.n_nodes() {
        return Err(Error::Data(format!(
            "window covers {} nodes but the graph has {}",
            window.n_nodes(),
            graph.n_nodes()
        )));
    }
    if window.window_len() != config.window {
        return Err(Error::Data(format!(
            "window length {} does not match the model's {}",
            window.window_len(),
            config.window
        )));
    }
    let p = config.window;
    let mut normalized = vec![0.0; window.n_nodes() * p];
    for node in 0..window.n_nodes() {
        if window.is_observed(node) {
            for t in 0..p {
                normalized[node * p + t] = model.stats.normalize(window.values().row(node)[t]);
            }
        }
    }
    let normalized_window = SeriesWindow::new(
        Tensor::matrix(window.n_nodes(), p, normalized)?,
        window.observed_mask().to_vec(),
    )?;

    let bccs = find_bccs(graph, config.mu)?;
    let density = graph.density()?;
    let predicted = predict_window(&model.params, &normalized_window, graph, &bccs, density, config)?;
    let data = predicted.data().iter().map(|&x| model.stats.denormalize(x)).collect();
    Tensor::new(predicted.shape().to_vec(), data)
}

const CHECKPOINT_HEADER: &str = "krige-checkpoint v1";

fn push_f64(out: &mut String, key: &str, value: f64) {
    writeln!(out, "{} {:016x}", key, value.to_bits()).unwrap();
}

/// Writes a bit-exact text snapshot of a trained model.
pub fn save_checkpoint(model: &TrainedModel, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{}", CHECKPOINT_HEADER).unwrap();
    push_f64(&mut out, "stats mean", model.stats.mean);
    push_f64(&mut out, "stats std", model.stats.std);
    let c = &model.config;
    push_f64(&mut out, "config eta", c.eta);
    push_f64(&mut out, "config learning_rate", c.learning_rate);
    writeln!(out, "config epochs {}", c.epochs).unwrap();
    writeln!(out, "config batch_size {}", c.batch_size).unwrap();
    writeln!(out, "config window {}", c.window).unwrap();
    push_f64(&mut out, "config tau", c.tau);
    push_f64(&mut out, "config mu", c.mu);
    push_f64(&mut out, "config beta", c.beta);
    push_f64(&mut out, "config omega", c.omega);
    push_f64(&mut out, "config p_t", c.p_t);
    push_f64(&mut out, "config p_s", c.p_s);
    writeln!(out, "config seed {}", c.seed).unwrap();
    writeln!(out, "config ma_kernel {}", c.ma_kernel).unwrap();
    writeln!(out, "config hidden_dim {}", c.hidden_dim).unwrap();
    writeln!(out, "config ratio {}:{}", c.ratio.0, c.ratio.1).unwrap();
    writeln!(out, "config patience {}", c.patience).unwrap();
    writeln!(out, "config denoise_enabled {}", c.denoise_enabled).unwrap();
    writeln!(out, "config contrast_when_inactive {}", c.contrast_when_inactive).unwrap();
    for (name, tensor) in model.params.named_tensors() {
        write!(out, "tensor {} {}", name, tensor.rank()).unwrap();
        for &d in tensor.shape() {
            write!(out, " {}", d).unwrap();
        }
        out.push('\n');
        let words: Vec<String> = tensor
            .data()
            .iter()
            .map(|x| format!("{:016x}", x.to_bits()))
            .collect();
        writeln!(out, "{}", words.join(" ")).unwrap();
    }
    writeln!(out, "end").unwrap();
    std::fs::write(path, out)?;
    Ok(())
}

fn checkpoint_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn parse_bits(s: &str, key: &str) -> Result<f64> {
    let bits = u64::from_str_radix(s, 16)
        .map_err(|_| checkpoint_err(format!("bad float bits for {}: {}", key, s)))?;
    Ok(f64::from_bits(bits))
}

fn parse_int<T: std::str::FromStr>(s: &str, key: &str) -> Result<T> {
    s.parse()
        .map_err(|_| checkpoint_err(format!("bad integer for {}: {}", key, s)))
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<TrainedModel> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(CHECKPOINT_HEADER) {
        return Err(checkpoint_err("missing or unsupported checkpoint header"));
    }

    let mut scalars: BTreeMap<String, String> = BTreeMap::new();
    let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut saw_end = false;
    while let Some(line) = lines.next() {
        if line == "end" {
            saw_end = true;
            break;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["stats" | "config", key, value] => {
                let prefix = fields[0];
                scalars.insert(format!("{} {}", prefix, key), value.to_string());
            }
            ["tensor", name, rank, dims @ ..] => {
                let rank: usize = parse_int(rank, "tensor rank")?;
                if dims.len() != rank {
                    return Err(checkpoint_err(format!(
                        "tensor {} declares rank {} but {} dims",
                        name,
                        rank,
                        dims.len()
                    )));
                }
                let shape: Vec<usize> = dims
                    .iter()
                    .map(|d| parse_int(d, "tensor dim"))
                    .collect::<Result<_>>()?;
                let data_line = lines
                    .next()
                    .ok_or_else(|| checkpoint_err(format!("tensor {} has no data line", name)))?;
                let data: Vec<f64> = data_line
                    .split_whitespace()
                    .map(|w| parse_bits(w, name))
                    .collect::<Result<_>>()?;
                tensors.insert(name.to_string(), Tensor::new(shape, data)?);
            }
            _ => return Err(checkpoint_err(format!("unrecognized line: {}", line))),
        }
    }
    if !saw_end {
        return Err(checkpoint_err("checkpoint truncated before end marker"));
    }

    let mut take = |key: &str| -> Result<String> {
        scalars
            .remove(key)
            .ok_or_else(|| checkpoint_err(format!("missing field {}", key)))
    };
    let stats = NormStats {
        mean: parse_bits(&take("stats mean")?, "stats mean")?,
        std: parse_bits(&take("stats std")?, "stats std")?,
    };
    let ratio_text = take("config ratio")?;
    let ratio = ratio_text
        .split_once(':')
        .ok_or_else(|| checkpoint_err(format!("bad ratio {}", ratio_text)))?;
    let config = TrainConfig {
        eta: parse_bits(&take("config eta")?, "eta")?,
        learning_rate: parse_bits(&take("config learning_rate")?, "learning_rate")?,
        epochs: parse_int(&take("config epochs")?, "epochs")?,
        batch_size: parse_int(&take("config batch_size")?, "batch_size")?,
        window: parse_int(&take("config window")?, "window")?,
        tau: parse_bits(&take("config tau")?, "tau")?,
        mu: parse_bits(&take("config mu")?, "mu")?,
        beta: parse_bits(&take("config beta")?, "beta")?,
        omega: parse_bits(&take("config omega")?, "omega")?,
        p_t: parse_bits(&take("config p_t")?, "p_t")?,
        p_s: parse_bits(&take("config p_s")?, "p_s")?,
        seed: parse_int(&take("config seed")?, "seed")?,
        ma_kernel: parse_int(&take("config ma_kernel")?, "ma_kernel")?,
        hidden_dim: parse_int(&take("config hidden_dim")?, "hidden_dim")?,
        ratio: (
            parse_int(ratio.0, "ratio")?,
            parse_int(ratio.1, "ratio")?,
        ),
        patience: parse_int(&take("config patience")?, "patience")?,
        denoise_enabled: parse_int::<bool>(&take("config denoise_enabled")?, "denoise_enabled")?,
        contrast_when_inactive: parse_int::<bool>(
            &take("config contrast_when_inactive")?,
            "contrast_when_inactive",
        )?,
    };
    if let Some(key) = scalars.keys().next() {
        return Err(checkpoint_err(format!("unknown field {}", key)));
    }

    let mut params = EncoderParams::init(
        config.window,
        config.hidden_dim,
        config.ma_kernel,
        &mut stream_rng(0, 0),
    )?;
    for (name, tensor) in params.named_tensors_mut() {
        let loaded = tensors
            .remove(name)
            .ok_or_else(|| checkpoint_err(format!("missing tensor {}", name)))?;
        if loaded.shape() != tensor.shape() {
            return Err(checkpoint_err(format!(
                "tensor {} has shape {:?}, expected {:?}",
                name,
                loaded.shape(),
                tensor.shape()
            )));
        }
        *tensor = loaded;
    }
    if let Some(name) = tensors.keys().next() {
        return Err(checkpoint_err(format!("unexpected tensor {}", name)));
    }
    let model = TrainedModel {
        params,
        stats,
        config,
    };
    model.params.validate()?;
    Ok(model)
}
