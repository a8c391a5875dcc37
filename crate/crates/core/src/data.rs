//! Datasets, masking, splits, baselines, and evaluation metrics.
//!
//! Readings are kept time-major: a `T x N` matrix whose row `t` holds all
//! node values at step `t`. Model-facing windows transpose this into the
//! node-major `N x p` layout of [`SeriesWindow`].

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Tensor;
use crate::encoder::SeriesWindow;
use crate::{Error, Result, SensorGraph, ThresholdMode};

/// Which nodes of a working graph are treated as virtual versus observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSpec {
    virtual_nodes: Vec<usize>,
    observed_nodes: Vec<usize>,
}

impl MaskSpec {
    /// Splits `0..n_nodes` into the given virtual nodes and the observed
    /// remainder.
    pub fn new(n_nodes: usize, virtual_nodes: &[usize]) -> Result<Self> {
        let set: BTreeSet<usize> = virtual_nodes.iter().copied().collect();
        if set.len() != virtual_nodes.len() {
            return Err(Error::Data("duplicate virtual node in mask".into()));
        }
        if let Some(&v) = set.iter().next_back() {
            if v >= n_nodes {
                return Err(Error::Data(format!(
                    "virtual node {} out of bounds for {} nodes",
                    v, n_nodes
                )));
            }
        }
        if set.len() == n_nodes {
            return Err(Error::Data("mask leaves no observed nodes".into()));
        }
        let observed = (0..n_nodes).filter(|i| !set.contains(i)).collect();
        Ok(Self {
            virtual_nodes: set.into_iter().collect(),
            observed_nodes: observed,
        })
    }

    pub fn virtual_nodes(&self) -> &[usize] {
        &self.virtual_nodes
    }

    pub fn observed_nodes(&self) -> &[usize] {
        &self.observed_nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.virtual_nodes.len() + self.observed_nodes.len()
    }

    pub fn n_virtual(&self) -> usize {
        self.virtual_nodes.len()
    }

    pub fn is_virtual(&self, node: usize) -> bool {
        self.virtual_nodes.binary_search(&node).is_ok()
    }

    /// Per-node observed flags in the layout [`SeriesWindow`] expects.
    pub fn observed_flags(&self) -> Vec<bool> {
        let mut flags = vec![true; self.n_nodes()];
        for &v in &self.virtual_nodes {
            flags[v] = false;
        }
        flags
    }
}

/// Draws a fresh pseudo-virtual mask over `n_nodes` working nodes.
///
/// For an observed-to-virtual ratio `o:v` the number of virtual nodes is
/// `floor(n_nodes * v / (o + v))`, chosen uniformly without replacement.
pub fn sample_decrement_mask(
    n_nodes: usize,
    ratio: (u32, u32),
    rng: &mut impl Rng,
) -> Result<MaskSpec> {
    let (o, v) = ratio;
    if o == 0 || v == 0 {
        return Err(Error::Config(format!(
            "mask ratio {}:{} must have positive parts",
            o, v
        )));
    }
    let total = (o + v) as usize;
    if n_nodes < total {
        return Err(Error::Data(format!(
            "{} nodes cannot be split at ratio {}:{}",
            n_nodes, o, v
        )));
    }
    let n_virtual = n_nodes * v as usize / total;
    let picked = rand::seq::index::sample(rng, n_nodes, n_virtual).into_vec();
    MaskSpec::new(n_nodes, &picked)
}

/// A named panel of sensor readings over a graph.
#[derive(Debug, Clone)]
pub struct Dataset {
    name: String,
    readings: Tensor,
    graph: SensorGraph,
}

impl Dataset {
    pub fn new(name: impl Into<String>, readings: Tensor, graph: SensorGraph) -> Result<Self> {
        if readings.rank() != 2 {
            return Err(Error::Data(format!(
                "readings must be a T x N matrix, got shape {:?}",
                readings.shape()
            )));
        }
        if readings.shape()[1] != graph.n_nodes() {
            return Err(Error::Data(format!(
                "readings have {} columns but the graph has {} nodes",
                readings.shape()[1],
                graph.n_nodes()
            )));
        }
        if !readings.all_finite() {
            return Err(Error::Data("readings contain non-finite values".into()));
        }
        Ok(Self {
            name: name.into(),
            readings,
            graph,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Time-major readings, shape `T x N`.
    pub fn readings(&self) -> &Tensor {
        &self.readings
    }

    pub fn graph(&self) -> &SensorGraph {
        &self.graph
    }

    pub fn n_steps(&self) -> usize {
        self.readings.shape()[0]
    }

    pub fn n_nodes(&self) -> usize {
        self.readings.shape()[1]
    }
}

/// The generating process behind a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticProcess {
    /// Heat diffusion over a random geometric graph with smooth sinusoidal
    /// forcing fields.
    Diffusion,
    /// Four node-anchored seasonal sources mixed by distance.
    SeasonalField,
}

/// Knobs for [`generate_synthetic_with`]. The plain [`generate_synthetic`]
/// front end uses these defaults.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticOptions {
    pub n_nodes: usize,
    pub n_steps: usize,
    pub process: SyntheticProcess,
    pub seed: u64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise_std: f64,
    /// Geometric-graph connection radius on the unit square.
    pub radius: f64,
    /// Euclidean distances are divided by this before the exponential
    /// weighting, spreading edge weights over a useful range.
    pub distance_scale: f64,
    /// Diffusion rate toward the neighbor average.
    pub kappa: f64,
    /// Pull strength toward the per-node forcing signal.
    pub coupling: f64,
}

impl SyntheticOptions {
    pub fn new(n_nodes: usize, n_steps: usize, process: SyntheticProcess, seed: u64) -> Self {
        Self {
            n_nodes,
            n_steps,
            process,
            seed,
            noise_std: 0.05,
            radius: 0.35,
            distance_scale: 0.08,
            kappa: 0.05,
            coupling: 0.08,
        }
    }
}

/// Generates a synthetic dataset with default process parameters.
pub fn generate_synthetic(
    n_nodes: usize,
    n_steps: usize,
    process: SyntheticProcess,
    seed: u64,
) -> Result<Dataset> {
    generate_synthetic_with(&SyntheticOptions::new(n_nodes, n_steps, process, seed))
        .map(|(dataset, _)| dataset)
}

/// Generates a synthetic dataset, also returning the node positions the
/// geometric graph was built from.
pub fn generate_synthetic_with(options: &SyntheticOptions) -> Result<(Dataset, Vec<(f64, f64)>)> {
    if options.n_nodes < 8 {
        return Err(Error::Config(format!(
            "synthetic datasets need at least 8 nodes, got {}",
            options.n_nodes
        )));
    }
    if options.n_steps < 72 {
        return Err(Error::Config(format!(
            "synthetic datasets need at least 72 steps, got {}",
            options.n_steps
        )));
    }
    if !(options.noise_std.is_finite() && options.noise_std >= 0.0) {
        return Err(Error::Config("noise_std must be non-negative".into()));
    }
    if !(options.radius > 0.0 && options.distance_scale > 0.0) {
        return Err(Error::Config("radius and distance_scale must be positive".into()));
    }

    let mut pos_rng = ChaCha8Rng::seed_from_u64(options.seed);
    pos_rng.set_stream(0);
    let positions: Vec<(f64, f64)> = (0..options.n_nodes)
        .map(|_| (pos_rng.gen::<f64>(), pos_rng.gen::<f64>()))
        .collect();

    let mut links = Vec::new();
    for i in 0..options.n_nodes {
        for j in (i + 1)..options.n_nodes {
            let dx = positions[i].0 - positions[j].0;
            let dy = positions[i].1 - positions[j].1;
            let dist = (dx * dx + dy * dy).sqrt();
            if dist <= options.radius {
                links.push((i, j, dist / options.distance_scale));
            }
        }
    }
    let graph = SensorGraph::from_links(options.n_nodes, &links)?
        .normalize(1.0, f64::INFINITY, ThresholdMode::KeepBelow)?;

    let mut noise_rng = ChaCha8Rng::seed_from_u64(options.seed);
    noise_rng.set_stream(1);
    let readings = match options.process {
        SyntheticProcess::Diffusion => {
            simulate_diffusion(options, &graph, &positions, &mut noise_rng)
        }
        SyntheticProcess::SeasonalField => {
            simulate_seasonal_field(options, &positions, &mut noise_rng)
        }
    }?;

    let name = match options.process {
        SyntheticProcess::Diffusion => "synthetic-diffusion",
        SyntheticProcess::SeasonalField => "synthetic-seasonal-field",
    };
    Ok((Dataset::new(name, readings, graph)?, positions))
}

const DAILY_PERIOD: f64 = 24.0;
const BURN_IN_STEPS: usize = 48;

fn gaussian_noise(rng: &mut ChaCha8Rng, std: f64, n: usize) -> Result<Vec<f64>> {
    if std == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
    Ok((0..n).map(|_| normal.sample(rng)).collect())
}

fn simulate_diffusion(
    options: &SyntheticOptions,
    graph: &SensorGraph,
    positions: &[(f64, f64)],
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let n = options.n_nodes;
    let t_total = options.n_steps + BURN_IN_STEPS;

    // Smooth position-dependent forcing fields: nearby nodes share
    // amplitude, phase, and level, which is the spatial structure the
    // model is supposed to exploit.
    let amp: Vec<f64> = positions
        .iter()
        .map(|&(x, y)| 1.0 + 0.4 * (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).cos())
        .collect();
    let phase: Vec<f64> = positions
        .iter()
        .map(|&(x, y)| std::f64::consts::PI * (x + y) / 2.0)
        .collect();
    let base: Vec<f64> = positions
        .iter()
        .map(|&(x, y)| 2.0 + 1.2 * x + 0.8 * y)
        .collect();
    let force = |node: usize, t: usize| -> f64 {
        base[node]
            + amp[node]
                * (2.0 * std::f64::consts::PI * t as f64 / DAILY_PERIOD + phase[node]).sin()
    };

    let adjacency = graph.row_normalized();
    let connected: Vec<bool> = (0..n).map(|i| graph.degree(i) > 0).collect();

    // The latent state evolves noiselessly; readings are the state plus
    // independent per-reading measurement noise. Noise that never enters
    // the dynamics keeps the underlying series temporally smooth, which
    // is the structure the dataset is meant to exhibit.
    let mut state: Vec<f64> = (0..n).map(|i| force(i, 0)).collect();
    let mut rows = Vec::with_capacity(options.n_steps * n);
    for t in 0..t_total {
        if t >= BURN_IN_STEPS {
            let noise = gaussian_noise(rng, options.noise_std, n)?;
            rows.extend(state.iter().zip(&noise).map(|(&s, &e)| s + e));
        }
        let mut next = vec![0.0; n];
        for i in 0..n {
            let diffusion = if connected[i] {
                let neighbor_avg: f64 = (0..n)
                    .map(|j| adjacency[i * n + j] * state[j])
                    .sum();
                options.kappa * (neighbor_avg - state[i])
            } else {
                0.0
            };
            let pull = options.coupling * (force(i, t + 1) - state[i]);
            next[i] = state[i] + diffusion + pull;
        }
        state = next;
    }
    Tensor::matrix(options.n_steps, n, rows)
}

fn simulate_seasonal_field(
    options: &SyntheticOptions,
    positions: &[(f64, f64)],
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let n = options.n_nodes;
    let sources = [0, 1, 2, 3];
    let periods = [24.0, 12.0, 48.0, 36.0];
    let amps = [1.0, 0.7, 1.3, 0.9];

    // Each node mixes the four source signals with weights that decay in
    // the distance to the source node.
    let mut mix = vec![0.0; n * sources.len()];
    for i in 0..n {
        let mut total = 0.0;
        for (k, &s) in sources.iter().enumerate() {
            let dx = positions[i].0 - positions[s].0;
            let dy = positions[i].1 - positions[s].1;
            let w = (-(dx * dx + dy * dy).sqrt() / 0.3).exp();
            mix[i * sources.len() + k] = w;
            total += w;
        }
        for k in 0..sources.len() {
            mix[i * sources.len() + k] /= total;
        }
    }

    let mut rows = Vec::with_capacity(options.n_steps * n);
    for t in 0..options.n_steps {
        let source_values: Vec<f64> = (0..sources.len())
            .map(|k| {
                amps[k]
                    * (2.0 * std::f64::consts::PI * t as f64 / periods[k]
                        + k as f64 * std::f64::consts::FRAC_PI_4)
                        .sin()
            })
            .collect();
        let noise = gaussian_noise(rng, options.noise_std, n)?;
        for i in 0..n {
            let mixed: f64 = (0..sources.len())
                .map(|k| mix[i * sources.len() + k] * source_values[k])
                .sum();
            rows.push(1.5 + mixed + noise[i]);
        }
    }
    Tensor::matrix(options.n_steps, n, rows)
}

/// How the graph file of [`load_dataset`] should be interpreted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphKind {
    /// An edge-list file, loaded as-is.
    EdgeList,
    /// A coordinate file; the graph is built from pairwise haversine
    /// distances and then normalized with these settings.
    Coordinates {
        sigma: f64,
        epsilon: f64,
        mode: ThresholdMode,
    },
}

/// Loads readings (delimited text, rows = steps, columns = nodes, optional
/// header row) together with a graph file.
pub fn load_dataset(
    readings_path: &Path,
    graph_path: &Path,
    kind: GraphKind,
) -> Result<Dataset> {
    let graph = match kind {
        GraphKind::EdgeList => crate::graph::read_edge_list(graph_path)?,
        GraphKind::Coordinates {
            sigma,
            epsilon,
            mode,
        } => {
            let coords = crate::graph::read_coordinates(graph_path)?;
            SensorGraph::from_coordinates(&coords)?.normalize(sigma, epsilon, mode)?
        }
    };
    let readings = read_readings(readings_path)?;
    if readings.shape()[1] != graph.n_nodes() {
        return Err(Error::Data(format!(
            "readings {:?} have {} columns but the graph has {} nodes",
            readings_path,
            readings.shape()[1],
            graph.n_nodes()
        )));
    }
    let name = readings_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    Dataset::new(name, readings, graph)
}

fn split_cells(line: &str, comma: bool) -> Vec<&str> {
    if comma {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn read_readings(path: &Path) -> Result<Tensor> {
    let text = std::fs::read_to_string(path)?;
    let mut data = Vec::new();
    let mut n_cols = None;
    let mut comma = false;
    let mut saw_data = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if !saw_data {
            comma = line.contains(',');
        }
        let cells = split_cells(line, comma);
        let parsed: std::result::Result<Vec<f64>, _> =
            cells.iter().map(|c| c.parse::<f64>()).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(e) => {
                if saw_data {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("non-numeric cell: {}", e),
                    });
                }
                // A non-numeric first row is a header.
                saw_data = true;
                continue;
            }
        };
        saw_data = true;
        match n_cols {
            None => n_cols = Some(row.len()),
            Some(n) if n != row.len() => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("row has {} cells, expected {}", row.len(), n),
                });
            }
            _ => {}
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: line_no,
                msg: "non-finite reading".into(),
            });
        }
        data.extend(row);
    }
    let n_cols = n_cols.ok_or_else(|| Error::Data(format!("{:?} has no data rows", path)))?;
    Tensor::matrix(data.len() / n_cols, n_cols, data)
}

/// Global z-score statistics of the training-period observed entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denormalize(&self, x: f64) -> f64 {
        x * self.std + self.mean
    }

    fn apply(&self, readings: &Tensor) -> Tensor {
        let data = readings.data().iter().map(|&x| self.normalize(x)).collect();
        Tensor::new(readings.shape().to_vec(), data).unwrap()
    }
}

/// Chronological splits of one dataset, z-scored with training statistics.
#[derive(Debug, Clone)]
pub struct DataSplit {
    pub train: Tensor,
    pub val: Tensor,
    pub test: Tensor,
    pub stats: NormStats,
    /// Row offsets of the validation and test splits in the original
    /// readings, for recovering raw targets.
    pub val_start: usize,
    pub test_start: usize,
}

/// Copies the given columns of a matrix, in the given order.
pub fn select_columns(matrix: &Tensor, cols: &[usize]) -> Result<Tensor> {
    if matrix.rank() != 2 {
        return Err(Error::Data(format!(
            "column selection needs a matrix, got shape {:?}",
            matrix.shape()
        )));
    }
    let rows = matrix.shape()[0];
    let width = matrix.shape()[1];
    let mut data = Vec::with_capacity(rows * cols.len());
    for r in 0..rows {
        for &c in cols {
            if c >= width {
                return Err(Error::Data(format!(
                    "column {} out of range for width {}",
                    c, width
                )));
            }
            data.push(matrix.data()[r * width + c]);
        }
    }
    Tensor::matrix(rows, cols.len(), data)
}

/// Chronological row counts of the training and validation splits; the
/// test split is the remainder.
pub fn split_rows(t: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize)> {
    let (r_train, r_val, r_test) = ratios;
    if !(r_train > 0.0 && r_val >= 0.0 && r_test >= 0.0) {
        return Err(Error::Config(format!("invalid split ratios {:?}", ratios)));
    }
    if ((r_train + r_val + r_test) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios {:?} do not sum to 1",
            ratios
        )));
    }
    let train_rows = (t as f64 * r_train).floor() as usize;
    let val_rows = (t as f64 * r_val).floor() as usize;
    if train_rows == 0 {
        return Err(Error::Data("training split is empty".into()));
    }
    Ok((train_rows, val_rows))
}

/// Splits readings chronologically by the given ratios and normalizes all
/// splits with the mean and standard deviation of the training-period
/// entries at observed nodes.
pub fn split_and_normalize(
    dataset: &Dataset,
    ratios: (f64, f64, f64),
    mask: &MaskSpec,
) -> Result<DataSplit> {
    if mask.n_nodes() != dataset.n_nodes() {
        return Err(Error::Data(format!(
            "mask covers {} nodes but the dataset has {}",
            mask.n_nodes(),
            dataset.n_nodes()
        )));
    }
    let t = dataset.n_steps();
    let n = dataset.n_nodes();
    let (train_rows, val_rows) = split_rows(t, ratios)?;

    let readings = dataset.readings().data();
    let mut sum = 0.0;
    let mut count = 0usize;
    for row in 0..train_rows {
        for &col in mask.observed_nodes() {
            sum += readings[row * n + col];
            count += 1;
        }
    }
    let mean = sum / count as f64;
    let mut var_sum = 0.0;
    for row in 0..train_rows {
        for &col in mask.observed_nodes() {
            let d = readings[row * n + col] - mean;
            var_sum += d * d;
        }
    }
    let std = (var_sum / count as f64).sqrt();
    if std == 0.0 {
        return Err(Error::Data(
            "observed training data is constant; cannot normalize".into(),
        ));
    }
    let stats = NormStats { mean, std };

    let slice_rows = |start: usize, rows: usize| -> Tensor {
        let data = readings[start * n..(start + rows) * n].to_vec();
        Tensor::matrix(rows, n, data).unwrap()
    };
    let test_rows = t - train_rows - val_rows;
    Ok(DataSplit {
        train: stats.apply(&slice_rows(0, train_rows)),
        val: stats.apply(&slice_rows(train_rows, val_rows)),
        test: stats.apply(&slice_rows(train_rows + val_rows, test_rows)),
        stats,
        val_start: train_rows,
        test_start: train_rows + val_rows,
    })
}

/// Cuts a node-major window out of time-major readings: rows
/// `start..start+len` become the columns of an `N x len` window.
pub fn extract_window(
    readings: &Tensor,
    start: usize,
    len: usize,
    observed: &[bool],
) -> Result<SeriesWindow> {
    if readings.rank() != 2 {
        return Err(Error::Data(format!(
            "readings must be a matrix, got shape {:?}",
            readings.shape()
        )));
    }
    let (t, n) = (readings.shape()[0], readings.shape()[1]);
    if len == 0 || start + len > t {
        return Err(Error::Data(format!(
            "window rows {}..{} out of range for {} steps",
            start,
            start + len,
            t
        )));
    }
    let mut values = vec![0.0; n * len];
    let data = readings.data();
    for step in 0..len {
        for node in 0..n {
            values[node * len + step] = data[(start + step) * n + node];
        }
    }
    SeriesWindow::new(Tensor::matrix(n, len, values)?, observed.to_vec())
}

fn virtual_and_observed(window: &SeriesWindow) -> Result<(Vec<usize>, Vec<usize>)> {
    let observed = window.observed_nodes();
    if observed.is_empty() {
        return Err(Error::Data("window has no observed nodes".into()));
    }
    Ok((window.virtual_nodes(), observed))
}

/// Predicts every virtual node at step `t` as the mean over observed
/// nodes at step `t`. Rows follow ascending virtual-node order.
pub fn baseline_mean(window: &SeriesWindow) -> Result<Tensor> {
    let (virtual_nodes, observed) = virtual_and_observed(window)?;
    let p = window.window_len();
    let mut out = Vec::with_capacity(virtual_nodes.len() * p);
    for _ in &virtual_nodes {
        for t in 0..p {
            let sum: f64 = observed.iter().map(|&o| window.values().row(o)[t]).sum();
            out.push(sum / observed.len() as f64);
        }
    }
    Tensor::matrix(virtual_nodes.len(), p, out)
}

/// Predicts each virtual node as the adjacency-weighted mean of its `k`
/// largest-weight observed neighbors; nodes without observed neighbors
/// fall back to the per-step observed mean.
pub fn baseline_knn(window: &SeriesWindow, graph: &SensorGraph, k: usize) -> Result<Tensor> {
    if k == 0 {
        return Err(Error::Config("knn needs k >= 1".into()));
    }
    if graph.n_nodes() != window.n_nodes() {
        return Err(Error::Data(format!(
            "graph has {} nodes but the window has {}",
            graph.n_nodes(),
            window.n_nodes()
        )));
    }
    let (virtual_nodes, observed) = virtual_and_observed(window)?;
    let p = window.window_len();
    let mut out = Vec::with_capacity(virtual_nodes.len() * p);
    for &v in &virtual_nodes {
        let mut candidates: Vec<(f64, usize)> = graph
            .neighbors(v)
            .filter(|&(j, _)| window.is_observed(j))
            .map(|(j, w)| (w, j))
            .collect();
        candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        candidates.truncate(k);
        if candidates.is_empty() {
            for t in 0..p {
                let sum: f64 = observed.iter().map(|&o| window.values().row(o)[t]).sum();
                out.push(sum / observed.len() as f64);
            }
            continue;
        }
        let total_weight: f64 = candidates.iter().map(|&(w, _)| w).sum();
        for t in 0..p {
            out.push(
                candidates
                    .iter()
                    .map(|&(w, j)| w / total_weight * window.values().row(j)[t])
                    .sum(),
            );
        }
    }
    Tensor::matrix(virtual_nodes.len(), p, out)
}

/// Error statistics over a chosen set of cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    /// `sum |err| / sum |target|`; `None` when the targets sum to zero
    /// magnitude, where a relative error is undefined.
    pub mre: Option<f64>,
    pub n_evaluated: usize,
}

/// Every `(row, col)` pair of a `rows x cols` grid, row-major.
pub fn grid_pairs(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .collect()
}

/// Computes MAE, RMSE, and MRE between two same-shape matrices over the
/// given cells.
pub fn metrics(
    predictions: &Tensor,
    targets: &Tensor,
    pairs: &[(usize, usize)],
) -> Result<MetricsReport> {
    if predictions.shape() != targets.shape() || predictions.rank() != 2 {
        return Err(Error::ShapeMismatch {
            op: "metrics",
            lhs: predictions.shape().to_vec(),
            rhs: targets.shape().to_vec(),
        });
    }
    if pairs.is_empty() {
        return Err(Error::Data("metrics need at least one cell".into()));
    }
    let cols = predictions.shape()[1];
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut target_sum = 0.0;
    for &(r, c) in pairs {
        if r >= predictions.shape()[0] || c >= cols {
            return Err(Error::Data(format!(
                "cell ({}, {}) out of range for shape {:?}",
                r,
                c,
                predictions.shape()
            )));
        }
        let err = predictions.data()[r * cols + c] - targets.data()[r * cols + c];
        abs_sum += err.abs();
        sq_sum += err * err;
        target_sum += targets.data()[r * cols + c].abs();
    }
    let n = pairs.len() as f64;
    let mae = abs_sum / n;
    let rmse = (sq_sum / n).sqrt();
    let mre = if target_sum == 0.0 {
        None
    } else {
        Some(abs_sum / target_sum)
    };
    assert!(rmse >= mae - 1e-12, "rmse {} below mae {}", rmse, mae);
    Ok(MetricsReport {
        mae,
        rmse,
        mre,
        n_evaluated: pairs.len(),
    })
}
