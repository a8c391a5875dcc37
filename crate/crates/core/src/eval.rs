//! End-to-end experiment protocol: mask, split, train, and score against
//! baselines on held-out windows.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::autodiff::Tensor;
use crate::data::{
    baseline_knn, baseline_mean, extract_window, grid_pairs, metrics, sample_decrement_mask,
    select_columns, split_and_normalize, Dataset, MaskSpec, MetricsReport,
};
use crate::train::{infer, train, TrainConfig, TrainedModel};
use crate::{Error, Result};

const STREAM_EVAL_MASK: u64 = 20;

/// Everything a reproducible experiment needs beyond the dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    /// Chronological train/validation/test ratios.
    pub split: (f64, f64, f64),
    /// Observed-to-virtual ratio of the evaluation mask.
    pub mask_ratio: (u32, u32),
    /// Seed of the evaluation mask draw, separate from the training seed.
    pub mask_seed: u64,
    /// Neighbor count of the KNN baseline.
    pub knn_k: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            split: (0.6, 0.2, 0.2),
            mask_ratio: (3, 1),
            mask_seed: 0,
            knn_k: 3,
        }
    }
}

/// Scores of one trained model and the two baselines on the same test
/// windows.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub model_metrics: MetricsReport,
    pub mean_metrics: MetricsReport,
    pub knn_metrics: MetricsReport,
    pub mask: MaskSpec,
    pub n_windows: usize,
    pub model: TrainedModel,
}

/// Draws the evaluation mask for a dataset of `n` nodes.
pub fn evaluation_mask(n: usize, ratio: (u32, u32), mask_seed: u64) -> Result<MaskSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    rng.set_stream(STREAM_EVAL_MASK);
    sample_decrement_mask(n, ratio, &mut rng)
}

struct WindowScores {
    model: Vec<f64>,
    mean: Vec<f64>,
    knn: Vec<f64>,
    target: Vec<f64>,
}

fn score_window(
    dataset: &Dataset,
    model: &TrainedModel,
    mask: &MaskSpec,
    start: usize,
    knn_k: usize,
) -> Result<WindowScores> {
    let window = extract_window(
        dataset.readings(),
        start,
        model.config.window,
        &mask.observed_flags(),
    )?;
    let predicted = infer(&window, dataset.graph(), model)?;
    let mean = baseline_mean(&window)?;
    let knn = baseline_knn(&window, dataset.graph(), knn_k)?;
    let mut target = Vec::with_capacity(predicted.len());
    for &v in mask.virtual_nodes() {
        target.extend_from_slice(window.values().row(v));
    }
    Ok(WindowScores {
        model: predicted.data().to_vec(),
        mean: mean.data().to_vec(),
        knn: knn.data().to_vec(),
        target,
    })
}

/// Scores an already-trained model on rows `start..end` of a dataset.
/// Windows are non-overlapping; predictions of all windows are pooled
/// into a single metrics computation per method.
pub fn evaluate_model(
    dataset: &Dataset,
    model: &TrainedModel,
    mask: &MaskSpec,
    rows: (usize, usize),
    knn_k: usize,
) -> Result<(MetricsReport, MetricsReport, MetricsReport, usize)> {
    let p = model.config.window;
    let (start, end) = rows;
    if end > dataset.n_steps() || start >= end {
        return Err(Error::Data(format!(
            "evaluation rows {}..{} out of range for {} steps",
            start,
            end,
            dataset.n_steps()
        )));
    }
    let starts: Vec<usize> = (start..=end.saturating_sub(p)).step_by(p).collect();
    if starts.is_empty() {
        return Err(Error::Data(format!(
            "evaluation region of {} rows holds no {}-step window",
            end - start,
            p
        )));
    }

    #[cfg(feature = "parallel")]
    let scored: Result<Vec<WindowScores>> = starts
        .par_iter()
        .map(|&s| score_window(dataset, model, mask, s, knn_k))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let scored: Result<Vec<WindowScores>> = starts
        .iter()
        .map(|&s| score_window(dataset, model, mask, s, knn_k))
        .collect();
    let scored = scored?;

    let n_virtual = mask.n_virtual();
    let total_steps = starts.len() * p;
    // Pool windows side by side: row per virtual node, column per step.
    let pool = |pick: fn(&WindowScores) -> &Vec<f64>| -> Tensor {
        let mut data = vec![0.0; n_virtual * total_steps];
        for (w, s) in scored.iter().enumerate() {
            let block = pick(s);
            for row in 0..n_virtual {
                for col in 0..p {
                    data[row * total_steps + w * p + col] = block[row * p + col];
                }
            }
        }
        Tensor::matrix(n_virtual, total_steps, data).unwrap()
    };
    let targets = pool(|s| &s.target);
    let cells = grid_pairs(n_virtual, total_steps);
    let model_metrics = metrics(&pool(|s| &s.model), &targets, &cells)?;
    let mean_metrics = metrics(&pool(|s| &s.mean), &targets, &cells)?;
    let knn_metrics = metrics(&pool(|s| &s.knn), &targets, &cells)?;
    Ok((model_metrics, mean_metrics, knn_metrics, starts.len()))
}

/// Runs the full protocol: draw an evaluation mask, split and normalize,
/// train on the observed subgraph, and score model and baselines on the
/// test region.
pub fn run_experiment(dataset: &Dataset, config: &ExperimentConfig) -> Result<ExperimentReport> {
    let mask = evaluation_mask(dataset.n_nodes(), config.mask_ratio, config.mask_seed)?;
    let split = split_and_normalize(dataset, config.split, &mask)?;
    let (observed_graph, node_map) = dataset.graph().subgraph(mask.observed_nodes())?;
    debug_assert_eq!(node_map, mask.observed_nodes());

    let train_data = select_columns(&split.train, mask.observed_nodes())?;
    let val_data = select_columns(&split.val, mask.observed_nodes())?;
    // The gate density comes from the dataset graph, not the observed
    // subgraph: whether the denoising pass runs is a property of the
    // network being served, and training must match inference.
    let gate_density = dataset.graph().density()?;
    let model = train(
        &train_data,
        &val_data,
        &observed_graph,
        gate_density,
        split.stats,
        &config.train,
    )?;

    let (model_metrics, mean_metrics, knn_metrics, n_windows) = evaluate_model(
        dataset,
        &model,
        &mask,
        (split.test_start, dataset.n_steps()),
        config.knn_k,
    )?;
    Ok(ExperimentReport {
        model_metrics,
        mean_metrics,
        knn_metrics,
        mask,
        n_windows,
        model,
    })
}

/// Disables the contrastive objective and both augmentations.
pub fn without_contrast(mut config: TrainConfig) -> TrainConfig {
    config.eta = 0.0;
    config.p_t = 0.0;
    config.p_s = 0.0;
    config
}

/// Disables graph denoising regardless of density.
pub fn without_denoise(mut config: TrainConfig) -> TrainConfig {
    config.denoise_enabled = false;
    config
}

/// One masking scenario: a label, an evaluation-mask ratio, and the seeds
/// to repeat it over.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub label: String,
    pub ratio: (u32, u32),
    pub seeds: Vec<u64>,
}

/// Mean and spread of one scenario's model metrics across seeds.
#[derive(Debug, Clone)]
pub struct ScenarioSummary {
    pub label: String,
    pub ratio: (u32, u32),
    pub mean_mae: f64,
    pub std_mae: f64,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    /// Undefined when any seed's MRE is undefined.
    pub mean_mre: Option<f64>,
    pub std_mre: Option<f64>,
    pub per_seed: Vec<(u64, MetricsReport)>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Repeats the experiment across scenarios and seeds. Each (scenario,
/// seed) run both trains and evaluates with that seed.
pub fn masking_scenarios(
    dataset: &Dataset,
    base: &ExperimentConfig,
    scenarios: &[Scenario],
) -> Result<Vec<ScenarioSummary>> {
    for s in scenarios {
        if s.seeds.is_empty() {
            return Err(Error::Config(format!(
                "scenario {} lists no seeds",
                s.label
            )));
        }
    }
    let jobs: Vec<(usize, u64)> = scenarios
        .iter()
        .enumerate()
        .flat_map(|(idx, s)| s.seeds.iter().map(move |&seed| (idx, seed)))
        .collect();

    let run = |&(idx, seed): &(usize, u64)| -> Result<(usize, u64, MetricsReport)> {
        let mut config = *base;
        config.mask_ratio = scenarios[idx].ratio;
        config.mask_seed = seed;
        config.train.seed = seed;
        let report = run_experiment(dataset, &config)?;
        Ok((idx, seed, report.model_metrics))
    };
    #[cfg(feature = "parallel")]
    let outcomes: Result<Vec<_>> = jobs.par_iter().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let outcomes: Result<Vec<_>> = jobs.iter().map(run).collect();
    let outcomes = outcomes?;

    let mut summaries = Vec::with_capacity(scenarios.len());
    for (idx, scenario) in scenarios.iter().enumerate() {
        let mut per_seed: Vec<(u64, MetricsReport)> = outcomes
            .iter()
            .filter(|&&(i, _, _)| i == idx)
            .map(|&(_, seed, report)| (seed, report))
            .collect();
        per_seed.sort_by_key(|&(seed, _)| seed);
        let maes: Vec<f64> = per_seed.iter().map(|(_, r)| r.mae).collect();
        let rmses: Vec<f64> = per_seed.iter().map(|(_, r)| r.rmse).collect();
        let mres: Option<Vec<f64>> = per_seed.iter().map(|(_, r)| r.mre).collect();
        let (mean_mae, std_mae) = mean_std(&maes);
        let (mean_rmse, std_rmse) = mean_std(&rmses);
        let (mean_mre, std_mre) = match mres {
            Some(values) => {
                let (m, s) = mean_std(&values);
                (Some(m), Some(s))
            }
            None => (None, None),
        };
        summaries.push(ScenarioSummary {
            label: scenario.label.clone(),
            ratio: scenario.ratio,
            mean_mae,
            std_mae,
            mean_rmse,
            std_rmse,
            mean_mre,
            std_mre,
            per_seed,
        });
    }
    Ok(summaries)
}

/// Key-value metric lines, one metric per line.
pub fn format_metrics(label: &str, report: &MetricsReport) -> String {
    let mre = match report.mre {
        Some(v) => format!("{:.17e}", v),
        None => "undefined".to_string(),
    };
    format!(
        "{label}.mae {:.17e}\n{label}.rmse {:.17e}\n{label}.mre {}\n{label}.n_evaluated {}\n",
        report.mae, report.rmse, mre, report.n_evaluated
    )
}

/// CSV sweep table: one row per (scenario, seed).
pub fn format_scenario_table(summaries: &[ScenarioSummary]) -> String {
    let mut out = String::from("scenario,seed,mae,rmse,mre\n");
    for summary in summaries {
        for (seed, report) in &summary.per_seed {
            let mre = report
                .mre
                .map(|v| format!("{:.17e}", v))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{:.17e},{:.17e},{}\n",
                summary.label, seed, report.mae, report.rmse, mre
            ));
        }
    }
    out
}
