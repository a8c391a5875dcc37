//! Command-line front end: graph construction, component inspection,
//! training, evaluation, and masking-ratio sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use krige::data::{
    generate_synthetic, load_dataset, split_rows, Dataset, GraphKind, SyntheticProcess,
};
use krige::eval::{
    evaluate_model, evaluation_mask, format_metrics, format_scenario_table, masking_scenarios,
    run_experiment, ExperimentConfig, Scenario,
};
use krige::graph::{read_edge_list, write_edge_list};
use krige::train::{load_checkpoint, save_checkpoint, TrainConfig};
use krige::{find_bccs, SensorGraph, ThresholdMode};

#[derive(Parser)]
#[command(
    name = "krige",
    about = "Inductive spatio-temporal kriging over sensor graphs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a normalized adjacency from an edge list or coordinates.
    MakeGraph(MakeGraphArgs),
    /// List biconnected components of a graph above a weight threshold.
    InspectBcc(InspectBccArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test region of a dataset.
    Eval(EvalArgs),
    /// Repeat experiments across masking ratios and seeds.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EdgeMode {
    /// Keep weights strictly below epsilon.
    Below,
    /// Keep weights at or above epsilon.
    Above,
}

impl From<EdgeMode> for ThresholdMode {
    fn from(mode: EdgeMode) -> Self {
        match mode {
            EdgeMode::Below => ThresholdMode::KeepBelow,
            EdgeMode::Above => ThresholdMode::KeepAbove,
        }
    }
}

#[derive(Args)]
struct MakeGraphArgs {
    /// Edge-list file with raw pairwise distances.
    #[arg(long, conflicts_with = "coords", required_unless_present = "coords")]
    edges: Option<PathBuf>,
    /// Coordinate file (node_id,lat,lon); distances become haversine km.
    #[arg(long)]
    coords: Option<PathBuf>,
    /// Decay scale of the exponential weighting.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Weight threshold; pass `inf` to keep every edge.
    #[arg(long, default_value_t = f64::INFINITY)]
    epsilon: f64,
    /// Which side of the threshold survives.
    #[arg(long, value_enum, default_value_t = EdgeMode::Below)]
    mode: EdgeMode,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct InspectBccArgs {
    /// Graph edge-list file.
    #[arg(long)]
    graph: PathBuf,
    /// Edges at or below this weight are ignored.
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    /// Output directory for the component report.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct DatasetArgs {
    /// Generate a synthetic dataset instead of reading files.
    #[arg(long, value_enum, conflicts_with_all = ["readings", "graph"])]
    synthetic: Option<Process>,
    /// Node count of the synthetic dataset.
    #[arg(long, default_value_t = 24)]
    nodes: usize,
    /// Step count of the synthetic dataset.
    #[arg(long, default_value_t = 2880)]
    steps: usize,
    /// Seed of the synthetic generator, independent of the training seed.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// Readings file: delimited text, rows are steps, columns are nodes.
    #[arg(long, requires = "graph")]
    readings: Option<PathBuf>,
    /// Normalized graph edge-list file accompanying --readings.
    #[arg(long)]
    graph: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Process {
    Diffusion,
    SeasonalField,
}

impl DatasetArgs {
    fn load(&self) -> anyhow::Result<(Dataset, String)> {
        match (self.synthetic, &self.readings) {
            (Some(process), _) => {
                let process = match process {
                    Process::Diffusion => SyntheticProcess::Diffusion,
                    Process::SeasonalField => SyntheticProcess::SeasonalField,
                };
                let dataset = generate_synthetic(self.nodes, self.steps, process, self.data_seed)?;
                let desc = format!(
                    "synthetic={} nodes={} steps={} data_seed={}",
                    match process {
                        SyntheticProcess::Diffusion => "diffusion",
                        SyntheticProcess::SeasonalField => "seasonal-field",
                    },
                    self.nodes,
                    self.steps,
                    self.data_seed
                );
                Ok((dataset, desc))
            }
            (None, Some(readings)) => {
                let graph = self.graph.as_ref().expect("clap enforces --graph");
                let dataset = load_dataset(readings, graph, GraphKind::EdgeList)?;
                Ok((
                    dataset,
                    format!("readings={} graph={}", readings.display(), graph.display()),
                ))
            }
            (None, None) => bail!("provide either --synthetic or --readings with --graph"),
        }
    }
}

/// Training knobs accepted both as flags and as `key=value` lines of a
/// config file; flags win.
#[derive(Args, Default)]
struct ConfigFlags {
    /// Flat key=value config file supplying defaults for these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Contrastive loss weight.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Window length in steps.
    #[arg(long)]
    window: Option<usize>,
    /// Contrastive temperature.
    #[arg(long)]
    tau: Option<f64>,
    /// Component-forming weight threshold.
    #[arg(long)]
    mu: Option<f64>,
    /// Fraction of edges the denoiser may downweight per virtual node.
    #[arg(long)]
    beta: Option<f64>,
    /// Replacement weight for downweighted edges.
    #[arg(long)]
    omega: Option<f64>,
    /// Temporal augmentation masking probability.
    #[arg(long)]
    p_t: Option<f64>,
    /// Topology augmentation edge-insertion probability.
    #[arg(long)]
    p_s: Option<f64>,
    /// Trend moving-average kernel; odd, below the window.
    #[arg(long)]
    ma_kernel: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// Observed-to-virtual ratio: `3:1` or a virtual percentage like `25%`.
    #[arg(long)]
    ratio: Option<String>,
    /// Early-stopping patience in epochs.
    #[arg(long)]
    patience: Option<usize>,
    /// Disable graph denoising regardless of density.
    #[arg(long)]
    no_denoise: bool,
    /// Seed of the evaluation mask draw; defaults to the training seed.
    #[arg(long)]
    mask_seed: Option<u64>,
    /// Neighbor count of the KNN baseline.
    #[arg(long)]
    knn_k: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[command(flatten)]
    config: ConfigFlags,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint written by `krige train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    dataset: DatasetArgs,
    #[command(flatten)]
    config: ConfigFlags,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[command(flatten)]
    config: ConfigFlags,
    /// Comma-separated mask ratios, e.g. `3:1,1:1` or `25%,50%`.
    #[arg(long, default_value = "3:1,1:1")]
    ratios: String,
    /// Comma-separated seeds, e.g. `0,1,2,3`.
    #[arg(long, default_value = "0,1,2,3")]
    seeds: String,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Accepts `o:v` pairs or a virtual-node percentage like `25%`.
fn parse_ratio(text: &str) -> anyhow::Result<(u32, u32)> {
    let text = text.trim();
    if let Some(percent) = text.strip_suffix('%') {
        let v: u32 = percent
            .trim()
            .parse()
            .with_context(|| format!("bad percentage in ratio {:?}", text))?;
        if !(1..=99).contains(&v) {
            bail!("ratio percentage {} must be in 1..=99", v);
        }
        let o = 100 - v;
        let d = gcd(o, v);
        return Ok((o / d, v / d));
    }
    let (o, v) = text
        .split_once(':')
        .with_context(|| format!("ratio {:?} is neither o:v nor a percentage", text))?;
    let o: u32 = o.trim().parse().with_context(|| format!("bad ratio {:?}", text))?;
    let v: u32 = v.trim().parse().with_context(|| format!("bad ratio {:?}", text))?;
    if o == 0 || v == 0 {
        bail!("ratio parts must be positive, got {}:{}", o, v);
    }
    Ok((o, v))
}

struct Resolved {
    train: TrainConfig,
    mask_seed: u64,
    knn_k: usize,
}

fn parse_config_file(path: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let mut entries = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .with_context(|| format!("{}:{}: expected key=value", path.display(), idx + 1))?;
        entries.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(entries)
}

fn resolve_config(flags: &ConfigFlags) -> anyhow::Result<Resolved> {
    let mut train = TrainConfig::default();
    let mut mask_seed = None;
    let mut knn_k = 3usize;

    if let Some(path) = &flags.config {
        for (key, value) in parse_config_file(path)? {
            let parse_err = || format!("config key {} has bad value {:?}", key, value);
            match key.as_str() {
                "eta" => train.eta = value.parse().with_context(parse_err)?,
                "learning_rate" => train.learning_rate = value.parse().with_context(parse_err)?,
                "epochs" => train.epochs = value.parse().with_context(parse_err)?,
                "batch_size" => train.batch_size = value.parse().with_context(parse_err)?,
                "window" => train.window = value.parse().with_context(parse_err)?,
                "tau" => train.tau = value.parse().with_context(parse_err)?,
                "mu" => train.mu = value.parse().with_context(parse_err)?,
                "beta" => train.beta = value.parse().with_context(parse_err)?,
                "omega" => train.omega = value.parse().with_context(parse_err)?,
                "p_t" => train.p_t = value.parse().with_context(parse_err)?,
                "p_s" => train.p_s = value.parse().with_context(parse_err)?,
                "seed" => train.seed = value.parse().with_context(parse_err)?,
                "ma_kernel" => train.ma_kernel = value.parse().with_context(parse_err)?,
                "hidden_dim" => train.hidden_dim = value.parse().with_context(parse_err)?,
                "ratio" => train.ratio = parse_ratio(&value)?,
                "patience" => train.patience = value.parse().with_context(parse_err)?,
                "denoise" => train.denoise_enabled = value.parse().with_context(parse_err)?,
                "mask_seed" => mask_seed = Some(value.parse().with_context(parse_err)?),
                "knn_k" => knn_k = value.parse().with_context(parse_err)?,
                other => bail!("unknown config key {:?}", other),
            }
        }
    }

    macro_rules! override_with {
        ($($field:ident => $target:expr),* $(,)?) => {
            $(if let Some(value) = flags.$field { $target = value; })*
        };
    }
    override_with! {
        seed => train.seed,
        eta => train.eta,
        learning_rate => train.learning_rate,
        epochs => train.epochs,
        batch_size => train.batch_size,
        window => train.window,
        tau => train.tau,
        mu => train.mu,
        beta => train.beta,
        omega => train.omega,
        p_t => train.p_t,
        p_s => train.p_s,
        ma_kernel => train.ma_kernel,
        hidden_dim => train.hidden_dim,
        patience => train.patience,
        knn_k => knn_k,
    }
    if flags.mask_seed.is_some() {
        mask_seed = flags.mask_seed;
    }
    if let Some(ratio) = &flags.ratio {
        train.ratio = parse_ratio(ratio)?;
    }
    if flags.no_denoise {
        train.denoise_enabled = false;
    }
    train.validate()?;
    Ok(Resolved {
        train,
        mask_seed: mask_seed.unwrap_or(train.seed),
        knn_k,
    })
}

fn write_manifest(
    out: &Path,
    command: &str,
    dataset: &str,
    resolved: &Resolved,
) -> anyhow::Result<()> {
    let c = &resolved.train;
    let mut text = String::new();
    writeln!(text, "command={}", command).unwrap();
    writeln!(text, "dataset {}", dataset).unwrap();
    writeln!(text, "eta={}", c.eta).unwrap();
    writeln!(text, "learning_rate={}", c.learning_rate).unwrap();
    writeln!(text, "epochs={}", c.epochs).unwrap();
    writeln!(text, "batch_size={}", c.batch_size).unwrap();
    writeln!(text, "window={}", c.window).unwrap();
    writeln!(text, "tau={}", c.tau).unwrap();
    writeln!(text, "mu={}", c.mu).unwrap();
    writeln!(text, "beta={}", c.beta).unwrap();
    writeln!(text, "omega={}", c.omega).unwrap();
    writeln!(text, "p_t={}", c.p_t).unwrap();
    writeln!(text, "p_s={}", c.p_s).unwrap();
    writeln!(text, "seed={}", c.seed).unwrap();
    writeln!(text, "ma_kernel={}", c.ma_kernel).unwrap();
    writeln!(text, "hidden_dim={}", c.hidden_dim).unwrap();
    writeln!(text, "ratio={}:{}", c.ratio.0, c.ratio.1).unwrap();
    writeln!(text, "patience={}", c.patience).unwrap();
    writeln!(text, "denoise={}", c.denoise_enabled).unwrap();
    writeln!(text, "mask_seed={}", resolved.mask_seed).unwrap();
    writeln!(text, "knn_k={}", resolved.knn_k).unwrap();
    std::fs::write(out.join("manifest.txt"), text)?;
    Ok(())
}

fn cmd_make_graph(args: &MakeGraphArgs) -> anyhow::Result<()> {
    let raw = match (&args.edges, &args.coords) {
        (Some(edges), None) => read_edge_list(edges)?,
        (None, Some(coords)) => {
            let points = krige::graph::read_coordinates(coords)?;
            SensorGraph::from_coordinates(&points)?
        }
        _ => bail!("provide exactly one of --edges or --coords"),
    };
    if raw.n_nodes() == 0 {
        bail!("input file describes no nodes");
    }
    let graph = raw.normalize(args.sigma, args.epsilon, args.mode.into())?;
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join("graph.csv");
    write_edge_list(&graph, &path)?;
    println!("nodes {}", graph.n_nodes());
    println!("edges {}", graph.edge_count());
    println!("density {:.6}", graph.density()?);
    println!("written {}", path.display());
    Ok(())
}

fn cmd_inspect_bcc(args: &InspectBccArgs) -> anyhow::Result<()> {
    let graph = read_edge_list(&args.graph)?;
    let bccs = find_bccs(&graph, args.mu)?;
    let mut text = String::new();
    writeln!(text, "components {}", bccs.len()).unwrap();
    for (idx, component) in bccs.components().iter().enumerate() {
        write!(text, "component {} size {} nodes", idx, component.len()).unwrap();
        for &node in component {
            write!(text, " {}", node).unwrap();
        }
        text.push('\n');
    }
    let articulation = bccs.articulation_points();
    writeln!(text, "articulation {}", articulation.len()).unwrap();
    for &node in articulation {
        writeln!(
            text,
            "node {} in {} components",
            node,
            bccs.components_of(node).len()
        )
        .unwrap();
    }
    print!("{}", text);
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("components.txt"), text)?;
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> anyhow::Result<()> {
    let resolved = resolve_config(&args.config)?;
    let (dataset, desc) = args.dataset.load()?;
    std::fs::create_dir_all(&args.out)?;
    write_manifest(&args.out, "train", &desc, &resolved)?;

    let experiment = ExperimentConfig {
        train: resolved.train,
        mask_ratio: resolved.train.ratio,
        mask_seed: resolved.mask_seed,
        knn_k: resolved.knn_k,
        ..ExperimentConfig::default()
    };
    let mask = evaluation_mask(dataset.n_nodes(), experiment.mask_ratio, experiment.mask_seed)?;
    let report = run_experiment(&dataset, &experiment)?;
    let checkpoint = args.out.join("checkpoint.txt");
    save_checkpoint(&report.model, &checkpoint)?;

    // Validation-region scores travel with the checkpoint; the test
    // region stays untouched until `krige eval`.
    let (train_rows, val_rows) = split_rows(dataset.n_steps(), experiment.split)?;
    let (model, mean, knn, _) = evaluate_model(
        &dataset,
        &report.model,
        &mask,
        (train_rows, train_rows + val_rows),
        resolved.knn_k,
    )?;
    let mut metrics_text = String::new();
    metrics_text.push_str(&format_metrics("val.model", &model));
    metrics_text.push_str(&format_metrics("val.mean", &mean));
    metrics_text.push_str(&format_metrics("val.knn", &knn));
    std::fs::write(args.out.join("metrics.txt"), &metrics_text)?;

    println!("checkpoint {}", checkpoint.display());
    println!(
        "validation mae {:.6} (mean baseline {:.6}, knn baseline {:.6})",
        model.mae, mean.mae, knn.mae
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> anyhow::Result<()> {
    let model = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", args.checkpoint.display()))?;
    let mut resolved = resolve_config(&args.config)?;
    // The checkpoint owns every training knob; flags steer only the
    // evaluation mask and baseline.
    let mask_ratio = args
        .config
        .ratio
        .as_deref()
        .map(parse_ratio)
        .transpose()?
        .unwrap_or(model.config.ratio);
    resolved.train = model.config;
    resolved.train.ratio = mask_ratio;
    if args.config.mask_seed.is_none() && args.config.seed.is_none() {
        resolved.mask_seed = model.config.seed;
    }

    let (dataset, desc) = args.dataset.load()?;
    std::fs::create_dir_all(&args.out)?;
    write_manifest(&args.out, "eval", &desc, &resolved)?;

    let mask = evaluation_mask(dataset.n_nodes(), mask_ratio, resolved.mask_seed)?;
    let (train_rows, val_rows) = split_rows(dataset.n_steps(), (0.6, 0.2, 0.2))?;
    let (model_metrics, mean_metrics, knn_metrics, n_windows) = evaluate_model(
        &dataset,
        &model,
        &mask,
        (train_rows + val_rows, dataset.n_steps()),
        resolved.knn_k,
    )?;

    let mut metrics_text = String::new();
    metrics_text.push_str(&format_metrics("test.model", &model_metrics));
    metrics_text.push_str(&format_metrics("test.mean", &mean_metrics));
    metrics_text.push_str(&format_metrics("test.knn", &knn_metrics));
    std::fs::write(args.out.join("metrics.txt"), &metrics_text)?;

    println!(
        "test mae {:.6} over {} windows (mean baseline {:.6}, knn baseline {:.6})",
        model_metrics.mae, n_windows, mean_metrics.mae, knn_metrics.mae
    );
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let resolved = resolve_config(&args.config)?;
    let (dataset, desc) = args.dataset.load()?;
    std::fs::create_dir_all(&args.out)?;
    write_manifest(&args.out, "sweep", &desc, &resolved)?;

    let seeds: Vec<u64> = args
        .seeds
        .split(',')
        .map(|s| s.trim().parse().with_context(|| format!("bad seed {:?}", s)))
        .collect::<anyhow::Result<_>>()?;
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    let scenarios: Vec<Scenario> = args
        .ratios
        .split(',')
        .map(|text| {
            parse_ratio(text).map(|ratio| Scenario {
                label: text.trim().to_string(),
                ratio,
                seeds: seeds.clone(),
            })
        })
        .collect::<anyhow::Result<_>>()?;

    let base = ExperimentConfig {
        train: resolved.train,
        knn_k: resolved.knn_k,
        ..ExperimentConfig::default()
    };
    let summaries = masking_scenarios(&dataset, &base, &scenarios)?;
    std::fs::write(args.out.join("sweep.csv"), format_scenario_table(&summaries))?;
    for summary in &summaries {
        let mre = summary
            .mean_mre
            .map(|m| format!("{:.6} ± {:.6}", m, summary.std_mre.unwrap()))
            .unwrap_or_else(|| "undefined".to_string());
        println!(
            "{} (ratio {}:{}): mae {:.6} ± {:.6}, rmse {:.6} ± {:.6}, mre {}",
            summary.label,
            summary.ratio.0,
            summary.ratio.1,
            summary.mean_mae,
            summary.std_mae,
            summary.mean_rmse,
            summary.std_rmse,
            mre
        );
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::MakeGraph(args) => cmd_make_graph(args),
        Command::InspectBcc(args) => cmd_inspect_bcc(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}
