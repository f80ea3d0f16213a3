//! Command-line entry point: dataset generation, labeling, training,
//! evaluation, scalability sweeps and ablations, each emitting a run
//! manifest so results are reproducible from files alone.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use beamgnn_core::baselines::{self, PgaSettings, SolverChoice};
use beamgnn_core::channel::{self, DatasetHeader};
use beamgnn_core::error::CoreError;
use beamgnn_core::gnn::{Checkpoint, ConstraintMode, ModelConfig};
use beamgnn_core::graph::EdgeFeatureMode;
use beamgnn_core::metrics::{self, EvalOptions, ReportFormat};
use beamgnn_core::objectives::{UtilityKind, UtilitySpec};
use beamgnn_core::trainer::{self, AblationRecipe, LearningMode, TrainConfig};

#[derive(Parser)]
#[command(name = "beamgnn", version, about = "GNN beamforming experiments for MU-MISO downlink")]
struct Cli {
    /// Upper bound on worker threads for parallel sections.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic Rayleigh channel dataset.
    GenData(GenDataArgs),
    /// Label a dataset with a classical solver.
    Label(LabelArgs),
    /// Train a model and write a checkpoint plus training log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one test set (six-metric report).
    Eval(EvalArgs),
    /// Evaluate a checkpoint across several differently-sized test sets.
    ScaleEval(ScaleEvalArgs),
    /// Train and compare a recipe of model variants.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    k: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 10.0)]
    p: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    utility: UtilityKind,
    /// wmmse (srm only) or pga.
    #[arg(long)]
    solver: SolverChoice,
    #[arg(long, default_value_t = 1.0)]
    circuit_power: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    restarts: usize,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// gcn | gat | resgat | mlp
    #[arg(long)]
    model: String,
    #[arg(long)]
    utility: UtilityKind,
    #[arg(long, default_value = "af")]
    constraint: ConstraintMode,
    /// sup | unsup
    #[arg(long, default_value = "unsup")]
    learning: LearningMode,
    /// Labels for supervised training (objective values).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// JSON file overriding defaults; explicit flags win over the file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    circuit_power: Option<f64>,
    /// Checkpoint output path; the log goes to `<out>.log.jsonl`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    stability_n: f64,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    /// Report JSON path; the radar CSV goes to `<out>.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScaleEvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test sets with settings differing from training.
    #[arg(long, num_args = 1.., required = true)]
    datasets: Vec<PathBuf>,
    /// Optional labels, one per dataset in the same order.
    #[arg(long, num_args = 0..)]
    labels: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// mp-vs-attention-vs-residual | heads | depth-residual
    #[arg(long)]
    recipe: String,
    /// Dataset split 80/20 into shared train/test folds.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "srm")]
    utility: UtilityKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory for checkpoints and the comparison report.
    #[arg(long)]
    out: PathBuf,
}

/// Optional overrides loaded from `--config` JSON.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileOverrides {
    hidden_dim: Option<usize>,
    depth: Option<usize>,
    heads: Option<usize>,
    readout_hidden: Option<usize>,
    leaky_alpha: Option<f64>,
    mlp_hidden: Option<usize>,
    edge_mode: Option<EdgeFeatureMode>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    lr_final_frac: Option<f64>,
    patience: Option<usize>,
    val_fraction: Option<f64>,
    phase_augment: Option<bool>,
    rho_init: Option<f64>,
    rho_double_every: Option<usize>,
    rho_cap: Option<f64>,
    eta_dual: Option<f64>,
    circuit_power: Option<f64>,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    argv: Vec<String>,
    version: String,
    timestamp_unix: u64,
    seeds: Vec<u64>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    resolved: serde_json::Value,
}

fn usage_error(msg: &str) -> ! {
    eprintln!("error: {msg}");
    std::process::exit(2);
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_manifest(
    out: &Path,
    command: &str,
    seeds: Vec<u64>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    resolved: serde_json::Value,
) -> Result<PathBuf> {
    let manifest = RunManifest {
        command: command.to_string(),
        argv: std::env::args().collect(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp_unix: now_unix(),
        seeds,
        inputs,
        outputs,
        resolved,
    };
    let path = PathBuf::from(format!("{}.manifest.json", out.display()));
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing manifest {}", path.display()))?;
    Ok(path)
}

fn model_config_for(name: &str) -> ModelConfig {
    match name {
        "gcn" => ModelConfig::gcn(),
        "gat" => ModelConfig::gat(),
        "resgat" => ModelConfig::resgat(),
        "mlp" => ModelConfig::mlp(),
        other => usage_error(&format!("unknown model '{other}' (expected gcn|gat|resgat|mlp)")),
    }
}

fn load_overrides(path: &Option<PathBuf>) -> Result<FileOverrides> {
    match path {
        None => Ok(FileOverrides::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            match serde_json::from_str(&text) {
                Ok(o) => Ok(o),
                Err(e) => usage_error(&format!("bad --config {}: {e}", p.display())),
            }
        }
    }
}

fn apply_overrides(mc: &mut ModelConfig, tc: &mut TrainConfig, o: &FileOverrides) {
    if let Some(v) = o.hidden_dim {
        mc.hidden_dim = v;
    }
    if let Some(v) = o.depth {
        mc.depth = v;
    }
    if let Some(v) = o.heads {
        mc.heads = v;
    }
    if let Some(v) = o.readout_hidden {
        mc.readout_hidden = v;
    }
    if let Some(v) = o.leaky_alpha {
        mc.leaky_alpha = v;
    }
    if let Some(v) = o.mlp_hidden {
        mc.mlp_hidden = v;
    }
    if let Some(v) = o.edge_mode {
        mc.edge_mode = v;
    }
    if let Some(v) = o.epochs {
        tc.epochs = v;
    }
    if let Some(v) = o.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = o.lr {
        tc.lr = v;
    }
    if let Some(v) = o.lr_final_frac {
        tc.lr_final_frac = v;
    }
    if let Some(v) = o.patience {
        tc.patience = v;
    }
    if let Some(v) = o.val_fraction {
        tc.val_fraction = v;
    }
    if let Some(v) = o.phase_augment {
        tc.phase_augment = v;
    }
    if let Some(v) = o.rho_init {
        tc.rho_init = v;
    }
    if let Some(v) = o.rho_double_every {
        tc.rho_double_every = v;
    }
    if let Some(v) = o.rho_cap {
        tc.rho_cap = v;
    }
    if let Some(v) = o.eta_dual {
        tc.eta_dual = v;
    }
    if let Some(v) = o.circuit_power {
        tc.utility.circuit_power = v;
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        let _ = rayon_thread_limit(jobs);
    }
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Label(a) => label(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::ScaleEval(a) => scale_eval(a),
        Command::Ablate(a) => ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn rayon_thread_limit(jobs: usize) -> Result<()> {
    beamgnn_core::rayon_threads(jobs)?;
    Ok(())
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    if a.count == 0 {
        usage_error("--count must be at least 1");
    }
    if a.k == 0 || a.n == 0 {
        usage_error("--k and --n must be at least 1");
    }
    if a.p <= 0.0 || a.sigma2 <= 0.0 {
        usage_error("--p and --sigma2 must be positive");
    }
    let mut header = DatasetHeader::new(a.k, a.n, a.sigma2, a.p, a.count, a.seed);
    let manifest = write_manifest(
        &a.out,
        "gen-data",
        vec![a.seed],
        vec![],
        vec![a.out.display().to_string()],
        serde_json::to_value(&header)?,
    )?;
    header.manifest = Some(manifest.display().to_string());
    let samples = channel::sample_channels(&header)?;
    channel::write_dataset(&a.out, &header, &samples)?;
    println!(
        "wrote {} samples (K={} N={} P={} sigma2={}) to {}",
        a.count,
        a.k,
        a.n,
        a.p,
        a.sigma2,
        a.out.display()
    );
    Ok(())
}

fn label(a: LabelArgs) -> Result<()> {
    if a.solver == SolverChoice::Wmmse && a.utility != UtilityKind::Srm {
        usage_error("wmmse labels only sum rate; use --solver pga for eem/mmr");
    }
    let dataset = channel::read_dataset(&a.dataset)?;
    let mut spec = UtilitySpec::new(a.utility, dataset.header.sigma2, dataset.header.power_budget);
    spec.circuit_power = a.circuit_power;
    let pga = PgaSettings { restarts: a.restarts, steps: a.steps, lr: a.lr, seed: a.seed };
    let mut labels = baselines::label_dataset(&dataset, &spec, a.solver, &pga)?;
    let manifest = write_manifest(
        &a.out,
        "label",
        vec![a.seed],
        vec![a.dataset.display().to_string()],
        vec![a.out.display().to_string()],
        serde_json::to_value(&labels.header)?,
    )?;
    labels.header.manifest = Some(manifest.display().to_string());
    baselines::write_labels(&a.out, &labels)?;
    let valid = labels.entries.iter().filter(|e| e.valid).count();
    println!(
        "labeled {}/{} samples ({:?}, {:?}) -> {}",
        valid,
        labels.entries.len(),
        a.utility,
        a.solver,
        a.out.display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let dataset = channel::read_dataset(&a.dataset)?;
    let mut mc = model_config_for(&a.model);
    mc.constraint_mode = a.constraint;
    let mut spec = UtilitySpec::new(a.utility, dataset.header.sigma2, dataset.header.power_budget);
    let mut tc = TrainConfig::new(spec, a.learning, a.seed);

    let overrides = load_overrides(&a.config)?;
    apply_overrides(&mut mc, &mut tc, &overrides);
    // explicit flags win over the config file
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if let Some(v) = a.lr {
        tc.lr = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.hidden {
        mc.hidden_dim = v;
        mc.readout_hidden = v;
    }
    if let Some(v) = a.depth {
        mc.depth = v;
    }
    if let Some(v) = a.circuit_power {
        tc.utility.circuit_power = v;
    }
    spec = tc.utility;

    if a.learning == LearningMode::Supervised && a.labels.is_none() {
        usage_error("--learning sup requires --labels");
    }
    let labels = match &a.labels {
        Some(p) => {
            let lf = baselines::read_labels(p)?;
            if lf.header.utility.kind != spec.kind {
                usage_error(&format!(
                    "labels are for {:?}, training utility is {:?}",
                    lf.header.utility.kind, spec.kind
                ));
            }
            Some(lf)
        }
        None => None,
    };
    if let Err(e) = mc.validate() {
        usage_error(&e.to_string());
    }

    let log_path = PathBuf::from(format!("{}.log.jsonl", a.out.display()));
    let manifest = write_manifest(
        &a.out,
        "train",
        vec![a.seed],
        vec![a.dataset.display().to_string()],
        vec![a.out.display().to_string(), log_path.display().to_string()],
        serde_json::json!({ "model": a.model, "model_config": mc, "train_config": tc }),
    )?;

    let (mut ckpt, log) = trainer::train(&mc, &tc, &dataset, labels.as_ref())?;
    ckpt.meta.manifest = Some(manifest.display().to_string());
    ckpt.save(&a.out)?;
    log.write(&log_path)?;
    let last = log.epochs.last();
    println!(
        "trained {} for {} epochs (val utility {:.4}, feasibility {:.1}%) -> {}",
        a.model,
        log.epochs.len(),
        last.map_or(f64::NAN, |e| e.val_utility),
        last.map_or(f64::NAN, |e| e.val_feasibility),
        a.out.display()
    );
    if let Some(reason) = &log.aborted {
        eprintln!("warning: training aborted early: {reason}");
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let dataset = channel::read_dataset(&a.dataset)?;
    let labels = a.labels.as_ref().map(|p| baselines::read_labels(p)).transpose()?;
    let opts = EvalOptions { stability_n: a.stability_n, repetitions: a.repetitions };
    let model_id = a.checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let dataset_id = a.dataset.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();

    let report = match metrics::evaluate(&ckpt, &dataset, labels.as_ref(), &opts, &model_id, &dataset_id) {
        Ok(r) => r,
        Err(CoreError::Dimension(msg)) => usage_error(&format!("checkpoint/dataset mismatch: {msg}")),
        Err(e) => return Err(e.into()),
    };

    write_manifest(
        &a.out,
        "eval",
        vec![ckpt.meta.seed],
        vec![a.checkpoint.display().to_string(), a.dataset.display().to_string()],
        vec![a.out.display().to_string()],
        serde_json::json!({ "stability_n": a.stability_n, "repetitions": a.repetitions }),
    )?;
    metrics::emit_report(&report, &a.out, ReportFormat::Json)?;
    let csv = PathBuf::from(format!("{}.csv", a.out.display()));
    metrics::emit_report(&report, &csv, ReportFormat::Csv)?;

    println!(
        "optimality {}  feasibility {:.1}%  inference {:.3} ms (p95 {:.3})",
        report.optimality.map_or("n/a".into(), |o| format!("{o:.2}%")),
        report.feasibility_rate,
        report.inference_ms_mean,
        report.inference_ms_p95
    );
    for s in &report.stability {
        if let Some(p) = s.percent {
            println!("stability(n={}) = {p:.1}%", s.n);
        }
    }
    Ok(())
}

fn scale_eval(a: ScaleEvalArgs) -> Result<()> {
    if !a.labels.is_empty() && a.labels.len() != a.datasets.len() {
        usage_error("--labels must match --datasets in count");
    }
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let datasets: Vec<_> = a
        .datasets
        .iter()
        .map(|p| channel::read_dataset(p))
        .collect::<beamgnn_core::Result<_>>()?;
    let labels: Vec<Option<baselines::LabelFile>> = if a.labels.is_empty() {
        vec![None; datasets.len()]
    } else {
        a.labels
            .iter()
            .map(|p| baselines::read_labels(p).map(Some))
            .collect::<beamgnn_core::Result<_>>()?
    };
    let sets: Vec<(String, &channel::Dataset, Option<&baselines::LabelFile>)> = datasets
        .iter()
        .zip(&labels)
        .zip(&a.datasets)
        .map(|((d, l), p)| {
            let name = format!(
                "{} (K={} N={} P={})",
                p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                d.header.k_users,
                d.header.n_antennas,
                d.header.power_budget
            );
            (name, d, l.as_ref())
        })
        .collect();

    let rows = metrics::scalability_eval(&ckpt, &sets)?;
    write_manifest(
        &a.out,
        "scale-eval",
        vec![ckpt.meta.seed],
        a.datasets.iter().map(|p| p.display().to_string()).collect(),
        vec![a.out.display().to_string()],
        serde_json::json!({ "datasets": a.datasets.len() }),
    )?;
    std::fs::write(&a.out, serde_json::to_string_pretty(&rows)?)?;
    for r in &rows {
        println!(
            "{:40} optimality {}  feasibility {}",
            r.setting,
            r.optimality.map_or("N/A".into(), |o| format!("{o:.2}%")),
            r.feasibility.map_or("N/A".into(), |f| format!("{f:.1}%"))
        );
    }
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let recipe: AblationRecipe = match a.recipe.parse() {
        Ok(r) => r,
        Err(e) => usage_error(&e),
    };
    let dataset = channel::read_dataset(&a.dataset)?;
    let (train_set, test_set) = channel::split(&dataset, 0.8, a.seed)?;

    let mut mc = ModelConfig::gcn();
    let spec = UtilitySpec::new(a.utility, dataset.header.sigma2, dataset.header.power_budget);
    let mut tc = TrainConfig::new(spec, LearningMode::Unsupervised, a.seed);
    let overrides = load_overrides(&a.config)?;
    apply_overrides(&mut mc, &mut tc, &overrides);
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }

    // shared labels for the shared test fold
    let solver = if a.utility == UtilityKind::Srm { SolverChoice::Wmmse } else { SolverChoice::Pga };
    let test_labels = baselines::label_dataset(&test_set, &spec, solver, &PgaSettings::default())?;

    std::fs::create_dir_all(&a.out)?;
    let manifest_path = write_manifest(
        &a.out.join("ablation"),
        "ablate",
        vec![a.seed],
        vec![a.dataset.display().to_string()],
        vec![a.out.display().to_string()],
        serde_json::json!({ "recipe": a.recipe, "model_config": mc, "train_config": tc }),
    )?;

    let outcomes = trainer::ablate(recipe, &mc, &tc, &train_set, None, &test_set, Some(&test_labels))?;
    let mut summary = Vec::new();
    for o in &outcomes {
        let ckpt_path = a.out.join(format!("{}.ckpt.json", o.name));
        let mut ckpt = o.checkpoint.clone();
        ckpt.meta.manifest = Some(manifest_path.display().to_string());
        ckpt.save(&ckpt_path)?;
        o.log.write(&a.out.join(format!("{}.log.jsonl", o.name)))?;
        metrics::emit_report(&o.report, &a.out.join(format!("{}.report.json", o.name)), ReportFormat::Json)?;
        println!(
            "{:16} optimality {}  feasibility {:.1}%  inference {:.3} ms",
            o.name,
            o.report.optimality.map_or("N/A".into(), |v| format!("{v:.2}%")),
            o.report.feasibility_rate,
            o.report.inference_ms_mean
        );
        summary.push(serde_json::json!({
            "name": o.name,
            "optimality": o.report.optimality,
            "feasibility": o.report.feasibility_rate,
            "inference_ms": o.report.inference_ms_mean,
        }));
    }
    std::fs::write(a.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}
