//! Six-dimension evaluation of a trained model on a test set: optimality,
//! feasibility rate, inference efficiency, scalability, training efficiency
//! and stability, with JSON and radar-CSV report output.
//!
//! Optimality is the ratio of mean objective over *feasible* outputs to the
//! mean label over the same samples; infeasible samples leave both sides.
//! Undefined metrics serialize as explicit nulls, never zeros.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::LabelFile;
use crate::channel::Dataset;
use crate::error::{CoreError, Result};
use crate::gnn::{self, BaselineModel, Checkpoint};
use crate::graph::{build_bipartite_graph, build_link_graph, GraphKind};
use crate::objectives::{utility_plain, UtilityKind, UtilitySpec};

/// Relative power slack when counting a solution as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// Stability thresholds always reported alongside the configured default.
pub const STABILITY_CURVE: [f64; 5] = [1.0, 5.0, 10.0, 20.0, 50.0];

/// One model output reduced to what the metrics need.
#[derive(Debug, Clone, Copy)]
pub struct EvalOutcome {
    pub objective: f64,
    pub power: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityRow {
    pub setting: String,
    pub optimality: Option<f64>,
    pub feasibility: Option<f64>,
    /// False when the model cannot run at this setting (dense baseline on
    /// unseen dimensions); recorded, never a harness crash.
    pub applicable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityPoint {
    pub n: f64,
    pub percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub model_id: String,
    pub dataset_id: String,
    pub utility: String,
    pub constraint_mode: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

/// The six-dimension evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub optimality: Option<f64>,
    pub feasibility_rate: f64,
    pub inference_ms_mean: f64,
    pub inference_ms_p95: f64,
    pub scalability: Vec<ScalabilityRow>,
    pub training_samples: Option<usize>,
    pub epochs_to_converge: Option<usize>,
    pub stability: Vec<StabilityPoint>,
    pub metadata: ReportMeta,
}

// ---------------------------------------------------------------------------
// Metric algebra on plain slices
// ---------------------------------------------------------------------------

/// `100 * mean(feasible objectives) / mean(labels over the same samples)`.
/// `None` when no sample is both feasible and labeled.
pub fn optimality(outcomes: &[EvalOutcome], labels: &[Option<f64>]) -> Option<f64> {
    assert_eq!(outcomes.len(), labels.len(), "optimality: outcomes/labels length mismatch");
    let mut obj_sum = 0.0;
    let mut label_sum = 0.0;
    let mut n = 0usize;
    for (o, l) in outcomes.iter().zip(labels) {
        if let Some(l) = l {
            if o.feasible {
                obj_sum += o.objective;
                label_sum += l;
                n += 1;
            }
        }
    }
    if n == 0 || label_sum == 0.0 {
        return None;
    }
    Some(100.0 * (obj_sum / n as f64) / (label_sum / n as f64))
}

/// Percentage of outputs with `power <= P (1 + tol)`.
pub fn feasibility_rate(powers: &[f64], power_budget: f64, tol: f64) -> f64 {
    if powers.is_empty() {
        return 0.0;
    }
    let feasible = powers.iter().filter(|&&p| p <= power_budget * (1.0 + tol)).count();
    100.0 * feasible as f64 / powers.len() as f64
}

/// Percentage of feasible samples within `n`% of their label.
/// `None` when the feasible set is empty.
pub fn stability(outcomes: &[EvalOutcome], labels: &[Option<f64>], n: f64) -> Option<f64> {
    assert!(0.0 < n && n < 100.0, "stability: n must lie in (0, 100)");
    assert_eq!(outcomes.len(), labels.len());
    let mut feasible = 0usize;
    let mut good = 0usize;
    for (o, l) in outcomes.iter().zip(labels) {
        if let Some(l) = l {
            if o.feasible {
                feasible += 1;
                if o.objective >= (1.0 - n / 100.0) * l {
                    good += 1;
                }
            }
        }
    }
    if feasible == 0 {
        None
    } else {
        Some(100.0 * good as f64 / feasible as f64)
    }
}

/// First epoch (1-indexed) whose validation utility is within 1% of the best.
pub fn epochs_to_converge(val_utilities: &[f64]) -> usize {
    assert!(!val_utilities.is_empty());
    let best = val_utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = best - 0.01 * best.abs();
    val_utilities.iter().position(|&v| v >= threshold).unwrap() + 1
}

/// Mean and p95 of per-sample wall time in milliseconds, single-threaded,
/// warm-up pass excluded.
pub fn inference_time<F: FnMut(usize)>(samples: usize, repetitions: usize, mut run: F) -> (f64, f64) {
    assert!(samples > 0 && repetitions > 0);
    run(0); // warm-up
    let mut times = Vec::with_capacity(samples * repetitions);
    for _ in 0..repetitions {
        for i in 0..samples {
            let t0 = Instant::now();
            run(i);
            times.push(t0.elapsed().as_secs_f64() * 1e3);
        }
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let mut sorted = times;
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((sorted.len() as f64) * 0.95).ceil() as usize - 1;
    let p95 = sorted[idx.min(sorted.len() - 1)];
    (mean, p95)
}

// ---------------------------------------------------------------------------
// Harness orchestration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub stability_n: f64,
    pub repetitions: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { stability_n: 10.0, repetitions: 3 }
    }
}

fn utility_for(ckpt: &Checkpoint, dataset: &Dataset, labels: Option<&LabelFile>) -> UtilitySpec {
    let kind = labels
        .map(|l| l.header.utility.kind)
        .or(ckpt.meta.utility.map(|u| u.kind))
        .unwrap_or(UtilityKind::Srm);
    let circuit = ckpt.meta.utility.map(|u| u.circuit_power).unwrap_or(1.0);
    UtilitySpec {
        kind,
        sigma2: dataset.header.sigma2,
        power_budget: dataset.header.power_budget,
        circuit_power: circuit,
    }
}

/// Forward the checkpointed model on one sample of a dataset.
pub fn forward_sample(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    index: usize,
) -> Result<crate::objectives::BeamMatrix> {
    let sample = &dataset.samples[index];
    let p = dataset.header.power_budget;
    if ckpt.config.baseline_model == BaselineModel::Mlp {
        gnn::mlp_baseline_forward(&ckpt.config, &ckpt.dims, &ckpt.params, sample, p)
    } else {
        let graph = match ckpt.config.representation {
            GraphKind::LinkGraph => {
                if 2 * sample.n_antennas() != ckpt.dims.node_input {
                    return Err(CoreError::Dimension(format!(
                        "model expects {} antennas, dataset has {}",
                        ckpt.dims.node_input / 2,
                        sample.n_antennas()
                    )));
                }
                build_link_graph(sample, ckpt.config.edge_mode)
            }
            GraphKind::Bipartite => build_bipartite_graph(sample),
        };
        gnn::model_forward(&ckpt.config, &ckpt.params, &graph, p)
    }
}

/// Model outputs over a whole dataset (parallel, order-preserving).
pub fn run_outcomes(ckpt: &Checkpoint, dataset: &Dataset, spec: &UtilitySpec) -> Result<Vec<EvalOutcome>> {
    let results: Vec<Result<EvalOutcome>> = (0..dataset.samples.len())
        .into_par_iter()
        .map(|i| {
            let bm = forward_sample(ckpt, dataset, i)?;
            let objective = utility_plain(spec, &dataset.samples[i].h, &bm.w);
            let power = bm.power();
            let feasible = power <= dataset.header.power_budget * (1.0 + FEASIBILITY_TOL);
            Ok(EvalOutcome { objective, power, feasible })
        })
        .collect();
    results.into_iter().collect()
}

fn label_values(dataset: &Dataset, labels: Option<&LabelFile>) -> Result<Vec<Option<f64>>> {
    match labels {
        None => Ok(vec![None; dataset.samples.len()]),
        Some(lf) => {
            if lf.entries.len() != dataset.samples.len() {
                return Err(CoreError::Dimension(format!(
                    "label count {} does not match dataset count {}",
                    lf.entries.len(),
                    dataset.samples.len()
                )));
            }
            Ok(lf
                .entries
                .iter()
                .map(|e| if e.valid { e.objective } else { None })
                .collect())
        }
    }
}

fn setting_descriptor(dataset: &Dataset) -> String {
    format!(
        "K={} N={} P={}",
        dataset.header.k_users, dataset.header.n_antennas, dataset.header.power_budget
    )
}

/// Full six-metric evaluation on one test set.
pub fn evaluate(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    labels: Option<&LabelFile>,
    opts: &EvalOptions,
    model_id: &str,
    dataset_id: &str,
) -> Result<MetricsReport> {
    let spec = utility_for(ckpt, dataset, labels);
    let outcomes = run_outcomes(ckpt, dataset, &spec)?;
    let label_vals = label_values(dataset, labels)?;

    let powers: Vec<f64> = outcomes.iter().map(|o| o.power).collect();
    let feas = feasibility_rate(&powers, dataset.header.power_budget, FEASIBILITY_TOL);
    let opt = optimality(&outcomes, &label_vals);

    let timing_samples = dataset.samples.len().min(64);
    let (mean_ms, p95_ms) = inference_time(timing_samples, opts.repetitions, |i| {
        let _ = forward_sample(ckpt, dataset, i);
    });

    let mut stab = Vec::new();
    let mut ns: Vec<f64> = STABILITY_CURVE.to_vec();
    if !ns.contains(&opts.stability_n) {
        ns.push(opts.stability_n);
        ns.sort_by(|a, b| a.partial_cmp(b).unwrap());
    }
    for n in ns {
        stab.push(StabilityPoint { n, percent: stability(&outcomes, &label_vals, n) });
    }

    let row = ScalabilityRow {
        setting: setting_descriptor(dataset),
        optimality: opt,
        feasibility: Some(feas),
        applicable: true,
    };

    Ok(MetricsReport {
        optimality: opt,
        feasibility_rate: feas,
        inference_ms_mean: mean_ms,
        inference_ms_p95: p95_ms,
        scalability: vec![row],
        training_samples: ckpt.meta.training_samples,
        epochs_to_converge: ckpt.meta.epochs_to_converge,
        stability: stab,
        metadata: ReportMeta {
            model_id: model_id.to_string(),
            dataset_id: dataset_id.to_string(),
            utility: spec.kind.as_str().to_string(),
            constraint_mode: format!("{:?}", ckpt.config.constraint_mode).to_lowercase(),
            seed: ckpt.meta.seed,
            manifest: None,
        },
    })
}

/// Optimality and feasibility across differently-sized test sets. A model
/// that cannot run at a setting yields an inapplicable row, not an error.
pub fn scalability_eval(
    ckpt: &Checkpoint,
    sets: &[(String, &Dataset, Option<&LabelFile>)],
) -> Result<Vec<ScalabilityRow>> {
    let mut rows = Vec::with_capacity(sets.len());
    for (name, dataset, labels) in sets {
        let spec = utility_for(ckpt, dataset, *labels);
        match run_outcomes(ckpt, dataset, &spec) {
            Ok(outcomes) => {
                let label_vals = label_values(dataset, *labels)?;
                let powers: Vec<f64> = outcomes.iter().map(|o| o.power).collect();
                rows.push(ScalabilityRow {
                    setting: name.clone(),
                    optimality: optimality(&outcomes, &label_vals),
                    feasibility: Some(feasibility_rate(&powers, dataset.header.power_budget, FEASIBILITY_TOL)),
                    applicable: true,
                });
            }
            Err(CoreError::Dimension(_)) => {
                rows.push(ScalabilityRow {
                    setting: name.clone(),
                    optimality: None,
                    feasibility: None,
                    applicable: false,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Report output
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Reference scales for the radar axes; recorded next to each row.
const INFERENCE_REF_MS: f64 = 1.0;
const EPOCHS_REF: f64 = 50.0;

pub fn emit_report(report: &MetricsReport, path: &Path, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Json => {
            let file = std::fs::File::create(path)?;
            serde_json::to_writer_pretty(std::io::BufWriter::new(file), report)
                .map_err(|e| CoreError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
            Ok(())
        }
        ReportFormat::Csv => {
            let mut out = String::from("axis,raw,normalized,normalization\n");
            let fmt = |v: Option<f64>| v.map_or(String::from(""), |x| format!("{x}"));

            let opt_norm = report.optimality.map(|o| (o / 100.0).clamp(0.0, 1.0));
            out.push_str(&format!(
                "optimality,{},{},percent/100\n",
                fmt(report.optimality),
                fmt(opt_norm)
            ));
            out.push_str(&format!(
                "feasibility,{},{},percent/100\n",
                report.feasibility_rate,
                report.feasibility_rate / 100.0
            ));
            let inf_norm = INFERENCE_REF_MS / (INFERENCE_REF_MS + report.inference_ms_mean);
            out.push_str(&format!(
                "inference,{},{inf_norm},ref_ms={INFERENCE_REF_MS}\n",
                report.inference_ms_mean
            ));
            let scal_vals: Vec<f64> = report
                .scalability
                .iter()
                .filter_map(|r| r.optimality)
                .collect();
            let scal = if scal_vals.is_empty() {
                None
            } else {
                Some(scal_vals.iter().sum::<f64>() / scal_vals.len() as f64)
            };
            out.push_str(&format!(
                "scalability,{},{},mean_optimality/100\n",
                fmt(scal),
                fmt(scal.map(|s| (s / 100.0).clamp(0.0, 1.0)))
            ));
            let eff = report.epochs_to_converge.map(|e| EPOCHS_REF / (EPOCHS_REF + e as f64));
            out.push_str(&format!(
                "training_efficiency,{},{},ref_epochs={EPOCHS_REF}\n",
                report.epochs_to_converge.map_or(String::new(), |e| e.to_string()),
                fmt(eff)
            ));
            let default_stab = report
                .stability
                .iter()
                .find(|s| s.n == 10.0)
                .or(report.stability.first())
                .and_then(|s| s.percent);
            out.push_str(&format!(
                "stability,{},{},percent/100 at n=10\n",
                fmt(default_stab),
                fmt(default_stab.map(|s| s / 100.0))
            ));
            std::fs::write(path, out)?;
            Ok(())
        }
    }
}

pub fn read_report(path: &Path) -> Result<MetricsReport> {
    let file = std::fs::File::open(path)?;
    serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| CoreError::Parse { line: 0, msg: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(objective: f64, feasible: bool) -> EvalOutcome {
        EvalOutcome { objective, power: if feasible { 1.0 } else { 100.0 }, feasible }
    }

    #[test]
    fn optimality_basics() {
        let outs = vec![outcome(2.0, true), outcome(3.0, true)];
        let labels = vec![Some(2.0), Some(3.0)];
        assert_eq!(optimality(&outs, &labels), Some(100.0));

        let labels = vec![Some(2.0 / 0.9), Some(3.0 / 0.9)];
        let got = optimality(&outs, &labels).unwrap();
        assert!((got - 90.0).abs() < 1e-9);
    }

    #[test]
    fn optimality_excludes_infeasible_symmetrically() {
        // the infeasible sample has a huge objective and a tiny label; if it
        // leaked into either side the ratio would move
        let outs = vec![outcome(2.0, true), outcome(50.0, false), outcome(2.0, true)];
        let labels = vec![Some(2.0), Some(0.01), Some(2.0)];
        assert_eq!(optimality(&outs, &labels), Some(100.0));
    }

    #[test]
    fn optimality_undefined_without_feasible_samples() {
        let outs = vec![outcome(1.0, false)];
        let labels = vec![Some(1.0)];
        assert_eq!(optimality(&outs, &labels), None);
    }

    #[test]
    fn feasibility_rate_examples() {
        assert_eq!(feasibility_rate(&[1.0, 2.0, 3.0], 10.0, FEASIBILITY_TOL), 100.0);
        assert_eq!(feasibility_rate(&[11.0, 12.0], 10.0, FEASIBILITY_TOL), 0.0);
        assert_eq!(feasibility_rate(&[1.0, 2.0, 3.0, 11.0], 10.0, FEASIBILITY_TOL), 75.0);
    }

    #[test]
    fn stability_examples_and_monotonicity() {
        let outs = vec![outcome(1.0, true); 4];
        let labels = vec![Some(1.0); 4];
        assert_eq!(stability(&outs, &labels, 10.0), Some(100.0));

        let outs = vec![outcome(1.0, true), outcome(1.0, true), outcome(1.0, true), outcome(0.85, true)];
        assert_eq!(stability(&outs, &labels, 10.0), Some(75.0));
        assert_eq!(stability(&outs, &labels, 99.9), Some(100.0));

        let mut prev = 0.0;
        for n in [1.0, 5.0, 10.0, 20.0, 50.0, 99.0] {
            let s = stability(&outs, &labels, n).unwrap();
            assert!(s >= prev, "stability not monotone at n={n}");
            prev = s;
        }
    }

    #[test]
    fn stability_undefined_on_empty_feasible_set() {
        let outs = vec![outcome(1.0, false)];
        let labels = vec![Some(1.0)];
        assert_eq!(stability(&outs, &labels, 10.0), None);
    }

    #[test]
    fn epochs_to_converge_examples() {
        // rises to its peak at epoch 40; epoch 35 is already within 1%
        let mut curve: Vec<f64> = (1..=40).map(|e| e as f64 / 40.0).collect();
        curve.extend(vec![1.0; 10]);
        let within: Vec<f64> = curve.iter().map(|&v| v.max(0.0)).collect();
        let e = epochs_to_converge(&within);
        assert_eq!(e, 40); // strictly increasing ramp: first within 1% of 1.0 is 0.99*40
        let ramped: Vec<f64> = (1..=40).map(|x| if x >= 35 { 1.0 } else { x as f64 / 40.0 }).collect();
        assert_eq!(epochs_to_converge(&ramped), 35);

        assert_eq!(epochs_to_converge(&[0.5]), 1);
        assert_eq!(epochs_to_converge(&[2.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn inference_time_positive_and_stable() {
        let work = |i: usize| {
            let mut acc = 0.0f64;
            for j in 0..2000 {
                acc += ((i + j) as f64).sqrt();
            }
            std::hint::black_box(acc);
        };
        let (mean1, p95) = inference_time(32, 3, |i| work(i));
        assert!(mean1 > 0.0);
        assert!(p95 >= mean1 * 0.2);
        let (mean2, _) = inference_time(32, 6, |i| work(i));
        let drift = (mean2 - mean1).abs() / mean1;
        assert!(drift < 0.2, "timing drift {drift} between repetition counts");
    }

    #[test]
    fn report_round_trips_and_csv_has_six_axes() {
        let dir = tempfile::tempdir().unwrap();
        let report = MetricsReport {
            optimality: Some(93.5),
            feasibility_rate: 100.0,
            inference_ms_mean: 0.4,
            inference_ms_p95: 0.9,
            scalability: vec![ScalabilityRow {
                setting: "K=4 N=8 P=10".into(),
                optimality: Some(93.5),
                feasibility: Some(100.0),
                applicable: true,
            }],
            training_samples: Some(2000),
            epochs_to_converge: Some(17),
            stability: vec![StabilityPoint { n: 10.0, percent: Some(88.0) }],
            metadata: ReportMeta {
                model_id: "resgat".into(),
                dataset_id: "test".into(),
                utility: "srm".into(),
                constraint_mode: "af".into(),
                seed: 1,
                manifest: None,
            },
        };
        let json = dir.path().join("report.json");
        emit_report(&report, &json, ReportFormat::Json).unwrap();
        assert_eq!(read_report(&json).unwrap(), report);

        let csv = dir.path().join("report.csv");
        emit_report(&report, &csv, ReportFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        assert_eq!(text.lines().count(), 7); // header + 6 axes
    }

    #[test]
    fn undefined_metrics_serialize_as_null() {
        let report = MetricsReport {
            optimality: None,
            feasibility_rate: 0.0,
            inference_ms_mean: 0.1,
            inference_ms_p95: 0.2,
            scalability: vec![],
            training_samples: None,
            epochs_to_converge: None,
            stability: vec![StabilityPoint { n: 10.0, percent: None }],
            metadata: ReportMeta {
                model_id: "m".into(),
                dataset_id: "d".into(),
                utility: "srm".into(),
                constraint_mode: "af".into(),
                seed: 0,
                manifest: None,
            },
        };
        let text = serde_json::to_string(&report).unwrap();
        assert!(text.contains("\"optimality\":null"));
        assert!(text.contains("\"percent\":null"));
    }
}
