//! Adam training loop over the tape, supervised and unsupervised modes,
//! penalty/Lagrangian schedules, and the ablation recipes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::LabelFile;
use crate::channel::Dataset;
use crate::error::{CoreError, Result};
use crate::gnn::{
    self, bind_params, BaselineModel, Checkpoint, ConstraintMode, FeatureDims, ModelConfig,
    ParamSet, TrainMeta,
};
use crate::graph::{build_bipartite_graph, build_link_graph, GraphKind, RadioGraph};
use crate::metrics::{self, EvalOptions, MetricsReport};
use crate::objectives::{self, dual_update, UtilitySpec};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningMode {
    Supervised,
    Unsupervised,
}

impl std::str::FromStr for LearningMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sup" | "supervised" => Ok(LearningMode::Supervised),
            "unsup" | "unsupervised" => Ok(LearningMode::Unsupervised),
            other => Err(format!("unknown learning mode '{other}' (expected sup|unsup)")),
        }
    }
}

/// Optimizer and schedule knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub utility: UtilitySpec,
    pub learning: LearningMode,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Penalty weight schedule: doubles every `rho_double_every` epochs from
    /// `rho_init`, capped at `rho_cap`.
    pub rho_init: f64,
    pub rho_double_every: usize,
    pub rho_cap: f64,
    /// Dual step size for the Lagrangian mode.
    pub eta_dual: f64,
    pub seed: u64,
    /// Early stop after this many epochs without validation improvement.
    pub patience: usize,
    pub val_fraction: f64,
    /// Rotate each user's channel row by a fresh random phase every time a
    /// training sample is visited. Rates are invariant to these rotations
    /// and the Rayleigh distribution is circularly symmetric, so augmented
    /// samples stay exactly in-distribution; this teaches the phase nuisance
    /// directly instead of spending model capacity on it.
    pub phase_augment: bool,
    /// Exponential learning-rate decay: the last epoch runs at
    /// `lr * lr_final_frac`. 1.0 disables decay.
    pub lr_final_frac: f64,
    /// Noise-power curriculum: for the first `snr_anneal_epochs` the training
    /// loss uses an inflated noise power gliding from P down to the true
    /// sigma2 (log-linear). The regularized-MMSE optimum moves continuously
    /// from matched filtering to interference nulling along this path, so
    /// optimization tracks a solution branch instead of facing the
    /// interference-limited landscape cold. Validation always runs at the
    /// true sigma2. 0 disables the curriculum.
    pub snr_anneal_epochs: usize,
    /// Initial weight of an interference-leakage shaping term added to the
    /// loss, decayed linearly to zero across `shaping_epochs`. Matched-filter
    /// solutions are a strong attractor of the bare utility landscape; the
    /// vanishing penalty on `sum_{j != k} |h_k^H w_j|^2` steers early
    /// training toward interference suppression, after which the exact
    /// objective takes over. 0 disables shaping.
    pub shaping_beta: f64,
    pub shaping_epochs: usize,
}

impl TrainConfig {
    pub fn new(utility: UtilitySpec, learning: LearningMode, seed: u64) -> Self {
        TrainConfig {
            utility,
            learning,
            batch_size: 64,
            epochs: 200,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            rho_init: 1.0,
            rho_double_every: 20,
            rho_cap: 1e4,
            eta_dual: 0.05,
            seed,
            patience: 20,
            val_fraction: 0.1,
            phase_augment: true,
            lr_final_frac: 0.1,
            snr_anneal_epochs: 0,
            shaping_beta: 0.25,
            shaping_epochs: 60,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(CoreError::Config("lr must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(CoreError::Config("batch_size must be >= 1".into()));
        }
        if !(0.0 < self.val_fraction && self.val_fraction < 1.0) {
            return Err(CoreError::Config("val_fraction must lie in (0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean validation utility, measured with the output projected onto the
    /// power ball (pm/ldm emit raw beams; projection here is measurement
    /// only).
    pub val_utility: f64,
    /// Percent of validation outputs feasible as emitted.
    pub val_feasibility: f64,
    pub lambda: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub samples_used: usize,
    pub epochs: Vec<EpochRecord>,
    /// Set when training stopped on a non-finite loss or parameter; the
    /// returned checkpoint is the last finite one.
    pub aborted: Option<String>,
}

impl TrainLog {
    /// (training samples, first epoch within 1% of the best validation
    /// utility).
    pub fn training_efficiency(&self) -> (usize, usize) {
        let vals: Vec<f64> = self.epochs.iter().map(|e| e.val_utility).collect();
        let e = if vals.is_empty() { 0 } else { metrics::epochs_to_converge(&vals) };
        (self.samples_used, e)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let to_io =
            |e: serde_json::Error| CoreError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e));
        #[derive(Serialize)]
        struct Head<'a> {
            samples_used: usize,
            aborted: &'a Option<String>,
        }
        serde_json::to_writer(&mut w, &Head { samples_used: self.samples_used, aborted: &self.aborted })
            .map_err(to_io)?;
        w.write_all(b"\n")?;
        for e in &self.epochs {
            serde_json::to_writer(&mut w, e).map_err(to_io)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<TrainLog> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines().enumerate();
        #[derive(Deserialize)]
        struct Head {
            samples_used: usize,
            aborted: Option<String>,
        }
        let head: Head = match lines.next() {
            Some((_, line)) => serde_json::from_str(&line?)
                .map_err(|e| CoreError::Parse { line: 1, msg: e.to_string() })?,
            None => return Err(CoreError::Parse { line: 1, msg: "empty train log".into() }),
        };
        let mut epochs = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            epochs.push(
                serde_json::from_str(&line)
                    .map_err(|e| CoreError::Parse { line: i + 1, msg: e.to_string() })?,
            );
        }
        Ok(TrainLog { samples_used: head.samples_used, epochs, aborted: head.aborted })
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    t: usize,
}

/// Standard bias-corrected Adam update. The Lagrange multiplier is not a
/// tensor parameter and never passes through here.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    hyper: &AdamHyper,
) {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for (name, g) in grads {
        let p = params.tensors.get_mut(name).unwrap_or_else(|| panic!("adam: unknown param '{name}'"));
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
        for ((pv, gv), (mv, vv)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            *mv = hyper.beta1 * *mv + (1.0 - hyper.beta1) * gv;
            *vv = hyper.beta2 * *vv + (1.0 - hyper.beta2) * gv * gv;
            let mh = *mv / bc1;
            let vh = *vv / bc2;
            *pv -= hyper.lr * mh / (vh.sqrt() + hyper.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

fn build_graph(config: &ModelConfig, sample: &crate::channel::ChannelSample) -> RadioGraph {
    match config.representation {
        GraphKind::LinkGraph => build_link_graph(sample, config.edge_mode),
        GraphKind::Bipartite => build_bipartite_graph(sample),
    }
}

/// Rotate every user row by an independent random phase. Rates are invariant
/// to row phases; the rotated sample follows the same Rayleigh law.
fn rotate_user_phases(sample: &crate::channel::ChannelSample, seed: u64) -> crate::channel::ChannelSample {
    use num_complex::Complex64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, n) = (sample.k_users(), sample.n_antennas());
    let mut h = crate::linalg::CxMat::zeros(k, n);
    for u in 0..k {
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let rot = Complex64::from_polar(1.0, theta);
        for m in 0..n {
            h.set(u, m, sample.h.at(u, m) * rot);
        }
    }
    crate::channel::ChannelSample { h, sample_id: sample.sample_id }
}

struct ChunkResult {
    grads: Vec<(String, Tensor)>,
    loss_sum: f64,
    violation_sum: f64,
    count: usize,
}

/// Loss of one sample on the chunk tape; returns the loss id and the emitted
/// power value.
#[allow(clippy::too_many_arguments)]
fn sample_loss(
    tape: &mut crate::autodiff::Tape,
    bp: &gnn::BoundParams,
    mc: &ModelConfig,
    dims: &FeatureDims,
    tc: &TrainConfig,
    spec: &UtilitySpec,
    sample: &crate::channel::ChannelSample,
    label: Option<f64>,
    rho: f64,
    lambda: f64,
    beta: f64,
) -> Result<(crate::autodiff::ValueId, f64)> {
    let out = if mc.baseline_model == BaselineModel::Mlp {
        gnn::mlp_forward_on_tape(tape, bp, mc, dims, sample, spec.power_budget)?
    } else {
        let graph = build_graph(mc, sample);
        gnn::forward_on_tape(tape, bp, mc, &graph, spec.power_budget)?
    };
    let parts = objectives::user_rate_parts(tape, &sample.h, out.wt, spec.sigma2);
    let rates = parts.rates;
    let util = objectives::utility(tape, spec, rates, out.power);
    let emitted_power = tape.value(out.power).item();

    let base = match (tc.learning, mc.constraint_mode) {
        (LearningMode::Unsupervised, ConstraintMode::Af) => objectives::loss_unsupervised(tape, util),
        (LearningMode::Unsupervised, ConstraintMode::Pm) => {
            objectives::loss_penalty(tape, util, out.power, spec.power_budget, rho)
        }
        (LearningMode::Unsupervised, ConstraintMode::Ldm) => {
            objectives::loss_lagrangian(tape, util, out.power, spec.power_budget, lambda)
        }
        (LearningMode::Supervised, cm) => {
            let label = label.ok_or_else(|| CoreError::Config("supervised sample without label".into()))?;
            let base = objectives::loss_supervised(tape, util, label);
            match cm {
                ConstraintMode::Af => base,
                ConstraintMode::Pm => {
                    let pb = tape.scalar(spec.power_budget);
                    let over = tape.sub(out.power, pb);
                    let clip = tape.relu(over);
                    let sq = tape.square(clip);
                    let pen = tape.scale(sq, rho);
                    tape.add(base, pen)
                }
                ConstraintMode::Ldm => {
                    let pb = tape.scalar(spec.power_budget);
                    let v = tape.sub(out.power, pb);
                    let term = tape.scale(v, lambda);
                    tape.add(base, term)
                }
            }
        }
    };
    let loss = if beta > 0.0 {
        let leak = tape.sum(parts.interference);
        let k = sample.k_users() as f64;
        let shaped = tape.scale(leak, beta / k);
        tape.add(base, shaped)
    } else {
        base
    };
    Ok((loss, emitted_power))
}

/// Gradient-based training with per-epoch validation and early stopping.
/// Returns the best checkpoint by validation utility and the full log.
pub fn train(
    mc: &ModelConfig,
    tc: &TrainConfig,
    dataset: &Dataset,
    labels: Option<&LabelFile>,
) -> Result<(Checkpoint, TrainLog)> {
    mc.validate()?;
    tc.validate()?;
    let header = &dataset.header;
    if tc.learning == LearningMode::Supervised {
        let lf = labels.ok_or_else(|| CoreError::Config("supervised training requires labels".into()))?;
        if lf.entries.len() != dataset.samples.len() {
            return Err(CoreError::Dimension(format!(
                "label count {} does not match dataset count {}",
                lf.entries.len(),
                dataset.samples.len()
            )));
        }
    }
    let label_vals: Vec<Option<f64>> = match labels {
        Some(lf) => lf.entries.iter().map(|e| if e.valid { e.objective } else { None }).collect(),
        None => vec![None; dataset.samples.len()],
    };

    let dims = FeatureDims::for_config(mc, header.n_antennas, header.k_users);
    let mut params = gnn::init_params(mc, &dims, tc.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x5eed_0f_7ea1);

    // held-out validation fold
    let n = dataset.samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_val = ((n as f64 * tc.val_fraction).round() as usize).clamp(1, n - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx: Vec<usize> = train_idx.to_vec();
    // supervised training can only use labeled samples
    if tc.learning == LearningMode::Supervised {
        train_idx.retain(|&i| label_vals[i].is_some());
        if train_idx.is_empty() {
            return Err(CoreError::Config("no valid labels in the training fold".into()));
        }
    }

    let mut adam = AdamState::default();
    let mut lambda = params.lambda.unwrap_or(0.0);

    let mut log = TrainLog { samples_used: train_idx.len(), ..TrainLog::default() };
    let mut best_val = f64::NEG_INFINITY;
    let mut best_params = params.clone();
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;

    'epochs: for epoch in 0..tc.epochs {
        let t0 = Instant::now();
        let rho = (tc.rho_init * 2f64.powi((epoch / tc.rho_double_every.max(1)) as i32)).min(tc.rho_cap);
        let lr = if tc.epochs > 1 {
            tc.lr * tc.lr_final_frac.powf(epoch as f64 / (tc.epochs - 1) as f64)
        } else {
            tc.lr
        };
        let hyper = AdamHyper { lr, beta1: tc.beta1, beta2: tc.beta2, eps: tc.eps };
        let beta = if tc.shaping_beta > 0.0 && epoch < tc.shaping_epochs {
            tc.shaping_beta * (1.0 - epoch as f64 / tc.shaping_epochs as f64)
        } else {
            0.0
        };
        let spec_epoch = if epoch < tc.snr_anneal_epochs {
            let progress = epoch as f64 / tc.snr_anneal_epochs as f64;
            let ratio = tc.utility.power_budget / tc.utility.sigma2;
            UtilitySpec {
                sigma2: tc.utility.sigma2 * ratio.powf(1.0 - progress),
                ..tc.utility
            }
        } else {
            tc.utility
        };

        // fresh shuffle per epoch
        for i in (1..train_idx.len()).rev() {
            let j = rng.gen_range(0..=i);
            train_idx.swap(i, j);
        }

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in train_idx.chunks(tc.batch_size) {
            // non-finite parameters mean the previous step exploded
            if params.tensors.values().any(|t| !t.all_finite()) {
                log.aborted = Some(format!("non-finite parameters entering epoch {epoch}"));
                break 'epochs;
            }
            const CHUNK: usize = 16;
            let chunk_results: Vec<Result<ChunkResult>> = batch
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut tape = crate::autodiff::Tape::new();
                    let bp = bind_params(&mut tape, &params);
                    let mut losses = Vec::with_capacity(chunk.len());
                    let mut violation_sum = 0.0;
                    for &i in chunk {
                        let sample = if tc.phase_augment {
                            let s = tc.seed
                                ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
                                ^ (i as u64).wrapping_mul(0xd1b5_4a32_d192_ed03);
                            Some(rotate_user_phases(&dataset.samples[i], s))
                        } else {
                            None
                        };
                        let (loss, power) = sample_loss(
                            &mut tape,
                            &bp,
                            mc,
                            &dims,
                            tc,
                            &spec_epoch,
                            sample.as_ref().unwrap_or(&dataset.samples[i]),
                            label_vals[i],
                            rho,
                            lambda,
                            beta,
                        )?;
                        violation_sum += power - tc.utility.power_budget;
                        losses.push(loss);
                    }
                    let total = if losses.len() == 1 {
                        losses[0]
                    } else {
                        let cat = tape.concat(&losses, 0);
                        tape.sum(cat)
                    };
                    let loss_sum = tape.value(total).item();
                    let grads = tape.backward(total);
                    let named: Vec<(String, Tensor)> = bp
                        .iter()
                        .map(|(name, &id)| (name.clone(), grads.wrt(id, &tape)))
                        .collect();
                    Ok(ChunkResult { grads: named, loss_sum, violation_sum, count: chunk.len() })
                })
                .collect();

            let mut total_grads: BTreeMap<String, Tensor> = BTreeMap::new();
            let mut loss_sum = 0.0;
            let mut violation_sum = 0.0;
            let mut count = 0usize;
            for cr in chunk_results {
                let cr = cr?;
                loss_sum += cr.loss_sum;
                violation_sum += cr.violation_sum;
                count += cr.count;
                for (name, g) in cr.grads {
                    match total_grads.get_mut(&name) {
                        Some(acc) => {
                            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                                *a += b;
                            }
                        }
                        None => {
                            total_grads.insert(name, g);
                        }
                    }
                }
            }
            let batch_loss = loss_sum / count as f64;
            if !batch_loss.is_finite() {
                log.aborted = Some(format!("non-finite loss in epoch {epoch}"));
                break 'epochs;
            }
            let inv = 1.0 / count as f64;
            for g in total_grads.values_mut() {
                for v in g.data_mut() {
                    *v *= inv;
                }
            }
            adam_step(&mut params, &total_grads, &mut adam, &hyper);
            if mc.constraint_mode == ConstraintMode::Ldm {
                lambda = dual_update(lambda, violation_sum / count as f64, tc.eta_dual);
                params.lambda = Some(lambda);
            }
            epoch_loss += batch_loss;
            batches += 1;
        }

        // validation: utility measured on the projected output, feasibility
        // on the emitted one
        let val: Vec<(f64, bool)> = val_idx
            .par_iter()
            .map(|&i| {
                let s = &dataset.samples[i];
                let bm = if mc.baseline_model == BaselineModel::Mlp {
                    gnn::mlp_baseline_forward(mc, &dims, &params, s, tc.utility.power_budget)
                } else {
                    gnn::model_forward(mc, &params, &build_graph(mc, s), tc.utility.power_budget)
                }?;
                let feasible =
                    bm.power() <= tc.utility.power_budget * (1.0 + metrics::FEASIBILITY_TOL);
                let projected = objectives::project_beam(&bm.w, tc.utility.power_budget);
                Ok((objectives::utility_plain(&tc.utility, &s.h, &projected), feasible))
            })
            .collect::<Result<Vec<_>>>()?;
        let val_utility = val.iter().map(|v| v.0).sum::<f64>() / val.len() as f64;
        let val_feasibility = 100.0 * val.iter().filter(|v| v.1).count() as f64 / val.len() as f64;

        log.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: if batches > 0 { epoch_loss / batches as f64 } else { f64::NAN },
            val_utility,
            val_feasibility,
            lambda: (mc.constraint_mode == ConstraintMode::Ldm).then_some(lambda),
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });

        if val_utility > best_val {
            best_val = val_utility;
            best_params = params.clone();
            best_epoch = epoch + 1;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tc.patience {
                break;
            }
        }
    }

    let vals: Vec<f64> = log.epochs.iter().map(|e| e.val_utility).collect();
    let converge = if vals.is_empty() { None } else { Some(metrics::epochs_to_converge(&vals)) };
    let _ = best_epoch;

    let ckpt = Checkpoint {
        config: mc.clone(),
        dims,
        params: best_params,
        meta: TrainMeta {
            utility: Some(tc.utility),
            learning: Some(match tc.learning {
                LearningMode::Supervised => "supervised".into(),
                LearningMode::Unsupervised => "unsupervised".into(),
            }),
            seed: tc.seed,
            epochs_trained: log.epochs.len(),
            epochs_to_converge: converge,
            training_samples: Some(log.samples_used),
            manifest: None,
        },
    };
    Ok((ckpt, log))
}

// ---------------------------------------------------------------------------
// Ablation recipes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationRecipe {
    /// gcn vs gat vs resgat.
    MpVsAttentionVsResidual,
    /// Attention heads in {1, 2, 4, 8}.
    Heads,
    /// Depth 1..6 with and without residual.
    DepthResidual,
}

impl std::str::FromStr for AblationRecipe {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "mp-vs-attention-vs-residual" => Ok(AblationRecipe::MpVsAttentionVsResidual),
            "heads" => Ok(AblationRecipe::Heads),
            "depth-residual" => Ok(AblationRecipe::DepthResidual),
            other => Err(format!(
                "unknown recipe '{other}' (expected mp-vs-attention-vs-residual|heads|depth-residual)"
            )),
        }
    }
}

/// Model variants trained by a recipe, sharing the base configuration.
pub fn recipe_variants(recipe: AblationRecipe, base: &ModelConfig) -> Vec<(String, ModelConfig)> {
    match recipe {
        AblationRecipe::MpVsAttentionVsResidual => vec![
            ("gcn".into(), ModelConfig { aggregation: crate::gnn::Aggregation::Mean, residual: false, ..base.clone() }),
            ("gat".into(), ModelConfig { aggregation: crate::gnn::Aggregation::Attention, heads: 4, residual: false, ..base.clone() }),
            ("resgat".into(), ModelConfig { aggregation: crate::gnn::Aggregation::Attention, heads: 4, residual: true, ..base.clone() }),
        ],
        AblationRecipe::Heads => [1usize, 2, 4, 8]
            .iter()
            .map(|&h| {
                (
                    format!("heads{h}"),
                    ModelConfig {
                        aggregation: crate::gnn::Aggregation::Attention,
                        heads: h,
                        residual: false,
                        ..base.clone()
                    },
                )
            })
            .collect(),
        AblationRecipe::DepthResidual => {
            let mut v = Vec::new();
            for residual in [true, false] {
                for depth in 1..=6 {
                    let tag = if residual { "res" } else { "nores" };
                    v.push((
                        format!("depth{depth}-{tag}"),
                        ModelConfig {
                            aggregation: crate::gnn::Aggregation::Attention,
                            heads: 4,
                            depth,
                            residual,
                            ..base.clone()
                        },
                    ));
                }
            }
            v
        }
    }
}

pub struct AblationOutcome {
    pub name: String,
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    pub report: MetricsReport,
}

/// Train every variant of a recipe on shared data and seed, then evaluate
/// all of them on one shared test set.
pub fn ablate(
    recipe: AblationRecipe,
    base: &ModelConfig,
    tc: &TrainConfig,
    train_set: &Dataset,
    train_labels: Option<&LabelFile>,
    test_set: &Dataset,
    test_labels: Option<&LabelFile>,
) -> Result<Vec<AblationOutcome>> {
    let mut out = Vec::new();
    for (name, mc) in recipe_variants(recipe, base) {
        let (ckpt, log) = train(&mc, tc, train_set, train_labels)?;
        let report = metrics::evaluate(&ckpt, test_set, test_labels, &EvalOptions::default(), &name, "ablation-test")?;
        out.push(AblationOutcome { name, checkpoint: ckpt, log, report });
    }
    Ok(out)
}
