//! Configurable message-passing model with attention aggregation, residual
//! updating, MLP readout and constraint-handling output activation.
//!
//! One layer does:
//! - messages `m_{j->i} = leaky_relu(W_neigh x_j + W_edge e_{ji} + b)`
//!   (edge term only when the graph carries edge features), reduced per
//!   destination by the configured aggregation; attention mode instead
//!   aggregates per-head projected neighbor features with softmax weights;
//! - update `x_i' = leaky_relu(W_self x_i + W_agg agg_i + b')`, plus an
//!   identity skip from the second layer on when residual is enabled.
//!
//! Parameter shapes depend on the model configuration and feature dims only,
//! never on the user count — the same weights run on any K.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{SegmentMode, Tape, ValueId};
use crate::channel::ChannelSample;
use crate::complex::{cx_extract, cx_norm_sq, cx_scale_by, CxValue};
use crate::error::{CoreError, Result};
use crate::graph::{EdgeFeatureMode, GraphKind, RadioGraph};
use crate::objectives::BeamMatrix;
use crate::tensor::Tensor;

/// Slope of the leaky-relu used in attention scoring.
const ATTENTION_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Sum,
    Max,
    Attention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    /// Output projection onto the power ball.
    Af,
    /// Penalty term in the loss; raw output emitted.
    Pm,
    /// Lagrangian term with a dual-updated multiplier; raw output emitted.
    Ldm,
}

impl std::str::FromStr for ConstraintMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "af" => Ok(ConstraintMode::Af),
            "pm" => Ok(ConstraintMode::Pm),
            "ldm" => Ok(ConstraintMode::Ldm),
            other => Err(format!("unknown constraint mode '{other}' (expected af|pm|ldm)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineModel {
    None,
    /// Dense network on the flattened channel; fixed problem dimensions.
    Mlp,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub representation: GraphKind,
    pub depth: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub aggregation: Aggregation,
    pub residual: bool,
    pub readout_hidden: usize,
    pub constraint_mode: ConstraintMode,
    pub leaky_alpha: f64,
    pub baseline_model: BaselineModel,
    /// Link-graph edge features (bipartite graphs always carry CSI edges).
    pub edge_mode: EdgeFeatureMode,
    /// Width of the dense baseline's hidden layers.
    pub mlp_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            representation: GraphKind::LinkGraph,
            depth: 3,
            hidden_dim: 64,
            heads: 4,
            aggregation: Aggregation::Mean,
            residual: false,
            readout_hidden: 64,
            constraint_mode: ConstraintMode::Af,
            leaky_alpha: 0.2,
            baseline_model: BaselineModel::None,
            edge_mode: EdgeFeatureMode::None,
            mlp_hidden: 128,
        }
    }
}

impl ModelConfig {
    /// Mean aggregation, no residual.
    pub fn gcn() -> Self {
        ModelConfig::default()
    }

    /// Four-head attention aggregation, no residual.
    pub fn gat() -> Self {
        ModelConfig { aggregation: Aggregation::Attention, heads: 4, ..ModelConfig::default() }
    }

    /// Attention plus residual updating.
    pub fn resgat() -> Self {
        ModelConfig { residual: true, ..ModelConfig::gat() }
    }

    /// Dense baseline on the flattened channel matrix.
    pub fn mlp() -> Self {
        ModelConfig { baseline_model: BaselineModel::Mlp, ..ModelConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(CoreError::Config("depth must be >= 1".into()));
        }
        if self.heads < 1 {
            return Err(CoreError::Config("heads must be >= 1".into()));
        }
        if self.aggregation == Aggregation::Attention && self.hidden_dim % self.heads != 0 {
            return Err(CoreError::Config(format!(
                "hidden_dim {} not divisible by heads {}",
                self.hidden_dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Input dimensions the parameter shapes depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    /// Initial node feature width (2N for link graphs, the learned-constant
    /// width for bipartite graphs).
    pub node_input: usize,
    pub edge: Option<usize>,
    pub n_antennas: usize,
    /// Only the dense baseline's shapes depend on this.
    pub k_users: usize,
}

impl FeatureDims {
    pub fn for_config(config: &ModelConfig, n_antennas: usize, k_users: usize) -> Self {
        let (node_input, edge) = match config.representation {
            GraphKind::LinkGraph => (
                2 * n_antennas,
                match config.edge_mode {
                    EdgeFeatureMode::None => None,
                    EdgeFeatureMode::Correlation => Some(1),
                },
            ),
            GraphKind::Bipartite => (config.hidden_dim, Some(2)),
        };
        FeatureDims { node_input, edge, n_antennas, k_users }
    }
}

/// Named flat parameter store.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    pub tensors: BTreeMap<String, Tensor>,
    /// Lagrange multiplier for LDM; moved only by dual updates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl ParamSet {
    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors.get(name).unwrap_or_else(|| panic!("missing parameter '{name}'"))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.numel()).sum()
    }

    /// All tensors concatenated in name order (lambda excluded).
    pub fn flatten(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.num_scalars());
        for t in self.tensors.values() {
            data.extend_from_slice(t.data());
        }
        Tensor::from_vec(vec![data.len()], data)
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn unflatten(&self, flat: &Tensor) -> ParamSet {
        assert_eq!(flat.numel(), self.num_scalars(), "unflatten: size mismatch");
        let mut tensors = BTreeMap::new();
        let mut off = 0;
        for (name, t) in &self.tensors {
            let n = t.numel();
            tensors.insert(
                name.clone(),
                Tensor::from_vec(t.shape().to_vec(), flat.data()[off..off + n].to_vec()),
            );
            off += n;
        }
        ParamSet { tensors, lambda: self.lambda }
    }
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, shape: Vec<usize>) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data)
}

/// Xavier-uniform weights, zero biases, lambda = 0.1 under LDM.
pub fn init_params(config: &ModelConfig, dims: &FeatureDims, seed: u64) -> Result<ParamSet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors: Vec<(String, Tensor)> = Vec::new();
    let d = config.hidden_dim;

    if config.baseline_model == BaselineModel::Mlp {
        let input = 2 * dims.k_users * dims.n_antennas;
        let m = config.mlp_hidden;
        let output = input;
        tensors.push(("mlp.w1".into(), xavier(&mut rng, input, m, vec![input, m])));
        tensors.push(("mlp.b1".into(), Tensor::zeros(vec![1, m])));
        tensors.push(("mlp.w2".into(), xavier(&mut rng, m, m, vec![m, m])));
        tensors.push(("mlp.b2".into(), Tensor::zeros(vec![1, m])));
        tensors.push(("mlp.w3".into(), xavier(&mut rng, m, output, vec![m, output])));
        tensors.push(("mlp.b3".into(), Tensor::zeros(vec![1, output])));
    } else {
        if config.representation == GraphKind::Bipartite {
            tensors.push(("init.antenna".into(), xavier(&mut rng, 1, d, vec![1, d])));
            tensors.push(("init.user".into(), xavier(&mut rng, 1, d, vec![1, d])));
        }
        for l in 0..config.depth {
            let d_in = if l == 0 { dims.node_input } else { d };
            let p = format!("layer{l:02}");
            tensors.push((format!("{p}.w_self"), xavier(&mut rng, d_in, d, vec![d_in, d])));
            tensors.push((format!("{p}.w_agg"), xavier(&mut rng, d, d, vec![d, d])));
            tensors.push((format!("{p}.b_upd"), Tensor::zeros(vec![1, d])));
            if config.aggregation == Aggregation::Attention {
                let dh = d / config.heads;
                for h in 0..config.heads {
                    tensors.push((format!("{p}.head{h}.u"), xavier(&mut rng, d_in, dh, vec![d_in, dh])));
                    tensors.push((format!("{p}.head{h}.a"), xavier(&mut rng, 2 * dh, 1, vec![2 * dh, 1])));
                    if let Some(e) = dims.edge {
                        tensors.push((format!("{p}.head{h}.e"), xavier(&mut rng, e, dh, vec![e, dh])));
                    }
                }
            } else {
                tensors.push((format!("{p}.w_neigh"), xavier(&mut rng, d_in, d, vec![d_in, d])));
                tensors.push((format!("{p}.b_msg"), Tensor::zeros(vec![1, d])));
                if let Some(e) = dims.edge {
                    tensors.push((format!("{p}.w_edge"), xavier(&mut rng, e, d, vec![e, d])));
                }
            }
        }
        let r = config.readout_hidden;
        let (ri, ro) = match config.representation {
            GraphKind::LinkGraph => (d, 2 * dims.n_antennas),
            GraphKind::Bipartite => (2 * d, 2),
        };
        tensors.push(("readout.w1".into(), xavier(&mut rng, ri, r, vec![ri, r])));
        tensors.push(("readout.b1".into(), Tensor::zeros(vec![1, r])));
        tensors.push(("readout.w2".into(), xavier(&mut rng, r, ro, vec![r, ro])));
        tensors.push(("readout.b2".into(), Tensor::zeros(vec![1, ro])));
    }

    let lambda = if config.constraint_mode == ConstraintMode::Ldm { Some(0.1) } else { None };
    Ok(ParamSet { tensors: tensors.into_iter().collect(), lambda })
}

/// Tape handles for every named parameter.
pub struct BoundParams {
    ids: BTreeMap<String, ValueId>,
}

impl BoundParams {
    pub fn id(&self, name: &str) -> ValueId {
        *self.ids.get(name).unwrap_or_else(|| panic!("unbound parameter '{name}'"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ValueId)> {
        self.ids.iter()
    }
}

/// Register every parameter tensor as a trainable leaf.
pub fn bind_params(tape: &mut Tape, params: &ParamSet) -> BoundParams {
    let ids = params.tensors.iter().map(|(n, t)| (n.clone(), tape.param(t.clone()))).collect();
    BoundParams { ids }
}

/// Bind parameters as slices of one flat vector already on the tape, so a
/// scalar function of the model differentiates w.r.t. a single input.
pub fn bind_params_from_flat(tape: &mut Tape, flat: ValueId, template: &ParamSet) -> BoundParams {
    let mut ids = BTreeMap::new();
    let mut off = 0;
    for (name, t) in &template.tensors {
        let n = t.numel();
        let s = tape.slice(flat, 0, off, n);
        let r = tape.reshape(s, t.shape().to_vec());
        ids.insert(name.clone(), r);
        off += n;
    }
    BoundParams { ids }
}

fn affine(tape: &mut Tape, x: ValueId, w: ValueId, b: ValueId) -> ValueId {
    let rows = tape.value(x).rows();
    let xw = tape.matmul(x, w);
    let ones = tape.leaf(Tensor::full(vec![rows, 1], 1.0));
    let bias = tape.matmul(ones, b);
    tape.add(xw, bias)
}

/// Multi-head softmax aggregation of projected neighbor features.
///
/// Per head: `s_{j->i} = leaky_relu(a^T [U x_i || U x_j])`, weights from a
/// per-destination softmax, output `sum_j alpha_{j->i} U x_j`; heads are
/// concatenated back to `hidden_dim`. When the graph carries edge features
/// the per-head edge projection joins both the key and the aggregated value,
/// which reduces to the plain form on featureless graphs.
pub fn attention_aggregate(
    tape: &mut Tape,
    bp: &BoundParams,
    config: &ModelConfig,
    graph: &RadioGraph,
    x: ValueId,
    edge_feats: Option<ValueId>,
    layer: usize,
) -> ValueId {
    let nodes = graph.num_nodes();
    let dh = config.hidden_dim / config.heads;
    let prefix = format!("layer{layer:02}");
    let mut per_head = Vec::with_capacity(config.heads);
    for h in 0..config.heads {
        let u = bp.id(&format!("{prefix}.head{h}.u"));
        let proj = tape.matmul(x, u);
        let mut z_src = tape.gather_rows(proj, graph.srcs.clone());
        if let Some(ef) = edge_feats {
            let e = bp.id(&format!("{prefix}.head{h}.e"));
            let ep = tape.matmul(ef, e);
            z_src = tape.add(z_src, ep);
        }
        let z_dst = tape.gather_rows(proj, graph.dsts.clone());
        let cat = tape.concat(&[z_dst, z_src], 1);
        let a = bp.id(&format!("{prefix}.head{h}.a"));
        let scores = tape.matmul(cat, a);
        let scores = tape.leaky_relu(scores, ATTENTION_SLOPE);
        let flat = tape.reshape(scores, vec![graph.num_edges()]);
        let alpha = tape.segment_softmax(flat, graph.dsts.clone(), nodes);
        let alpha_col = tape.reshape(alpha, vec![graph.num_edges(), 1]);
        let ones = tape.leaf(Tensor::full(vec![1, dh], 1.0));
        let alpha_mat = tape.matmul(alpha_col, ones);
        let weighted = tape.mul(alpha_mat, z_src);
        per_head.push(tape.segment_reduce(weighted, graph.dsts.clone(), nodes, SegmentMode::Sum));
    }
    if per_head.len() == 1 {
        per_head[0]
    } else {
        tape.concat(&per_head, 1)
    }
}

/// One aggregation + update round. `layer` selects the parameter block.
pub fn mp_layer(
    tape: &mut Tape,
    bp: &BoundParams,
    config: &ModelConfig,
    graph: &RadioGraph,
    x: ValueId,
    edge_feats: Option<ValueId>,
    layer: usize,
) -> ValueId {
    let nodes = graph.num_nodes();
    let d = config.hidden_dim;
    let d_in = tape.value(x).cols();
    let prefix = format!("layer{layer:02}");

    let agg = if graph.num_edges() == 0 {
        // no in-edges anywhere: aggregation is the empty-segment zero row
        tape.leaf(Tensor::zeros(vec![nodes, d]))
    } else if config.aggregation == Aggregation::Attention {
        attention_aggregate(tape, bp, config, graph, x, edge_feats, layer)
    } else {
        let xs = tape.gather_rows(x, graph.srcs.clone());
        let wn = bp.id(&format!("{prefix}.w_neigh"));
        let mut pre = tape.matmul(xs, wn);
        if let Some(ef) = edge_feats {
            let we = bp.id(&format!("{prefix}.w_edge"));
            let et = tape.matmul(ef, we);
            pre = tape.add(pre, et);
        }
        let ones = tape.leaf(Tensor::full(vec![graph.num_edges(), 1], 1.0));
        let bm = bp.id(&format!("{prefix}.b_msg"));
        let bias = tape.matmul(ones, bm);
        let pre = tape.add(pre, bias);
        let msgs = tape.leaky_relu(pre, config.leaky_alpha);
        let mode = match config.aggregation {
            Aggregation::Mean => SegmentMode::Mean,
            Aggregation::Sum => SegmentMode::Sum,
            Aggregation::Max => SegmentMode::Max,
            Aggregation::Attention => unreachable!(),
        };
        tape.segment_reduce(msgs, graph.dsts.clone(), nodes, mode)
    };

    let ws = bp.id(&format!("{prefix}.w_self"));
    let wa = bp.id(&format!("{prefix}.w_agg"));
    let self_term = tape.matmul(x, ws);
    let agg_term = tape.matmul(agg, wa);
    let sum = tape.add(self_term, agg_term);
    let ones = tape.leaf(Tensor::full(vec![nodes, 1], 1.0));
    let bu = bp.id(&format!("{prefix}.b_upd"));
    let bias = tape.matmul(ones, bu);
    let pre = tape.add(sum, bias);
    let mut out = tape.leaky_relu(pre, config.leaky_alpha);
    // first layer projects input -> hidden and never carries a skip
    if config.residual && layer > 0 && d_in == d {
        out = tape.add(out, x);
    }
    out
}

/// Final node embeddings after all message-passing rounds.
pub fn node_embeddings_on_tape(
    tape: &mut Tape,
    bp: &BoundParams,
    config: &ModelConfig,
    graph: &RadioGraph,
) -> Result<ValueId> {
    let mut x = match config.representation {
        GraphKind::LinkGraph => {
            let f = graph
                .node_features
                .as_ref()
                .ok_or_else(|| CoreError::Dimension("link graph without node features".into()))?;
            tape.leaf(f.clone())
        }
        GraphKind::Bipartite => {
            let n = graph.provenance.n_antennas;
            let k = graph.provenance.k_users;
            let ia = bp.id("init.antenna");
            let iu = bp.id("init.user");
            let ants = tape.gather_rows(ia, Arc::new(vec![0; n]));
            let users = tape.gather_rows(iu, Arc::new(vec![0; k]));
            tape.concat(&[ants, users], 0)
        }
    };
    let edge_feats = graph.edge_features.as_ref().map(|f| tape.leaf(f.clone()));
    for l in 0..config.depth {
        x = mp_layer(tape, bp, config, graph, x, edge_feats, l);
    }
    Ok(x)
}

/// Convenience wrapper returning the embeddings as a plain tensor.
pub fn node_embeddings(config: &ModelConfig, params: &ParamSet, graph: &RadioGraph) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bp = bind_params(&mut tape, params);
    let x = node_embeddings_on_tape(&mut tape, &bp, config, graph)?;
    Ok(tape.value(x).clone())
}

/// Shared-MLP readout producing beams-as-rows (K x N complex).
fn readout(
    tape: &mut Tape,
    bp: &BoundParams,
    config: &ModelConfig,
    graph: &RadioGraph,
    x: ValueId,
) -> CxValue {
    let w1 = bp.id("readout.w1");
    let b1 = bp.id("readout.b1");
    let w2 = bp.id("readout.w2");
    let b2 = bp.id("readout.b2");
    match config.representation {
        GraphKind::LinkGraph => {
            let n = graph.provenance.n_antennas;
            let h = affine(tape, x, w1, b1);
            let h = tape.leaky_relu(h, config.leaky_alpha);
            let y = affine(tape, h, w2, b2); // [K, 2N]
            let re = tape.slice(y, 1, 0, n);
            let im = tape.slice(y, 1, n, n);
            CxValue { re, im }
        }
        GraphKind::Bipartite => {
            let n = graph.provenance.n_antennas;
            let k = graph.provenance.k_users;
            let ants = tape.slice(x, 0, 0, n);
            let users = tape.slice(x, 0, n, k);
            // user-major pair grid: row k*N + m pairs user k with antenna m
            let mut user_idx = Vec::with_capacity(k * n);
            let mut ant_idx = Vec::with_capacity(k * n);
            for u in 0..k {
                for m in 0..n {
                    user_idx.push(u);
                    ant_idx.push(m);
                }
            }
            let ua = tape.gather_rows(ants, Arc::new(ant_idx));
            let uu = tape.gather_rows(users, Arc::new(user_idx));
            let pairs = tape.concat(&[ua, uu], 1); // [K N, 2d]
            let h = affine(tape, pairs, w1, b1);
            let h = tape.leaky_relu(h, config.leaky_alpha);
            let y = affine(tape, h, w2, b2); // [K N, 2]
            let re = tape.slice(y, 1, 0, 1);
            let im = tape.slice(y, 1, 1, 1);
            let re = tape.reshape(re, vec![k, n]);
            let im = tape.reshape(im, vec![k, n]);
            CxValue { re, im }
        }
    }
}

/// Scale onto the power ball when the raw power exceeds the budget; interior
/// points pass through untouched. Returns the output and its raw power.
pub fn power_activation(tape: &mut Tape, wt: CxValue, power_budget: f64) -> (CxValue, ValueId) {
    assert!(power_budget > 0.0, "power_activation: budget must be positive");
    let raw = cx_norm_sq(tape, wt);
    if tape.value(raw).item() <= power_budget {
        (wt, raw)
    } else {
        let inv = tape.recip_pos(raw);
        let ratio = tape.scale(inv, power_budget);
        let factor = tape.sqrt(ratio);
        (cx_scale_by(tape, wt, factor), raw)
    }
}

/// Tape handles produced by a model forward pass.
pub struct ForwardOut {
    /// Emitted beams as rows, K x N.
    pub wt: CxValue,
    /// Squared Frobenius norm before any projection.
    pub raw_power: ValueId,
    /// Squared Frobenius norm of the emitted beams.
    pub power: ValueId,
}

/// Full forward pass on an existing tape. AF mode projects the output; PM
/// and LDM emit the raw readout and leave feasibility to the loss.
pub fn forward_on_tape(
    tape: &mut Tape,
    bp: &BoundParams,
    config: &ModelConfig,
    graph: &RadioGraph,
    power_budget: f64,
) -> Result<ForwardOut> {
    if graph.kind != config.representation {
        return Err(CoreError::Dimension(format!(
            "graph kind {:?} does not match model representation {:?}",
            graph.kind, config.representation
        )));
    }
    let x = node_embeddings_on_tape(tape, bp, config, graph)?;
    let wt_raw = readout(tape, bp, config, graph, x);
    match config.constraint_mode {
        ConstraintMode::Af => {
            let (wt, raw_power) = power_activation(tape, wt_raw, power_budget);
            let power = cx_norm_sq(tape, wt);
            Ok(ForwardOut { wt, raw_power, power })
        }
        ConstraintMode::Pm | ConstraintMode::Ldm => {
            let raw_power = cx_norm_sq(tape, wt_raw);
            Ok(ForwardOut { wt: wt_raw, raw_power, power: raw_power })
        }
    }
}

fn beam_from_out(tape: &Tape, out: &ForwardOut, power_budget: f64) -> BeamMatrix {
    let wt = cx_extract(tape, out.wt);
    // beams-as-rows -> N x K columns
    let w = crate::linalg::CxMat::from_fn(wt.cols(), wt.rows(), |n, k| wt.at(k, n));
    BeamMatrix::new(w, tape.value(out.raw_power).item(), power_budget)
}

/// One-shot inference: graph in, beam matrix out.
pub fn model_forward(
    config: &ModelConfig,
    params: &ParamSet,
    graph: &RadioGraph,
    power_budget: f64,
) -> Result<BeamMatrix> {
    let mut tape = Tape::new();
    let bp = bind_params(&mut tape, params);
    let out = forward_on_tape(&mut tape, &bp, config, graph, power_budget)?;
    Ok(beam_from_out(&tape, &out, power_budget))
}

/// Dense-baseline forward on an existing tape. Errors when the sample's
/// dimensions differ from the training dimensions baked into the weights.
pub fn mlp_forward_on_tape(
    tape: &mut Tape,
    bp: &BoundParams,
    config: &ModelConfig,
    dims: &FeatureDims,
    sample: &ChannelSample,
    power_budget: f64,
) -> Result<ForwardOut> {
    let k = sample.k_users();
    let n = sample.n_antennas();
    if k != dims.k_users || n != dims.n_antennas {
        return Err(CoreError::Dimension(format!(
            "mlp baseline trained for {}x{}, got sample {}x{}",
            dims.k_users, dims.n_antennas, k, n
        )));
    }
    let mut flat = Vec::with_capacity(2 * k * n);
    flat.extend(sample.h.data().iter().map(|z| z.re));
    flat.extend(sample.h.data().iter().map(|z| z.im));
    let x = tape.leaf(Tensor::from_vec(vec![1, 2 * k * n], flat));

    let h = affine(tape, x, bp.id("mlp.w1"), bp.id("mlp.b1"));
    let h = tape.leaky_relu(h, config.leaky_alpha);
    let h = affine(tape, h, bp.id("mlp.w2"), bp.id("mlp.b2"));
    let h = tape.leaky_relu(h, config.leaky_alpha);
    let y = affine(tape, h, bp.id("mlp.w3"), bp.id("mlp.b3")); // [1, 2NK]

    let re = tape.slice(y, 1, 0, n * k);
    let im = tape.slice(y, 1, n * k, n * k);
    let re = tape.reshape(re, vec![k, n]);
    let im = tape.reshape(im, vec![k, n]);
    let wt_raw = CxValue { re, im };
    match config.constraint_mode {
        ConstraintMode::Af => {
            let (wt, raw_power) = power_activation(tape, wt_raw, power_budget);
            let power = cx_norm_sq(tape, wt);
            Ok(ForwardOut { wt, raw_power, power })
        }
        ConstraintMode::Pm | ConstraintMode::Ldm => {
            let raw_power = cx_norm_sq(tape, wt_raw);
            Ok(ForwardOut { wt: wt_raw, raw_power, power: raw_power })
        }
    }
}

/// One-shot dense-baseline inference.
pub fn mlp_baseline_forward(
    config: &ModelConfig,
    dims: &FeatureDims,
    params: &ParamSet,
    sample: &ChannelSample,
    power_budget: f64,
) -> Result<BeamMatrix> {
    let mut tape = Tape::new();
    let bp = bind_params(&mut tape, params);
    let out = mlp_forward_on_tape(&mut tape, &bp, config, dims, sample, power_budget)?;
    Ok(beam_from_out(&tape, &out, power_budget))
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Training provenance stored with the weights.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainMeta {
    pub utility: Option<crate::objectives::UtilitySpec>,
    pub learning: Option<String>,
    pub seed: u64,
    pub epochs_trained: usize,
    pub epochs_to_converge: Option<usize>,
    pub training_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

/// Everything needed to rebuild and run a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub dims: FeatureDims,
    pub params: ParamSet,
    pub meta: TrainMeta,
}

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)
            .map_err(|e| CoreError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Checkpoint> {
        let file = std::fs::File::open(path)?;
        serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| CoreError::Parse { line: 0, msg: e.to_string() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_channels, DatasetHeader};
    use crate::graph::{build_bipartite_graph, build_link_graph, permute_graph, PermutationMap};
    use rand::seq::SliceRandom;

    fn sample(k: usize, n: usize, seed: u64) -> ChannelSample {
        let header = DatasetHeader::new(k, n, 1.0, 10.0, 1, seed);
        sample_channels(&header).unwrap().remove(0)
    }

    fn small_config() -> ModelConfig {
        ModelConfig { hidden_dim: 16, readout_hidden: 16, depth: 2, heads: 2, ..ModelConfig::default() }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let config = ModelConfig { aggregation: Aggregation::Attention, ..small_config() };
        let dims = FeatureDims::for_config(&config, 8, 4);
        let a = init_params(&config, &dims, 5).unwrap();
        let b = init_params(&config, &dims, 5).unwrap();
        assert_eq!(a, b);

        for (name, t) in &a.tensors {
            let (fi, fo) = if t.shape().len() == 2 { (t.shape()[0], t.shape()[1]) } else { (1, t.numel()) };
            let bound = (6.0 / (fi + fo) as f64).sqrt() + 1e-12;
            assert!(
                t.data().iter().all(|v| v.abs() <= bound),
                "{name} exceeds xavier bound"
            );
        }
    }

    #[test]
    fn parameter_count_ignores_user_count() {
        let config = small_config();
        let d4 = FeatureDims::for_config(&config, 8, 4);
        let d9 = FeatureDims::for_config(&config, 8, 9);
        let p4 = init_params(&config, &d4, 1).unwrap();
        let p9 = init_params(&config, &d9, 1).unwrap();
        assert_eq!(p4.num_scalars(), p9.num_scalars());
        assert_eq!(p4, p9);
    }

    #[test]
    fn isolated_node_uses_zero_aggregate() {
        // K=1 link graph has no edges; update must reduce to the self path
        let config = small_config();
        let s = sample(1, 4, 3);
        let g = build_link_graph(&s, EdgeFeatureMode::None);
        let dims = FeatureDims::for_config(&config, 4, 1);
        let params = init_params(&config, &dims, 7).unwrap();

        let mut tape = Tape::new();
        let bp = bind_params(&mut tape, &params);
        let x = tape.leaf(g.node_features.clone().unwrap());
        let out = mp_layer(&mut tape, &bp, &config, &g, x, None, 0);

        // manual: leaky(x W_self + b_upd) since agg = 0 and W_agg 0-input
        let mut manual = Tape::new();
        let xm = manual.leaf(g.node_features.clone().unwrap());
        let ws = manual.leaf(params.get("layer00.w_self").clone());
        let bu = manual.leaf(params.get("layer00.b_upd").clone());
        let xw = manual.matmul(xm, ws);
        let pre = manual.add(xw, bu);
        let expect = manual.leaky_relu(pre, config.leaky_alpha);

        for (a, b) in tape.value(out).data().iter().zip(manual.value(expect).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_nodes_get_identical_updates() {
        let config = small_config();
        let mut s = sample(2, 4, 9);
        let row: Vec<_> = s.h.row(0).to_vec();
        for (j, z) in row.iter().enumerate() {
            s.h.set(1, j, *z);
        }
        let g = build_link_graph(&s, EdgeFeatureMode::None);
        let dims = FeatureDims::for_config(&config, 4, 2);
        let params = init_params(&config, &dims, 11).unwrap();
        let emb = node_embeddings(&config, &params, &g).unwrap();
        let c = emb.cols();
        for j in 0..c {
            assert!((emb.at(0, j) - emb.at(1, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn mp_layer_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for agg in [Aggregation::Mean, Aggregation::Sum, Aggregation::Max, Aggregation::Attention] {
            let config = ModelConfig { aggregation: agg, ..small_config() };
            let s = sample(5, 4, 21);
            let g = build_link_graph(&s, EdgeFeatureMode::None);
            let dims = FeatureDims::for_config(&config, 4, 5);
            let params = init_params(&config, &dims, 3).unwrap();

            let mut perm: Vec<usize> = (0..5).collect();
            perm.shuffle(&mut rng);
            let pm = PermutationMap::new(perm.clone(), (0..4).collect()).unwrap();
            let pg = permute_graph(&g, &pm).unwrap();

            let base = node_embeddings(&config, &params, &g).unwrap();
            let permuted = node_embeddings(&config, &params, &pg).unwrap();
            for i in 0..5 {
                for j in 0..base.cols() {
                    let d = (base.at(i, j) - permuted.at(perm[i], j)).abs();
                    assert!(d < 1e-9, "agg {agg:?}: node {i} col {j} differs by {d}");
                }
            }
        }
    }

    #[test]
    fn attention_single_neighbor_weight_is_one() {
        // K=2 link graph: each node's sole in-neighbor gets alpha = 1, so the
        // aggregate equals the projected neighbor feature.
        let config = ModelConfig { aggregation: Aggregation::Attention, heads: 1, ..small_config() };
        let s = sample(2, 4, 33);
        let g = build_link_graph(&s, EdgeFeatureMode::None);
        let dims = FeatureDims::for_config(&config, 4, 2);
        let params = init_params(&config, &dims, 5).unwrap();

        let mut tape = Tape::new();
        let bp = bind_params(&mut tape, &params);
        let x = tape.leaf(g.node_features.clone().unwrap());
        let agg = attention_aggregate(&mut tape, &bp, &config, &g, x, None, 0);
        let u = bp.id("layer00.head0.u");
        let proj = tape.matmul(x, u);
        // node 0 aggregates node 1 and vice versa
        let d = config.hidden_dim;
        for j in 0..d {
            assert!((tape.value(agg).at(0, j) - tape.value(proj).at(1, j)).abs() < 1e-12);
            assert!((tape.value(agg).at(1, j) - tape.value(proj).at(0, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_uniform_over_identical_neighbors() {
        // all nodes share one feature vector: weights are 1/deg and the
        // aggregate equals the shared projected feature
        let config = ModelConfig { aggregation: Aggregation::Attention, heads: 2, ..small_config() };
        let mut s = sample(4, 4, 41);
        let row: Vec<_> = s.h.row(0).to_vec();
        for i in 1..4 {
            for (j, z) in row.iter().enumerate() {
                s.h.set(i, j, *z);
            }
        }
        let g = build_link_graph(&s, EdgeFeatureMode::None);
        let dims = FeatureDims::for_config(&config, 4, 4);
        let params = init_params(&config, &dims, 13).unwrap();

        let mut tape = Tape::new();
        let bp = bind_params(&mut tape, &params);
        let x = tape.leaf(g.node_features.clone().unwrap());
        let agg = attention_aggregate(&mut tape, &bp, &config, &g, x, None, 0);
        let dh = config.hidden_dim / 2;
        for h in 0..2 {
            let u = bp.id(&format!("layer00.head{h}.u"));
            let proj = tape.matmul(x, u);
            for i in 0..4 {
                for j in 0..dh {
                    let got = tape.value(agg).at(i, h * dh + j);
                    let want = tape.value(proj).at(0, j);
                    assert!((got - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn readout_shapes_and_weight_sharing() {
        let config = small_config();
        let s = sample(4, 8, 55);
        let g = build_link_graph(&s, EdgeFeatureMode::None);
        let dims = FeatureDims::for_config(&config, 8, 4);
        let params = init_params(&config, &dims, 2).unwrap();
        let bm = model_forward(&config, &params, &g, 10.0).unwrap();
        assert_eq!(bm.w.rows(), 8);
        assert_eq!(bm.w.cols(), 4);

        // identical users -> identical beam columns
        let mut s2 = sample(2, 4, 56);
        let row: Vec<_> = s2.h.row(0).to_vec();
        for (j, z) in row.iter().enumerate() {
            s2.h.set(1, j, *z);
        }
        let g2 = build_link_graph(&s2, EdgeFeatureMode::None);
        let dims2 = FeatureDims::for_config(&config, 4, 2);
        let params2 = init_params(&config, &dims2, 4).unwrap();
        let bm2 = model_forward(&config, &params2, &g2, 10.0).unwrap();
        for n in 0..4 {
            assert!((bm2.w.at(n, 0) - bm2.w.at(n, 1)).norm() < 1e-12);
        }
    }

    #[test]
    fn bipartite_forward_fills_every_pair() {
        let config = ModelConfig { representation: GraphKind::Bipartite, ..small_config() };
        let s = sample(4, 8, 57);
        let g = build_bipartite_graph(&s);
        let dims = FeatureDims::for_config(&config, 8, 4);
        let params = init_params(&config, &dims, 6).unwrap();
        let bm = model_forward(&config, &params, &g, 10.0).unwrap();
        assert_eq!(bm.w.rows(), 8);
        assert_eq!(bm.w.cols(), 4);
        assert!(bm.w.all_finite());
    }

    #[test]
    fn power_activation_contract() {
        let run = |scale: f64, p: f64| {
            let mut tape = Tape::new();
            let re = tape.leaf(Tensor::from_vec(vec![1, 2], vec![scale, 0.0]));
            let im = tape.leaf(Tensor::from_vec(vec![1, 2], vec![0.0, scale]));
            let (w, raw) = power_activation(&mut tape, CxValue { re, im }, p);
            let pw = cx_norm_sq(&mut tape, w);
            (tape.value(pw).item(), tape.value(raw).item())
        };
        // |W|^2 = 4, P = 1 -> projected to the boundary
        let (p_out, raw) = run(2.0f64.sqrt(), 1.0);
        assert!((raw - 4.0).abs() < 1e-12);
        assert!((p_out - 1.0).abs() < 1e-12);
        // interior point passes through
        let (p_out, raw) = run(0.5, 1.0);
        assert!((raw - 0.5).abs() < 1e-12);
        assert_eq!(p_out, 0.5);
    }

    #[test]
    fn af_outputs_are_always_feasible() {
        let config = ModelConfig { aggregation: Aggregation::Attention, residual: true, ..small_config() };
        let dims = FeatureDims::for_config(&config, 8, 4);
        let params = init_params(&config, &dims, 8).unwrap();
        for seed in 0..20 {
            let s = sample(4, 8, 300 + seed);
            let g = build_link_graph(&s, EdgeFeatureMode::None);
            let bm = model_forward(&config, &params, &g, 10.0).unwrap();
            assert!(bm.feasible);
            assert!(bm.power() <= 10.0 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let config = small_config();
        let s = sample(4, 8, 77);
        let g = build_link_graph(&s, EdgeFeatureMode::None);
        let dims = FeatureDims::for_config(&config, 8, 4);
        let params = init_params(&config, &dims, 9).unwrap();
        let a = model_forward(&config, &params, &g, 10.0).unwrap();
        let b = model_forward(&config, &params, &g, 10.0).unwrap();
        assert_eq!(a.w, b.w);
    }

    #[test]
    fn same_params_run_on_k_2_through_12() {
        let config = ModelConfig { aggregation: Aggregation::Attention, residual: true, ..small_config() };
        let dims = FeatureDims::for_config(&config, 8, 4);
        let params = init_params(&config, &dims, 10).unwrap();
        for k in 2..=12 {
            let s = sample(k, 8, 400 + k as u64);
            let g = build_link_graph(&s, EdgeFeatureMode::None);
            let bm = model_forward(&config, &params, &g, 10.0).unwrap();
            assert_eq!(bm.w.cols(), k);
            assert!(bm.w.all_finite());
        }
    }

    #[test]
    fn mlp_baseline_rejects_unseen_dims() {
        let config = ModelConfig { baseline_model: BaselineModel::Mlp, ..small_config() };
        let dims = FeatureDims::for_config(&config, 8, 4);
        let params = init_params(&config, &dims, 12).unwrap();

        let ok = mlp_baseline_forward(&config, &dims, &params, &sample(4, 8, 500), 10.0).unwrap();
        assert_eq!(ok.w.rows(), 8);
        assert_eq!(ok.w.cols(), 4);
        assert!(ok.feasible);

        let err = mlp_baseline_forward(&config, &dims, &params, &sample(5, 8, 501), 10.0);
        assert!(matches!(err, Err(CoreError::Dimension(_))));
    }

    #[test]
    fn deep_no_residual_mean_aggregation_oversmooths() {
        // pairwise feature spread at depth 16 should shrink vs depth 2 on
        // nearly all random inits
        let pairwise = |emb: &Tensor| {
            let k = emb.rows();
            let mut total = 0.0;
            let mut count = 0;
            for i in 0..k {
                for j in i + 1..k {
                    let d: f64 = (0..emb.cols())
                        .map(|c| (emb.at(i, c) - emb.at(j, c)).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    total += d;
                    count += 1;
                }
            }
            total / count as f64
        };
        let mut wins = 0;
        for seed in 0..100u64 {
            let s = sample(6, 4, 7000 + seed);
            let g = build_link_graph(&s, EdgeFeatureMode::None);
            let shallow = ModelConfig { depth: 2, hidden_dim: 16, readout_hidden: 16, residual: false, ..ModelConfig::default() };
            let deep = ModelConfig { depth: 16, ..shallow.clone() };
            let dims = FeatureDims::for_config(&shallow, 4, 6);
            let ps = init_params(&shallow, &dims, seed).unwrap();
            let pd = init_params(&deep, &dims, seed).unwrap();
            let es = node_embeddings(&shallow, &ps, &g).unwrap();
            let ed = node_embeddings(&deep, &pd, &g).unwrap();
            if pairwise(&ed) < pairwise(&es) {
                wins += 1;
            }
        }
        assert!(wins >= 90, "over-smoothing direction held on only {wins}/100 inits");
    }

    #[test]
    fn checkpoint_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let config = ModelConfig { constraint_mode: ConstraintMode::Ldm, ..small_config() };
        let dims = FeatureDims::for_config(&config, 8, 4);
        let params = init_params(&config, &dims, 1).unwrap();
        let ckpt = Checkpoint {
            config,
            dims,
            params,
            meta: TrainMeta { seed: 1, epochs_trained: 3, ..TrainMeta::default() },
        };
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn attention_requires_divisible_hidden() {
        let config = ModelConfig { aggregation: Aggregation::Attention, hidden_dim: 10, heads: 4, ..ModelConfig::default() };
        assert!(config.validate().is_err());
    }

    use rand_chacha::ChaCha8Rng;
    use rand::SeedableRng;
}
