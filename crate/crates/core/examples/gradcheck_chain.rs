//! Finite-difference check of the full graph -> model -> loss chain.

use beamgnn_core::autodiff::{grad_check, Tape};
use beamgnn_core::channel::{sample_channels, DatasetHeader};
use beamgnn_core::gnn::{
    self, bind_params_from_flat, Aggregation, ConstraintMode, FeatureDims, ModelConfig,
};
use beamgnn_core::graph::{build_bipartite_graph, build_link_graph, EdgeFeatureMode, GraphKind};
use beamgnn_core::objectives::{self, UtilityKind, UtilitySpec};
use beamgnn_core::trainer::LearningMode;

fn main() {
    let mut worst_overall = 0.0f64;
    for trial in 0..12 {
        let agg = match trial % 4 {
            0 => Aggregation::Mean,
            1 => Aggregation::Sum,
            2 => Aggregation::Max,
            _ => Aggregation::Attention,
        };
        let cm = match trial % 3 {
            0 => ConstraintMode::Af,
            1 => ConstraintMode::Pm,
            _ => ConstraintMode::Ldm,
        };
        let kind = match trial % 2 {
            0 => UtilityKind::Srm,
            _ => UtilityKind::Eem,
        };
        let rep = if trial % 5 == 0 { GraphKind::Bipartite } else { GraphKind::LinkGraph };
        let edge_mode = if trial % 6 == 3 { EdgeFeatureMode::Correlation } else { EdgeFeatureMode::None };
        let config = ModelConfig {
            representation: rep,
            depth: 2,
            hidden_dim: 8,
            heads: 2,
            aggregation: agg,
            residual: trial % 2 == 1,
            readout_hidden: 8,
            constraint_mode: cm,
            edge_mode,
            ..ModelConfig::default()
        };
        let (k, n) = (3, 4);
        let header = DatasetHeader::new(k, n, 1.0, 10.0, 1, 9000 + trial as u64);
        let sample = sample_channels(&header).unwrap().remove(0);
        let dims = FeatureDims::for_config(&config, n, k);
        let params = gnn::init_params(&config, &dims, trial as u64).unwrap();
        let template = params.clone();
        let flat = params.flatten();
        let spec = UtilitySpec::new(kind, 1.0, 10.0);
        let sample2 = sample.clone();
        let config2 = config.clone();

        let f = move |tape: &mut Tape, theta: beamgnn_core::ValueId| {
            let bp = bind_params_from_flat(tape, theta, &template);
            let graph = match config2.representation {
                GraphKind::LinkGraph => build_link_graph(&sample2, config2.edge_mode),
                GraphKind::Bipartite => build_bipartite_graph(&sample2),
            };
            let out = gnn::forward_on_tape(tape, &bp, &config2, &graph, spec.power_budget).unwrap();
            let rates = objectives::user_rates(tape, &sample2.h, out.wt, spec.sigma2);
            let util = objectives::utility(tape, &spec, rates, out.power);
            let learning = if trial % 4 == 2 { LearningMode::Supervised } else { LearningMode::Unsupervised };
            match (learning, cm) {
                (LearningMode::Unsupervised, ConstraintMode::Af) => objectives::loss_unsupervised(tape, util),
                (LearningMode::Unsupervised, ConstraintMode::Pm) => {
                    objectives::loss_penalty(tape, util, out.power, spec.power_budget, 10.0)
                }
                (LearningMode::Unsupervised, ConstraintMode::Ldm) => {
                    objectives::loss_lagrangian(tape, util, out.power, spec.power_budget, 0.3)
                }
                (LearningMode::Supervised, _) => objectives::loss_supervised(tape, util, 2.5),
            }
        };
        let err = grad_check(f, &flat, 1e-5);
        worst_overall = worst_overall.max(err);
        println!(
            "trial {trial:2} rep {rep:?} agg {agg:?} cm {cm:?} {kind:?}: n_params {} err {err:.3e}",
            flat.numel()
        );
    }
    println!("worst overall: {worst_overall:.3e}");
}
