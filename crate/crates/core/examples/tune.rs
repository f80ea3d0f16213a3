//! Scratch experiment runner: train one configuration and print the
//! validation curve against the classical baselines.

use beamgnn_core::baselines::{label_dataset, mrt, wmmse_srm, PgaSettings, SolverChoice};
use beamgnn_core::channel::{generate, DatasetHeader};
use beamgnn_core::gnn::ModelConfig;
use beamgnn_core::metrics::{evaluate, EvalOptions};
use beamgnn_core::objectives::{utility_plain, UtilityKind, UtilitySpec};
use beamgnn_core::trainer::{train, LearningMode, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let arg = |name: &str, default: f64| -> f64 {
        args.iter()
            .position(|a| a == name)
            .and_then(|i| args.get(i + 1))
            .and_then(|v| v.parse().ok())
            .unwrap_or(default)
    };
    let model = args
        .iter()
        .position(|a| a == "--model")
        .and_then(|i| args.get(i + 1))
        .cloned()
        .unwrap_or_else(|| "resgat".to_string());

    let k = arg("--k", 4.0) as usize;
    let n = arg("--n", 8.0) as usize;
    let count = arg("--count", 2000.0) as usize;
    let test_count = arg("--test", 300.0) as usize;
    let epochs = arg("--epochs", 40.0) as usize;
    let hidden = arg("--hidden", 32.0) as usize;
    let depth = arg("--depth", 3.0) as usize;
    let lr = arg("--lr", 1e-3);
    let seed = arg("--seed", 1.0) as u64;

    let t0 = std::time::Instant::now();
    let train_set = generate(&DatasetHeader::new(k, n, 1.0, 10.0, count, seed)).unwrap();
    let test_set = generate(&DatasetHeader::new(k, n, 1.0, 10.0, test_count, seed + 1000)).unwrap();

    let spec = UtilitySpec::new(UtilityKind::Srm, 1.0, 10.0);
    let labels = label_dataset(&test_set, &spec, SolverChoice::Wmmse, &PgaSettings::default()).unwrap();
    let wmmse_avg: f64 = labels.entries.iter().filter_map(|e| e.objective).sum::<f64>() / test_count as f64;
    let mrt_avg: f64 = test_set
        .samples
        .iter()
        .map(|s| utility_plain(&spec, &s.h, &mrt(&s.h, 10.0).unwrap()))
        .sum::<f64>()
        / test_count as f64;
    println!("labels done in {:.1}s; wmmse avg {wmmse_avg:.4}, mrt avg {mrt_avg:.4}", t0.elapsed().as_secs_f64());

    let mut mc = match model.as_str() {
        "gcn" => ModelConfig::gcn(),
        "gat" => ModelConfig::gat(),
        _ => ModelConfig::resgat(),
    };
    mc.hidden_dim = hidden;
    mc.readout_hidden = hidden;
    mc.depth = depth;
    mc.heads = arg("--heads", mc.heads as f64) as usize;
    if args.iter().any(|a| a == "--edge-corr") {
        mc.edge_mode = beamgnn_core::graph::EdgeFeatureMode::Correlation;
    }
    if args.iter().any(|a| a == "--bipartite") {
        mc.representation = beamgnn_core::graph::GraphKind::Bipartite;
    }

    let mut tc = TrainConfig::new(spec, LearningMode::Unsupervised, seed);
    tc.epochs = epochs;
    tc.lr = lr;
    tc.patience = arg("--patience", 20.0) as usize;
    tc.batch_size = arg("--batch", 64.0) as usize;
    tc.snr_anneal_epochs = arg("--anneal", 0.0) as usize;
    tc.lr_final_frac = arg("--lrfrac", 0.1);

    let t1 = std::time::Instant::now();
    let (ckpt, log) = train(&mc, &tc, &train_set, None).unwrap();
    println!("trained {} epochs in {:.1}s", log.epochs.len(), t1.elapsed().as_secs_f64());
    for e in &log.epochs {
        println!(
            "  epoch {:3}  loss {:8.4}  val {:7.4}  feas {:5.1}%  ({:.0} ms)",
            e.epoch, e.train_loss, e.val_utility, e.val_feasibility, e.wall_ms
        );
    }

    let report = evaluate(&ckpt, &test_set, Some(&labels), &EvalOptions::default(), &model, "tune").unwrap();
    println!(
        "model {model}: optimality {:?}%, feasibility {:.1}%, inference {:.3} ms",
        report.optimality, report.feasibility_rate, report.inference_ms_mean
    );
    // power saturation diagnostics
    let mut raw_sum = 0.0;
    let mut emitted_sum = 0.0;
    for i in 0..100.min(test_set.samples.len()) {
        let bm = beamgnn_core::metrics::forward_sample(&ckpt, &test_set, i).unwrap();
        raw_sum += bm.raw_power;
        emitted_sum += bm.power();
    }
    println!("mean raw power {:.3}, mean emitted power {:.3} (budget 10)", raw_sum / 100.0, emitted_sum / 100.0);

    // where does the rate go: desired signal vs residual interference
    let mut sig_model = 0.0;
    let mut intf_model = 0.0;
    let mut sig_zf = 0.0;
    let mut intf_zf = 0.0;
    let m = 100.min(test_set.samples.len());
    for i in 0..m {
        let s = &test_set.samples[i];
        let bm = beamgnn_core::metrics::forward_sample(&ckpt, &test_set, i).unwrap();
        let zf = beamgnn_core::baselines::zero_forcing(&s.h, 10.0).unwrap();
        for (w, (sig, intf)) in [(&bm.w, (&mut sig_model, &mut intf_model)), (&zf, (&mut sig_zf, &mut intf_zf))] {
            let g = s.h.matmul(w);
            for u in 0..s.k_users() {
                *sig += g.at(u, u).norm_sqr();
                for j in 0..s.k_users() {
                    if j != u {
                        *intf += g.at(u, j).norm_sqr();
                    }
                }
            }
        }
    }
    let c = (m * k) as f64;
    println!(
        "model: signal {:.3} interference {:.3} | zf: signal {:.3} interference {:.2e}",
        sig_model / c, intf_model / c, sig_zf / c, intf_zf / c
    );
    let wmmse_check = wmmse_srm(&test_set.samples[0].h, 10.0, 1.0, 100, 1e-9).unwrap();
    println!("sample-0 wmmse objective {:.4} in {} iters", wmmse_check.objective, wmmse_check.iterations);
}
