//! Baseline calibration: average optimality of closed-form heuristics
//! against WMMSE labels on the desk-scale test distribution.

use beamgnn_core::baselines::{mrt, wmmse_srm, zero_forcing};
use beamgnn_core::channel::{generate, DatasetHeader};
use beamgnn_core::linalg::CxMat;
use beamgnn_core::objectives::{utility_plain, UtilityKind, UtilitySpec};
use num_complex::Complex64;

/// Regularized zero forcing: W ∝ H^H (H H^H + alpha I)^{-1}, power-scaled.
fn rzf(h: &CxMat, p: f64, alpha: f64) -> CxMat {
    let k = h.rows();
    let mut gram = h.matmul(&h.hermitian());
    for i in 0..k {
        let v = gram.at(i, i) + Complex64::new(alpha, 0.0);
        gram.set(i, i, v);
    }
    let l = beamgnn_core::linalg::cholesky(&gram).unwrap();
    let hh = h.hermitian();
    let n = h.cols();
    let mut w = CxMat::zeros(n, k);
    for u in 0..k {
        let mut e = vec![Complex64::new(0.0, 0.0); k];
        e[u] = Complex64::new(1.0, 0.0);
        let x = beamgnn_core::linalg::cholesky_solve(&l, &e);
        for m in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..k {
                acc += hh.at(m, j) * x[j];
            }
            w.set(m, u, acc);
        }
    }
    w.scale((p / w.norm_sq()).sqrt())
}

fn main() {
    let (k, n, p, sigma2) = (4usize, 8usize, 10.0, 1.0);
    let test = generate(&DatasetHeader::new(k, n, sigma2, p, 300, 2001)).unwrap();
    let spec = UtilitySpec::new(UtilityKind::Srm, sigma2, p);

    let mut wm = 0.0;
    let mut mr = 0.0;
    let mut zf = 0.0;
    let mut rz = 0.0;
    let alpha = k as f64 * sigma2 / p;
    for s in &test.samples {
        wm += wmmse_srm(&s.h, p, sigma2, 300, 1e-9).unwrap().objective;
        mr += utility_plain(&spec, &s.h, &mrt(&s.h, p).unwrap());
        zf += utility_plain(&spec, &s.h, &zero_forcing(&s.h, p).unwrap());
        rz += utility_plain(&spec, &s.h, &rzf(&s.h, p, alpha));
    }
    let c = test.samples.len() as f64;
    println!("wmmse avg {:.4}", wm / c);
    println!("mrt   avg {:.4}  ({:.1}%)", mr / c, 100.0 * mr / wm);
    println!("zf    avg {:.4}  ({:.1}%)", zf / c, 100.0 * zf / wm);
    println!("rzf   avg {:.4}  ({:.1}%)", rz / c, 100.0 * rz / wm);
}
