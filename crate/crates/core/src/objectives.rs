//! System utilities (sum rate, energy efficiency, min rate) and losses.
//!
//! Rates follow the standard MU-MISO downlink model with linear beamforming
//! and Gaussian noise: row k of H stores user k's (conjugated) channel, so
//! the effective gain of beam j at user k is `(H W)[k, j]` and
//! `rate_k = log2(1 + |[HW]_kk|^2 / (sum_{j != k} |[HW]_kj|^2 + sigma^2))`.
//!
//! Every utility exists twice: on the tape (for training and the projected
//! gradient oracle) and as a plain function of complex matrices (for
//! evaluation and labeling). The two routes are cross-checked in tests.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, ValueId};
use crate::complex::{cx_abs_sq, cx_matmul, CxValue};
use crate::linalg::CxMat;
use crate::tensor::Tensor;

/// Feasibility slack on the stored power when classifying a beam matrix.
pub const BEAM_FEASIBLE_TOL: f64 = 1e-9;

/// Complex beamforming decision for one sample.
#[derive(Debug, Clone)]
pub struct BeamMatrix {
    /// N x K; column k is the beamformer for user k.
    pub w: CxMat,
    /// Squared Frobenius norm before any output projection.
    pub raw_power: f64,
    /// Whether `|W|_F^2 <= P (1 + 1e-9)`.
    pub feasible: bool,
}

impl BeamMatrix {
    pub fn new(w: CxMat, raw_power: f64, power_budget: f64) -> Self {
        let feasible = w.norm_sq() <= power_budget * (1.0 + BEAM_FEASIBLE_TOL);
        BeamMatrix { w, raw_power, feasible }
    }

    pub fn power(&self) -> f64 {
        self.w.norm_sq()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    /// Sum rate maximization.
    Srm,
    /// Energy efficiency maximization.
    Eem,
    /// Max-min rate.
    Mmr,
}

impl UtilityKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            UtilityKind::Srm => "srm",
            UtilityKind::Eem => "eem",
            UtilityKind::Mmr => "mmr",
        }
    }
}

impl std::str::FromStr for UtilityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "srm" => Ok(UtilityKind::Srm),
            "eem" => Ok(UtilityKind::Eem),
            "mmr" => Ok(UtilityKind::Mmr),
            other => Err(format!("unknown utility '{other}' (expected srm|eem|mmr)")),
        }
    }
}

/// Which utility to optimize and under what physical constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub kind: UtilityKind,
    pub sigma2: f64,
    pub power_budget: f64,
    /// Constant circuit power for energy efficiency.
    pub circuit_power: f64,
}

impl UtilitySpec {
    pub fn new(kind: UtilityKind, sigma2: f64, power_budget: f64) -> Self {
        assert!(sigma2 > 0.0 && power_budget > 0.0);
        UtilitySpec { kind, sigma2, power_budget, circuit_power: 1.0 }
    }
}

const LN2: f64 = std::f64::consts::LN_2;

// ---------------------------------------------------------------------------
// Tape route
// ---------------------------------------------------------------------------

/// Rate vector plus the signal/interference split it was built from.
#[derive(Debug, Clone, Copy)]
pub struct RateParts {
    /// Per-user rates, `[1, K]`.
    pub rates: ValueId,
    /// `|s_kk|^2` per user, `[1, K]`.
    pub signal: ValueId,
    /// `sum_{j != k} |s_kj|^2` per user, `[1, K]`.
    pub interference: ValueId,
}

/// Per-user rates on the tape, shape `[1, K]`.
///
/// `wt` holds beams as rows (K x N); `h` is the plain K x N channel. The
/// effective-gain matrix arrives transposed as `wt · H^T`, which avoids a
/// transpose op on the tape.
pub fn user_rates(tape: &mut Tape, h: &CxMat, wt: CxValue, sigma2: f64) -> ValueId {
    user_rate_parts(tape, h, wt, sigma2).rates
}

/// As [`user_rates`], also exposing the signal and interference powers.
pub fn user_rate_parts(tape: &mut Tape, h: &CxMat, wt: CxValue, sigma2: f64) -> RateParts {
    let k = h.rows();
    let n = h.cols();
    assert_eq!(tape.value(wt.re).shape(), &[k, n], "user_rates: beam shape mismatch");

    // H^T as constant leaves (plain transpose, no conjugation)
    let mut ht_re = vec![0.0; n * k];
    let mut ht_im = vec![0.0; n * k];
    for u in 0..k {
        for m in 0..n {
            let z = h.at(u, m);
            ht_re[m * k + u] = z.re;
            ht_im[m * k + u] = z.im;
        }
    }
    let ht = CxValue {
        re: tape.leaf(Tensor::from_vec(vec![n, k], ht_re)),
        im: tape.leaf(Tensor::from_vec(vec![n, k], ht_im)),
    };

    // st[j, k] = effective gain of beam j at user k
    let st = cx_matmul(tape, wt, ht);
    let sq = cx_abs_sq(tape, st);

    let ones_row = tape.leaf(Tensor::full(vec![1, k], 1.0));
    let eye = {
        let mut d = vec![0.0; k * k];
        for i in 0..k {
            d[i * k + i] = 1.0;
        }
        tape.leaf(Tensor::from_vec(vec![k, k], d))
    };

    let masked = tape.mul(sq, eye);
    let signal = tape.matmul(ones_row, masked); // [1, K], entry k = |s_kk|^2
    let total = tape.matmul(ones_row, sq); // [1, K], entry k = sum_j |s_kj|^2
    let interference = tape.sub(total, signal);
    let noise = tape.leaf(Tensor::full(vec![1, k], sigma2));
    let denom = tape.add(interference, noise);
    let inv = tape.recip_pos(denom);
    let sinr = tape.mul(signal, inv);
    let one = tape.leaf(Tensor::full(vec![1, k], 1.0));
    let shifted = tape.add(one, sinr);
    let ln = tape.log(shifted);
    let rates = tape.scale(ln, 1.0 / LN2);
    RateParts { rates, signal, interference }
}

pub fn sum_rate(tape: &mut Tape, rates: ValueId) -> ValueId {
    tape.sum(rates)
}

/// Hard minimum; subgradient routes to the first minimizing user.
pub fn min_rate(tape: &mut Tape, rates: ValueId) -> ValueId {
    let neg = tape.scale(rates, -1.0);
    let m = tape.max_all(neg);
    tape.scale(m, -1.0)
}

/// Sum rate over consumed-plus-circuit power. `power` is the squared
/// Frobenius norm of the emitted beams.
pub fn energy_efficiency(tape: &mut Tape, rates: ValueId, power: ValueId, circuit_power: f64) -> ValueId {
    let sr = tape.sum(rates);
    let pc = tape.scalar(circuit_power);
    let denom = tape.add(power, pc);
    let inv = tape.recip_pos(denom);
    tape.mul(sr, inv)
}

/// Dispatch a utility on the tape from rates and emitted power.
pub fn utility(tape: &mut Tape, spec: &UtilitySpec, rates: ValueId, power: ValueId) -> ValueId {
    match spec.kind {
        UtilityKind::Srm => sum_rate(tape, rates),
        UtilityKind::Mmr => min_rate(tape, rates),
        UtilityKind::Eem => energy_efficiency(tape, rates, power, spec.circuit_power),
    }
}

pub fn loss_unsupervised(tape: &mut Tape, utility: ValueId) -> ValueId {
    tape.scale(utility, -1.0)
}

pub fn loss_supervised(tape: &mut Tape, utility: ValueId, label: f64) -> ValueId {
    assert!(label.is_finite(), "loss_supervised: non-finite label");
    let l = tape.scalar(label);
    let d = tape.sub(utility, l);
    tape.square(d)
}

/// `-utility + rho * max(0, |W|^2 - P)^2`
pub fn loss_penalty(tape: &mut Tape, utility: ValueId, power: ValueId, p: f64, rho: f64) -> ValueId {
    assert!(rho > 0.0, "loss_penalty: rho must be positive");
    let neg = tape.scale(utility, -1.0);
    let pb = tape.scalar(p);
    let over = tape.sub(power, pb);
    let clipped = tape.relu(over);
    let sq = tape.square(clipped);
    let pen = tape.scale(sq, rho);
    tape.add(neg, pen)
}

/// `-utility + lambda * (|W|^2 - P)`; lambda enters as a constant and is
/// moved only by [`dual_update`].
pub fn loss_lagrangian(tape: &mut Tape, utility: ValueId, power: ValueId, p: f64, lambda: f64) -> ValueId {
    assert!(lambda >= 0.0, "loss_lagrangian: lambda must be nonnegative");
    let neg = tape.scale(utility, -1.0);
    let pb = tape.scalar(p);
    let violation = tape.sub(power, pb);
    let term = tape.scale(violation, lambda);
    tape.add(neg, term)
}

/// Projected dual ascent on the multiplier, using the batch-mean violation.
pub fn dual_update(lambda: f64, violation: f64, eta_dual: f64) -> f64 {
    assert!(lambda >= 0.0 && eta_dual > 0.0);
    (lambda + eta_dual * violation).max(0.0)
}

// ---------------------------------------------------------------------------
// Plain route
// ---------------------------------------------------------------------------

/// Per-user rates of a plain beam matrix (N x K columns are beams).
pub fn user_rates_plain(h: &CxMat, w: &CxMat, sigma2: f64) -> Vec<f64> {
    let k = h.rows();
    assert_eq!(h.cols(), w.rows(), "user_rates_plain: H {}x{} vs W {}x{}", h.rows(), h.cols(), w.rows(), w.cols());
    assert_eq!(w.cols(), k, "user_rates_plain: W must have K columns");
    let s = h.matmul(w);
    (0..k)
        .map(|u| {
            let sig = s.at(u, u).norm_sqr();
            let intf: f64 = (0..k).filter(|&j| j != u).map(|j| s.at(u, j).norm_sqr()).sum();
            (1.0 + sig / (intf + sigma2)).log2()
        })
        .collect()
}

pub fn sum_rate_plain(rates: &[f64]) -> f64 {
    rates.iter().sum()
}

pub fn min_rate_plain(rates: &[f64]) -> f64 {
    rates.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn energy_efficiency_plain(rates: &[f64], power: f64, circuit_power: f64) -> f64 {
    sum_rate_plain(rates) / (power + circuit_power)
}

/// Plain twin of the output projection: scale onto the power ball when the
/// power exceeds the budget, pass interior points through.
pub fn project_beam(w: &CxMat, power_budget: f64) -> CxMat {
    let power = w.norm_sq();
    if power > power_budget {
        w.scale((power_budget / power).sqrt())
    } else {
        w.clone()
    }
}

/// Objective value of a beam matrix under a utility spec.
pub fn utility_plain(spec: &UtilitySpec, h: &CxMat, w: &CxMat) -> f64 {
    let rates = user_rates_plain(h, w, spec.sigma2);
    match spec.kind {
        UtilityKind::Srm => sum_rate_plain(&rates),
        UtilityKind::Mmr => min_rate_plain(&rates),
        UtilityKind::Eem => energy_efficiency_plain(&rates, w.norm_sq(), spec.circuit_power),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use num_complex::Complex64;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rates_on_fresh_tape(h: &CxMat, w: &CxMat, sigma2: f64) -> Vec<f64> {
        // push beams-as-rows
        let k = w.cols();
        let n = w.rows();
        let mut tape = Tape::new();
        let re: Vec<f64> = (0..k).flat_map(|u| (0..n).map(move |m| (u, m))).map(|(u, m)| w.at(m, u).re).collect();
        let im: Vec<f64> = (0..k).flat_map(|u| (0..n).map(move |m| (u, m))).map(|(u, m)| w.at(m, u).im).collect();
        let wt = CxValue {
            re: tape.leaf(Tensor::from_vec(vec![k, n], re)),
            im: tape.leaf(Tensor::from_vec(vec![k, n], im)),
        };
        let r = user_rates(&mut tape, h, wt, sigma2);
        tape.value(r).data().to_vec()
    }

    #[test]
    fn single_user_unit_rate() {
        let h = CxMat::from_fn(1, 2, |_, j| if j == 0 { c(1.0, 0.0) } else { c(0.0, 0.0) });
        let w = CxMat::from_fn(2, 1, |i, _| if i == 0 { c(1.0, 0.0) } else { c(0.0, 0.0) });
        assert_eq!(user_rates_plain(&h, &w, 1.0), vec![1.0]);
        assert_eq!(rates_on_fresh_tape(&h, &w, 1.0), vec![1.0]);
    }

    #[test]
    fn zero_beams_zero_rates() {
        let h = CxMat::from_fn(3, 4, |i, j| c((i + j) as f64, 0.3));
        let w = CxMat::zeros(4, 3);
        assert!(user_rates_plain(&h, &w, 1.0).iter().all(|&r| r == 0.0));
    }

    #[test]
    fn orthogonal_channels_hand_value() {
        // independent scalar evaluation: SINR = (P/2)/sigma2 per user
        let p = 10.0f64;
        let sigma2 = 1.0f64;
        let expected = (1.0 + p / 2.0 / sigma2).log2();

        let h = CxMat::from_fn(2, 2, |i, j| if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) });
        let amp = (p / 2.0).sqrt();
        let w = CxMat::from_fn(2, 2, |i, j| if i == j { c(amp, 0.0) } else { c(0.0, 0.0) });
        let rates = user_rates_plain(&h, &w, sigma2);
        for r in &rates {
            assert!((r - expected).abs() < 1e-12);
        }
        let tape_rates = rates_on_fresh_tape(&h, &w, sigma2);
        for (a, b) in rates.iter().zip(&tape_rates) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_utilities() {
        let mut tape = Tape::new();
        let r = tape.leaf(Tensor::from_vec(vec![1, 3], vec![1.0, 2.0, 3.0]));
        let s = sum_rate(&mut tape, r);
        assert_eq!(tape.value(s).item(), 6.0);
        let m = min_rate(&mut tape, r);
        assert_eq!(tape.value(m).item(), 1.0);

        let r1 = tape.leaf(Tensor::from_vec(vec![1, 1], vec![2.0]));
        let pw = tape.scalar(1.0);
        let ee = energy_efficiency(&mut tape, r1, pw, 1.0);
        assert_eq!(tape.value(ee).item(), 1.0);
    }

    #[test]
    fn energy_efficiency_of_zero_beams() {
        let h = CxMat::from_fn(2, 2, |i, j| c((i * 2 + j) as f64 + 1.0, 0.0));
        let w = CxMat::zeros(2, 2);
        let spec = UtilitySpec { kind: UtilityKind::Eem, sigma2: 1.0, power_budget: 10.0, circuit_power: 1.0 };
        assert_eq!(utility_plain(&spec, &h, &w), 0.0);
    }

    #[test]
    fn loss_constructions() {
        let mut tape = Tape::new();
        let u = tape.param(Tensor::scalar(2.0));

        let l = loss_unsupervised(&mut tape, u);
        assert_eq!(tape.value(l).item(), -2.0);

        let ls = loss_supervised(&mut tape, u, 3.0);
        assert_eq!(tape.value(ls).item(), 1.0);
        let ls0 = loss_supervised(&mut tape, u, 2.0);
        assert_eq!(tape.value(ls0).item(), 0.0);
        // gradient w.r.t. utility at (2, 3) is -2
        let g = tape.backward(ls);
        assert_eq!(g.wrt(u, &tape).item(), -2.0);
    }

    #[test]
    fn penalty_loss_and_gradient() {
        let mut tape = Tape::new();
        let u = tape.leaf(Tensor::scalar(5.0));

        // feasible: penalty term zero
        let pw = tape.leaf(Tensor::scalar(8.0));
        let l = loss_penalty(&mut tape, u, pw, 10.0, 10.0);
        assert_eq!(tape.value(l).item(), -5.0);

        // violation 1 at rho 10 adds 10
        let pw = tape.param(Tensor::scalar(11.0));
        let l = loss_penalty(&mut tape, u, pw, 10.0, 10.0);
        assert_eq!(tape.value(l).item(), -5.0 + 10.0);
        // d/d|W|^2 of rho v^2 at v=1 is 2 rho = 20
        let g = tape.backward(l);
        assert_eq!(g.wrt(pw, &tape).item(), 20.0);
    }

    #[test]
    fn lagrangian_loss_and_dual() {
        let mut tape = Tape::new();
        let u = tape.leaf(Tensor::scalar(4.0));
        let pw = tape.leaf(Tensor::scalar(12.0));
        let l = loss_lagrangian(&mut tape, u, pw, 10.0, 0.0);
        assert_eq!(tape.value(l).item(), -4.0);

        assert_eq!(dual_update(0.5, -1.0, 1.0), 0.0);
        assert!((dual_update(0.5, 2.0, 0.1) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn rates_invariant_to_column_phase_rotation() {
        let h = CxMat::from_fn(3, 4, |i, j| c((i as f64 - 1.0) * 0.7 + j as f64 * 0.1, (j as f64).cos()));
        let w = CxMat::from_fn(4, 3, |i, j| c((i as f64).sin() * 0.5, (i + j) as f64 * 0.2 - 0.4));
        let base = user_rates_plain(&h, &w, 1.0);
        for (t, theta) in [0.7f64, 2.1, -1.3].iter().enumerate() {
            let rot = Complex64::from_polar(1.0, *theta);
            let mut w2 = w.clone();
            let col: Vec<Complex64> = w2.col(t).iter().map(|z| z * rot).collect();
            w2.set_col(t, &col);
            let rotated = user_rates_plain(&h, &w2, 1.0);
            for (a, b) in base.iter().zip(&rotated) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn rates_nonnegative_and_sum_dominates_min() {
        let h = CxMat::from_fn(4, 4, |i, j| c(((i * 7 + j * 3) as f64).sin(), ((i + j) as f64).cos()));
        let w = CxMat::from_fn(4, 4, |i, j| c(((i + 2 * j) as f64).cos() * 0.4, (j as f64).sin() * 0.3));
        let rates = user_rates_plain(&h, &w, 1.0);
        assert!(rates.iter().all(|&r| r >= 0.0));
        let k = rates.len() as f64;
        assert!(sum_rate_plain(&rates) >= min_rate_plain(&rates) * k);
        assert!(min_rate_plain(&rates) >= 0.0);
    }

    #[test]
    fn rate_chain_matches_finite_differences() {
        // gradients of each loss through the rate computation w.r.t. beams
        let h = CxMat::from_fn(2, 3, |i, j| c((i as f64 + 1.0) * 0.3 - j as f64 * 0.2, (j as f64) * 0.15));
        let flat0: Vec<f64> = (0..12).map(|i| ((i as f64) * 0.711).sin() * 0.8).collect();
        for mode in 0..4 {
            let err = grad_check(
                |t, x| {
                    let re = t.slice(x, 0, 0, 6);
                    let re = t.reshape(re, vec![2, 3]);
                    let im = t.slice(x, 0, 6, 6);
                    let im = t.reshape(im, vec![2, 3]);
                    let wt = CxValue { re, im };
                    let rates = user_rates(t, &h, wt, 1.0);
                    let r2 = t.norm_sq(re);
                    let i2 = t.norm_sq(im);
                    let power = t.add(r2, i2);
                    match mode {
                        0 => {
                            let u = sum_rate(t, rates);
                            loss_unsupervised(t, u)
                        }
                        1 => {
                            let u = min_rate(t, rates);
                            loss_supervised(t, u, 0.8)
                        }
                        2 => {
                            let u = energy_efficiency(t, rates, power, 1.0);
                            loss_penalty(t, u, power, 1.5, 10.0)
                        }
                        _ => {
                            let u = sum_rate(t, rates);
                            loss_lagrangian(t, u, power, 1.5, 0.3)
                        }
                    }
                },
                &Tensor::from_vec(vec![12], flat0.clone()),
                1e-5,
            );
            assert!(err < 1e-4, "mode {mode}: err = {err}");
        }
    }
}
