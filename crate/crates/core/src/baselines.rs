//! Classical solvers: closed-form heuristics, weighted-MMSE block-coordinate
//! ascent for sum rate, and a projected-gradient oracle for every utility.
//! These produce training labels and the optimality denominator.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::channel::Dataset;
use crate::complex::CxValue;
use crate::error::{CoreError, Result};
use crate::linalg::{cholesky, cholesky_solve, CxMat};
use crate::objectives::{self, UtilityKind, UtilitySpec};
use crate::tensor::Tensor;

/// Output of a classical solver run.
#[derive(Debug, Clone)]
pub struct SolverResult {
    pub w: CxMat,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after each outer iteration.
    pub trace: Vec<f64>,
}

/// Maximum-ratio transmission: beam k along the conjugate of user k's
/// channel row, one common scalar bringing the total power to exactly P.
pub fn mrt(h: &CxMat, power_budget: f64) -> Result<CxMat> {
    let total: f64 = h.data().iter().map(|z| z.norm_sqr()).sum();
    if total == 0.0 {
        return Err(CoreError::Solver("mrt: all-zero channel".into()));
    }
    let c = (power_budget / total).sqrt();
    let (k, n) = (h.rows(), h.cols());
    Ok(CxMat::from_fn(n, k, |m, u| h.at(u, m).conj() * c))
}

/// Zero-forcing: right pseudo-inverse columns rescaled by one common scalar
/// to power P. Requires K <= N and full row rank.
pub fn zero_forcing(h: &CxMat, power_budget: f64) -> Result<CxMat> {
    let (k, n) = (h.rows(), h.cols());
    if k > n {
        return Err(CoreError::Solver(format!("zero_forcing: K={k} > N={n}")));
    }
    // Gram = H H^H, Hermitian PD iff full row rank
    let gram = h.matmul(&h.hermitian());
    let l = cholesky(&gram)
        .map_err(|_| CoreError::Solver("zero_forcing: rank-deficient channel".into()))?;
    // W0 = H^H Gram^{-1}: solve Gram x_k = e_k and assemble
    let hh = h.hermitian();
    let mut w = CxMat::zeros(n, k);
    for u in 0..k {
        let mut e = vec![Complex64::new(0.0, 0.0); k];
        e[u] = Complex64::new(1.0, 0.0);
        let x = cholesky_solve(&l, &e);
        for m in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..k {
                acc += hh.at(m, j) * x[j];
            }
            w.set(m, u, acc);
        }
    }
    let c = (power_budget / w.norm_sq()).sqrt();
    Ok(w.scale(c))
}

/// Weighted-MMSE block-coordinate ascent for sum-rate maximization.
///
/// Alternates the MMSE receivers `u_k`, the weights `v_k = 1/e_k`, and the
/// regularized beamformer solve with the power multiplier found by
/// bisection. The sum-rate trace is monotone non-decreasing.
pub fn wmmse_srm(h: &CxMat, power_budget: f64, sigma2: f64, max_iter: usize, tol: f64) -> Result<SolverResult> {
    assert!(power_budget > 0.0 && sigma2 > 0.0);
    let (k, n) = (h.rows(), h.cols());
    let mut w = mrt(h, power_budget)?;
    // g_k = conj(row_k) as a column: effective gain is g_k^H w_j = (HW)[k,j]
    let g: Vec<Vec<Complex64>> =
        (0..k).map(|u| h.row(u).iter().map(|z| z.conj()).collect()).collect();

    let mut trace = Vec::with_capacity(max_iter);
    let mut best_obj = f64::NEG_INFINITY;
    let mut best_w = w.clone();
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..max_iter {
        iterations = it + 1;
        let s = h.matmul(&w);
        // receivers and weights
        let mut u = vec![Complex64::new(0.0, 0.0); k];
        let mut v = vec![0.0f64; k];
        for i in 0..k {
            let d: f64 = (0..k).map(|j| s.at(i, j).norm_sqr()).sum::<f64>() + sigma2;
            u[i] = s.at(i, i) / d;
            let e = 1.0 - (u[i].conj() * s.at(i, i)).re;
            v[i] = 1.0 / e.max(1e-300);
        }
        // A = sum_j v_j |u_j|^2 g_j g_j^H
        let mut a = CxMat::zeros(n, n);
        for j in 0..k {
            let c = v[j] * u[j].norm_sqr();
            if c == 0.0 {
                continue;
            }
            for m in 0..n {
                for t in 0..n {
                    let add = g[j][m] * g[j][t].conj() * c;
                    a.set(m, t, a.at(m, t) + add);
                }
            }
        }
        w = solve_beams_with_power(&a, &g, &u, &v, power_budget, n, k)?;

        let rates = objectives::user_rates_plain(h, &w, sigma2);
        let obj = objectives::sum_rate_plain(&rates);
        if obj > best_obj {
            best_obj = obj;
            best_w = w.clone();
        }
        let improved = trace.last().map_or(f64::INFINITY, |&prev| obj - prev);
        trace.push(obj);
        if improved.abs() < tol {
            converged = true;
            break;
        }
    }

    Ok(SolverResult { w: best_w, objective: best_obj, iterations, converged, trace })
}

/// Beamformers `w_k = v_k u_k (A + mu I)^{-1} g_k` with `mu >= 0` picked by
/// bisection so the total power meets the budget.
fn solve_beams_with_power(
    a: &CxMat,
    g: &[Vec<Complex64>],
    u: &[Complex64],
    v: &[f64],
    power_budget: f64,
    n: usize,
    k: usize,
) -> Result<CxMat> {
    let solve_at = |mu: f64| -> Result<(CxMat, f64)> {
        let mut reg = a.clone();
        for i in 0..n {
            let d = reg.at(i, i) + Complex64::new(mu, 0.0);
            reg.set(i, i, d);
        }
        let l = cholesky(&reg)?;
        let mut w = CxMat::zeros(n, k);
        let mut power = 0.0;
        for j in 0..k {
            let x = cholesky_solve(&l, &g[j]);
            let c = u[j] * v[j];
            for m in 0..n {
                let val = x[m] * c;
                power += val.norm_sqr();
                w.set(m, j, val);
            }
        }
        Ok((w, power))
    };

    // unconstrained solve when A is invertible and already feasible
    if let Ok((w, power)) = solve_at(0.0) {
        if power <= power_budget {
            return Ok(w);
        }
    }

    let mut hi = 1.0f64;
    let mut guard = 0;
    while solve_at(hi)?.1 > power_budget {
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(CoreError::Solver("wmmse: power bisection failed to bracket".into()));
        }
    }
    let mut lo = 0.0f64;
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        let feasible = match solve_at(mid) {
            Ok((_, power)) => power <= power_budget,
            Err(_) => false, // singular at mu = 0 edge
        };
        if feasible {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (w, _) = solve_at(hi)?;
    Ok(w)
}

/// Budgets for the projected-gradient oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgaSettings {
    pub restarts: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PgaSettings {
    fn default() -> Self {
        PgaSettings { restarts: 8, steps: 500, lr: 0.05, seed: 0 }
    }
}

/// Projected gradient ascent on the beams for any utility: ascend the tape
/// gradient, project onto the power ball after every step, keep the best
/// projected iterate over all restarts.
pub fn pga_oracle(h: &CxMat, spec: &UtilitySpec, settings: &PgaSettings) -> Result<SolverResult> {
    assert!(settings.restarts >= 1, "pga_oracle: needs at least one restart");
    let (k, n) = (h.rows(), h.cols());
    let p = spec.power_budget;

    let mut best_obj = f64::NEG_INFINITY;
    let mut best_w = CxMat::zeros(n, k);
    let mut trace = Vec::with_capacity(settings.restarts);

    for r in 0..settings.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed.wrapping_add(r as u64));
        // random start on the power boundary (never the zero matrix)
        let mut wt_re: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut wt_im: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        project_ball(&mut wt_re, &mut wt_im, p, true);

        let mut restart_best = f64::NEG_INFINITY;
        for _ in 0..settings.steps {
            let mut tape = Tape::new();
            let re = tape.param(Tensor::from_vec(vec![k, n], wt_re.clone()));
            let im = tape.param(Tensor::from_vec(vec![k, n], wt_im.clone()));
            let wt = CxValue { re, im };
            let rates = objectives::user_rates(&mut tape, h, wt, spec.sigma2);
            let power = {
                let r2 = tape.norm_sq(re);
                let i2 = tape.norm_sq(im);
                tape.add(r2, i2)
            };
            let util = objectives::utility(&mut tape, spec, rates, power);
            let obj = tape.value(util).item();
            if obj > restart_best {
                restart_best = obj;
            }
            if obj > best_obj {
                best_obj = obj;
                best_w = CxMat::from_fn(n, k, |m, u| {
                    Complex64::new(wt_re[u * n + m], wt_im[u * n + m])
                });
            }
            let grads = tape.backward(util);
            let gre = grads.wrt(re, &tape);
            let gim = grads.wrt(im, &tape);
            for (x, g) in wt_re.iter_mut().zip(gre.data()) {
                *x += settings.lr * g;
            }
            for (x, g) in wt_im.iter_mut().zip(gim.data()) {
                *x += settings.lr * g;
            }
            project_ball(&mut wt_re, &mut wt_im, p, false);
        }
        trace.push(restart_best);
    }

    Ok(SolverResult {
        w: best_w,
        objective: best_obj,
        iterations: settings.restarts * settings.steps,
        converged: true,
        trace,
    })
}

fn project_ball(re: &mut [f64], im: &mut [f64], p: f64, force_boundary: bool) {
    let power: f64 = re.iter().chain(im.iter()).map(|x| x * x).sum();
    if power > p || (force_boundary && power > 0.0) {
        let c = (p / power).sqrt();
        re.iter_mut().for_each(|x| *x *= c);
        im.iter_mut().for_each(|x| *x *= c);
    }
}

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    Wmmse,
    Pga,
}

impl std::str::FromStr for SolverChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "wmmse" => Ok(SolverChoice::Wmmse),
            "pga" => Ok(SolverChoice::Pga),
            other => Err(format!("unknown solver '{other}' (expected wmmse|pga)")),
        }
    }
}

/// First line of a label file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelHeader {
    pub utility: UtilitySpec,
    pub solver: SolverChoice,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pga: Option<PgaSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

/// One label line, mirroring the dataset order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub sample_id: u64,
    /// Objective value; null when the solver failed on this sample.
    pub objective: Option<f64>,
    pub solver: SolverChoice,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelFile {
    pub header: LabelHeader,
    pub entries: Vec<LabelEntry>,
}

/// Solve every sample and collect per-sample objective labels. Failures are
/// recorded as invalid entries rather than aborting the run.
pub fn label_dataset(
    dataset: &Dataset,
    spec: &UtilitySpec,
    choice: SolverChoice,
    pga: &PgaSettings,
) -> Result<LabelFile> {
    if choice == SolverChoice::Wmmse && spec.kind != UtilityKind::Srm {
        return Err(CoreError::Config(
            "wmmse labels only apply to sum-rate; use pga for eem/mmr".into(),
        ));
    }
    let entries: Vec<LabelEntry> = dataset
        .samples
        .par_iter()
        .map(|s| {
            let solved = match choice {
                SolverChoice::Wmmse => {
                    wmmse_srm(&s.h, spec.power_budget, spec.sigma2, 300, 1e-8).map(|r| r.objective)
                }
                SolverChoice::Pga => {
                    let per_sample =
                        PgaSettings { seed: pga.seed ^ s.sample_id.wrapping_mul(0x9e37_79b9), ..*pga };
                    pga_oracle(&s.h, spec, &per_sample).map(|r| r.objective)
                }
            };
            match solved {
                Ok(obj) if obj.is_finite() => {
                    LabelEntry { sample_id: s.sample_id, objective: Some(obj), solver: choice, valid: true }
                }
                _ => LabelEntry { sample_id: s.sample_id, objective: None, solver: choice, valid: false },
            }
        })
        .collect();
    let header = LabelHeader {
        utility: *spec,
        solver: choice,
        count: entries.len(),
        pga: (choice == SolverChoice::Pga).then_some(*pga),
        manifest: None,
    };
    Ok(LabelFile { header, entries })
}

pub fn write_labels(path: &Path, labels: &LabelFile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let to_io = |e: serde_json::Error| CoreError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e));
    serde_json::to_writer(&mut w, &labels.header).map_err(to_io)?;
    w.write_all(b"\n")?;
    for e in &labels.entries {
        serde_json::to_writer(&mut w, e).map_err(to_io)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<LabelFile> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let header: LabelHeader = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line?)
            .map_err(|e| CoreError::Parse { line: 1, msg: format!("bad label header: {e}") })?,
        None => return Err(CoreError::Parse { line: 1, msg: "empty label file".into() }),
    };
    let mut entries = Vec::with_capacity(header.count);
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(
            serde_json::from_str(&line)
                .map_err(|e| CoreError::Parse { line: i + 1, msg: e.to_string() })?,
        );
    }
    if entries.len() != header.count {
        return Err(CoreError::Parse {
            line: entries.len() + 1,
            msg: format!("label header promises {} entries, file has {}", header.count, entries.len()),
        });
    }
    Ok(LabelFile { header, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate, sample_channels, DatasetHeader};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_h(k: usize, n: usize, seed: u64) -> CxMat {
        let header = DatasetHeader::new(k, n, 1.0, 10.0, 1, seed);
        sample_channels(&header).unwrap().remove(0).h
    }

    #[test]
    fn mrt_single_user_real_channel() {
        let h = CxMat::from_fn(1, 2, |_, j| if j == 0 { c(1.0, 0.0) } else { c(0.0, 0.0) });
        let w = mrt(&h, 4.0).unwrap();
        assert!((w.at(0, 0) - c(2.0, 0.0)).norm() < 1e-12);
        assert!((w.at(1, 0)).norm() < 1e-12);
    }

    #[test]
    fn mrt_power_and_collinearity() {
        let h = random_h(4, 8, 1);
        let w = mrt(&h, 10.0).unwrap();
        assert!((w.norm_sq() - 10.0).abs() < 1e-12);
        for u in 0..4 {
            // |<w_k, conj(h_k)>| should equal |w_k| |h_k|
            let col = w.col(u);
            let inner: Complex64 =
                col.iter().zip(h.row(u)).map(|(wm, hm)| wm * hm).sum();
            let wn: f64 = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let hn: f64 = h.row(u).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            assert!((inner.norm() - wn * hn).abs() < 1e-10);
        }
    }

    #[test]
    fn mrt_rejects_zero_channel() {
        assert!(mrt(&CxMat::zeros(2, 4), 10.0).is_err());
    }

    #[test]
    fn zero_forcing_kills_interference() {
        for seed in 0..20 {
            let h = random_h(4, 8, 100 + seed);
            let w = zero_forcing(&h, 10.0).unwrap();
            assert!((w.norm_sq() - 10.0).abs() < 1e-9);
            let s = h.matmul(&w);
            for i in 0..4 {
                for j in 0..4 {
                    if i != j {
                        assert!(s.at(i, j).norm() < 1e-8, "residual {}", s.at(i, j).norm());
                    }
                }
            }
        }
    }

    #[test]
    fn zero_forcing_orthonormal_rows_reduce_to_mrt() {
        let h = CxMat::from_fn(2, 4, |i, j| if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) });
        let zf = zero_forcing(&h, 10.0).unwrap();
        let mr = mrt(&h, 10.0).unwrap();
        for m in 0..4 {
            for u in 0..2 {
                assert!((zf.at(m, u) - mr.at(m, u)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_forcing_rejects_more_users_than_antennas() {
        let h = random_h(9, 8, 2);
        assert!(zero_forcing(&h, 10.0).is_err());
    }

    #[test]
    fn wmmse_single_user_hits_closed_form() {
        for seed in 0..10 {
            let h = random_h(1, 8, 200 + seed);
            let p = 10.0;
            let res = wmmse_srm(&h, p, 1.0, 300, 1e-10).unwrap();
            let hn2: f64 = h.data().iter().map(|z| z.norm_sqr()).sum();
            let optimum = (1.0 + p * hn2).log2();
            assert!((res.objective - optimum).abs() < 1e-6, "{} vs {optimum}", res.objective);
            assert!((res.w.norm_sq() - p).abs() < 1e-6 * p);
        }
    }

    #[test]
    fn wmmse_trace_is_monotone() {
        for seed in 0..100u64 {
            let h = random_h(4, 8, 300 + seed);
            let res = wmmse_srm(&h, 10.0, 1.0, 100, 1e-9).unwrap();
            for w in res.trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "trace decreased: {} -> {}", w[0], w[1]);
            }
            assert!(res.w.norm_sq() <= 10.0 * (1.0 + 1e-9));
        }
    }

    #[test]
    fn wmmse_dominates_heuristics() {
        let mut wins = 0;
        let total = 100;
        for seed in 0..total {
            let h = random_h(4, 8, 500 + seed);
            let res = wmmse_srm(&h, 10.0, 1.0, 150, 1e-9).unwrap();
            let spec = UtilitySpec::new(UtilityKind::Srm, 1.0, 10.0);
            let m = objectives::utility_plain(&spec, &h, &mrt(&h, 10.0).unwrap());
            let z = objectives::utility_plain(&spec, &h, &zero_forcing(&h, 10.0).unwrap());
            if res.objective >= m.max(z) - 1e-9 {
                wins += 1;
            }
        }
        assert!(wins >= 99, "wmmse beat heuristics on only {wins}/{total}");
    }

    #[test]
    fn pga_single_user_near_closed_form() {
        let h = random_h(1, 4, 600);
        let p = 10.0;
        let spec = UtilitySpec::new(UtilityKind::Srm, 1.0, p);
        let settings = PgaSettings { restarts: 2, steps: 400, lr: 0.05, seed: 3 };
        let res = pga_oracle(&h, &spec, &settings).unwrap();
        let hn2: f64 = h.data().iter().map(|z| z.norm_sqr()).sum();
        let optimum = (1.0 + p * hn2).log2();
        assert!((res.objective - optimum).abs() / optimum < 1e-3, "{} vs {optimum}", res.objective);
    }

    #[test]
    fn pga_tracks_wmmse_on_sum_rate() {
        let mut ratios = Vec::new();
        for seed in 0..30u64 {
            let h = random_h(4, 8, 700 + seed);
            let spec = UtilitySpec::new(UtilityKind::Srm, 1.0, 10.0);
            let wm = wmmse_srm(&h, 10.0, 1.0, 150, 1e-9).unwrap();
            let settings = PgaSettings { restarts: 4, steps: 400, lr: 0.05, seed };
            let pg = pga_oracle(&h, &spec, &settings).unwrap();
            ratios.push(pg.objective / wm.objective);
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((0.98..=1.02).contains(&mean), "mean ratio {mean}");
    }

    #[test]
    fn pga_output_obeys_power_budget() {
        let h = random_h(3, 4, 800);
        let spec = UtilitySpec { kind: UtilityKind::Eem, sigma2: 1.0, power_budget: 10.0, circuit_power: 1.0 };
        let settings = PgaSettings { restarts: 2, steps: 100, lr: 0.05, seed: 1 };
        let res = pga_oracle(&h, &spec, &settings).unwrap();
        assert!(res.w.norm_sq() <= 10.0 * (1.0 + 1e-9));
        assert!(res.w.norm_sq() > 0.0);
    }

    #[test]
    fn labels_round_trip_and_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        let ds = generate(&DatasetHeader::new(2, 4, 1.0, 10.0, 5, 9)).unwrap();
        let spec = UtilitySpec::new(UtilityKind::Srm, 1.0, 10.0);
        let labels = label_dataset(&ds, &spec, SolverChoice::Wmmse, &PgaSettings::default()).unwrap();
        assert_eq!(labels.entries.len(), ds.samples.len());
        assert!(labels.entries.iter().all(|e| e.valid && e.objective.unwrap() >= 0.0));
        write_labels(&path, &labels).unwrap();
        let back = read_labels(&path).unwrap();
        assert_eq!(back, labels);
    }

    #[test]
    fn wmmse_labels_reject_non_srm() {
        let ds = generate(&DatasetHeader::new(2, 4, 1.0, 10.0, 2, 9)).unwrap();
        let spec = UtilitySpec { kind: UtilityKind::Eem, sigma2: 1.0, power_budget: 10.0, circuit_power: 1.0 };
        assert!(label_dataset(&ds, &spec, SolverChoice::Wmmse, &PgaSettings::default()).is_err());
    }
}
