//! Synthetic MU-MISO channel datasets: generation, persistence, splitting.
//!
//! Channels are i.i.d. Rayleigh: each entry circularly-symmetric complex
//! Gaussian with zero mean and unit variance. Files are JSON Lines — line 1
//! is the header, every following line one sample with entries as `[re, im]`
//! pairs. serde_json emits shortest-round-trip decimals, so read(write(x))
//! is exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg::CxMat;

/// One K x N complex channel realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub h: CxMat,
    pub sample_id: u64,
}

impl ChannelSample {
    pub fn k_users(&self) -> usize {
        self.h.rows()
    }

    pub fn n_antennas(&self) -> usize {
        self.h.cols()
    }
}

/// Dataset-level parameters shared by all samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub k_users: usize,
    pub n_antennas: usize,
    /// Noise power, linear scale.
    pub sigma2: f64,
    /// Sum-power budget P, linear scale.
    pub power_budget: f64,
    pub count: usize,
    pub seed: u64,
    /// Path of the run manifest that produced this file, when CLI-generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

impl DatasetHeader {
    pub fn new(k_users: usize, n_antennas: usize, sigma2: f64, power_budget: f64, count: usize, seed: u64) -> Self {
        DatasetHeader { k_users, n_antennas, sigma2, power_budget, count, seed, manifest: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_users < 1 || self.n_antennas < 1 || self.count < 1 {
            return Err(CoreError::Config(format!(
                "header requires k_users, n_antennas, count >= 1, got K={} N={} count={}",
                self.k_users, self.n_antennas, self.count
            )));
        }
        if self.sigma2 <= 0.0 || self.power_budget <= 0.0 {
            return Err(CoreError::Config(format!(
                "header requires sigma2 > 0 and power_budget > 0, got {} and {}",
                self.sigma2, self.power_budget
            )));
        }
        Ok(())
    }
}

/// A header plus its samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<ChannelSample>,
}

fn sample_matrix(rng: &mut ChaCha8Rng, k: usize, n: usize) -> CxMat {
    // CN(0,1): independent N(0, 1/2) real and imaginary parts
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    CxMat::from_fn(k, n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re * scale, im * scale)
    })
}

/// Draw `header.count` i.i.d. Rayleigh samples. The per-sample stream is
/// keyed by `seed ^ sample_id`, so generation is order-independent.
pub fn sample_channels(header: &DatasetHeader) -> Result<Vec<ChannelSample>> {
    header.validate()?;
    let samples = (0..header.count as u64)
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(header.seed ^ id);
            ChannelSample { h: sample_matrix(&mut rng, header.k_users, header.n_antennas), sample_id: id }
        })
        .collect();
    Ok(samples)
}

pub fn generate(header: &DatasetHeader) -> Result<Dataset> {
    Ok(Dataset { header: header.clone(), samples: sample_channels(header)? })
}

#[derive(Serialize, Deserialize)]
struct SampleLine {
    sample_id: u64,
    h: Vec<Vec<[f64; 2]>>,
}

pub fn write_dataset(path: &Path, header: &DatasetHeader, samples: &[ChannelSample]) -> Result<()> {
    header.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, header).map_err(to_io)?;
    w.write_all(b"\n")?;
    for s in samples {
        if s.h.rows() != header.k_users || s.h.cols() != header.n_antennas {
            return Err(CoreError::Dimension(format!(
                "sample {} is {}x{}, header says {}x{}",
                s.sample_id,
                s.h.rows(),
                s.h.cols(),
                header.k_users,
                header.n_antennas
            )));
        }
        let line = SampleLine {
            sample_id: s.sample_id,
            h: (0..s.h.rows())
                .map(|i| s.h.row(i).iter().map(|z| [z.re, z.im]).collect())
                .collect(),
        };
        serde_json::to_writer(&mut w, &line).map_err(to_io)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn to_io(e: serde_json::Error) -> CoreError {
    CoreError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let header: DatasetHeader = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line?)
            .map_err(|e| CoreError::Parse { line: 1, msg: format!("bad header: {e}") })?,
        None => return Err(CoreError::Parse { line: 1, msg: "empty file".into() }),
    };
    header.validate()?;

    let mut samples = Vec::with_capacity(header.count);
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SampleLine = serde_json::from_str(&line)
            .map_err(|e| CoreError::Parse { line: i + 1, msg: e.to_string() })?;
        let k = parsed.h.len();
        if k != header.k_users {
            return Err(CoreError::Dimension(format!(
                "line {}: sample {} has {} rows, header says {}",
                i + 1,
                parsed.sample_id,
                k,
                header.k_users
            )));
        }
        let n = header.n_antennas;
        let mut m = CxMat::zeros(k, n);
        for (r, row) in parsed.h.iter().enumerate() {
            if row.len() != n {
                return Err(CoreError::Dimension(format!(
                    "line {}: row {} has {} antennas, header says {}",
                    i + 1,
                    r,
                    row.len(),
                    n
                )));
            }
            for (c, z) in row.iter().enumerate() {
                m.set(r, c, Complex64::new(z[0], z[1]));
            }
        }
        samples.push(ChannelSample { h: m, sample_id: parsed.sample_id });
    }
    if samples.len() != header.count {
        return Err(CoreError::Parse {
            line: samples.len() + 1,
            msg: format!("header promises {} samples, file has {}", header.count, samples.len()),
        });
    }
    Ok(Dataset { header, samples })
}

/// Deterministic shuffled split into disjoint train/test sets.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0 < train_fraction && train_fraction < 1.0) {
        return Err(CoreError::Config(format!("train_fraction must be in (0,1), got {train_fraction}")));
    }
    let n = dataset.samples.len();
    let n_train = (n as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(CoreError::Config(format!(
            "split of {n} samples at fraction {train_fraction} leaves one side empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let pick = |ids: &[usize]| Dataset {
        header: DatasetHeader { count: ids.len(), ..dataset.header.clone() },
        samples: ids.iter().map(|&i| dataset.samples[i].clone()).collect(),
    };
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_header() -> DatasetHeader {
        DatasetHeader::new(4, 8, 1.0, 10.0, 1000, 7)
    }

    #[test]
    fn generation_has_contracted_shape_and_determinism() {
        let header = small_header();
        let a = sample_channels(&header).unwrap();
        assert_eq!(a.len(), 1000);
        assert!(a.iter().all(|s| s.h.rows() == 4 && s.h.cols() == 8 && s.h.all_finite()));
        let b = sample_channels(&header).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn entries_have_unit_variance() {
        // 10^5 draws: 3125 samples of 4x8
        let header = DatasetHeader::new(4, 8, 1.0, 10.0, 3125, 99);
        let samples = sample_channels(&header).unwrap();
        let mut sum = 0.0;
        let mut n = 0usize;
        for s in &samples {
            for z in s.h.data() {
                sum += z.norm_sqr();
                n += 1;
            }
        }
        let mean = sum / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean |h|^2 = {mean}");
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        let header = DatasetHeader::new(3, 5, 1.0, 10.0, 2, 42);
        let ds = generate(&header).unwrap();
        write_dataset(&path, &ds.header, &ds.samples).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let header = DatasetHeader::new(4, 8, 1.0, 10.0, 1, 1);
        // sample with 3 rows against a K=4 header
        let bad = ChannelSample { h: CxMat::zeros(3, 8), sample_id: 0 };
        let err = write_dataset(&path, &header, &[bad]).unwrap_err();
        assert!(matches!(err, CoreError::Dimension(_)));
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("trunc.jsonl");
        let header = DatasetHeader::new(2, 2, 1.0, 10.0, 3, 5);
        let ds = generate(&header).unwrap();
        write_dataset(&path, &ds.header, &ds.samples).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let truncated: String = text.lines().take(2).collect::<Vec<_>>().join("\n");
        std::fs::write(&path, truncated).unwrap();
        assert!(read_dataset(&path).is_err());
    }

    #[test]
    fn split_is_disjoint_covering_and_deterministic() {
        let header = DatasetHeader::new(2, 2, 1.0, 10.0, 1000, 3);
        let ds = generate(&header).unwrap();
        let (tr, te) = split(&ds, 0.8, 11).unwrap();
        assert_eq!(tr.samples.len(), 800);
        assert_eq!(te.samples.len(), 200);
        let (tr2, te2) = split(&ds, 0.8, 11).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(te, te2);
        let mut ids: Vec<u64> = tr.samples.iter().chain(&te.samples).map(|s| s.sample_id).collect();
        ids.sort_unstable();
        let expected: Vec<u64> = (0..1000).collect();
        assert_eq!(ids, expected);
    }

    #[test]
    fn split_rejects_empty_side() {
        let header = DatasetHeader::new(2, 2, 1.0, 10.0, 3, 3);
        let ds = generate(&header).unwrap();
        assert!(split(&ds, 0.01, 1).is_err());
    }
}
