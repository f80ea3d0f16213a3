//! Small dense complex matrices and a Cholesky solver.
//!
//! Sized for the antenna counts in play (N up to a few dozen); everything is
//! straightforward O(n^3) with no external solver dependency.

use num_complex::Complex64;

use crate::error::{CoreError, Result};

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CxMat {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CxMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CxMat { rows, cols, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = CxMat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn from_re_im(rows: usize, cols: usize, re: &[f64], im: &[f64]) -> Self {
        assert_eq!(re.len(), rows * cols);
        assert_eq!(im.len(), rows * cols);
        let data = re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect();
        CxMat { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        CxMat::from_fn(n, n, |i, j| {
            if i == j { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) }
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Column `j` as an owned vector.
    pub fn col(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self.at(i, j)).collect()
    }

    pub fn set_col(&mut self, j: usize, v: &[Complex64]) {
        assert_eq!(v.len(), self.rows);
        for i in 0..self.rows {
            self.set(i, j, v[i]);
        }
    }

    /// Conjugate transpose.
    pub fn hermitian(&self) -> CxMat {
        CxMat::from_fn(self.cols, self.rows, |i, j| self.at(j, i).conj())
    }

    pub fn matmul(&self, other: &CxMat) -> CxMat {
        assert_eq!(self.cols, other.rows, "cxmat: inner dims differ");
        let mut out = CxMat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a.norm_sqr() == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    let v = out.at(i, j) + a * other.at(k, j);
                    out.set(i, j, v);
                }
            }
        }
        out
    }

    pub fn scale(&self, c: f64) -> CxMat {
        CxMat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * c).collect() }
    }

    /// Squared Frobenius norm.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Cholesky factor L (lower triangular, A = L L^H) of a Hermitian positive
/// definite matrix. Fails when a pivot is not strictly positive.
pub fn cholesky(a: &CxMat) -> Result<CxMat> {
    let n = a.rows();
    assert_eq!(n, a.cols(), "cholesky: matrix must be square");
    let mut l = CxMat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.at(i, j);
            for k in 0..j {
                s -= l.at(i, k) * l.at(j, k).conj();
            }
            if i == j {
                if s.re <= 0.0 || s.im.abs() > 1e-9 * (1.0 + s.re.abs()) {
                    return Err(CoreError::Linalg(format!(
                        "cholesky: non-positive pivot {} at {}",
                        s.re, i
                    )));
                }
                l.set(i, j, Complex64::new(s.re.sqrt(), 0.0));
            } else {
                l.set(i, j, s / l.at(j, j));
            }
        }
    }
    Ok(l)
}

/// Solve A x = b via a precomputed Cholesky factor.
pub fn cholesky_solve(l: &CxMat, b: &[Complex64]) -> Vec<Complex64> {
    let n = l.rows();
    assert_eq!(b.len(), n);
    // forward: L y = b
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l.at(i, k) * y[k];
        }
        y[i] = s / l.at(i, i);
    }
    // backward: L^H x = y
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l.at(k, i).conj() * x[k];
        }
        x[i] = s / l.at(i, i);
    }
    x
}

/// Solve A x = b for Hermitian positive definite A.
pub fn solve_hpd(a: &CxMat, b: &[Complex64]) -> Result<Vec<Complex64>> {
    let l = cholesky(a)?;
    Ok(cholesky_solve(&l, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn cholesky_reconstructs() {
        // A = B B^H + I is Hermitian PD
        let b = CxMat::from_fn(3, 3, |i, j| c((i + j) as f64 * 0.3, (i as f64 - j as f64) * 0.2));
        let mut a = b.matmul(&b.hermitian());
        for i in 0..3 {
            let v = a.at(i, i) + c(1.0, 0.0);
            a.set(i, i, v);
        }
        let l = cholesky(&a).unwrap();
        let back = l.matmul(&l.hermitian());
        for i in 0..3 {
            for j in 0..3 {
                assert!((back.at(i, j) - a.at(i, j)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn solve_matches_direct_check() {
        let b = CxMat::from_fn(4, 4, |i, j| c((i * 4 + j) as f64 * 0.1, (j as f64).sin()));
        let mut a = b.matmul(&b.hermitian());
        for i in 0..4 {
            let v = a.at(i, i) + c(2.0, 0.0);
            a.set(i, i, v);
        }
        let rhs: Vec<Complex64> = (0..4).map(|i| c(i as f64, -(i as f64) * 0.5)).collect();
        let x = solve_hpd(&a, &rhs).unwrap();
        // A x should equal rhs
        for i in 0..4 {
            let mut s = c(0.0, 0.0);
            for j in 0..4 {
                s += a.at(i, j) * x[j];
            }
            assert!((s - rhs[i]).norm() < 1e-10);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = CxMat::identity(2);
        a.set(1, 1, c(-1.0, 0.0));
        assert!(cholesky(&a).is_err());
    }
}
