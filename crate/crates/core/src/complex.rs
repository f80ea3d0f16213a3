//! Complex tensors on the tape as (real, imaginary) pairs.
//!
//! Complex arithmetic is composed from real tape ops so gradients come from
//! the real-valued backward pass; there is no complex-valued AD layer.

use crate::autodiff::{Tape, ValueId};
use crate::linalg::CxMat;
use crate::tensor::Tensor;

/// A complex matrix on the tape: two real tensors of identical shape.
#[derive(Debug, Clone, Copy)]
pub struct CxValue {
    pub re: ValueId,
    pub im: ValueId,
}

impl CxValue {
    pub fn new(re: ValueId, im: ValueId) -> Self {
        CxValue { re, im }
    }
}

/// Record a plain complex matrix as a pair of constant leaves.
pub fn cx_leaf(tape: &mut Tape, m: &CxMat) -> CxValue {
    let shape = vec![m.rows(), m.cols()];
    let re: Vec<f64> = m.data().iter().map(|z| z.re).collect();
    let im: Vec<f64> = m.data().iter().map(|z| z.im).collect();
    CxValue {
        re: tape.leaf(Tensor::from_vec(shape.clone(), re)),
        im: tape.leaf(Tensor::from_vec(shape, im)),
    }
}

/// (A B) for complex pairs: re = Ar Br - Ai Bi, im = Ar Bi + Ai Br.
pub fn cx_matmul(tape: &mut Tape, a: CxValue, b: CxValue) -> CxValue {
    let rr = tape.matmul(a.re, b.re);
    let ii = tape.matmul(a.im, b.im);
    let ri = tape.matmul(a.re, b.im);
    let ir = tape.matmul(a.im, b.re);
    CxValue { re: tape.sub(rr, ii), im: tape.add(ri, ir) }
}

/// Elementwise |z|^2 = re^2 + im^2.
pub fn cx_abs_sq(tape: &mut Tape, a: CxValue) -> ValueId {
    let r2 = tape.square(a.re);
    let i2 = tape.square(a.im);
    tape.add(r2, i2)
}

/// Squared Frobenius norm of a complex pair, a scalar.
pub fn cx_norm_sq(tape: &mut Tape, a: CxValue) -> ValueId {
    let r = tape.norm_sq(a.re);
    let i = tape.norm_sq(a.im);
    tape.add(r, i)
}

/// Multiply both components by a tape scalar.
pub fn cx_scale_by(tape: &mut Tape, a: CxValue, s: ValueId) -> CxValue {
    CxValue { re: tape.scale_by(a.re, s), im: tape.scale_by(a.im, s) }
}

/// Materialize the tape values into a plain complex matrix.
pub fn cx_extract(tape: &Tape, a: CxValue) -> CxMat {
    let re = tape.value(a.re);
    let im = tape.value(a.im);
    assert_eq!(re.shape(), im.shape(), "cx_extract: component shapes differ");
    CxMat::from_re_im(re.rows(), re.cols(), re.data(), im.data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn complex_matmul_matches_direct() {
        // (1+2i)(3-i) = 5+5i for 1x1 matrices
        let a = CxMat::from_fn(1, 1, |_, _| Complex64::new(1.0, 2.0));
        let b = CxMat::from_fn(1, 1, |_, _| Complex64::new(3.0, -1.0));
        let mut tape = Tape::new();
        let ta = cx_leaf(&mut tape, &a);
        let tb = cx_leaf(&mut tape, &b);
        let c = cx_matmul(&mut tape, ta, tb);
        let out = cx_extract(&tape, c);
        assert!((out.at(0, 0) - Complex64::new(5.0, 5.0)).norm() < 1e-15);
    }

    #[test]
    fn abs_sq_and_norm() {
        let a = CxMat::from_fn(1, 2, |_, j| {
            if j == 0 { Complex64::new(3.0, 4.0) } else { Complex64::new(0.0, 2.0) }
        });
        let mut tape = Tape::new();
        let ta = cx_leaf(&mut tape, &a);
        let sq = cx_abs_sq(&mut tape, ta);
        assert_eq!(tape.value(sq).data(), &[25.0, 4.0]);
        let n = cx_norm_sq(&mut tape, ta);
        assert_eq!(tape.value(n).item(), 29.0);
    }
}
