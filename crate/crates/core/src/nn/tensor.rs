use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type of the engine: `f32` for training, `f64` for gradient checks.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }

    fn f64(self) -> f64 {
        self.to_f64().unwrap()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![F::zero(); shape.iter().product()],
        }
    }

    /// Panics when `data.len()` differs from the product of `shape`.
    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} values",
            data.len()
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn from_rows<R: AsRef<[F]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self::from_vec(&[rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Size of the trailing dimensions (row length).
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[F] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::of(v.f64())).collect(),
        }
    }
}

#[inline]
pub fn axpy<F: Real>(alpha: F, x: &[F], y: &mut [F]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += alpha * *x;
    }
}

/// Dot product with a fixed eight-lane accumulation order.
#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        for l in 0..8 {
            acc[l] += a[c * 8 + l] * b[c * 8 + l];
        }
    }
    let mut tail = F::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `out (n x m) = a (n x k) . b (k x m)`.
pub fn matmul<F: Real>(a: &[F], b: &[F], n: usize, k: usize, m: usize, out: &mut [F]) {
    out[..n * m].fill(F::zero());
    matmul_acc(a, b, n, k, m, out);
}

/// `out (n x m) += a (n x k) . b (k x m)`.
pub fn matmul_acc<F: Real>(a: &[F], b: &[F], n: usize, k: usize, m: usize, out: &mut [F]) {
    for r in 0..n {
        let o = &mut out[r * m..(r + 1) * m];
        for i in 0..k {
            let s = a[r * k + i];
            if s != F::zero() {
                axpy(s, &b[i * m..(i + 1) * m], o);
            }
        }
    }
}

/// `out (k x m) += a^T . b` for `a (n x k)`, `b (n x m)`.
pub fn matmul_tn_acc<F: Real>(a: &[F], b: &[F], n: usize, k: usize, m: usize, out: &mut [F]) {
    for r in 0..n {
        let br = &b[r * m..(r + 1) * m];
        for i in 0..k {
            let s = a[r * k + i];
            if s != F::zero() {
                axpy(s, br, &mut out[i * m..(i + 1) * m]);
            }
        }
    }
}

/// `out (n x k) += a (n x m) . b^T` for `b (k x m)`.
pub fn matmul_nt_acc<F: Real>(a: &[F], b: &[F], n: usize, m: usize, k: usize, out: &mut [F]) {
    for r in 0..n {
        let ar = &a[r * m..(r + 1) * m];
        for i in 0..k {
            out[r * k + i] += dot(ar, &b[i * m..(i + 1) * m]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * m];
        for r in 0..n {
            for c in 0..m {
                out[r * m + c] = (0..k).map(|i| a[r * k + i] * b[i * m + c]).sum();
            }
        }
        out
    }

    fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    #[test]
    fn kernels_agree_with_naive_product() {
        let (n, k, m) = (3, 11, 5);
        let a: Vec<f64> = (0..n * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * m).map(|i| (i as f64 * 0.11).cos()).collect();
        let expected = naive(&a, &b, n, k, m);

        let mut out = vec![0.0; n * m];
        matmul(&a, &b, n, k, m, &mut out);
        for (x, y) in out.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12);
        }

        let mut out = vec![0.0; n * m];
        matmul_nt_acc(&a, &transpose(&b, k, m), n, k, m, &mut out);
        for (x, y) in out.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12);
        }

        let mut out = vec![0.0; n * m];
        matmul_tn_acc(&transpose(&a, n, k), &b, k, n, m, &mut out);
        for (x, y) in out.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dot_handles_tails() {
        for len in 0..20 {
            let a: Vec<f64> = (0..len).map(|i| i as f64).collect();
            let want: f64 = a.iter().map(|x| x * x).sum();
            assert_eq!(dot(&a, &a), want);
        }
    }

    #[test]
    #[should_panic]
    fn shape_mismatch_panics() {
        Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]);
    }
}
