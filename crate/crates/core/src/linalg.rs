//! Dense f64 matrix kernels.
//!
//! Everything runs in 64-bit floats so numerical invariants (row-stochastic
//! softmax, entropy bounds) can be tested at tight tolerances. `matmul` uses a
//! fixed left-to-right summation over the inner index, so results are
//! bit-reproducible across runs and match a naive triple loop exactly.

use crate::error::{Error, Result};

/// Row-major dense matrix of f64.
///
/// Public constructors reject non-finite entries; kernels validate their
/// outputs the same way, so a `Matrix` never carries NaN or infinities.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix data length {} != {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("matrix construction"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Matrix::from_vec(r, c, rows.concat())
    }

    // Internal constructor for kernel outputs that are finite by construction.
    fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Matrix {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.get(i, j);
            }
        }
        Matrix::from_parts(self.cols, self.rows, out)
    }

    /// Copy of rows `start..start + len` as a new matrix.
    pub fn row_block(&self, start: usize, len: usize) -> Result<Matrix> {
        if start + len > self.rows {
            return Err(Error::Shape(format!(
                "row block {}..{} out of {} rows",
                start,
                start + len,
                self.rows
            )));
        }
        let data = self.data[start * self.cols..(start + len) * self.cols].to_vec();
        Ok(Matrix::from_parts(len, self.cols, data))
    }

    /// Copy columns selected by `keep` (indices must be valid).
    pub fn select_cols(&self, keep: &[usize]) -> Result<Matrix> {
        if keep.iter().any(|&j| j >= self.cols) {
            return Err(Error::Shape("column index out of range".into()));
        }
        let mut data = Vec::with_capacity(self.rows * keep.len());
        for i in 0..self.rows {
            let row = self.row(i);
            data.extend(keep.iter().map(|&j| row[j]));
        }
        Ok(Matrix::from_parts(self.rows, keep.len(), data))
    }

    fn check_finite(self, op: &'static str) -> Result<Matrix> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(Error::NonFinite(op))
        }
    }
}

/// `a * b`. Inner summation runs over k in ascending order with no
/// reassociation, so the result is bitwise stable.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "matmul {}x{} * {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = vec![0.0; a.rows * b.cols];
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = &mut out[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a_row.iter().enumerate() {
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    Matrix::from_parts(a.rows, b.cols, out).check_finite("matmul")
}

/// Elementwise sum.
pub fn add(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(Error::Shape(format!(
            "add {}x{} + {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Matrix::from_parts(a.rows, a.cols, data).check_finite("add")
}

/// Add `bias[i]` to every entry of row `i` (broadcast across columns).
pub fn add_bias(m: &Matrix, bias: &[f64]) -> Result<Matrix> {
    if bias.len() != m.rows {
        return Err(Error::Shape(format!(
            "bias length {} != {} rows",
            bias.len(),
            m.rows
        )));
    }
    let mut data = m.data.clone();
    for (i, &b) in bias.iter().enumerate() {
        for v in &mut data[i * m.cols..(i + 1) * m.cols] {
            *v += b;
        }
    }
    Matrix::from_parts(m.rows, m.cols, data).check_finite("add_bias")
}

/// Row softmax with per-row max subtraction. Each output row sums to 1.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut data = vec![0.0; m.data.len()];
    for i in 0..m.rows {
        let row = m.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let out = &mut data[i * m.cols..(i + 1) * m.cols];
        let mut sum = 0.0;
        for (o, &x) in out.iter_mut().zip(row) {
            *o = (x - max).exp();
            sum += *o;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
    }
    Matrix::from_parts(m.rows, m.cols, data)
}

/// Layer normalization over the feature axis (rows): each column is
/// normalized to mean 0, variance 1, then scaled by `gamma` and shifted by
/// `beta`. Population variance, `eps` inside the square root.
pub fn layer_norm(x: &Matrix, gamma: &[f64], beta: &[f64], eps: f64) -> Result<Matrix> {
    let d = x.rows;
    if gamma.len() != d || beta.len() != d {
        return Err(Error::Shape(format!(
            "layer_norm affine length {}/{} != {} features",
            gamma.len(),
            beta.len(),
            d
        )));
    }
    let mut data = vec![0.0; x.data.len()];
    for j in 0..x.cols {
        let mut mean = 0.0;
        for i in 0..d {
            mean += x.get(i, j);
        }
        mean /= d as f64;
        let mut var = 0.0;
        for i in 0..d {
            let c = x.get(i, j) - mean;
            var += c * c;
        }
        var /= d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for i in 0..d {
            data[i * x.cols + j] = gamma[i] * ((x.get(i, j) - mean) * inv) + beta[i];
        }
    }
    Matrix::from_parts(x.rows, x.cols, data).check_finite("layer_norm")
}

/// Exact GELU: `x * Phi(x)` with `Phi` the standard normal CDF via erf.
pub fn gelu(m: &Matrix) -> Matrix {
    let data = m.data.iter().map(|&x| gelu_scalar(x)).collect();
    Matrix::from_parts(m.rows, m.cols, data)
}

#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)] // naive triple-loop reference
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Independent reference: naive i-j-k triple loop, k ascending.
    fn matmul_naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let eye = Matrix::from_vec(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let m = Matrix::from_vec(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(matmul(&eye, &m).unwrap(), m);
    }

    #[test]
    fn matmul_scalar() {
        let a = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let b = Matrix::from_vec(1, 1, vec![3.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().get(0, 0), 6.0);
    }

    #[test]
    fn matmul_matches_naive_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Matrix::from_vec(4, 5, (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let b = Matrix::from_vec(5, 3, (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let fast = matmul(&a, &b).unwrap();
        let naive = matmul_naive(&a, &b);
        // Identical summation order => identical bits.
        for (x, y) in fast.data().iter().zip(naive.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_symmetry() {
        let m = Matrix::from_vec(1, 3, vec![0., 0., 0.]).unwrap();
        let s = softmax_rows(&m);
        for j in 0..3 {
            assert!((s.get(0, j) - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_large_magnitudes_stay_stable() {
        let m = Matrix::from_vec(1, 2, vec![1000.0, 0.0]).unwrap();
        let s = softmax_rows(&m);
        assert!((s.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(s.get(0, 1) >= 0.0 && s.get(0, 1) < 1e-300);
        assert!((s.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_reference_values() {
        let m = Matrix::from_vec(1, 3, vec![1., 2., 3.]).unwrap();
        let s = softmax_rows(&m);
        let expected = [0.09003057317038046, 0.24472847105479767, 0.6652409557748219];
        for (got, want) in s.row(0).iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_constant_column_is_clamped() {
        let x = Matrix::from_vec(3, 1, vec![5., 5., 5.]).unwrap();
        let out = layer_norm(&x, &[1., 1., 1.], &[0., 0., 0.], 1e-6).unwrap();
        for i in 0..3 {
            assert_eq!(out.get(i, 0), 0.0);
        }
    }

    #[test]
    fn layer_norm_hand_case() {
        // mean 2, population std 1
        let x = Matrix::from_vec(2, 1, vec![1., 3.]).unwrap();
        let out = layer_norm(&x, &[1., 1.], &[0., 0.], 0.0).unwrap();
        assert!((out.get(0, 0) + 1.0).abs() < 1e-15);
        assert!((out.get(1, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_beta_shift() {
        let x = Matrix::from_vec(3, 2, vec![1., -2., 0.5, 4., 2., 0.25]).unwrap();
        let gamma = [1., 1., 1.];
        let base = layer_norm(&x, &gamma, &[0., 0., 0.], 1e-6).unwrap();
        let beta = [0.7, -1.2, 3.0];
        let shifted = layer_norm(&x, &gamma, &beta, 1e-6).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert!((shifted.get(i, j) - (base.get(i, j) + beta[i])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(1.0) - 0.8413447460685429).abs() < 1e-12);
        assert!((gelu_scalar(20.0) - 20.0).abs() < 1e-9);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            Matrix::from_vec(1, 1, vec![f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    proptest! {
        #[test]
        fn softmax_rows_are_stochastic(
            rows in 1usize..6,
            cols in 1usize..8,
            seed in any::<u64>()
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-30.0..30.0)).collect();
            let m = Matrix::from_vec(rows, cols, data).unwrap();
            let s = softmax_rows(&m);
            for i in 0..rows {
                let sum: f64 = s.row(i).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                prop_assert!(s.row(i).iter().all(|&p| (0.0..=1.0).contains(&p)));
            }
        }

        // Dyadic logits (multiples of 2^-10 in a small range) make x + c exact,
        // so shift invariance must hold bitwise.
        #[test]
        fn softmax_shift_invariance_exact(
            cols in 1usize..8,
            raw in proptest::collection::vec(-8192i32..8192, 1..8),
            craw in -8192i32..8192
        ) {
            let cols = cols.min(raw.len());
            let logits: Vec<f64> = raw[..cols].iter().map(|&v| v as f64 / 1024.0).collect();
            let c = craw as f64 / 1024.0;
            let m = Matrix::from_vec(1, cols, logits.clone()).unwrap();
            let shifted = Matrix::from_vec(1, cols, logits.iter().map(|&x| x + c).collect()).unwrap();
            let a = softmax_rows(&m);
            let b = softmax_rows(&shifted);
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }

        #[test]
        fn layer_norm_centers_and_scales(
            d in 2usize..10,
            cols in 1usize..5,
            seed in any::<u64>()
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..d * cols).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let x = Matrix::from_vec(d, cols, data).unwrap();
            // Skip numerically degenerate columns: the eps clamp dominates there.
            let out = layer_norm(&x, &vec![1.0; d], &vec![0.0; d], 1e-12).unwrap();
            for j in 0..cols {
                let col = out.col(j);
                let spread = x.col(j).iter().copied().fold(f64::NEG_INFINITY, f64::max)
                    - x.col(j).iter().copied().fold(f64::INFINITY, f64::min);
                if spread < 1e-3 {
                    continue;
                }
                let mean: f64 = col.iter().sum::<f64>() / d as f64;
                let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((var - 1.0).abs() < 1e-6);
            }
        }
    }
}
