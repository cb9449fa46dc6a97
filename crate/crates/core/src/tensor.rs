//! Dense 64-bit float matrices and vectors.
//!
//! Everything downstream (attention, losses, retrieval) is built on these
//! two types. Row-major storage, no views, no broadcasting; shapes are
//! validated at the op boundary and mismatches are reported with both
//! shapes spelled out.

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Build from row-major data; `data.len()` must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "Matrix::from_vec",
                left: format!("{rows}x{cols}"),
                right: format!("data of length {}", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }

    /// Row `r` as a slice of length `cols`.
    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        debug_assert!(r < self.rows);
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Standard matrix product, `(self.rows x other.cols)`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: format!("{}x{}", self.rows, self.cols),
                right: format!("{}x{}", other.rows, other.cols),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        // i-k-j order so the inner loop walks both operands contiguously.
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a_ik) in a_row.iter().enumerate() {
                let b_row = other.row(k);
                for (o, &b_kj) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a_ik * b_kj;
                }
            }
        }
        Ok(out)
    }
}

/// Dense `f64` vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn from_vec(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, i: usize) -> f64 {
        self.data[i]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Self { data }
    }
}

fn check_len(op: &'static str, a: &Vector, b: &Vector) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op,
            left: format!("len {}", a.len()),
            right: format!("len {}", b.len()),
        });
    }
    Ok(())
}

/// Dot product of two equal-length vectors.
pub fn dot(a: &Vector, b: &Vector) -> Result<f64> {
    check_len("dot", a, b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum())
}

/// Squared L2 norm; identical to `dot(a, a)`.
pub fn l2_norm_sq(a: &Vector) -> f64 {
    a.data.iter().map(|x| x * x).sum()
}

/// Squared Euclidean distance between two equal-length vectors.
pub fn squared_distance(a: &Vector, b: &Vector) -> Result<f64> {
    check_len("squared_distance", a, b)?;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

pub fn add(a: &Vector, b: &Vector) -> Result<Vector> {
    check_len("add", a, b)?;
    Ok(Vector::from_vec(
        a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
    ))
}

pub fn sub(a: &Vector, b: &Vector) -> Result<Vector> {
    check_len("sub", a, b)?;
    Ok(Vector::from_vec(
        a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect(),
    ))
}

/// Elementwise product.
pub fn hadamard(a: &Vector, b: &Vector) -> Result<Vector> {
    check_len("hadamard", a, b)?;
    Ok(Vector::from_vec(
        a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    ))
}

pub fn scale(a: &Vector, k: f64) -> Vector {
    Vector::from_vec(a.data.iter().map(|x| x * k).collect())
}

pub fn tanh_elem(a: &Vector) -> Vector {
    Vector::from_vec(a.data.iter().map(|x| x.tanh()).collect())
}

/// Numerically stable softmax: shifts by the max before exponentiating.
pub fn softmax(v: &Vector) -> Result<Vector> {
    if v.is_empty() {
        return Err(Error::EmptyInput { op: "softmax" });
    }
    let max = v.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.data.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(Vector::from_vec(exps.iter().map(|e| e / total).collect()))
}

/// `v (1xN) * m (NxM) -> (1xM)`; the row-vector side of `matmul`.
pub fn vec_mat_mul(v: &Vector, m: &Matrix) -> Result<Vector> {
    if v.len() != m.rows() {
        return Err(Error::ShapeMismatch {
            op: "vec_mat_mul",
            left: format!("len {}", v.len()),
            right: format!("{}x{}", m.rows(), m.cols()),
        });
    }
    let mut out = vec![0.0; m.cols()];
    for (k, &vk) in v.data.iter().enumerate() {
        for (o, &m_kj) in out.iter_mut().zip(m.row(k)) {
            *o += vk * m_kj;
        }
    }
    Ok(Vector::from_vec(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Naive triple-loop reference used as the matmul oracle.
    fn matmul_oracle(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.at(i, k) * b.at(k, j);
                }
                *out.at_mut(i, j) = acc;
            }
        }
        out
    }

    fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn matmul_identity_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_matrix(&mut rng, 3, 3);
        let out = Matrix::identity(3).matmul(&m).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn matmul_hand_computed() {
        let a = Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let b = Matrix::from_vec(2, 1, vec![3.0, 4.0]).unwrap();
        let out = a.matmul(&b).unwrap();
        assert_eq!(out.as_slice(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_matrix(&mut rng, 4, 5);
        let b = random_matrix(&mut rng, 5, 3);
        let fast = a.matmul(&b).unwrap();
        let slow = matmul_oracle(&a, &b);
        for (x, y) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn matmul_matches_oracle_up_to_64() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(n, k, m) in &[(8, 3, 5), (17, 17, 17), (64, 64, 64)] {
            let a = random_matrix(&mut rng, n, k);
            let b = random_matrix(&mut rng, k, m);
            let fast = a.matmul(&b).unwrap();
            let slow = matmul_oracle(&a, &b);
            for (x, y) in fast.as_slice().iter().zip(slow.as_slice()) {
                let denom = y.abs().max(1.0);
                assert!((x - y).abs() / denom <= 1e-12, "{} vs {}", x, y);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(4, 2);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("4x2"), "{msg}");
    }

    #[test]
    fn softmax_symmetry() {
        let out = softmax(&Vector::from_vec(vec![0.0, 0.0, 0.0])).unwrap();
        for &x in out.as_slice() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_large_inputs_do_not_overflow() {
        let out = softmax(&Vector::from_vec(vec![1000.0, 0.0])).unwrap();
        assert!(out.is_finite());
        assert!(out.at(0) > 1.0 - 1e-12);
        assert!(out.at(1) < 1e-12);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let v = Vector::from_vec(vec![1.0, 2.0, 3.0]);
        let out = softmax(&v).unwrap();
        let z: f64 = v.as_slice().iter().map(|x| x.exp()).sum();
        for (o, &x) in out.as_slice().iter().zip(v.as_slice()) {
            assert!((o - x.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_empty_errors() {
        assert!(softmax(&Vector::zeros(0)).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for len in [1usize, 2, 7, 50] {
            let v = Vector::from_vec((0..len).map(|_| rng.random_range(-30.0..30.0)).collect());
            let out = softmax(&v).unwrap();
            assert!((out.sum() - 1.0).abs() < 1e-9);
            assert!(out.as_slice().iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn dot_orthogonal() {
        let a = Vector::from_vec(vec![1.0, 0.0]);
        let b = Vector::from_vec(vec![0.0, 1.0]);
        assert_eq!(dot(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn l2_norm_sq_hand_computed() {
        assert_eq!(l2_norm_sq(&Vector::from_vec(vec![3.0, 4.0])), 25.0);
    }

    #[test]
    fn l2_norm_sq_equals_dot_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Vector::from_vec((0..33).map(|_| rng.random_range(-5.0..5.0)).collect());
        assert_eq!(l2_norm_sq(&a), dot(&a, &a).unwrap());
    }

    #[test]
    fn hadamard_hand_computed() {
        let a = Vector::from_vec(vec![1.0, 2.0]);
        let b = Vector::from_vec(vec![3.0, 4.0]);
        assert_eq!(hadamard(&a, &b).unwrap().as_slice(), &[3.0, 8.0]);
    }

    #[test]
    fn binary_ops_reject_length_mismatch() {
        let a = Vector::zeros(2);
        let b = Vector::zeros(3);
        assert!(dot(&a, &b).is_err());
        assert!(add(&a, &b).is_err());
        assert!(sub(&a, &b).is_err());
        assert!(hadamard(&a, &b).is_err());
    }
}
