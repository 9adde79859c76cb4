//! Dense real linear algebra.
//!
//! Everything here is plain `f64` arithmetic on row-major storage. The
//! symmetric eigensolver is a cyclic Jacobi method, which is slow compared to
//! tridiagonal QR but very accurate, and accuracy is what the margin and
//! truncation analyses need.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Absolute tolerance used to decide whether a matrix counts as symmetric.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Jacobi stops once the off-diagonal Frobenius norm falls below this
/// fraction of the input's Frobenius norm.
const JACOBI_RELATIVE_TOLERANCE: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigenvalues at or below this fraction of the largest make a matrix
/// numerically singular for [`condition_number`].
const SINGULAR_RATIO: f64 = 1e-12;

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
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
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from row-major data, checking the length.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a slice of equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} matrix by vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self + alpha * other`, element-wise.
    pub fn add_scaled(&self, alpha: f64, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "cannot add {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + alpha * b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    /// Largest `|a_ij - a_ji|`; zero for a perfectly symmetric matrix.
    pub fn max_asymmetry(&self) -> f64 {
        assert!(self.is_square(), "asymmetry of a non-square matrix");
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square() && self.max_asymmetry() <= tol
    }

    /// `(A + Aᵀ) / 2`.
    pub fn symmetrized(&self) -> Result<Matrix> {
        if !self.is_square() {
            return Err(Error::Dimension(format!(
                "cannot symmetrize a {}x{} matrix",
                self.rows, self.cols
            )));
        }
        let mut m = self.clone();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let avg = 0.5 * (self[(i, j)] + self[(j, i)]);
                m[(i, j)] = avg;
                m[(j, i)] = avg;
            }
        }
        Ok(m)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(i)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four independent partial sums let the compiler vectorize the loop.
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Euclidean norm.
pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn norm1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn outer(u: &[f64], v: &[f64]) -> Matrix {
    let mut m = Matrix::zeros(u.len(), v.len());
    for (i, &ui) in u.iter().enumerate() {
        for (o, &vj) in m.row_mut(i).iter_mut().zip(v) {
            *o = ui * vj;
        }
    }
    m
}

/// Cosine of the angle between `u` and `v`, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm2(u), norm2(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Degenerate("cosine of a zero vector".into()));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Spectral decomposition `A = Σ λᵢ aᵢ aᵢᵀ` of a symmetric matrix, ordered by
/// descending `|λ|` (ties keep the original diagonal order).
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    values: Vec<f64>,
    vectors: Vec<Vec<f64>>,
}

impl EigenDecomposition {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Unit eigenvector for `values()[i]`.
    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i]
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `Σ_{i<rank} λᵢ aᵢ aᵢᵀ`. `rank` is capped at the dimension.
    pub fn truncated(&self, rank: usize) -> Matrix {
        let n = self.values.len();
        let mut m = Matrix::zeros(n, n);
        for (lambda, v) in self.values.iter().zip(&self.vectors).take(rank) {
            for i in 0..n {
                let s = lambda * v[i];
                if s == 0.0 {
                    continue;
                }
                for (o, &vj) in m.row_mut(i).iter_mut().zip(v) {
                    *o += s * vj;
                }
            }
        }
        m
    }

    pub fn reconstruct(&self) -> Matrix {
        self.truncated(self.values.len())
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn sym_eigen(a: &Matrix) -> Result<EigenDecomposition> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    let asym = a.max_asymmetry();
    if asym > SYMMETRY_TOLERANCE {
        return Err(Error::Contract(format!(
            "matrix is not symmetric (max |a_ij - a_ji| = {asym:e})"
        )));
    }
    let n = a.rows;
    // Work on the exactly symmetric part so the row/column mirroring below is
    // consistent.
    let mut w = a.symmetrized()?;
    // Row i of `basis` is the i-th column of the accumulated rotation.
    let mut basis = Matrix::identity(n);
    let threshold = JACOBI_RELATIVE_TOLERANCE * a.frobenius_norm();

    let mut sweeps = 0;
    loop {
        let off = off_diagonal_norm(&w);
        if off <= threshold || n < 2 {
            break;
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence {
                sweeps,
                off_norm: off,
            });
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                jacobi_rotate(&mut w, &mut basis, p, q);
            }
        }
        sweeps += 1;
    }

    let raw_values: Vec<f64> = (0..n).map(|i| w[(i, i)]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // sort_by is stable, so equal magnitudes keep their index order.
    order.sort_by(|&i, &j| raw_values[j].abs().total_cmp(&raw_values[i].abs()));
    let values = order.iter().map(|&i| raw_values[i]).collect();
    let vectors = order.iter().map(|&i| basis.row(i).to_vec()).collect();
    Ok(EigenDecomposition { values, vectors })
}

fn off_diagonal_norm(m: &Matrix) -> f64 {
    let mut sum = 0.0;
    for i in 0..m.rows {
        for (j, v) in m.row(i).iter().enumerate() {
            if i != j {
                sum += v * v;
            }
        }
    }
    sum.sqrt()
}

/// One rotation zeroing `w[p][q]`; `basis` rows p and q are rotated alongside.
fn jacobi_rotate(w: &mut Matrix, basis: &mut Matrix, p: usize, q: usize) {
    let apq = w[(p, q)];
    if apq == 0.0 {
        return;
    }
    let app = w[(p, p)];
    let aqq = w[(q, q)];
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.is_finite() {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    } else {
        // |theta| overflowed: the rotation angle is ~1/(2 theta).
        0.5 / theta
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    let n = w.cols;
    {
        let (head, tail) = w.data.split_at_mut(q * n);
        let row_p = &mut head[p * n..(p + 1) * n];
        let row_q = &mut tail[..n];
        for k in 0..n {
            if k == p || k == q {
                continue;
            }
            let akp = row_p[k];
            let akq = row_q[k];
            row_p[k] = c * akp - s * akq;
            row_q[k] = s * akp + c * akq;
        }
    }
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        w.data[k * n + p] = w.data[p * n + k];
        w.data[k * n + q] = w.data[q * n + k];
    }
    w[(p, p)] = app - t * apq;
    w[(q, q)] = aqq + t * apq;
    w[(p, q)] = 0.0;
    w[(q, p)] = 0.0;

    let (head, tail) = basis.data.split_at_mut(q * n);
    let vp = &mut head[p * n..(p + 1) * n];
    let vq = &mut tail[..n];
    for (a, b) in vp.iter_mut().zip(vq.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// `λ_max / λ_min` of a symmetric positive-semidefinite matrix, with
/// eigenvalues clamped below at zero. Returns `f64::INFINITY` when the matrix
/// is numerically singular.
pub fn condition_number(a: &Matrix) -> Result<f64> {
    let eig = sym_eigen(a)?;
    Ok(condition_number_from_values(eig.values()))
}

pub(crate) fn condition_number_from_values(values: &[f64]) -> f64 {
    let clamped = values.iter().map(|v| v.max(0.0));
    let (lo, hi) = clamped.fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if hi == 0.0 || lo <= SINGULAR_RATIO * hi {
        f64::INFINITY
    } else {
        hi / lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.random_range(-1.0..1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    fn relative_reconstruction_error(m: &Matrix, eig: &EigenDecomposition) -> f64 {
        let diff = eig.reconstruct().add_scaled(-1.0, m).unwrap();
        diff.frobenius_norm() / m.frobenius_norm()
    }

    fn max_orthonormality_error(eig: &EigenDecomposition) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..eig.len() {
            for j in 0..eig.len() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(eig.vector(i), eig.vector(j)) - target).abs());
            }
        }
        worst
    }

    #[test]
    fn diagonal_matrix() {
        let eig = sym_eigen(&Matrix::from_diagonal(&[3.0, 1.0])).unwrap();
        assert_eq!(eig.values(), &[3.0, 1.0]);
        assert_eq!(eig.vector(0), &[1.0, 0.0]);
        assert_eq!(eig.vector(1), &[0.0, 1.0]);
    }

    #[test]
    fn diagonal_ordering_uses_magnitude() {
        let eig = sym_eigen(&Matrix::from_diagonal(&[1.0, -5.0, 3.0])).unwrap();
        assert_eq!(eig.values(), &[-5.0, 3.0, 1.0]);
    }

    #[test]
    fn magnitude_ties_keep_index_order() {
        let eig = sym_eigen(&Matrix::from_diagonal(&[2.0, -2.0, 2.0])).unwrap();
        assert_eq!(eig.values(), &[2.0, -2.0, 2.0]);
        assert_eq!(eig.vector(1), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn swap_matrix() {
        let m = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let eig = sym_eigen(&m).unwrap();
        let mut values = eig.values().to_vec();
        values.sort_by(f64::total_cmp);
        assert!((values[0] + 1.0).abs() < 1e-15 && (values[1] - 1.0).abs() < 1e-15);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for i in 0..2 {
            let v = eig.vector(i);
            let expected = if eig.values()[i] > 0.0 { [h, h] } else { [h, -h] };
            let c = dot(v, &expected).abs();
            assert!((c - 1.0).abs() < 1e-12, "vector {v:?}");
        }
    }

    #[test]
    fn random_10x10_reconstructs() {
        let m = random_symmetric(10, 7);
        let eig = sym_eigen(&m).unwrap();
        assert!(relative_reconstruction_error(&m, &eig) < 1e-8);
        assert!(max_orthonormality_error(&eig) < 1e-10);
    }

    #[test]
    fn rejects_non_square_and_asymmetric() {
        assert!(matches!(
            sym_eigen(&Matrix::zeros(2, 3)),
            Err(Error::Dimension(_))
        ));
        let m = Matrix::from_rows(&[[1.0, 2.0], [2.1, 1.0]]).unwrap();
        assert!(matches!(sym_eigen(&m), Err(Error::Contract(_))));
        // Within tolerance is accepted.
        let m = Matrix::from_rows(&[[1.0, 2.0], [2.0 + 1e-12, 1.0]]).unwrap();
        assert!(sym_eigen(&m).is_ok());
    }

    #[test]
    fn truncation_keeps_leading_terms() {
        let m = Matrix::from_diagonal(&[1.0, -4.0, 2.0]);
        let eig = sym_eigen(&m).unwrap();
        assert_eq!(eig.truncated(1), Matrix::from_diagonal(&[0.0, -4.0, 0.0]));
        assert_eq!(eig.truncated(0), Matrix::zeros(3, 3));
    }

    #[test]
    fn condition_numbers() {
        assert_eq!(condition_number(&Matrix::identity(3)).unwrap(), 1.0);
        assert_eq!(
            condition_number(&Matrix::from_diagonal(&[4.0, 1.0])).unwrap(),
            4.0
        );
        assert_eq!(
            condition_number(&Matrix::from_diagonal(&[4.0, 0.0])).unwrap(),
            f64::INFINITY
        );
        assert_eq!(
            condition_number(&Matrix::from_diagonal(&[4.0, -1.0])).unwrap(),
            f64::INFINITY
        );
        assert!(matches!(
            condition_number(&Matrix::zeros(2, 3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn condition_number_of_nearly_parallel_gram() {
        // Unit vectors at angle 1e-4: the Gram matrix [[1, c], [c, 1]] has
        // eigenvalues 1 ± cos(angle), so cond = cot²(angle / 2).
        let angle: f64 = 1e-4;
        let u = [1.0, 0.0];
        let v = [angle.cos(), angle.sin()];
        let g = Matrix::from_rows(&[[dot(&u, &u), dot(&u, &v)], [dot(&v, &u), dot(&v, &v)]])
            .unwrap();
        let expected = 1.0 / (angle / 2.0).tan().powi(2);
        let got = condition_number(&g).unwrap();
        assert!(got.is_finite());
        assert!((got - expected).abs() / expected < 1e-6, "{got} vs {expected}");
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 1.0], &[2.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() - 10.0 / 14.0).abs() < 1e-15);
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            cosine(&[1.0], &[1.0, 0.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn plumbing_by_hand() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(a.matvec(&[1.0, -1.0]).unwrap(), vec![-1.0, -1.0]);
        assert_eq!(
            a.transpose(),
            Matrix::from_rows(&[[1.0, 3.0], [2.0, 4.0]]).unwrap()
        );
        assert_eq!(a.frobenius_norm(), 30.0_f64.sqrt());
        assert_eq!(
            outer(&[1.0, 2.0], &[3.0, 4.0, 5.0]),
            Matrix::from_rows(&[[3.0, 4.0, 5.0], [6.0, 8.0, 10.0]]).unwrap()
        );
        assert_eq!(norm2(&[3.0, 4.0]), 5.0);
        assert_eq!(norm1(&[3.0, -4.0]), 7.0);
        let b = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(
            a.matmul(&b).unwrap(),
            Matrix::from_rows(&[[2.0, 1.0], [4.0, 3.0]]).unwrap()
        );
        let c = Matrix::from_rows(&[[2.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 2.0]]).unwrap();
        assert_eq!(c.matvec(&[1.0, 1.0, 1.0]).unwrap(), vec![3.0, 1.0, 3.0]);
        assert!(a.matvec(&[1.0]).is_err());
        assert!(Matrix::from_vec(2, 2, vec![1.0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn eigen_reconstruction_and_orthonormality(n in 1usize..24, seed in any::<u64>()) {
            let m = random_symmetric(n, seed);
            let eig = sym_eigen(&m).unwrap();
            prop_assert!(relative_reconstruction_error(&m, &eig) < 1e-8);
            prop_assert!(max_orthonormality_error(&eig) < 1e-10);
            for w in eig.values().windows(2) {
                prop_assert!(w[0].abs() >= w[1].abs());
            }
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            u in prop::collection::vec(-10.0f64..10.0, 5),
            v in prop::collection::vec(-10.0f64..10.0, 5),
            alpha in 0.01f64..100.0,
            beta in 0.01f64..100.0,
        ) {
            prop_assume!(norm2(&u) > 1e-3 && norm2(&v) > 1e-3);
            let c = cosine(&u, &v).unwrap();
            prop_assert!((c - cosine(&v, &u).unwrap()).abs() < 1e-12);
            let su: Vec<f64> = u.iter().map(|x| alpha * x).collect();
            let sv: Vec<f64> = v.iter().map(|x| beta * x).collect();
            prop_assert!((c - cosine(&su, &sv).unwrap()).abs() < 1e-12);
        }
    }
}
