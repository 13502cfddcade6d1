//! Dense row-major matrices and the small set of factorizations the rest of
//! the crate relies on: Householder thin QR, cyclic Jacobi symmetric
//! eigendecomposition, Gram-based singular values and Cholesky.
//!
//! Every routine is deterministic: the same input bits give the same output
//! bits. Sign conventions (positive `R` diagonal, first nonzero eigenvector
//! component positive) remove the usual factorization ambiguities.

use std::ops::{Index, IndexMut};

use rayon::prelude::*;

use crate::error::{shape_err, Error, Result};

/// Work threshold (multiply-adds) above which matrix products are split by rows.
const PAR_THRESHOLD: usize = 1 << 20;

/// Relative pivot threshold for the thin QR.
pub const QR_RANK_TOL: f64 = 1e-12;

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::eye(n, n)
    }

    /// `rows x cols` matrix with ones on the leading diagonal.
    pub fn eye(rows: usize, cols: usize) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows.min(cols) {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    /// Builds a matrix from nested row slices. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n * m);
        for r in rows {
            assert_eq!(r.as_ref().len(), m, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Mat {
            rows: n,
            cols: m,
            data,
        }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Column vector (`n x 1`).
    pub fn col_vector(values: &[f64]) -> Self {
        Mat {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    /// The leading `k` columns.
    pub fn leading_columns(&self, k: usize) -> Mat {
        assert!(k <= self.cols);
        Mat::from_fn(self.rows, k, |i, j| self[(i, j)])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(
            self.cols,
            other.rows,
            "matmul shape mismatch: {:?} x {:?}",
            self.shape(),
            other.shape()
        );
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = Mat::zeros(n, m);
        if m == 0 {
            return out;
        }
        let kernel = |(i, out_row): (usize, &mut [f64])| {
            let a_row = &self.data[i * k..(i + 1) * k];
            for (p, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        };
        if n * k * m >= PAR_THRESHOLD {
            out.data.par_chunks_mut(m).enumerate().for_each(kernel);
        } else {
            out.data.chunks_mut(m).enumerate().for_each(kernel);
        }
        out
    }

    /// `self^T * other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Mat) -> Mat {
        assert_eq!(
            self.rows,
            other.rows,
            "t_matmul shape mismatch: {:?}^T x {:?}",
            self.shape(),
            other.shape()
        );
        let (n, m) = (self.cols, other.cols);
        let mut out = Mat::zeros(n, m);
        for p in 0..self.rows {
            let a_row = self.row(p);
            let b_row = other.row(p);
            for (i, &a) in a_row.iter().enumerate() {
                let out_row = &mut out.data[i * m..(i + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * other^T`.
    pub fn matmul_t(&self, other: &Mat) -> Mat {
        assert_eq!(
            self.cols,
            other.cols,
            "matmul_t shape mismatch: {:?} x {:?}^T",
            self.shape(),
            other.shape()
        );
        Mat::from_fn(self.rows, other.rows, |i, j| dot(self.row(i), other.row(j)))
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!(self.shape(), other.shape());
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!(self.shape(), other.shape());
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Mat) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        self.frob_norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(A + A^T) / 2` for square `A`.
    pub fn sym_part(&self) -> Mat {
        assert_eq!(self.rows, self.cols);
        Mat::from_fn(self.rows, self.cols, |i, j| {
            0.5 * (self[(i, j)] + self[(j, i)])
        })
    }

    /// Largest entrywise deviation of `self^T self` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.t_matmul(self);
        g.sub(&Mat::identity(self.cols)).max_abs()
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Thin QR factorization by Householder reflections.
///
/// Returns `(Q, R)` with `Q` of shape `m x n` having orthonormal columns and
/// `R` upper triangular with a nonnegative diagonal.
pub fn qr_thin(a: &Mat) -> Result<(Mat, Mat)> {
    let (m, n) = a.shape();
    if m < n {
        return Err(shape_err(format!(
            "thin QR needs rows >= cols, got {m}x{n}"
        )));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("QR input".into()));
    }
    let max_col = (0..n)
        .map(|j| (0..m).map(|i| a[(i, j)] * a[(i, j)]).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let tol = QR_RANK_TOL * max_col;

    let mut w = a.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let x: Vec<f64> = (k..m).map(|i| w[(i, k)]).collect();
        let xnorm = norm2(&x);
        if xnorm <= tol {
            return Err(Error::RankDeficient {
                pivot: k,
                norm: xnorm,
            });
        }
        let alpha = if x[0] >= 0.0 { -xnorm } else { xnorm };
        let mut v = x;
        v[0] -= alpha;
        let vnorm = norm2(&v);
        for e in v.iter_mut() {
            *e /= vnorm;
        }
        for j in k..n {
            let s: f64 = (k..m).map(|i| v[i - k] * w[(i, j)]).sum();
            for i in k..m {
                w[(i, j)] -= 2.0 * v[i - k] * s;
            }
        }
        reflectors.push(v);
    }

    let mut r = Mat::from_fn(n, n, |i, j| if j >= i { w[(i, j)] } else { 0.0 });
    let mut q = Mat::eye(m, n);
    for (k, v) in reflectors.iter().enumerate().rev() {
        for j in 0..n {
            let s: f64 = (k..m).map(|i| v[i - k] * q[(i, j)]).sum();
            if s != 0.0 {
                for i in k..m {
                    q[(i, j)] -= 2.0 * v[i - k] * s;
                }
            }
        }
    }
    for k in 0..n {
        if r[(k, k)] < 0.0 {
            for j in k..n {
                r[(k, j)] = -r[(k, j)];
            }
            for i in 0..m {
                q[(i, k)] = -q[(i, k)];
            }
        }
    }
    Ok((q, r))
}

fn check_symmetric(a: &Mat) -> Result<()> {
    if a.rows != a.cols {
        return Err(shape_err(format!(
            "expected a square matrix, got {:?}",
            a.shape()
        )));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("eigensolver input".into()));
    }
    let scale = a.max_abs();
    let mut asym: f64 = 0.0;
    for i in 0..a.rows {
        for j in (i + 1)..a.cols {
            asym = asym.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if asym > 1e-9 * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

/// Cyclic Jacobi on a symmetric matrix stored in `a` (overwritten with its
/// diagonalization). If `v` is given, the rotations are accumulated into it.
fn jacobi_in_place(a: &mut Mat, mut v: Option<&mut Mat>) {
    let n = a.rows;
    let fro = a.frob_norm();
    if fro == 0.0 {
        return;
    }
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
        }
        if off.sqrt() <= JACOBI_TOL * fro {
            return;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                if let Some(v) = v.as_deref_mut() {
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    log::warn!("Jacobi eigensolver hit the sweep limit on a {n}x{n} matrix");
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    idx
}

/// Symmetric eigendecomposition with eigenvalues in descending order.
///
/// Eigenvector columns are orthonormal, and each is signed so that its first
/// nonzero component is positive.
pub fn sym_eig_desc(a: &Mat) -> Result<(Vec<f64>, Mat)> {
    check_symmetric(a)?;
    let n = a.rows;
    let mut work = a.sym_part();
    let mut v = Mat::identity(n);
    jacobi_in_place(&mut work, Some(&mut v));
    let raw: Vec<f64> = (0..n).map(|i| work[(i, i)]).collect();
    let order = descending_order(&raw);
    let values = order.iter().map(|&i| raw[i]).collect();
    let mut vecs = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src);
        let lead = col.iter().copied().find(|x| x.abs() > 1e-12).unwrap_or(0.0);
        if lead < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        vecs.set_column(dst, &col);
    }
    Ok((values, vecs))
}

/// Eigenvalues only, descending.
pub fn sym_eigvals_desc(a: &Mat) -> Result<Vec<f64>> {
    check_symmetric(a)?;
    let mut work = a.sym_part();
    jacobi_in_place(&mut work, None);
    let mut vals: Vec<f64> = (0..a.rows).map(|i| work[(i, i)]).collect();
    vals.sort_by(|x, y| y.total_cmp(x));
    Ok(vals)
}

/// Singular values in descending order by one-sided (Hestenes) Jacobi,
/// which keeps small singular values accurate relative to their size.
pub fn singular_values(a: &Mat) -> Result<Vec<f64>> {
    if !a.is_finite() {
        return Err(Error::NonFinite("singular value input".into()));
    }
    let w = if a.rows >= a.cols {
        a.transpose()
    } else {
        a.clone()
    };
    // Rows of `w` are the columns being orthogonalized.
    let (n, m) = (w.rows, w.cols);
    let mut cols: Vec<Vec<f64>> = (0..n).map(|i| w.row(i).to_vec()).collect();
    const MAX_SWEEPS: usize = 60;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (head, tail) = cols.split_at_mut(q);
                let (cp, cq) = (&mut head[p], &mut tail[0]);
                let alpha = dot(cp, cp);
                let beta = dot(cq, cq);
                let gamma = dot(cp, cq);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..m {
                    let (x, y) = (cp[k], cq[k]);
                    cp[k] = c * x - s * y;
                    cq[k] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = cols.iter().map(|c| norm2(c)).collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    Ok(sv)
}

/// Lower Cholesky factor `L` with `L L^T = a`.
pub fn cholesky(a: &Mat) -> Result<Mat> {
    if a.rows != a.cols {
        return Err(shape_err(format!(
            "Cholesky needs a square matrix, got {:?}",
            a.shape()
        )));
    }
    let n = a.rows;
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::CholeskyFailure { pivot: j });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Inverse of a lower-triangular matrix with nonzero diagonal.
pub fn lower_triangular_inverse(l: &Mat) -> Mat {
    let n = l.rows;
    let mut inv = Mat::zeros(n, n);
    for j in 0..n {
        inv[(j, j)] = 1.0 / l[(j, j)];
        for i in (j + 1)..n {
            let mut s = 0.0;
            for k in j..i {
                s += l[(i, k)] * inv[(k, j)];
            }
            inv[(i, j)] = -s / l[(i, i)];
        }
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_matrix(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut s = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        Mat::from_fn(rows, cols, |_, _| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn qr_identity() {
        let (q, r) = qr_thin(&Mat::identity(3)).unwrap();
        assert!(q.sub(&Mat::identity(3)).max_abs() < 1e-15);
        assert!(r.sub(&Mat::identity(3)).max_abs() < 1e-15);
    }

    #[test]
    fn qr_permuted_orthonormal_columns() {
        let a = Mat::from_rows(&[[0.0, 1.0], [1.0, 0.0], [0.0, 0.0]]);
        let (q, r) = qr_thin(&a).unwrap();
        assert!(q.sub(&a).max_abs() < 1e-14, "{q:?}");
        assert!(r.sub(&Mat::identity(2)).max_abs() < 1e-14, "{r:?}");
    }

    #[test]
    fn qr_reconstructs_random_matrix() {
        let a = lcg_matrix(6, 3, 42);
        let (q, r) = qr_thin(&a).unwrap();
        assert!(q.orthonormality_error() < 1e-10);
        assert!(q.matmul(&r).sub(&a).frob_norm() / a.frob_norm() < 1e-9);
        for i in 0..3 {
            assert!(r[(i, i)] >= 0.0);
            for j in 0..i {
                assert_eq!(r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn qr_rank_deficient() {
        let a = Mat::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]);
        assert!(matches!(
            qr_thin(&a),
            Err(Error::RankDeficient { pivot: 1, .. })
        ));
        assert!(matches!(
            qr_thin(&Mat::zeros(3, 1)),
            Err(Error::RankDeficient { pivot: 0, .. })
        ));
    }

    #[test]
    fn eig_diagonal() {
        let (vals, vecs) = sym_eig_desc(&Mat::diag(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(vals, vec![3.0, 2.0, 1.0]);
        let expected = Mat::from_rows(&[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]);
        assert_eq!(vecs, expected);
    }

    #[test]
    fn eig_two_by_two_closed_form() {
        let a = Mat::from_rows(&[[2.0, 1.0], [1.0, 2.0]]);
        let (vals, vecs) = sym_eig_desc(&a).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-14 && (vals[1] - 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((vecs[(0, 0)] - h).abs() < 1e-14 && (vecs[(1, 0)] - h).abs() < 1e-14);
        assert!((vecs[(0, 1)] - h).abs() < 1e-14 && (vecs[(1, 1)] + h).abs() < 1e-14);
    }

    #[test]
    fn eig_zero_matrix() {
        let (vals, vecs) = sym_eig_desc(&Mat::zeros(4, 4)).unwrap();
        assert_eq!(vals, vec![0.0; 4]);
        assert_eq!(vecs, Mat::identity(4));
    }

    #[test]
    fn eig_rejects_asymmetric() {
        let a = Mat::from_rows(&[[1.0, 2.0], [0.0, 1.0]]);
        assert!(matches!(sym_eig_desc(&a), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn eig_residuals_random() {
        let b = lcg_matrix(7, 7, 3);
        let a = b.add(&b.transpose());
        let (vals, vecs) = sym_eig_desc(&a).unwrap();
        let spec = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..7 {
            let v = Mat::col_vector(&vecs.column(k));
            let res = a.matmul(&v).sub(&v.scale(vals[k]));
            assert!(res.max_abs() <= 1e-8 * spec);
        }
        assert!(vecs.orthonormality_error() < 1e-12);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn singular_values_simple() {
        assert_eq!(
            singular_values(&Mat::diag(&[2.0, -3.0])).unwrap(),
            vec![3.0, 2.0]
        );
        let u = [0.6, 0.8, 0.0];
        let v = [0.0, 1.0];
        let outer = Mat::from_fn(3, 2, |i, j| u[i] * v[j]);
        let s = singular_values(&outer).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-14 && s[1].abs() < 1e-7);
    }

    #[test]
    fn singular_values_keep_small_values_accurate() {
        let (q1, _) = qr_thin(&lcg_matrix(5, 5, 11)).unwrap();
        let (q2, _) = qr_thin(&lcg_matrix(5, 5, 12)).unwrap();
        let d = Mat::diag(&[3.0, 1.0, 1e-6, 1e-10, 1e-13]);
        let s = singular_values(&q1.matmul(&d).matmul_t(&q2)).unwrap();
        for (got, want) in s.iter().zip([3.0, 1.0, 1e-6, 1e-10, 1e-13]) {
            assert!(
                (got - want).abs() <= 1e-15 * 3.0 + 1e-3 * want,
                "{got} vs {want}"
            );
        }
    }

    #[test]
    fn singular_values_match_gram_eigenvalues() {
        let a = lcg_matrix(5, 3, 7);
        let s = singular_values(&a).unwrap();
        let (vals, _) = sym_eig_desc(&a.t_matmul(&a)).unwrap();
        for (si, li) in s.iter().zip(vals) {
            assert!((si - li.sqrt()).abs() <= 1e-12 * (1.0 + si));
        }
        let energy: f64 = s.iter().map(|x| x * x).sum();
        assert!((energy - a.frob_norm_sq()).abs() <= 1e-8 * a.frob_norm_sq());
    }

    #[test]
    fn cholesky_and_triangular_inverse() {
        let b = lcg_matrix(5, 5, 9);
        let a = b.matmul_t(&b).add(&Mat::identity(5));
        let l = cholesky(&a).unwrap();
        assert!(l.matmul_t(&l).sub(&a).max_abs() < 1e-12);
        let li = lower_triangular_inverse(&l);
        assert!(li.matmul(&l).sub(&Mat::identity(5)).max_abs() < 1e-12);
        assert!(matches!(
            cholesky(&Mat::diag(&[1.0, -1.0])),
            Err(Error::CholeskyFailure { pivot: 1 })
        ));
    }
}
