//! Stiefel-manifold geometry: tangent projection, the QR-retraction step,
//! spectral (Tucker) initialization and principal angles between subspaces.

use crate::error::{shape_err, Error, Result};
use crate::linalg::{qr_thin, singular_values, sym_eig_desc, Mat};

/// Tolerance on `|W^T W - I|` accepted for a point on the manifold.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// An `m x R` matrix with orthonormal columns.
#[derive(Clone, Debug, PartialEq)]
pub struct StiefelPoint(Mat);

impl StiefelPoint {
    pub fn new(w: Mat) -> Result<Self> {
        Self::with_tolerance(w, ORTHONORMAL_TOL)
    }

    pub fn with_tolerance(w: Mat, tol: f64) -> Result<Self> {
        if w.rows() < w.cols() {
            return Err(shape_err(format!(
                "Stiefel point needs m >= R, got {:?}",
                w.shape()
            )));
        }
        let error = w.orthonormality_error();
        if !(error <= tol) {
            return Err(Error::NotOrthonormal { error });
        }
        Ok(StiefelPoint(w))
    }

    /// The first `r` columns of the identity.
    pub fn canonical(m: usize, r: usize) -> Self {
        StiefelPoint(Mat::eye(m, r))
    }

    /// Orthonormalizes an arbitrary full-rank matrix via thin QR.
    pub fn orthonormalize(w: &Mat) -> Result<Self> {
        Ok(StiefelPoint(qr_thin(w)?.0))
    }

    pub fn mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn rank(&self) -> usize {
        self.0.cols()
    }

    /// Applies the projector `W W^T` from the left.
    pub fn project_left(&self, m: &Mat) -> Mat {
        self.0.matmul(&self.0.t_matmul(m))
    }

    /// Applies the projector `W W^T` from the right.
    pub fn project_right(&self, m: &Mat) -> Mat {
        m.matmul(&self.0).matmul_t(&self.0)
    }
}

/// Shared row and column subspaces `(U, V)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StiefelPair {
    pub u: StiefelPoint,
    pub v: StiefelPoint,
}

impl StiefelPair {
    pub fn new(u: StiefelPoint, v: StiefelPoint) -> Result<Self> {
        if u.rank() != v.rank() {
            return Err(shape_err(format!(
                "U has rank {} but V has rank {}",
                u.rank(),
                v.rank()
            )));
        }
        Ok(StiefelPair { u, v })
    }

    pub fn rank(&self) -> usize {
        self.u.rank()
    }

    /// `(m1, m2)` of the matrices this pair acts on.
    pub fn matrix_shape(&self) -> (usize, usize) {
        (self.u.dim(), self.v.dim())
    }

    /// `U U^T M V V^T`.
    pub fn project(&self, m: &Mat) -> Mat {
        let core = self.u.mat().t_matmul(m).matmul(self.v.mat());
        self.u.mat().matmul(&core).matmul_t(self.v.mat())
    }
}

/// Projects a Euclidean gradient onto the tangent space at `w`:
/// `G - W Sym(W^T G)`.
pub fn tangent_project(w: &Mat, g: &Mat) -> Mat {
    let sym = w.t_matmul(g).sym_part();
    g.sub(&w.matmul(&sym))
}

/// One Riemannian gradient step with QR retraction.
pub fn stiefel_step(w: &StiefelPoint, g: &Mat, eta: f64) -> Result<StiefelPoint> {
    if g.shape() != w.mat().shape() {
        return Err(shape_err(format!(
            "gradient shape {:?} does not match point shape {:?}",
            g.shape(),
            w.mat().shape()
        )));
    }
    if !(eta > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "step size must be positive, got {eta}"
        )));
    }
    let rg = tangent_project(w.mat(), g);
    let mut stepped = w.mat().clone();
    stepped.axpy(-eta, &rg);
    let (q, _) = qr_thin(&stepped)?;
    StiefelPoint::new(q)
}

/// Result of spectral initialization.
#[derive(Clone, Debug)]
pub struct TuckerInit {
    pub pair: StiefelPair,
    pub left_eigenvalues: Vec<f64>,
    pub right_eigenvalues: Vec<f64>,
    /// Set when `R` exceeds the numerical rank of either second moment.
    pub rank_too_large: bool,
}

/// `(1/N) sum M_i M_i^T`.
pub fn left_second_moment(matrices: &[Mat]) -> Mat {
    let m1 = matrices.first().map_or(0, Mat::rows);
    let mut c = Mat::zeros(m1, m1);
    for m in matrices {
        c.axpy(1.0, &m.matmul_t(m));
    }
    c.scale(1.0 / matrices.len().max(1) as f64)
}

/// `(1/N) sum M_i^T M_i`.
pub fn right_second_moment(matrices: &[Mat]) -> Mat {
    let m2 = matrices.first().map_or(0, Mat::cols);
    let mut c = Mat::zeros(m2, m2);
    for m in matrices {
        c.axpy(1.0, &m.t_matmul(m));
    }
    c.scale(1.0 / matrices.len().max(1) as f64)
}

/// Spectral initialization: top-`R` eigenvectors of the empirical left and
/// right second moments.
///
/// A degenerate input (zero second moment) yields the leading canonical
/// basis vectors; a rank shortfall is logged, not raised.
pub fn tucker_init(matrices: &[Mat], rank: usize) -> Result<TuckerInit> {
    let (m1, m2) = matrices
        .first()
        .map(Mat::shape)
        .ok_or_else(|| shape_err("spectral initialization needs at least one matrix"))?;
    if rank == 0 || rank > m1.min(m2) {
        return Err(Error::InvalidConfig(format!(
            "rank {rank} invalid for {m1}x{m2} matrices"
        )));
    }
    let (lvals, lvecs) = sym_eig_desc(&left_second_moment(matrices))?;
    let (rvals, rvecs) = sym_eig_desc(&right_second_moment(matrices))?;
    let short = |vals: &[f64]| !(vals[rank - 1] >= 1e-12 * vals[0]) || vals[0] <= 0.0;
    let rank_too_large = short(&lvals) || short(&rvals);
    if rank_too_large {
        log::warn!("rank {rank} exceeds the numerical rank of the empirical second moments");
    }
    let u = StiefelPoint::new(lvecs.leading_columns(rank))?;
    let v = StiefelPoint::new(rvecs.leading_columns(rank))?;
    Ok(TuckerInit {
        pair: StiefelPair { u, v },
        left_eigenvalues: lvals,
        right_eigenvalues: rvals,
        rank_too_large,
    })
}

/// Principal angles between `span(a)` and `span(b)`, in degrees, ascending.
///
/// Both bases are orthonormalized by thin QR. Small angles come from the
/// sines (singular values of the residual `Q_b - Q_a Q_a^T Q_b`), larger ones
/// from the clamped cosines; this keeps near-zero angles accurate well below
/// the `arccos` resolution limit.
pub fn principal_angles(a: &Mat, b: &Mat) -> Result<Vec<f64>> {
    if a.shape() != b.shape() {
        return Err(shape_err(format!(
            "principal angles need equal shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (qa, _) = qr_thin(a)?;
    let (qb, _) = qr_thin(b)?;
    let overlap = qa.t_matmul(&qb);
    let cosines = singular_values(&overlap)?;
    let residual = qb.sub(&qa.matmul(&overlap));
    let mut sines = singular_values(&residual)?;
    sines.reverse();
    let r = a.cols();
    let angles = (0..r)
        .map(|k| {
            let c = cosines[k].clamp(-1.0, 1.0);
            let s = sines[k].clamp(-1.0, 1.0);
            let rad = if s * s < 0.5 { s.asin() } else { c.acos() };
            rad.to_degrees()
        })
        .collect();
    Ok(angles)
}

pub fn mean_angle(angles: &[f64]) -> f64 {
    angles.iter().sum::<f64>() / angles.len().max(1) as f64
}

/// `sin Theta(a, b) = || (I - Q_b Q_b^T) a ||_2` for orthonormal `a`, `b`.
pub fn sin_theta(a: &Mat, b: &Mat) -> Result<f64> {
    let residual = a.sub(&b.matmul(&b.t_matmul(a)));
    Ok(singular_values(&residual)?.first().copied().unwrap_or(0.0))
}

/// Population quantities entering the spectral-initialization error bound.
#[derive(Clone, Debug)]
pub struct PopulationMoments {
    /// `C_L = E[M M^T]`.
    pub c_left: Mat,
    /// `lambda_R(Sigma_L)` with `Sigma_L = E[S S^T]`.
    pub lambda_r: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct TuckerBound {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Evaluates the Davis-Kahan style bound
/// `sin Theta(U0_hat, U0) <= ||C_hat - C|| / (lambda_R - ||C_hat - C||)`
/// on a batch with known ground truth `u0`.
pub fn check_tucker_bound(
    matrices: &[Mat],
    u0: &Mat,
    rank: usize,
    population: &PopulationMoments,
) -> Result<TuckerBound> {
    let c_hat = left_second_moment(matrices);
    if c_hat.shape() != population.c_left.shape() {
        return Err(shape_err("population moment shape does not match the data"));
    }
    check_bound_from_moment(&c_hat, u0, rank, population)
}

/// Same as [`check_tucker_bound`] but starting from an already formed
/// empirical second moment.
pub fn check_bound_from_moment(
    c_hat: &Mat,
    u0: &Mat,
    rank: usize,
    population: &PopulationMoments,
) -> Result<TuckerBound> {
    let deviation = singular_values(&c_hat.sub(&population.c_left))?[0];
    if deviation >= population.lambda_r {
        return Err(Error::BoundInapplicable {
            deviation,
            lambda_r: population.lambda_r,
        });
    }
    let (_, vecs) = sym_eig_desc(c_hat)?;
    let u_init = vecs.leading_columns(rank);
    let lhs = sin_theta(&u_init, u0)?;
    let rhs = deviation / (population.lambda_r - deviation);
    Ok(TuckerBound {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(n: usize, k: usize) -> Mat {
        Mat::from_fn(n, 1, |i, _| if i == k { 1.0 } else { 0.0 })
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let w =
            StiefelPoint::orthonormalize(&Mat::from_rows(&[[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]]))
                .unwrap();
        let next = stiefel_step(&w, &Mat::zeros(3, 2), 0.3).unwrap();
        assert!(next.mat().sub(w.mat()).max_abs() < 1e-15);
    }

    #[test]
    fn normal_space_gradient_is_annihilated() {
        let w = StiefelPoint::new(e(2, 0)).unwrap();
        for eta in [0.01, 1.0, 100.0] {
            let next = stiefel_step(&w, &e(2, 0), eta).unwrap();
            assert_eq!(next.mat(), w.mat());
        }
    }

    #[test]
    fn single_projected_step_by_hand() {
        let w = StiefelPoint::new(e(2, 0)).unwrap();
        let next = stiefel_step(&w, &e(2, 1), 0.1).unwrap();
        let n = 1.01f64.sqrt();
        assert!((next.mat()[(0, 0)] - 1.0 / n).abs() < 1e-15);
        assert!((next.mat()[(1, 0)] + 0.1 / n).abs() < 1e-15);
    }

    #[test]
    fn step_rejects_bad_input() {
        let w = StiefelPoint::new(e(2, 0)).unwrap();
        assert!(matches!(
            stiefel_step(&w, &Mat::zeros(3, 1), 0.1),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            stiefel_step(&w, &e(2, 1), 0.0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn tucker_rank_one() {
        let u = [0.6, 0.8, 0.0];
        let v = [0.0, 0.0, 1.0, 0.0];
        let m = Mat::from_fn(3, 4, |i, j| u[i] * v[j]);
        let init = tucker_init(&[m], 1).unwrap();
        let uu = init.pair.u.mat();
        let vv = init.pair.v.mat();
        for i in 0..3 {
            assert!((uu[(i, 0)].abs() - u[i]).abs() < 1e-12);
        }
        for j in 0..4 {
            assert!((vv[(j, 0)].abs() - v[j]).abs() < 1e-12);
        }
        assert!(!init.rank_too_large);
    }

    #[test]
    fn tucker_degenerate_input_returns_canonical_basis() {
        let zeros = vec![Mat::zeros(5, 4); 3];
        let init = tucker_init(&zeros, 2).unwrap();
        assert!(init.rank_too_large);
        assert_eq!(init.pair.u.mat(), &Mat::eye(5, 2));
        assert_eq!(init.pair.v.mat(), &Mat::eye(4, 2));
    }

    #[test]
    fn principal_angles_basic() {
        let a = e(2, 0);
        assert_eq!(principal_angles(&a, &a).unwrap(), vec![0.0]);
        assert!((principal_angles(&a, &e(2, 1)).unwrap()[0] - 90.0).abs() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let b = Mat::from_rows(&[[h], [h]]);
        assert!((principal_angles(&a, &b).unwrap()[0] - 45.0).abs() < 1e-12);
    }

    #[test]
    fn principal_angles_detects_tiny_rotations() {
        let eps: f64 = 1e-9;
        let a = e(3, 0);
        let b = Mat::from_rows(&[[eps.cos()], [eps.sin()], [0.0]]);
        let ang = principal_angles(&a, &b).unwrap()[0];
        assert!((ang - eps.to_degrees()).abs() < 1e-20 + 1e-6 * eps.to_degrees());
    }

    #[test]
    fn exact_population_moment_gives_zero_bound() {
        let u0 = Mat::eye(4, 2);
        let c = u0.matmul_t(&u0).scale(3.0);
        let pop = PopulationMoments {
            c_left: c.clone(),
            lambda_r: 3.0,
        };
        let b = check_bound_from_moment(&c, &u0, 2, &pop).unwrap();
        assert_eq!(b.rhs, 0.0);
        assert!(b.lhs < 1e-15 && b.holds);
    }

    #[test]
    fn bound_inapplicable_when_deviation_is_large() {
        let u0 = Mat::eye(3, 1);
        let pop = PopulationMoments {
            c_left: Mat::diag(&[1.0, 0.0, 0.0]),
            lambda_r: 1.0,
        };
        let m = Mat::from_rows(&[[0.0, 0.0], [5.0, 0.0], [0.0, 0.0]]);
        assert!(matches!(
            check_tucker_bound(&[m], &u0, 1, &pop),
            Err(Error::BoundInapplicable { .. })
        ));
    }
}
