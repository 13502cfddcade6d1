//! Baselines sharing the CoreFlow plumbing.
//!
//! * SMG-Core keeps the learned subspaces and replaces the flow by a
//!   Normal-Inverse-Wishart posterior over the core vectors.
//! * PCA-Flow replaces the subspaces by a flattened PCA basis and trains the
//!   same flow on normalized PCA scores.

use rayon::prelude::*;

use crate::batch::MatrixBatch;
use crate::error::{shape_err, Error, Result};
use crate::flow::{
    column_standardization, decode, extract_cores, sample_flow, train_flow_on, CoreBatch,
    FlowConfig, FlowOutput, VelocityNet,
};
use crate::linalg::{cholesky, dot, lower_triangular_inverse, norm2, qr_thin, sym_eig_desc, Mat};
use crate::rng::{rng_stream, stream_id, tag};
use crate::stiefel::StiefelPair;

#[derive(Clone, Debug, PartialEq)]
pub struct NiwPrior {
    pub kappa: f64,
    pub nu: f64,
    pub mu: Vec<f64>,
    pub psi: Mat,
}

impl NiwPrior {
    /// `kappa0 = 1`, `nu0 = d + 2`, `mu0 = 0`, `Psi0 = I`.
    pub fn default_for(d: usize) -> Self {
        NiwPrior {
            kappa: 1.0,
            nu: d as f64 + 2.0,
            mu: vec![0.0; d],
            psi: Mat::identity(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.psi.shape() != (d, d) {
            return Err(Error::PriorInvalid(format!(
                "Psi0 is {:?}, expected {d}x{d}",
                self.psi.shape()
            )));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::PriorInvalid(format!(
                "kappa0 = {} must be positive",
                self.kappa
            )));
        }
        if !(self.nu > d as f64 - 1.0) {
            return Err(Error::PriorInvalid(format!(
                "nu0 = {} must exceed d - 1 = {}",
                self.nu,
                d as f64 - 1.0
            )));
        }
        if self.psi.sub(&self.psi.transpose()).max_abs() > 1e-9 * self.psi.max_abs().max(1.0) {
            return Err(Error::PriorInvalid("Psi0 is not symmetric".into()));
        }
        cholesky(&self.psi)
            .map_err(|_| Error::PriorInvalid("Psi0 is not positive definite".into()))?;
        Ok(())
    }
}

/// Posterior parameters; same layout as the prior.
pub type NiwPosterior = NiwPrior;

/// Conjugate update of the prior with the rows of `x`.
pub fn niw_fit(x: &Mat, prior: &NiwPrior) -> Result<NiwPosterior> {
    prior.validate()?;
    let d = prior.dim();
    if x.cols() != d {
        return Err(shape_err(format!(
            "data has {} columns, prior dimension {d}",
            x.cols()
        )));
    }
    let n = x.rows();
    if n == 0 {
        return Ok(prior.clone());
    }
    let nf = n as f64;
    let xbar: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| x[(i, j)]).sum::<f64>() / nf)
        .collect();
    let centered = Mat::from_fn(n, d, |i, j| x[(i, j)] - xbar[j]);
    let scatter = centered.t_matmul(&centered);
    let kappa = prior.kappa + nf;
    let mu = (0..d)
        .map(|j| (prior.kappa * prior.mu[j] + nf * xbar[j]) / kappa)
        .collect();
    let dev: Vec<f64> = (0..d).map(|j| xbar[j] - prior.mu[j]).collect();
    let w = prior.kappa * nf / kappa;
    let psi = prior
        .psi
        .add(&scatter)
        .add(&Mat::from_fn(d, d, |i, j| w * dev[i] * dev[j]))
        .sym_part();
    Ok(NiwPrior {
        kappa,
        nu: prior.nu + nf,
        mu,
        psi,
    })
}

/// Posterior-predictive draws by two-stage sampling:
/// `Sigma ~ IW(nu, Psi)`, `mu ~ N(mu_N, Sigma / kappa)`, `x ~ N(mu, Sigma)`.
///
/// With `Psi = C C^T` and a Bartlett factor `A` (lower triangular, `sqrt(chi2(nu - i))`
/// on the diagonal, standard normals below), `F = C A^{-T}` satisfies
/// `F F^T ~ IW(nu, Psi)`.
pub fn niw_sample(post: &NiwPosterior, n: usize, seed: u64) -> Result<Mat> {
    post.validate()?;
    let d = post.dim();
    let c = cholesky(&post.psi)?;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_stream(seed, stream_id(tag::NIW, i as u64));
            let mut a = Mat::zeros(d, d);
            for r in 0..d {
                a[(r, r)] = rng.chi_squared(post.nu - r as f64).sqrt();
                for col in 0..r {
                    a[(r, col)] = rng.normal();
                }
            }
            let f = c.matmul_t(&lower_triangular_inverse(&a));
            let xi: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let eta: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let fxi = f.matmul(&Mat::col_vector(&xi));
            let feta = f.matmul(&Mat::col_vector(&eta));
            let scale = 1.0 / post.kappa.sqrt();
            (0..d)
                .map(|j| post.mu[j] + scale * fxi[(j, 0)] + feta[(j, 0)])
                .collect()
        })
        .collect();
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    let out = Mat::from_vec(n, d, data)?;
    if !out.is_finite() {
        return Err(Error::NonFinite("NIW draws".into()));
    }
    Ok(out)
}

/// SMG-Core: NIW fit on the cores under fixed subspaces, then decode draws.
pub fn smg_core_generate(
    batch: &MatrixBatch,
    pair: &StiefelPair,
    n: usize,
    prior: Option<&NiwPrior>,
    seed: u64,
) -> Result<MatrixBatch> {
    let cores = extract_cores(batch, pair)?;
    let default = NiwPrior::default_for(cores.dim());
    let post = niw_fit(cores.vectors(), prior.unwrap_or(&default))?;
    let draws = niw_sample(&post, n, seed)?;
    decode(&CoreBatch::new(cores.rank(), draws)?, pair)
}

/// Flattened-PCA encoder: `M = mat(mu + W z)`, scores normalized per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub m1: usize,
    pub m2: usize,
    pub mean: Vec<f64>,
    pub basis: Mat,
    pub score_mean: Vec<f64>,
    pub score_std: Vec<f64>,
}

/// Largest perfect square not exceeding `x`.
fn floor_square(x: usize) -> usize {
    let mut r = (x as f64).sqrt() as usize;
    while r * r > x {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= x {
        r += 1;
    }
    r * r
}

/// Removes components along `basis` columns (two passes for stability).
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let c = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
}

/// Top-`d` right singular vectors of the centered data `xc` (`N x D`),
/// completed with canonical directions if the data have lower rank.
fn pca_basis(xc: &Mat, d: usize) -> Result<Mat> {
    let (n, dim) = xc.shape();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    if n <= dim {
        let (vals, vecs) = sym_eig_desc(&xc.matmul_t(xc).sym_part())?;
        let tol = 1e-12 * vals.first().copied().unwrap_or(0.0).max(0.0);
        for k in 0..d.min(n) {
            if vals[k] <= tol || vals[k] <= 0.0 {
                break;
            }
            let a = Mat::col_vector(&vecs.column(k));
            let mut v = xc.t_matmul(&a).scale(1.0 / vals[k].sqrt()).into_vec();
            orthogonalize(&mut v, &cols);
            let nv = norm2(&v);
            v.iter_mut().for_each(|x| *x /= nv);
            cols.push(v);
        }
    } else {
        let (vals, vecs) = sym_eig_desc(&xc.t_matmul(xc).sym_part())?;
        let tol = 1e-12 * vals.first().copied().unwrap_or(0.0).max(0.0);
        for k in 0..d {
            if vals[k] <= tol || vals[k] <= 0.0 {
                break;
            }
            cols.push(vecs.column(k));
        }
    }
    let mut j = 0;
    while cols.len() < d {
        let mut e = vec![0.0; dim];
        e[j] = 1.0;
        orthogonalize(&mut e, &cols);
        let ne = norm2(&e);
        if ne > 0.5 {
            e.iter_mut().for_each(|x| *x /= ne);
            cols.push(e);
        }
        j += 1;
    }
    let w = Mat::from_fn(dim, d, |i, k| cols[k][i]);
    Ok(qr_thin(&w)?.0)
}

fn flatten(batch: &MatrixBatch) -> Mat {
    let (m1, m2) = batch.shape();
    let data = batch
        .matrices()
        .iter()
        .flat_map(|m| m.as_slice().iter().copied())
        .collect();
    Mat::from_vec(batch.len(), m1 * m2, data).expect("shape")
}

/// Fits the PCA encoder; `d_PCA` is the largest perfect square `<= min(d_cap, N - 1)`.
pub fn pcaflow_fit(batch: &MatrixBatch, d_cap: usize) -> Result<PcaModel> {
    if !batch.is_complete() {
        return Err(Error::IncompleteData(
            "PCA-Flow needs fully observed matrices".into(),
        ));
    }
    if batch.len() < 2 {
        return Err(Error::BatchTooSmall {
            needed: 2,
            got: batch.len(),
        });
    }
    let d = floor_square(d_cap.min(batch.len() - 1));
    if d == 0 {
        return Err(Error::InvalidConfig(
            "PCA dimension cap must be >= 1".into(),
        ));
    }
    let (m1, m2) = batch.shape();
    let x = flatten(batch);
    let (mean, _) = column_standardization(&x);
    let xc = Mat::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)] - mean[j]);
    let basis = pca_basis(&xc, d)?;
    let scores = xc.matmul(&basis);
    let (score_mean, score_std) = column_standardization(&scores);
    Ok(PcaModel {
        m1,
        m2,
        mean,
        basis,
        score_mean,
        score_std,
    })
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.basis.cols()
    }

    /// Normalized scores `(W^T (x - mu) - zbar) / s_z`, one row per matrix.
    pub fn encode(&self, batch: &MatrixBatch) -> Result<Mat> {
        if batch.shape() != (self.m1, self.m2) {
            return Err(shape_err(format!(
                "batch {:?} vs model {}x{}",
                batch.shape(),
                self.m1,
                self.m2
            )));
        }
        let x = flatten(batch);
        let xc = Mat::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)] - self.mean[j]);
        let z = xc.matmul(&self.basis);
        Ok(Mat::from_fn(z.rows(), z.cols(), |i, j| {
            (z[(i, j)] - self.score_mean[j]) / self.score_std[j]
        }))
    }

    /// `mat(mu + W z)` after undoing the score normalization.
    pub fn decode(&self, scores: &Mat) -> Result<MatrixBatch> {
        if scores.cols() != self.dim() {
            return Err(shape_err(format!(
                "scores have {} columns, model {}",
                scores.cols(),
                self.dim()
            )));
        }
        let z = Mat::from_fn(scores.rows(), scores.cols(), |i, j| {
            scores[(i, j)] * self.score_std[j] + self.score_mean[j]
        });
        let flat = z.matmul_t(&self.basis);
        let mats = (0..flat.rows())
            .map(|i| {
                let row: Vec<f64> = flat
                    .row(i)
                    .iter()
                    .zip(&self.mean)
                    .map(|(a, b)| a + b)
                    .collect();
                Mat::from_vec(self.m1, self.m2, row)
            })
            .collect::<Result<Vec<_>>>()?;
        MatrixBatch::new(self.m1, self.m2, mats)
    }
}

/// Fits PCA and trains the flow on its normalized scores.
pub fn pcaflow_train(
    batch: &MatrixBatch,
    d_cap: usize,
    cfg: &FlowConfig,
) -> Result<(PcaModel, FlowOutput)> {
    let model = pcaflow_fit(batch, d_cap)?;
    let scores = model.encode(batch)?;
    let flow = train_flow_on(&scores, cfg)?;
    Ok((model, flow))
}

pub fn pcaflow_generate(
    model: &PcaModel,
    net: &VelocityNet,
    n: usize,
    ode_steps: usize,
    seed: u64,
) -> Result<MatrixBatch> {
    model.decode(&sample_flow(net, n, ode_steps, seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stiefel::StiefelPoint;

    fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut r = rng_stream(seed, 0);
        Mat::from_fn(rows, cols, |_, _| r.normal())
    }

    #[test]
    fn conjugate_update_arithmetic() {
        let d = 3;
        let x = random_mat(10, d, 1);
        let post = niw_fit(&x, &NiwPrior::default_for(d)).unwrap();
        assert_eq!(post.kappa, 11.0);
        assert_eq!(post.nu, d as f64 + 12.0);
        let empty = niw_fit(&Mat::zeros(0, d), &NiwPrior::default_for(d)).unwrap();
        assert_eq!(empty, NiwPrior::default_for(d));
    }

    #[test]
    fn conjugate_update_by_hand() {
        // Samples (1,0), (0,2), (2,1): mean (1,1), scatter [[2,-1],[-1,2]].
        let x = Mat::from_rows(&[[1.0, 0.0], [0.0, 2.0], [2.0, 1.0]]);
        let post = niw_fit(&x, &NiwPrior::default_for(2)).unwrap();
        assert_eq!(post.mu, vec![0.75, 0.75]);
        // Psi = I + S + (1*3/4) (1,1)(1,1)^T
        let want = Mat::from_rows(&[[3.75, -0.25], [-0.25, 3.75]]);
        assert!(post.psi.sub(&want).max_abs() < 1e-14);
    }

    #[test]
    fn invalid_priors_are_rejected() {
        let mut p = NiwPrior::default_for(3);
        p.nu = 1.5;
        assert!(matches!(
            niw_fit(&Mat::zeros(1, 3), &p),
            Err(Error::PriorInvalid(_))
        ));
        let mut p = NiwPrior::default_for(2);
        p.psi = Mat::from_rows(&[[1.0, 2.0], [2.0, 1.0]]);
        assert!(matches!(p.validate(), Err(Error::PriorInvalid(_))));
    }

    #[test]
    fn flat_data_pins_the_mean() {
        let v = [2.0, -1.0, 0.5];
        let x = Mat::from_fn(100_000, 3, |_, j| v[j]);
        let prior = NiwPrior {
            kappa: 1e-9,
            ..NiwPrior::default_for(3)
        };
        let post = niw_fit(&x, &prior).unwrap();
        for j in 0..3 {
            assert!((post.mu[j] - v[j]).abs() <= 1e-9 * norm2(&v));
        }
    }

    #[test]
    fn concentrated_posterior_recovers_moments() {
        let target = Mat::from_rows(&[[2.0, 0.6], [0.6, 1.0]]);
        let big = 1e8;
        let post = NiwPrior {
            kappa: big,
            nu: big,
            mu: vec![1.0, -2.0],
            psi: target.scale(big),
        };
        let draws = niw_sample(&post, 10_000, 3).unwrap();
        let (mean, _) = column_standardization(&draws);
        assert!((mean[0] - 1.0).abs() < 0.05 && (mean[1] + 2.0).abs() < 0.05);
        let centered = Mat::from_fn(draws.rows(), 2, |i, j| draws[(i, j)] - mean[j]);
        let cov = centered
            .t_matmul(&centered)
            .scale(1.0 / draws.rows() as f64);
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (cov[(i, j)] - target[(i, j)]).abs()
                        <= 0.05 * target[(i, i)].max(target[(j, j)])
                );
            }
        }
    }

    #[test]
    fn one_dimensional_inverse_wishart_mean() {
        // With kappa huge, x - mu_N is N(0, Sigma); E[Sigma] = Psi / (nu - 2).
        let post = NiwPrior {
            kappa: 1e12,
            nu: 7.0,
            mu: vec![0.0],
            psi: Mat::from_rows(&[[10.0]]),
        };
        let draws = niw_sample(&post, 100_000, 5).unwrap();
        let second = draws.as_slice().iter().map(|x| x * x).sum::<f64>() / 1e5;
        assert!((second - 2.0).abs() < 0.03 * 2.0, "E[x^2] = {second}");
        assert_eq!(
            niw_sample(&post, 10, 1).unwrap(),
            niw_sample(&post, 10, 1).unwrap()
        );
    }

    #[test]
    fn pca_basis_is_orthonormal_and_residual_orthogonal() {
        let batch =
            MatrixBatch::from_matrices((0..30).map(|s| random_mat(4, 5, 100 + s)).collect())
                .unwrap();
        let model = pcaflow_fit(&batch, 16).unwrap();
        assert_eq!(model.dim(), 16);
        assert!(model.basis.orthonormality_error() < 1e-8);
        let x = flatten(&batch);
        for i in 0..x.rows() {
            let xc: Vec<f64> = x
                .row(i)
                .iter()
                .zip(&model.mean)
                .map(|(a, b)| a - b)
                .collect();
            let z = Mat::from_vec(1, 20, xc.clone())
                .unwrap()
                .matmul(&model.basis);
            let proj = z.matmul_t(&model.basis);
            let resid: Vec<f64> = xc.iter().zip(proj.as_slice()).map(|(a, b)| a - b).collect();
            let along = Mat::from_vec(1, 20, resid).unwrap().matmul(&model.basis);
            assert!(along.max_abs() < 1e-8);
        }
    }

    #[test]
    fn pca_exact_subspace_reconstructs_training_data() {
        let dirs = random_mat(2, 12, 7);
        let mats = (0..10)
            .map(|s| {
                let c = random_mat(1, 2, 50 + s).matmul(&dirs);
                Mat::from_vec(3, 4, c.into_vec()).unwrap()
            })
            .collect();
        let batch = MatrixBatch::from_matrices(mats).unwrap();
        let model = pcaflow_fit(&batch, 4).unwrap();
        let back = model.decode(&model.encode(&batch).unwrap()).unwrap();
        for (a, b) in back.matrices().iter().zip(batch.matrices()) {
            assert!(a.sub(b).max_abs() < 1e-10);
        }
        let two = MatrixBatch::from_matrices(batch.matrices()[..2].to_vec()).unwrap();
        assert_eq!(pcaflow_fit(&two, 64).unwrap().dim(), 1);
        let masked = batch
            .clone()
            .with_masks(vec![crate::batch::Mask::empty(3, 4); 10])
            .unwrap();
        assert!(matches!(
            pcaflow_fit(&masked, 4),
            Err(Error::IncompleteData(_))
        ));
        assert_eq!(floor_square(15), 9);
        assert_eq!(floor_square(16), 16);
    }

    #[test]
    fn pcaflow_on_constant_data_returns_the_constant() {
        let c = random_mat(3, 3, 2);
        let batch = MatrixBatch::from_matrices(vec![c.clone(); 12]).unwrap();
        let cfg = FlowConfig {
            steps: 5,
            batch_size: 4,
            hidden: vec![8],
            embed_width: 4,
            ..Default::default()
        };
        let (model, flow) = pcaflow_train(&batch, 4, &cfg).unwrap();
        let gen = pcaflow_generate(&model, &flow.net, 5, 11, 1).unwrap();
        for m in gen.matrices() {
            assert!(m.sub(&c).max_abs() < 1e-6);
        }
    }

    #[test]
    fn smg_with_tight_prior_clusters_near_the_core() {
        let pair = StiefelPair::new(
            StiefelPoint::orthonormalize(&random_mat(6, 2, 1)).unwrap(),
            StiefelPoint::orthonormalize(&random_mat(5, 2, 2)).unwrap(),
        )
        .unwrap();
        let s = random_mat(2, 2, 3);
        let m = pair.u.mat().matmul(&s).matmul_t(pair.v.mat());
        let batch = MatrixBatch::from_matrices(vec![m.clone(); 50]).unwrap();
        let prior = NiwPrior {
            kappa: 1.0,
            nu: 1e6,
            mu: vec![0.0; 4],
            psi: Mat::identity(4).scale(1e-2),
        };
        let gen = smg_core_generate(&batch, &pair, 20, Some(&prior), 4).unwrap();
        for g in gen.matrices() {
            assert!(g.sub(&m).frob_norm() < 0.05 * m.frob_norm());
        }
    }
}
