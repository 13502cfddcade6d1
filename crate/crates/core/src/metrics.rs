//! Distribution-matching metrics between a true and a generated batch, plus
//! subspace-recovery diagnostics.
//!
//! Standard deviations use the population convention (divide by `B`).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::MatrixBatch;
use crate::error::{shape_err, Error, Result};
use crate::linalg::{singular_values, Mat};
use crate::rng::rng_stream;
use crate::stiefel::{mean_angle, principal_angles, StiefelPair};

/// Batches larger than this are truncated to their leading samples for MMD.
pub const MMD_MAX_SAMPLES: usize = 2000;
const SV_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub abs_entry_mean_diff: f64,
    pub abs_entry_std_diff: f64,
    pub frob_mean_diff: f64,
    pub frob_std_diff: f64,
    pub sv_rel_l2: f64,
    pub mmd: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_angle_u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_angle_u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_angle_v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_angle_v: Option<f64>,
}

fn check_shapes(a: &MatrixBatch, b: &MatrixBatch) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(format!(
            "true batch is {:?}, generated batch is {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::BatchTooSmall { needed: 1, got: 0 });
    }
    Ok(())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-entry means and population stds over a batch.
fn entry_moments(b: &MatrixBatch) -> (Vec<f64>, Vec<f64>) {
    let n = b.len() as f64;
    let size = b.shape().0 * b.shape().1;
    let mut mean = vec![0.0; size];
    for m in b.matrices() {
        for (acc, v) in mean.iter_mut().zip(m.as_slice()) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n);
    let mut var = vec![0.0; size];
    for m in b.matrices() {
        for ((acc, v), mu) in var.iter_mut().zip(m.as_slice()).zip(&mean) {
            *acc += (v - mu) * (v - mu);
        }
    }
    (mean, var.into_iter().map(|v| (v / n).sqrt()).collect())
}

/// `(AbsEntryMeanDiff, AbsEntryStdDiff)`.
pub fn entry_moment_diffs(truth: &MatrixBatch, gen: &MatrixBatch) -> Result<(f64, f64)> {
    check_shapes(truth, gen)?;
    if truth.len() < 2 || gen.len() < 2 {
        return Err(Error::BatchTooSmall {
            needed: 2,
            got: truth.len().min(gen.len()),
        });
    }
    let (mt, st) = entry_moments(truth);
    let (mg, sg) = entry_moments(gen);
    let k = mt.len() as f64;
    let dm = mt.iter().zip(&mg).map(|(a, b)| (a - b).abs()).sum::<f64>() / k;
    let ds = st.iter().zip(&sg).map(|(a, b)| (a - b).abs()).sum::<f64>() / k;
    Ok((dm, ds))
}

/// `(FrobMeanDiff, FrobStdDiff)` over per-matrix Frobenius norms.
pub fn frob_diffs(truth: &MatrixBatch, gen: &MatrixBatch) -> Result<(f64, f64)> {
    check_shapes(truth, gen)?;
    let norms = |b: &MatrixBatch| b.matrices().iter().map(Mat::frob_norm).collect::<Vec<_>>();
    let (mt, st) = mean_std(&norms(truth));
    let (mg, sg) = mean_std(&norms(gen));
    Ok(((mg - mt).abs(), (sg - st).abs()))
}

/// Batch-averaged singular-value spectrum.
pub fn mean_spectrum(b: &MatrixBatch) -> Result<Vec<f64>> {
    let spectra: Vec<Vec<f64>> = b
        .matrices()
        .par_iter()
        .map(singular_values)
        .collect::<Result<_>>()?;
    let k = b.shape().0.min(b.shape().1);
    let mut mean = vec![0.0; k];
    for s in &spectra {
        for (acc, v) in mean.iter_mut().zip(s) {
            *acc += v;
        }
    }
    let n = b.len() as f64;
    Ok(mean.into_iter().map(|v| v / n).collect())
}

/// `||sigma_true - sigma_gen|| / (||sigma_true|| + 1e-8)` on mean spectra.
pub fn sv_rel_l2(truth: &MatrixBatch, gen: &MatrixBatch) -> Result<f64> {
    check_shapes(truth, gen)?;
    let st = mean_spectrum(truth)?;
    let sg = mean_spectrum(gen)?;
    let diff: f64 = st
        .iter()
        .zip(&sg)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = st.iter().map(|a| a * a).sum::<f64>().sqrt();
    Ok(diff / (norm + SV_EPS))
}

/// Pairwise squared Frobenius distances of the pooled samples (row-major, symmetric).
fn pooled_distances(pool: &[&Mat]) -> Vec<f64> {
    let n = pool.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|a| {
            (0..n)
                .map(|b| {
                    if b <= a {
                        return 0.0;
                    }
                    pool[a]
                        .as_slice()
                        .iter()
                        .zip(pool[b].as_slice())
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum()
                })
                .collect()
        })
        .collect();
    let mut d = vec![0.0; n * n];
    for a in 0..n {
        for b in a + 1..n {
            d[a * n + b] = rows[a][b];
            d[b * n + a] = rows[a][b];
        }
    }
    d
}

/// Median of the upper-triangle entries; the two middle values are averaged
/// for an even count.
fn upper_median(d: &[f64], n: usize) -> f64 {
    let mut vals: Vec<f64> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .map(|(a, b)| d[a * n + b])
        .collect();
    let k = vals.len();
    vals.sort_by(f64::total_cmp);
    if k % 2 == 1 {
        vals[k / 2]
    } else {
        0.5 * (vals[k / 2 - 1] + vals[k / 2])
    }
}

/// Kernel matrix of a pooled sample with the median bandwidth; `None` when
/// every pooled distance is zero.
struct PooledKernel {
    n: usize,
    k: Vec<f64>,
}

impl PooledKernel {
    fn new(pool: &[&Mat]) -> Option<Self> {
        let n = pool.len();
        let d = pooled_distances(pool);
        let sigma2 = upper_median(&d, n);
        if sigma2 <= 0.0 {
            return None;
        }
        let k = d.iter().map(|v| (-v / (2.0 * sigma2)).exp()).collect();
        Some(PooledKernel { n, k })
    }

    /// Unbiased `MMD^2_u` for the split of pool indices into `x` and `y`.
    fn mmd2(&self, x: &[usize], y: &[usize]) -> f64 {
        let k = |a: usize, b: usize| self.k[a * self.n + b];
        let within = |s: &[usize]| {
            let mut acc = 0.0;
            for (i, &a) in s.iter().enumerate() {
                for (j, &b) in s.iter().enumerate() {
                    if i != j {
                        acc += k(a, b);
                    }
                }
            }
            acc / (s.len() * (s.len() - 1)) as f64
        };
        let mut cross = 0.0;
        for &a in x {
            for &b in y {
                cross += k(a, b);
            }
        }
        within(x) + within(y) - 2.0 * cross / (x.len() * y.len()) as f64
    }
}

fn mmd_pool<'a>(
    truth: &'a MatrixBatch,
    gen: &'a MatrixBatch,
) -> Result<(Vec<&'a Mat>, usize, usize)> {
    check_shapes(truth, gen)?;
    let n = truth.len().min(MMD_MAX_SAMPLES);
    let m = gen.len().min(MMD_MAX_SAMPLES);
    if n < 2 || m < 2 {
        return Err(Error::BatchTooSmall {
            needed: 2,
            got: n.min(m),
        });
    }
    let pool = truth.matrices()[..n]
        .iter()
        .chain(&gen.matrices()[..m])
        .collect();
    Ok((pool, n, m))
}

/// RBF-kernel MMD, `sqrt(max(MMD^2_u, 0))`, with pooled-median bandwidth.
pub fn mmd_rbf(truth: &MatrixBatch, gen: &MatrixBatch) -> Result<f64> {
    let (pool, n, m) = mmd_pool(truth, gen)?;
    let Some(kernel) = PooledKernel::new(&pool) else {
        log::warn!("degenerate MMD bandwidth: all pooled samples coincide; reporting 0");
        return Ok(0.0);
    };
    let x: Vec<usize> = (0..n).collect();
    let y: Vec<usize> = (n..n + m).collect();
    Ok(kernel.mmd2(&x, &y).max(0.0).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PermutationTest {
    pub statistic: f64,
    /// 95th percentile of the permutation null of `MMD^2_u`.
    pub null_q95: f64,
    pub p_value: f64,
}

impl PermutationTest {
    pub fn passes(&self) -> bool {
        self.statistic <= self.null_q95
    }
}

/// Permutation null for `MMD^2_u`: the pooled samples are relabeled uniformly
/// at random `permutations` times with the bandwidth held fixed.
pub fn mmd_permutation_test(
    truth: &MatrixBatch,
    gen: &MatrixBatch,
    permutations: usize,
    seed: u64,
) -> Result<PermutationTest> {
    let (pool, n, m) = mmd_pool(truth, gen)?;
    let Some(kernel) = PooledKernel::new(&pool) else {
        return Ok(PermutationTest {
            statistic: 0.0,
            null_q95: 0.0,
            p_value: 1.0,
        });
    };
    let idx: Vec<usize> = (0..n + m).collect();
    let statistic = kernel.mmd2(&idx[..n], &idx[n..]);
    let mut rng = rng_stream(seed, 0);
    let mut null: Vec<f64> = (0..permutations.max(1))
        .map(|_| {
            let mut perm = idx.clone();
            rng.shuffle(&mut perm);
            kernel.mmd2(&perm[..n], &perm[n..])
        })
        .collect();
    null.sort_by(f64::total_cmp);
    let q = ((0.95 * null.len() as f64).ceil() as usize).clamp(1, null.len()) - 1;
    let exceed = null.iter().filter(|&&v| v >= statistic).count();
    let p_value = (exceed + 1) as f64 / (null.len() + 1) as f64;
    Ok(PermutationTest {
        statistic,
        null_q95: null[q],
        p_value,
    })
}

/// Principal-angle summary `(mean, max)` in degrees.
pub fn angle_summary(a: &Mat, b: &Mat) -> Result<(f64, f64)> {
    let angles = principal_angles(a, b)?;
    let max = angles.iter().copied().fold(0.0, f64::max);
    Ok((mean_angle(&angles), max))
}

/// All six distribution metrics.
pub fn evaluate(truth: &MatrixBatch, gen: &MatrixBatch) -> Result<MetricsReport> {
    let (abs_entry_mean_diff, abs_entry_std_diff) = entry_moment_diffs(truth, gen)?;
    let (frob_mean_diff, frob_std_diff) = frob_diffs(truth, gen)?;
    let report = MetricsReport {
        abs_entry_mean_diff,
        abs_entry_std_diff,
        frob_mean_diff,
        frob_std_diff,
        sv_rel_l2: sv_rel_l2(truth, gen)?,
        mmd: mmd_rbf(truth, gen)?,
        mean_angle_u: None,
        max_angle_u: None,
        mean_angle_v: None,
        max_angle_v: None,
    };
    Ok(report)
}

impl MetricsReport {
    /// Adds principal angles between learned and ground-truth subspaces.
    pub fn with_angles(mut self, learned: &StiefelPair, truth: &StiefelPair) -> Result<Self> {
        let (mu, xu) = angle_summary(truth.u.mat(), learned.u.mat())?;
        let (mv, xv) = angle_summary(truth.v.mat(), learned.v.mat())?;
        self.mean_angle_u = Some(mu);
        self.max_angle_u = Some(xu);
        self.mean_angle_v = Some(mv);
        self.max_angle_v = Some(xv);
        Ok(self)
    }

    /// Named values in a fixed order (angles only when present).
    pub fn fields(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![
            ("abs_entry_mean_diff", self.abs_entry_mean_diff),
            ("abs_entry_std_diff", self.abs_entry_std_diff),
            ("frob_mean_diff", self.frob_mean_diff),
            ("frob_std_diff", self.frob_std_diff),
            ("sv_rel_l2", self.sv_rel_l2),
            ("mmd", self.mmd),
        ];
        let angles = [
            ("mean_angle_u", self.mean_angle_u),
            ("max_angle_u", self.max_angle_u),
            ("mean_angle_v", self.mean_angle_v),
            ("max_angle_v", self.max_angle_v),
        ];
        out.extend(angles.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_batch(n: usize, m1: usize, m2: usize, seed: u64) -> MatrixBatch {
        let mut r = rng_stream(seed, 0);
        MatrixBatch::from_matrices(
            (0..n)
                .map(|_| Mat::from_fn(m1, m2, |_, _| r.normal()))
                .collect(),
        )
        .unwrap()
    }

    fn map_batch(b: &MatrixBatch, f: impl Fn(&Mat) -> Mat) -> MatrixBatch {
        MatrixBatch::from_matrices(b.matrices().iter().map(f).collect()).unwrap()
    }

    #[test]
    fn identical_batches_give_zero_everywhere() {
        let b = random_batch(20, 4, 3, 1);
        let r = evaluate(&b, &b).unwrap();
        for (name, v) in r.fields() {
            assert_eq!(v, 0.0, "{name}");
        }
    }

    #[test]
    fn constant_shift_moves_only_the_mean() {
        let b = random_batch(10, 3, 3, 2);
        let shifted = map_batch(&b, |m| Mat::from_fn(3, 3, |i, j| m[(i, j)] + 0.7));
        let (dm, ds) = entry_moment_diffs(&b, &shifted).unwrap();
        assert!((dm - 0.7).abs() < 1e-14 && ds < 1e-14);
    }

    #[test]
    fn entry_diffs_match_double_loop() {
        let t = random_batch(3, 2, 2, 4);
        let g = random_batch(3, 2, 2, 5);
        let mut dm = 0.0;
        let mut ds = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let vt: Vec<f64> = t.matrices().iter().map(|m| m[(i, j)]).collect();
                let vg: Vec<f64> = g.matrices().iter().map(|m| m[(i, j)]).collect();
                let mt = (vt[0] + vt[1] + vt[2]) / 3.0;
                let mg = (vg[0] + vg[1] + vg[2]) / 3.0;
                let st = (vt.iter().map(|v| (v - mt).powi(2)).sum::<f64>() / 3.0).sqrt();
                let sg = (vg.iter().map(|v| (v - mg).powi(2)).sum::<f64>() / 3.0).sqrt();
                dm += (mt - mg).abs() / 4.0;
                ds += (st - sg).abs() / 4.0;
            }
        }
        let (a, b) = entry_moment_diffs(&t, &g).unwrap();
        assert!((a - dm).abs() < 1e-14 && (b - ds).abs() < 1e-14);
        assert!(matches!(
            entry_moment_diffs(&random_batch(1, 2, 2, 1), &g),
            Err(Error::BatchTooSmall { .. })
        ));
    }

    #[test]
    fn frob_diffs_scale() {
        let b = random_batch(12, 3, 4, 6);
        let doubled = map_batch(&b, |m| m.scale(2.0));
        let norms: Vec<f64> = b.matrices().iter().map(Mat::frob_norm).collect();
        let (mean, std) = mean_std(&norms);
        let (dm, ds) = frob_diffs(&b, &doubled).unwrap();
        assert!((dm - mean).abs() < 1e-12 && (ds - std).abs() < 1e-12);
    }

    #[test]
    fn sv_rel_l2_cases() {
        let t = MatrixBatch::from_matrices(vec![
            Mat::diag(&[3.0, 1.0]),
            Mat::diag(&[-2.0, 4.0]),
            Mat::diag(&[1.0, 0.0]),
        ])
        .unwrap();
        let g = MatrixBatch::from_matrices(vec![Mat::diag(&[1.0, 1.0]); 3]).unwrap();
        // Sorted spectra (3,1), (4,2), (1,0): true mean (8/3, 1), generated (1, 1).
        let norm = ((8.0f64 / 3.0).powi(2) + 1.0).sqrt();
        let want = (5.0 / 3.0) / (norm + 1e-8);
        assert!((sv_rel_l2(&t, &g).unwrap() - want).abs() < 1e-12);
        let zero = MatrixBatch::from_matrices(vec![Mat::zeros(2, 2); 3]).unwrap();
        assert!((sv_rel_l2(&t, &zero).unwrap() - norm / (norm + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn mmd_exact_cancellation_and_saturation() {
        let a = random_batch(2, 2, 2, 7);
        assert_eq!(mmd_rbf(&a, &a).unwrap(), 0.0);
        // Unequal sizes put the pooled median inside the larger set, so the
        // cross kernel vanishes under a large shift.
        let t = random_batch(10, 8, 8, 8);
        let g = map_batch(&random_batch(100, 8, 8, 9), |m| {
            Mat::from_fn(8, 8, |i, j| m[(i, j)] + 10.0)
        });
        assert!(mmd_rbf(&t, &g).unwrap() >= 1.0);
        // Equal sizes cap it near sqrt(2 (1 - exp(-1/2))).
        let g = map_batch(&random_batch(10, 8, 8, 9), |m| {
            Mat::from_fn(8, 8, |i, j| m[(i, j)] + 10.0)
        });
        let cap = (2.0 * (1.0 - (-0.5f64).exp())).sqrt();
        assert!((mmd_rbf(&t, &g).unwrap() - cap).abs() < 0.1);
        let same = MatrixBatch::from_matrices(vec![Mat::zeros(2, 2); 3]).unwrap();
        assert_eq!(mmd_rbf(&same, &same).unwrap(), 0.0);
    }

    #[test]
    fn mmd_is_shuffle_invariant() {
        let t = random_batch(15, 3, 3, 10);
        let g = random_batch(12, 3, 3, 11);
        let mut mats = g.matrices().to_vec();
        mats.reverse();
        let g2 = MatrixBatch::from_matrices(mats).unwrap();
        assert!((mmd_rbf(&t, &g).unwrap() - mmd_rbf(&t, &g2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mmd_two_halves_pass_permutation_null() {
        let all = random_batch(120, 4, 4, 12);
        let (t, g) = all.split_at(60);
        assert!(mmd_permutation_test(&t, &g, 200, 1).unwrap().passes());
        let shifted = map_batch(&g, |m| m.scale(3.0));
        assert!(!mmd_permutation_test(&t, &shifted, 200, 1).unwrap().passes());
    }
}
