//! Synthetic low-rank benchmarks `M_i = U0 S_i V0^T` on a DCT basis, and
//! uniform random masking.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::{Mask, MatrixBatch};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng::{rng_stream, stream_id, tag, RngStream};
use crate::stiefel::{StiefelPair, StiefelPoint};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    Blobs,
    Bands,
    Waves,
    Crosshatch,
}

impl Case {
    pub const ALL: [Case; 4] = [Case::Blobs, Case::Bands, Case::Waves, Case::Crosshatch];

    pub fn name(self) -> &'static str {
        match self {
            Case::Blobs => "blobs",
            Case::Bands => "bands",
            Case::Waves => "waves",
            Case::Crosshatch => "crosshatch",
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Case::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown case {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub case: Case,
    pub m1: usize,
    pub m2: usize,
    pub rank: usize,
    pub n: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig::full(Case::Blobs)
    }
}

impl SynthConfig {
    /// 200 x 200, rank 24, 1000 samples.
    pub fn full(case: Case) -> Self {
        SynthConfig {
            case,
            m1: 200,
            m2: 200,
            rank: 24,
            n: 1000,
            seed: 0,
        }
    }

    /// 64 x 64, rank 8, 256 samples; sized for CPU test runs.
    pub fn desk(case: Case) -> Self {
        SynthConfig {
            case,
            m1: 64,
            m2: 64,
            rank: 8,
            n: 256,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || self.rank > self.m1.min(self.m2) {
            return Err(Error::InvalidConfig(format!(
                "rank {} must be in 1..={}",
                self.rank,
                self.m1.min(self.m2)
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidConfig("sample count must be >= 1".into()));
        }
        Ok(())
    }
}

/// First `rank` columns of the orthonormal DCT-II matrix:
/// `B[i, k] = a_k cos(pi (i + 1/2) k / n)`, `a_0 = sqrt(1/n)`, `a_k = sqrt(2/n)`.
pub fn dct_basis(n: usize, rank: usize) -> Mat {
    assert!(rank <= n, "rank must not exceed n");
    let nf = n as f64;
    Mat::from_fn(n, rank, |i, k| {
        let alpha = if k == 0 {
            (1.0 / nf).sqrt()
        } else {
            (2.0 / nf).sqrt()
        };
        alpha * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / nf).cos()
    })
}

/// `p_start + r (p_end - p_start) / (R - 1)` for `r = 0..R`; `p_start` when `R = 1`.
fn linear_probs(rank: usize, start: f64, end: f64) -> Vec<f64> {
    if rank == 1 {
        return vec![start];
    }
    (0..rank)
        .map(|r| start + r as f64 * (end - start) / (rank - 1) as f64)
        .collect()
}

/// Draws one `R x R` core for the given case.
pub fn sample_core(case: Case, rank: usize, rng: &mut RngStream) -> Mat {
    match case {
        Case::Blobs => Mat::from_fn(rank, rank, |_, _| 1.5 * rng.normal()),
        Case::Bands => {
            let diag: Vec<f64> = linear_probs(rank, 0.2, 0.9)
                .into_iter()
                .map(|p| {
                    let s = 1.5 * rng.normal() + 3.0;
                    if rng.bernoulli(p) {
                        s
                    } else {
                        0.0
                    }
                })
                .collect();
            Mat::diag(&diag)
        }
        Case::Waves => {
            // Low-frequency corner, clipped to the core when R < 4.
            let k_max = 4.max(rank / 3).min(rank);
            let mut s = Mat::zeros(rank, rank);
            for _ in 0..4 {
                let k = rng.below(k_max as u64) as usize;
                let l = rng.below(k_max as u64) as usize;
                s[(k, l)] += 1.2 * rng.normal();
            }
            for d in 1..=2 {
                for p in 0..rank.saturating_sub(d) {
                    s[(p, p + d)] += 0.15 * rng.normal();
                    s[(p + d, p)] += 0.15 * rng.normal();
                }
            }
            s
        }
        Case::Crosshatch => {
            let diag: Vec<f64> = linear_probs(rank, 0.15, 0.85)
                .into_iter()
                .map(|p| {
                    let s = 2.5 + 1.1 * rng.normal();
                    if rng.bernoulli(p) {
                        s
                    } else {
                        0.0
                    }
                })
                .collect();
            Mat::diag(&diag)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Synthetic {
    pub batch: MatrixBatch,
    pub truth: StiefelPair,
    pub cores: Vec<Mat>,
}

/// Generates samples `start..start + count`; sample `i` depends only on `(seed, i)`.
pub fn generate_range(cfg: &SynthConfig, start: usize, count: usize) -> Result<Synthetic> {
    cfg.validate()?;
    let u0 = dct_basis(cfg.m1, cfg.rank);
    let v0 = dct_basis(cfg.m2, cfg.rank);
    let (cores, mats): (Vec<Mat>, Vec<Mat>) = (start..start + count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_stream(cfg.seed, stream_id(tag::SYNTH, i as u64));
            let s = sample_core(cfg.case, cfg.rank, &mut rng);
            let m = u0.matmul(&s).matmul_t(&v0);
            (s, m)
        })
        .unzip();
    let mut batch = MatrixBatch::new(cfg.m1, cfg.m2, mats)?;
    batch.metadata = Some(vec![
        ("case".into(), cfg.case.name().into()),
        ("rank".into(), cfg.rank.to_string()),
        ("seed".into(), cfg.seed.to_string()),
    ]);
    let truth = StiefelPair::new(StiefelPoint::new(u0)?, StiefelPoint::new(v0)?)?;
    Ok(Synthetic {
        batch,
        truth,
        cores,
    })
}

pub fn generate(cfg: &SynthConfig) -> Result<Synthetic> {
    generate_range(cfg, 0, cfg.n)
}

/// Hides each entry independently with probability `p_miss`. Missing entries
/// are stored as zero; observed entries are copied unchanged.
pub fn apply_mask(batch: &MatrixBatch, p_miss: f64, seed: u64) -> Result<MatrixBatch> {
    if !(0.0..1.0).contains(&p_miss) {
        return Err(Error::InvalidConfig(format!(
            "p_miss {p_miss} must be in [0, 1)"
        )));
    }
    let (m1, m2) = batch.shape();
    let masks: Vec<Mask> = (0..batch.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_stream(seed, stream_id(tag::MASK, i as u64));
            let observed = (0..m1 * m2).map(|_| rng.uniform() >= p_miss).collect();
            Mask::from_vec(m1, m2, observed).expect("shape")
        })
        .collect();
    let mats = batch
        .matrices()
        .iter()
        .zip(&masks)
        .map(|(m, k)| k.project(m))
        .collect();
    let mut out = MatrixBatch::new(m1, m2, mats)?.with_masks(masks)?;
    out.metadata = batch.metadata.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::singular_values;

    #[test]
    fn dct_columns() {
        let b = dct_basis(5, 5);
        for i in 0..5 {
            assert!((b[(i, 0)] - (0.2f64).sqrt()).abs() < 1e-15);
        }
        let b2 = dct_basis(2, 2);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((b2[(0, 1)] - h).abs() < 1e-15 && (b2[(1, 1)] + h).abs() < 1e-15);
        for &(n, r) in &[(1, 1), (7, 3), (64, 8), (200, 24), (512, 512)] {
            assert!(
                dct_basis(n, r).orthonormality_error() < 1e-10,
                "n={n} r={r}"
            );
        }
    }

    #[test]
    fn diagonal_cases_have_zero_off_diagonal() {
        let mut rng = rng_stream(1, 1);
        for case in [Case::Bands, Case::Crosshatch] {
            for _ in 0..50 {
                let s = sample_core(case, 6, &mut rng);
                for i in 0..6 {
                    for j in 0..6 {
                        if i != j {
                            assert_eq!(s[(i, j)], 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn waves_support() {
        let mut rng = rng_stream(2, 1);
        let r = 15;
        let k_max = 5;
        for _ in 0..200 {
            let s = sample_core(Case::Waves, r, &mut rng);
            for i in 0..r {
                for j in 0..r {
                    let in_band = i.abs_diff(j) <= 2;
                    let in_corner = i < k_max && j < k_max;
                    if !in_band && !in_corner {
                        assert_eq!(s[(i, j)], 0.0);
                    }
                }
            }
        }
        // Small ranks keep the corner inside the core.
        sample_core(Case::Waves, 2, &mut rng);
    }

    #[test]
    fn blobs_entry_std() {
        let mut rng = rng_stream(3, 1);
        let xs: Vec<f64> = (0..25_000)
            .flat_map(|_| sample_core(Case::Blobs, 2, &mut rng).into_vec())
            .collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std - 1.5).abs() < 0.02 * 1.5, "std {std}");
    }

    #[test]
    fn activation_rates_within_binomial_bounds() {
        let mut rng = rng_stream(4, 1);
        let r = 8;
        let draws = 10_000;
        for (case, lo, hi) in [(Case::Bands, 0.2, 0.9), (Case::Crosshatch, 0.15, 0.85)] {
            let mut active = vec![0usize; r];
            for _ in 0..draws {
                let s = sample_core(case, r, &mut rng);
                for k in 0..r {
                    active[k] += (s[(k, k)] != 0.0) as usize;
                }
            }
            for (k, &count) in active.iter().enumerate() {
                let p = linear_probs(r, lo, hi)[k];
                let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
                assert!(
                    (count as f64 - draws as f64 * p).abs() <= 3.0 * sigma,
                    "{case} mode {k}"
                );
            }
        }
    }

    #[test]
    fn generated_matrices_have_rank_at_most_r() {
        for case in Case::ALL {
            let cfg = SynthConfig {
                case,
                m1: 20,
                m2: 16,
                rank: 4,
                n: 5,
                seed: 11,
            };
            let syn = generate(&cfg).unwrap();
            for m in syn.batch.matrices() {
                let sv = singular_values(m).unwrap();
                assert!(sv[4] <= 1e-10 * sv[0].max(1e-300), "{case}: {sv:?}");
            }
            let cores = crate::flow::extract_cores(&syn.batch, &syn.truth).unwrap();
            for (i, s) in syn.cores.iter().enumerate() {
                assert!(cores.core(i).sub(s).max_abs() < 1e-12);
            }
        }
    }

    #[test]
    fn samples_depend_only_on_index() {
        let cfg = SynthConfig {
            n: 6,
            ..SynthConfig::desk(Case::Waves)
        };
        let all = generate(&cfg).unwrap();
        let tail = generate_range(&cfg, 4, 2).unwrap();
        assert_eq!(&all.batch.matrices()[4..], tail.batch.matrices());
    }

    #[test]
    fn masking_properties() {
        let cfg = SynthConfig {
            n: 10,
            m1: 200,
            m2: 200,
            rank: 4,
            ..SynthConfig::desk(Case::Blobs)
        };
        let batch = generate(&cfg).unwrap().batch;
        let none = apply_mask(&batch, 0.0, 1).unwrap();
        assert!(none.is_complete());
        assert_eq!(none.matrices(), batch.matrices());
        let masked = apply_mask(&batch, 0.4, 1).unwrap();
        assert!((masked.observed_fraction() - 0.6).abs() <= 0.005);
        for (i, m) in masked.matrices().iter().enumerate() {
            let k = &masked.masks().unwrap()[i];
            for (idx, (&a, &b)) in m
                .as_slice()
                .iter()
                .zip(batch.matrices()[i].as_slice())
                .enumerate()
            {
                if k.as_slice()[idx] {
                    assert_eq!(a.to_bits(), b.to_bits());
                } else {
                    assert_eq!(a, 0.0);
                }
            }
        }
        assert_eq!(apply_mask(&batch, 0.4, 1).unwrap().masks(), masked.masks());
        assert!(apply_mask(&batch, 1.0, 1).is_err());
    }
}
