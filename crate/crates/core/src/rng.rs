//! Seeded, splittable random streams.
//!
//! Every randomized routine takes a `(seed, stream)` pair. The generator is
//! xoshiro256++ seeded through SplitMix64, uniforms use the top 53 bits and
//! normals come from Box-Muller, so sequences are identical on every platform.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Stream-id namespaces. The low 48 bits carry an index (matrix, trajectory, ...).
pub mod tag {
    pub const SYNTH: u64 = 1;
    pub const MASK: u64 = 2;
    pub const STAGE1: u64 = 3;
    pub const FLOW_INIT: u64 = 4;
    pub const FLOW_TRAIN: u64 = 5;
    pub const FLOW_SAMPLE: u64 = 6;
    pub const NIW: u64 = 7;
}

/// Builds a stream id from a namespace tag and an index.
pub fn stream_id(tag: u64, index: u64) -> u64 {
    debug_assert!(index < (1 << 48));
    (tag << 48) | index
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct RngStream {
    inner: Xoshiro256PlusPlus,
    spare_normal: Option<f64>,
}

/// Deterministic generator for `(seed, stream_id)`.
pub fn rng_stream(seed: u64, stream_id: u64) -> RngStream {
    let mixed = splitmix64(seed) ^ splitmix64(stream_id.wrapping_add(0x632B_E59B_D9B4_E019));
    RngStream {
        inner: Xoshiro256PlusPlus::seed_from_u64(mixed),
        spare_normal: None,
    }
}

impl RngStream {
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `(0, 1]`, safe for logarithms.
    fn uniform_open0(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` (Lemire's multiply-shift with rejection).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            let m = (x as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// Standard normal via Box-Muller; the second variate of each pair is cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform_open0();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// Gamma(shape, 1) by Marsaglia-Tsang; shapes below one use the boost
    /// `Gamma(a) = Gamma(a + 1) * U^(1/a)`.
    pub fn gamma(&mut self, shape: f64) -> f64 {
        assert!(shape > 0.0, "gamma shape must be positive");
        if shape < 1.0 {
            let u = self.uniform_open0();
            return self.gamma(shape + 1.0) * u.powf(1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.normal();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v = v * v * v;
            let u = self.uniform_open0();
            if u < 1.0 - 0.0331 * x.powi(4) || u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
                return d * v;
            }
        }
    }

    /// Chi-squared with `dof` degrees of freedom. Small integer degrees use a
    /// sum of squared normals, everything else the gamma sampler.
    pub fn chi_squared(&mut self, dof: f64) -> f64 {
        const SUM_OF_SQUARES_MAX: f64 = 64.0;
        if dof.fract() == 0.0 && dof <= SUM_OF_SQUARES_MAX {
            (0..dof as usize).map(|_| self.normal().powi(2)).sum()
        } else {
            2.0 * self.gamma(0.5 * dof)
        }
    }
}

/// Without-replacement mini-batch sampler that reshuffles once an epoch is
/// used up. Indices inside each batch are returned in ascending order so
/// reductions over them are order-stable.
#[derive(Clone, Debug)]
pub struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: RngStream,
}

impl EpochSampler {
    pub fn new(n: usize, batch: usize, mut rng: RngStream) -> Self {
        assert!(batch >= 1 && batch <= n, "batch size must be in 1..=n");
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        EpochSampler {
            order,
            pos: 0,
            batch,
            rng,
        }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let mut idx = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        idx.sort_unstable();
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_stream_same_draws() {
        let mut a = rng_stream(17, 3);
        let mut b = rng_stream(17, 3);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = rng_stream(17, 4);
        let mut a = rng_stream(17, 3);
        let same = (0..100).filter(|_| a.next_u64() == c.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn normal_moments() {
        let mut r = rng_stream(1, 0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
    }

    #[test]
    fn uniform_ks_statistic() {
        let mut r = rng_stream(2, 0);
        let n = 10_000;
        let mut xs: Vec<f64> = (0..n).map(|_| r.uniform()).collect();
        xs.sort_by(f64::total_cmp);
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i + 1) as f64 / n as f64 - x).max(x - i as f64 / n as f64))
            .fold(0.0, f64::max);
        // Asymptotic Kolmogorov critical value at alpha = 0.01.
        assert!(d <= 1.628 / (n as f64).sqrt(), "D = {d}");
    }

    #[test]
    fn gamma_and_chi_squared_means() {
        let mut r = rng_stream(3, 0);
        let n = 50_000;
        for &shape in &[0.4, 1.0, 2.5, 40.0] {
            let mean = (0..n).map(|_| r.gamma(shape)).sum::<f64>() / n as f64;
            assert!(
                (mean - shape).abs() < 0.03 * shape.max(1.0),
                "shape {shape}: {mean}"
            );
        }
        for &dof in &[3.0, 7.5, 100.0] {
            let mean = (0..n).map(|_| r.chi_squared(dof)).sum::<f64>() / n as f64;
            assert!((mean - dof).abs() < 0.03 * dof, "dof {dof}: {mean}");
        }
    }

    #[test]
    fn below_is_in_range_and_shuffle_permutes() {
        let mut r = rng_stream(4, 0);
        for _ in 0..1000 {
            assert!(r.below(7) < 7);
        }
        let mut v: Vec<usize> = (0..50).collect();
        r.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }

    #[test]
    fn epoch_sampler_covers_each_index_once_per_epoch() {
        let mut s = EpochSampler::new(12, 4, rng_stream(5, 0));
        let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next_batch()).collect();
        seen.sort();
        assert_eq!(seen, (0..12).collect::<Vec<_>>());
    }
}
