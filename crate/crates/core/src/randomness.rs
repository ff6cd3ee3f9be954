//! Reproducible random streams.
//!
//! Each Monte Carlo sample draws from its own stream whose key is a SHA-256
//! digest of `(master seed, experiment label, sample index)`. Streams are
//! therefore independent of the order in which samples are scheduled, which
//! keeps every estimator bit-identical across worker counts.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{ensure_positive, Error, Result};

/// Default master seed used by the command-line tools.
pub const DEFAULT_SEED: u64 = 0x5EED_0001;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub experiment_label: String,
    pub sample_index: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, experiment_label: impl Into<String>, sample_index: u64) -> Self {
        Self { master_seed, experiment_label: experiment_label.into(), sample_index }
    }

    pub fn with_index(&self, sample_index: u64) -> Self {
        Self { sample_index, ..self.clone() }
    }
}

/// A single-owner stream backed by a 256-bit-keyed counter-mode generator.
#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha8Rng,
}

pub fn derive_stream(spec: &SeedSpec) -> RandomStream {
    let mut hasher = Sha256::new();
    hasher.update(b"stoch-euler/stream/v1");
    hasher.update(spec.master_seed.to_le_bytes());
    hasher.update((spec.experiment_label.len() as u64).to_le_bytes());
    hasher.update(spec.experiment_label.as_bytes());
    hasher.update(spec.sample_index.to_le_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    RandomStream { rng: ChaCha8Rng::from_seed(key) }
}

impl RandomStream {
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw on (0, 1]; never returns 0.
    pub fn uniform_open0(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Exponential waiting time with mean `h`, by inversion `-h ln U`.
    pub fn sample_exponential(&mut self, h: f64) -> Result<f64> {
        ensure_positive("h", h)?;
        Ok(self.exponential_unchecked(h))
    }

    #[inline]
    pub(crate) fn exponential_unchecked(&mut self, h: f64) -> f64 {
        let u = self.uniform_open0();
        // U = 1 would give a zero waiting time; fold it onto the smallest step.
        let e = -h * u.ln();
        if e > 0.0 {
            e
        } else {
            h * f64::EPSILON
        }
    }

    /// Jump times `T₁ < T₂ < …` of a Poisson process with mean spacing `h`,
    /// up to and including the first time beyond `horizon`.
    pub fn sample_jump_times(&mut self, h: f64, horizon: f64) -> Result<Vec<f64>> {
        ensure_positive("h", h)?;
        ensure_positive("horizon", horizon)?;
        let mut times = Vec::with_capacity((horizon / h) as usize + 2);
        let mut t = 0.0;
        loop {
            t += self.exponential_unchecked(h);
            times.push(t);
            if t > horizon {
                return Ok(times);
            }
        }
    }

    /// Uniform sample from `{x ∈ [0,∞)^k : Σxᵢ ≤ t}` via sorted-uniform
    /// spacings with the final spacing dropped.
    pub fn sample_uniform_simplex(&mut self, k: usize, t: f64) -> Result<Vec<f64>> {
        if k == 0 {
            return Err(Error::Parameter("simplex dimension k must be at least 1".into()));
        }
        ensure_positive("t", t)?;
        let mut points: Vec<f64> = (0..k).map(|_| t * self.uniform_open0()).collect();
        points.sort_by(f64::total_cmp);
        let mut prev = 0.0;
        Ok(points
            .into_iter()
            .map(|p| {
                let gap = p - prev;
                prev = p;
                gap
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(i: u64) -> SeedSpec {
        SeedSpec::new(DEFAULT_SEED, "unit", i)
    }

    #[test]
    fn same_spec_same_sequence() {
        let mut a = derive_stream(&spec(3));
        let mut b = derive_stream(&spec(3));
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn sample_index_separates_streams() {
        assert_ne!(derive_stream(&spec(0)).next_u64(), derive_stream(&spec(1)).next_u64());
        let other_label = SeedSpec::new(DEFAULT_SEED, "unit2", 0);
        assert_ne!(derive_stream(&spec(0)).next_u64(), derive_stream(&other_label).next_u64());
    }

    #[test]
    fn golden_sequence() {
        let mut s = derive_stream(&SeedSpec::new(1, "golden", 7));
        let got: Vec<u64> = (0..4).map(|_| s.next_u64()).collect();
        assert_eq!(got, GOLDEN);
    }

    const GOLDEN: [u64; 4] = [9851454286088216298, 1664578722363901704, 9728955638832867874, 4224415722072606400];

    #[test]
    fn pairwise_streams_look_independent() {
        // Correlation of paired uniforms from neighbouring sample indices.
        let n = 20_000;
        let mut sxy = 0.0;
        for i in 0..n {
            let x = derive_stream(&spec(2 * i)).uniform_open0() - 0.5;
            let y = derive_stream(&spec(2 * i + 1)).uniform_open0() - 0.5;
            sxy += x * y;
        }
        let corr = sxy / n as f64 / (1.0 / 12.0);
        assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn exponential_mean_and_tail() {
        let n = 1_000_000;
        let mut s = derive_stream(&spec(11));
        let h = 0.8;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = s.sample_exponential(h).unwrap();
            assert!(x > 0.0);
            sum += x;
        }
        let mean = sum / n as f64;
        assert!((mean - h).abs() <= 4.0 * h / 1e3, "mean {mean}");

        let mut s = derive_stream(&spec(12));
        let exceed = (0..n).filter(|_| s.sample_exponential(1.0).unwrap() > 1.0).count();
        let p = (-1.0f64).exp();
        let tol = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
        assert!((exceed as f64 / n as f64 - p).abs() <= tol);
    }

    #[test]
    fn exponential_rejects_bad_h() {
        let mut s = derive_stream(&spec(0));
        assert!(matches!(s.sample_exponential(0.0), Err(Error::Parameter(_))));
        assert!(matches!(s.sample_exponential(-1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn jump_times_replay_exponentials() {
        let mut a = derive_stream(&spec(5));
        let times = a.sample_jump_times(0.3, 4.0).unwrap();
        assert!(times[0] > 0.0);
        assert!(*times.last().unwrap() > 4.0);
        assert!(times[..times.len() - 1].iter().all(|&t| t <= 4.0));
        let mut b = derive_stream(&spec(5));
        let mut acc = 0.0;
        for &t in &times {
            acc += b.sample_exponential(0.3).unwrap();
            assert_eq!(t, acc);
        }
    }

    #[test]
    fn poisson_count_mean() {
        let (h, t, n) = (0.5, 3.0, 100_000);
        let counts: Vec<f64> = (0..n)
            .map(|i| {
                let times = derive_stream(&SeedSpec::new(9, "count", i)).sample_jump_times(h, t).unwrap();
                (times.len() - 1) as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        // Poisson(t/h) has variance t/h.
        let se = (t / h / n as f64).sqrt();
        assert!((mean - t / h).abs() <= 4.0 * se, "mean {mean}");
    }

    #[test]
    fn simplex_samples() {
        let n = 1_000_000;
        let mut s = derive_stream(&spec(21));
        let mut sum = 0.0;
        for _ in 0..n {
            let x = s.sample_uniform_simplex(1, 2.0).unwrap();
            assert!(x[0] >= 0.0 && x[0] <= 2.0);
            sum += x[0];
        }
        let mean = sum / n as f64;
        assert!((mean - 1.0).abs() <= 4.0 * 2.0 / (12.0 * n as f64).sqrt());

        let mut s = derive_stream(&spec(22));
        for k in 1..6 {
            for _ in 0..1000 {
                let x = s.sample_uniform_simplex(k, 1.5).unwrap();
                assert_eq!(x.len(), k);
                assert!(x.iter().all(|&v| v >= 0.0));
                assert!(x.iter().sum::<f64>() <= 1.5 + 1e-12);
            }
        }
        assert!(s.sample_uniform_simplex(0, 1.0).is_err());
        assert!(s.sample_uniform_simplex(2, 0.0).is_err());
    }

    #[test]
    fn simplex_k2_matches_rejection_oracle() {
        // Oracle: uniform on the unit square, keep points with h₁ + h₂ ≤ 1.
        let n = 200_000;
        let mut oracle = derive_stream(&spec(31));
        let mut acc = Vec::with_capacity(n);
        while acc.len() < n {
            let (a, b) = (oracle.uniform_open0(), oracle.uniform_open0());
            if a + b <= 1.0 {
                acc.push(a);
            }
        }
        let oracle_mean = acc.iter().sum::<f64>() / n as f64;
        let oracle_sd = (acc.iter().map(|x| (x - oracle_mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((oracle_mean - 1.0 / 3.0).abs() < 4.0 * oracle_sd / (n as f64).sqrt());

        let mut s = derive_stream(&spec(32));
        let direct: Vec<f64> = (0..n).map(|_| s.sample_uniform_simplex(2, 1.0).unwrap()[0]).collect();
        let mean = direct.iter().sum::<f64>() / n as f64;
        let se = (2.0f64).sqrt() * oracle_sd / (n as f64).sqrt();
        assert!((mean - oracle_mean).abs() < 4.0 * se, "{mean} vs oracle {oracle_mean}");
        assert!((mean - 1.0 / 3.0).abs() < 4.0 * oracle_sd / (n as f64).sqrt());
    }
}
