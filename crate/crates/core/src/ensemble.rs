//! Seeded sampling of matrix entries.
//!
//! Every sample is a pure function of `(base_seed, index)`: the generator for
//! sample `index` is a ChaCha8 stream keyed by `base_seed` and selected by
//! `index`, and entries are drawn in the fixed order `a_1..a_n, b_1..b_n,
//! c_1..c_n`. Samples can therefore be produced in any order, on any number of
//! threads, with bit-identical results.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest matrix size for which the corner entries do not collide with the
/// tridiagonal band.
pub const MIN_SIZE: usize = 3;

/// Random entries of one realization.
///
/// `b[n-1]` is the bottom-left corner and `c[0]` the top-right corner of the
/// undeformed matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSample {
    pub a: Vec<Complex64>,
    pub b: Vec<Complex64>,
    pub c: Vec<Complex64>,
    pub seed: u64,
}

impl MatrixSample {
    /// Builds a sample from explicit entries.
    pub fn new(a: Vec<Complex64>, b: Vec<Complex64>, c: Vec<Complex64>) -> Result<Self> {
        let n = a.len();
        if b.len() != n || c.len() != n {
            return Err(Error::InvalidParameter(format!(
                "entry sequences have lengths {}, {}, {}",
                a.len(),
                b.len(),
                c.len()
            )));
        }
        if n < MIN_SIZE {
            return Err(Error::SizeTooSmall { n });
        }
        Ok(Self { a, b, c, seed: 0 })
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    /// Iterator over `(a_k, b_k, c_k)` for `k = 1..n`.
    pub fn entries(&self) -> impl Iterator<Item = (Complex64, Complex64, Complex64)> + '_ {
        self.a
            .iter()
            .zip(&self.b)
            .zip(&self.c)
            .map(|((&a, &b), &c)| (a, b, c))
    }

    /// Empirical `(1/n) Σ log|b_k|`.
    pub fn mean_log_abs_b(&self) -> f64 {
        self.b.iter().map(|b| b.norm().ln()).sum::<f64>() / self.n() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleKind {
    /// All `3n` entries i.i.d. uniform in the unit disk of the complex plane.
    UniformUnitDisk,
    /// Real diagonal uniform in `(-width, width)`, unit hoppings `b_k = c_k = 1`.
    HermitianHn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub n: usize,
    /// Half-width of the diagonal distribution; only used by `HermitianHn`.
    pub width: f64,
    pub sample_count: usize,
    pub base_seed: u64,
}

impl EnsembleSpec {
    pub fn unit_disk(n: usize, sample_count: usize, base_seed: u64) -> Self {
        Self {
            kind: EnsembleKind::UniformUnitDisk,
            n,
            width: 0.0,
            sample_count,
            base_seed,
        }
    }

    pub fn hermitian_hn(n: usize, width: f64, sample_count: usize, base_seed: u64) -> Self {
        Self {
            kind: EnsembleKind::HermitianHn,
            n,
            width,
            sample_count,
            base_seed,
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        if self.n < MIN_SIZE {
            return Err(Error::SizeTooSmall { n: self.n });
        }
        if index >= self.sample_count {
            return Err(Error::SampleIndexOutOfRange {
                index,
                count: self.sample_count,
            });
        }
        if self.kind == EnsembleKind::HermitianHn && !(self.width > 0.0 && self.width.is_finite())
        {
            return Err(Error::InvalidParameter(format!(
                "hermitian-hn width must be positive, got {}",
                self.width
            )));
        }
        Ok(())
    }
}

/// Random stream of sample `index` under `base_seed`.
pub fn sample_rng(base_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index);
    rng
}

/// Draws a point uniformly distributed over the closed unit disk.
pub fn sample_unit_disk<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    // |w|^2 is uniform on [0, 1) for an area-uniform point.
    let radius = rng.random::<f64>().sqrt();
    let angle = TAU * rng.random::<f64>();
    Complex64::from_polar(radius, angle)
}

/// Draws realization `index` of the ensemble described by `spec`.
pub fn sample_matrix(spec: &EnsembleSpec, index: usize) -> Result<MatrixSample> {
    match spec.kind {
        EnsembleKind::UniformUnitDisk => {
            spec.validate(index)?;
            let mut rng = sample_rng(spec.base_seed, index as u64);
            let mut draw = |len: usize| -> Vec<Complex64> {
                (0..len).map(|_| sample_unit_disk(&mut rng)).collect()
            };
            let a = draw(spec.n);
            let b = draw(spec.n);
            let c = draw(spec.n);
            Ok(MatrixSample {
                a,
                b,
                c,
                seed: spec.base_seed,
            })
        }
        EnsembleKind::HermitianHn => sample_hermitian_hn(spec, index),
    }
}

/// Hermitian Anderson chain: real random diagonal, unit hoppings.
pub fn sample_hermitian_hn(spec: &EnsembleSpec, index: usize) -> Result<MatrixSample> {
    if spec.kind != EnsembleKind::HermitianHn {
        return Err(Error::InvalidParameter(
            "sample_hermitian_hn requires the hermitian-hn ensemble".into(),
        ));
    }
    spec.validate(index)?;
    let mut rng = sample_rng(spec.base_seed, index as u64);
    let a = (0..spec.n)
        .map(|_| {
            // open interval: reject the single endpoint u = 0
            let u = loop {
                let u: f64 = rng.random();
                if u > 0.0 {
                    break u;
                }
            };
            Complex64::new(spec.width * (2.0 * u - 1.0), 0.0)
        })
        .collect();
    let one = vec![Complex64::new(1.0, 0.0); spec.n];
    Ok(MatrixSample {
        a,
        b: one.clone(),
        c: one,
        seed: spec.base_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ks_uniform_statistic(mut xs: Vec<f64>) -> f64 {
        xs.sort_by(|a, b| a.total_cmp(b));
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let lo = x - i as f64 / n;
                let hi = (i + 1) as f64 / n - x;
                lo.max(hi)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn disk_draws_stay_inside_and_are_centered() {
        let mut rng = sample_rng(11, 0);
        let draws: Vec<_> = (0..1_000_000).map(|_| sample_unit_disk(&mut rng)).collect();
        assert!(draws.iter().all(|w| w.norm() <= 1.0));
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<Complex64>() / n;
        // per-axis standard deviation of the mean is sqrt(1/4 / n) = 0.0005
        assert!(mean.re.abs() < 3.0 * 0.0005, "mean {mean}");
        assert!(mean.im.abs() < 3.0 * 0.0005, "mean {mean}");
        let mean_sq = draws.iter().map(|w| w.norm_sqr()).sum::<f64>() / n;
        assert!((mean_sq - 0.5).abs() < 0.001, "<|w|^2> = {mean_sq}");
        let mean_log = draws.iter().map(|w| w.norm().ln()).sum::<f64>() / n;
        assert!((mean_log + 0.5).abs() < 0.002, "<log|w|> = {mean_log}");
    }

    #[test]
    fn squared_modulus_passes_ks_against_uniform() {
        let mut rng = sample_rng(3, 5);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| sample_unit_disk(&mut rng).norm_sqr())
            .collect();
        let d = ks_uniform_statistic(xs);
        // 1% critical value of the one-sample KS statistic
        let critical = 1.628 / (100_000f64).sqrt();
        assert!(d < critical, "KS statistic {d} >= {critical}");
    }

    #[test]
    fn samples_are_deterministic_and_order_independent() {
        let spec = EnsembleSpec::unit_disk(100, 10, 7);
        let first = sample_matrix(&spec, 0).unwrap();
        let later = sample_matrix(&spec, 9).unwrap();
        assert_eq!(first, sample_matrix(&spec, 0).unwrap());
        assert_eq!(later, sample_matrix(&spec, 9).unwrap());
        assert_ne!(first, later);
        for (a, b, c) in first.entries() {
            assert!(a.norm() <= 1.0 && b.norm() <= 1.0 && c.norm() <= 1.0);
        }
    }

    #[test]
    fn size_and_index_rules() {
        assert_eq!(
            sample_matrix(&EnsembleSpec::unit_disk(2, 1, 0), 0),
            Err(Error::SizeTooSmall { n: 2 })
        );
        assert!(matches!(
            sample_matrix(&EnsembleSpec::unit_disk(10, 3, 0), 3),
            Err(Error::SampleIndexOutOfRange { .. })
        ));
        assert!(sample_hermitian_hn(&EnsembleSpec::unit_disk(10, 3, 0), 0).is_err());
        assert!(sample_hermitian_hn(&EnsembleSpec::hermitian_hn(10, 0.0, 3, 0), 0).is_err());
        let zero = Complex64::new(0.0, 0.0);
        assert!(MatrixSample::new(vec![zero; 2], vec![zero; 2], vec![zero; 2]).is_err());
        assert!(MatrixSample::new(vec![zero; 3], vec![zero; 2], vec![zero; 3]).is_err());
    }

    #[test]
    fn hermitian_hn_entries() {
        let spec = EnsembleSpec::hermitian_hn(600, 3.5, 1, 42);
        let s = sample_matrix(&spec, 0).unwrap();
        for (a, b, c) in s.entries() {
            assert_eq!(a.im, 0.0);
            assert!(a.re > -3.5 && a.re < 3.5);
            assert_eq!(b, Complex64::new(1.0, 0.0));
            assert_eq!(c, Complex64::new(1.0, 0.0));
        }
    }
}
