//! Radial eigenvalue statistics of the undeformed ensemble and the radial
//! Thouless formula built on them.
//!
//! Densities are per unit area: bin `i` holds
//! `density_i = count_i / (total · π (r_{i+1}^2 - r_i^2))`, so that
//! `2π Σ density_i · mid_i · width = 1` when nothing fell beyond `r_max`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::ensemble::MatrixSample;
use crate::error::{Error, Result};
use crate::transfer::lyapunov_exponents;

/// Normalization tolerance accepted by [`thouless_gamma`].
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// `(1/n) Σ log|b|` for entries uniform in the unit disk.
pub const UNIT_DISK_MEAN_LOG_B: f64 = -0.5;

/// Binned radial density `ρ₀(|E|)` with its cumulative fraction `N₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub bin_edges: Vec<f64>,
    pub density: Vec<f64>,
    pub counts: Vec<u64>,
    /// Eigenvalues pooled, including the overflow tally.
    pub total: u64,
    /// Eigenvalues with `|E| > r_max`.
    pub overflow: u64,
    /// `N₀` at each bin edge.
    pub n0: Vec<f64>,
}

impl DensityProfile {
    /// Builds a profile from raw bin counts over `[0, r_max]`.
    pub fn from_counts(counts: Vec<u64>, overflow: u64, r_max: f64) -> Result<Self> {
        if counts.is_empty() || !(r_max > 0.0) {
            return Err(Error::InvalidParameter(
                "need at least one bin and a positive r_max".into(),
            ));
        }
        let total = counts.iter().sum::<u64>() + overflow;
        if total == 0 {
            return Err(Error::EmptyInput);
        }
        let bins = counts.len();
        let width = r_max / bins as f64;
        let bin_edges: Vec<f64> = (0..=bins).map(|i| i as f64 * width).collect();
        let density = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let area = PI * (bin_edges[i + 1].powi(2) - bin_edges[i].powi(2));
                c as f64 / (total as f64 * area)
            })
            .collect();
        let mut n0 = Vec::with_capacity(bins + 1);
        let mut running = 0u64;
        n0.push(0.0);
        for &c in &counts {
            running += c;
            n0.push(running as f64 / total as f64);
        }
        Ok(Self {
            bin_edges,
            density,
            counts,
            total,
            overflow,
            n0,
        })
    }

    pub fn bins(&self) -> usize {
        self.density.len()
    }

    pub fn width(&self) -> f64 {
        self.bin_edges[1] - self.bin_edges[0]
    }

    pub fn r_max(&self) -> f64 {
        *self.bin_edges.last().expect("at least one edge")
    }

    pub fn midpoints(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Fraction of the spectrum in each bin by midpoint quadrature.
    pub fn bin_masses(&self) -> Vec<f64> {
        let w = self.width();
        self.midpoints()
            .iter()
            .zip(&self.density)
            .map(|(m, d)| 2.0 * PI * d * m * w)
            .collect()
    }

    /// `2π Σ ρ_i mid_i w`.
    pub fn mass(&self) -> f64 {
        self.bin_masses().iter().sum()
    }

    /// `N₀(r)` interpolated linearly between bin edges.
    pub fn n0_at(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        if r >= self.r_max() {
            return *self.n0.last().expect("edges");
        }
        let pos = r / self.width();
        let i = (pos.floor() as usize).min(self.bins() - 1);
        let frac = pos - i as f64;
        self.n0[i] + frac * (self.n0[i + 1] - self.n0[i])
    }

    /// Area-weighted mean density over bins with midpoints in `[r_lo, r_hi]`.
    pub fn plateau(&self, r_lo: f64, r_hi: f64) -> f64 {
        let w = self.width();
        let (num, den) = self
            .midpoints()
            .iter()
            .zip(&self.density)
            .filter(|(m, _)| **m >= r_lo && **m <= r_hi)
            .fold((0.0, 0.0), |(num, den), (m, d)| {
                let area = 2.0 * PI * m * w;
                (num + d * area, den + area)
            });
        num / den
    }
}

/// Raw radial bin counts; the `(counts, overflow)` pairs of separate sample
/// batches merge by element-wise addition.
pub fn radial_counts(eigs: &[Complex64], bins: usize, r_max: f64) -> (Vec<u64>, u64) {
    let mut counts = vec![0u64; bins];
    let mut overflow = 0u64;
    let width = r_max / bins as f64;
    for e in eigs {
        let r = e.norm();
        if r > r_max || !r.is_finite() {
            overflow += 1;
        } else {
            let i = ((r / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
    }
    (counts, overflow)
}

/// Histogram of `|E|` over `[0, r_max]`, normalized per unit area.
pub fn radial_density(eigs: &[Complex64], bins: usize, r_max: f64) -> Result<DensityProfile> {
    if bins == 0 || !(r_max > 0.0) {
        return Err(Error::InvalidParameter(
            "radial density needs bins >= 1 and r_max > 0".into(),
        ));
    }
    if eigs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (counts, overflow) = radial_counts(eigs, bins, r_max);
    DensityProfile::from_counts(counts, overflow, r_max)
}

/// Centered moving average of the density.
///
/// Odd windows are plain averages over `window` bins. Even windows use the
/// symmetric `2×m` form: `window + 1` bins with half weight at both ends. Near
/// the edges the window is truncated and the available weights renormalized.
/// The result is rescaled to the input's total mass; counts are untouched.
pub fn smooth(p: &DensityProfile, window: usize) -> Result<DensityProfile> {
    let bins = p.bins();
    if window == 0 || window > bins {
        return Err(Error::InvalidParameter(format!(
            "smoothing window {window} must lie in 1..={bins}"
        )));
    }
    if window == 1 {
        return Ok(p.clone());
    }
    let half = window / 2;
    let weight = |offset: usize| -> f64 {
        if window % 2 == 0 && offset == half {
            0.5
        } else {
            1.0
        }
    };
    let smoothed: Vec<f64> = (0..bins)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(bins - 1);
            let (num, den) = (lo..=hi).fold((0.0, 0.0), |(num, den), j| {
                let w = weight(i.abs_diff(j));
                (num + w * p.density[j], den + w)
            });
            num / den
        })
        .collect();
    let mut out = p.clone();
    out.density = smoothed;
    let (before, after) = (p.mass(), out.mass());
    if after > 0.0 {
        out.density.iter_mut().for_each(|d| *d *= before / after);
    }
    Ok(out)
}

/// A sample moment `⟨(1/n) Σ |E_i|^k⟩` with its standard error across samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moment {
    pub k: u32,
    pub value: f64,
    /// Standard error of the mean of per-sample moments; `None` for a single
    /// sample.
    pub std_error: Option<f64>,
}

/// Moment `μ_k` of `|E|` over per-sample eigenvalue lists.
pub fn moments(samples: &[Vec<Complex64>], k: u32) -> Result<Moment> {
    if k == 0 {
        return Err(Error::InvalidParameter("moment order must be positive".into()));
    }
    let per_sample: Vec<f64> = samples
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| s.iter().map(|e| e.norm().powi(k as i32)).sum::<f64>() / s.len() as f64)
        .collect();
    if per_sample.is_empty() {
        return Err(Error::EmptyInput);
    }
    let m = per_sample.len() as f64;
    let value = per_sample.iter().sum::<f64>() / m;
    let std_error = (per_sample.len() > 1).then(|| {
        let var = per_sample.iter().map(|x| (x - value).powi(2)).sum::<f64>() / (m - 1.0);
        (var / m).sqrt()
    });
    Ok(Moment { k, value, std_error })
}

/// Lyapunov exponent from the radial Thouless formula,
/// `γ(r) = log r · N₀(r) + 2π ∫_r^∞ E' ρ₀(E') log E' dE' - ⟨log|b|⟩`.
///
/// Bins enter by midpoint quadrature: bin `i` acts as a ring of mass `q_i` at
/// its midpoint, contributing `q_i log max(r, mid_i)`. The enclosed fraction
/// in the first term is therefore the mass of the bins whose midpoint lies
/// within `r`; this keeps `γ` exactly nondecreasing and continuous.
pub fn thouless_gamma(p: &DensityProfile, r: f64, mean_log_b: f64) -> Result<f64> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::InvalidParameter(format!("radius must be >= 0, got {r}")));
    }
    let mass = p.mass();
    if (mass - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Unnormalized { mass });
    }
    Ok(thouless_unchecked(&p.midpoints(), &p.bin_masses(), r) - mean_log_b)
}

fn thouless_unchecked(mids: &[f64], masses: &[f64], r: f64) -> f64 {
    let log_r = if r > 0.0 { r.ln() } else { 0.0 };
    mids.iter()
        .zip(masses)
        .map(|(&m, &q)| if m <= r { q * log_r } else { q * m.ln() })
        .sum()
}

/// Tabulated `γ(r)`, interpolated linearly and continued by
/// `log r - ⟨log|b|⟩` beyond the last radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCurve {
    pub radii: Vec<f64>,
    pub gamma: Vec<f64>,
    pub mean_log_b: f64,
}

impl LyapunovCurve {
    /// Thouless formula on a density profile at the given radii.
    pub fn from_profile(p: &DensityProfile, radii: &[f64], mean_log_b: f64) -> Result<Self> {
        let gamma = radii
            .iter()
            .map(|&r| thouless_gamma(p, r, mean_log_b))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            radii: radii.to_vec(),
            gamma,
            mean_log_b,
        })
    }

    /// Thouless formula evaluated at the profile's own bin midpoints.
    pub fn on_midpoints(p: &DensityProfile, mean_log_b: f64) -> Result<Self> {
        Self::from_profile(p, &p.midpoints(), mean_log_b)
    }

    /// `ξ₊(E)` at `E = r` for one long chain; the chain's own `⟨log|b|⟩` is
    /// recorded.
    pub fn from_transfer(chain: &MatrixSample, radii: &[f64]) -> Result<Self> {
        let gamma = radii
            .iter()
            .map(|&r| lyapunov_exponents(chain, Complex64::new(r, 0.0)).map(|(plus, _)| plus))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            radii: radii.to_vec(),
            gamma,
            mean_log_b: chain.mean_log_abs_b(),
        })
    }

    pub fn gamma_at(&self, r: f64) -> f64 {
        let last = self.radii.len() - 1;
        if r <= self.radii[0] {
            return self.gamma[0];
        }
        if r >= self.radii[last] {
            return if r > self.radii[last] {
                r.ln() - self.mean_log_b
            } else {
                self.gamma[last]
            };
        }
        let i = self.radii.partition_point(|&x| x <= r) - 1;
        let t = (r - self.radii[i]) / (self.radii[i + 1] - self.radii[i]);
        self.gamma[i] + t * (self.gamma[i + 1] - self.gamma[i])
    }

    /// First radius at which the curve decreases, if any.
    pub fn first_decrease(&self) -> Option<f64> {
        self.gamma
            .windows(2)
            .zip(&self.radii[1..])
            .find(|(g, _)| g[1] < g[0] - 1e-12)
            .map(|(_, &r)| r)
    }

    /// Least-squares fit `γ ≈ c0 + c2 r²` over radii in `[0, r_fit]`.
    pub fn quadratic_fit(&self, r_fit: f64) -> Option<(f64, f64)> {
        let pts: Vec<(f64, f64)> = self
            .radii
            .iter()
            .zip(&self.gamma)
            .filter(|(r, _)| **r <= r_fit)
            .map(|(&r, &g)| (r * r, g))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let m = pts.len() as f64;
        let sx = pts.iter().map(|p| p.0).sum::<f64>();
        let sy = pts.iter().map(|p| p.1).sum::<f64>();
        let sxx = pts.iter().map(|p| p.0 * p.0).sum::<f64>();
        let sxy = pts.iter().map(|p| p.0 * p.1).sum::<f64>();
        let det = m * sxx - sx * sx;
        if det == 0.0 {
            return None;
        }
        let c2 = (m * sxy - sx * sy) / det;
        let c0 = (sy - c2 * sx) / m;
        Some((c0, c2))
    }
}

/// `(1/r) d/dr (r dγ/dr) - 2π ρ₀` at the interior bins `1..bins-1`.
///
/// The curve must be tabulated on the profile's bin midpoints.
pub fn poisson_residual(p: &DensityProfile, curve: &LyapunovCurve) -> Result<Vec<f64>> {
    let bins = p.bins();
    if bins < 3 {
        return Err(Error::InvalidParameter(
            "poisson residual needs at least 3 bins".into(),
        ));
    }
    let mids = p.midpoints();
    if curve.radii.len() != bins
        || curve
            .radii
            .iter()
            .zip(&mids)
            .any(|(a, b)| (a - b).abs() > 1e-12 * b.max(1.0))
    {
        return Err(Error::InvalidParameter(
            "curve must be tabulated on the profile's bin midpoints".into(),
        ));
    }
    let h = p.width();
    let g = &curve.gamma;
    let e = &p.bin_edges;
    Ok((1..bins - 1)
        .map(|i| {
            let outer = e[i + 1] * (g[i + 1] - g[i]) / h;
            let inner = e[i] * (g[i] - g[i - 1]) / h;
            (outer - inner) / (h * mids[i]) - 2.0 * PI * p.density[i]
        })
        .collect())
}

/// Radius of the eigenvalue-free disk predicted by `γ(r) = ξ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolePrediction {
    pub xi: f64,
    /// Absent when `xi <= γ(0)`: no hole opens.
    pub radius: Option<f64>,
    pub gamma_at_zero: f64,
}

/// Solves `γ(r) = xi` on the piecewise-linear curve by bisection.
pub fn hole_radius(curve: &LyapunovCurve, xi: f64) -> Result<HolePrediction> {
    if curve.radii.is_empty() || curve.radii.len() != curve.gamma.len() {
        return Err(Error::EmptyInput);
    }
    if let Some(r) = curve.first_decrease() {
        return Err(Error::NonMonotone { radius: r });
    }
    let gamma_at_zero = curve.gamma_at(0.0);
    if xi <= gamma_at_zero {
        return Ok(HolePrediction {
            xi,
            radius: None,
            gamma_at_zero,
        });
    }
    let last = *curve.radii.last().expect("nonempty");
    if xi > curve.gamma_at(last) {
        // beyond the table the closed form log r - <log|b|> applies
        let r = (xi + curve.mean_log_b).exp().max(last);
        return Ok(HolePrediction {
            xi,
            radius: Some(r),
            gamma_at_zero,
        });
    }
    let (mut lo, mut hi) = (0.0, last);
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let g = curve.gamma_at(mid);
        if (g - xi).abs() <= 1e-6 && hi - lo < 1e-9 {
            break;
        }
        if g < xi {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(HolePrediction {
        xi,
        radius: Some(mid),
        gamma_at_zero,
    })
}
