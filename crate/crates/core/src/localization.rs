//! Eigenvector localization: position spread, rate extraction, halo matching
//! and circle/halo classification of deformed spectra.
//!
//! The spread of a unit vector is `sqrt(Σ_k |u_k|² (k - k̄)²)` on the linear
//! site index `k = 1..n`, with `k̄ = Σ_k k |u_k|²`. Rates are read off by
//! inverting the spread of the ideal profile `|v_k|² ∝ e^(-2γ|k|)`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigensolver::eigenpairs;
use crate::error::{Error, Result};
use crate::operators::DenseMatrix;
use crate::spectra::HolePrediction;

/// Allowed deviation of `‖u‖` from one.
pub const NORM_TOL: f64 = 1e-10;

/// Bracket searched by [`variance_to_rate`].
pub const MIN_RATE: f64 = 1e-3;
pub const MAX_RATE: f64 = 20.0;

/// Eigenvectors peaking this close to either end are marked `seam_flag`.
pub const SEAM_SITES: usize = 5;

/// Below this `γ n` the truncated ideal profile is cut off noticeably.
pub const RELIABLE_GAMMA_N: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRecord {
    pub eigenvalue: Complex64,
    pub variance: f64,
    /// Absent for flagged pairs, exactly localized vectors and spreads beyond
    /// the slowest rate in the search bracket.
    pub rate: Option<f64>,
    pub mean_position: f64,
    pub flagged: bool,
    /// The vector peaks within `SEAM_SITES` of either end of the chain.
    pub seam_flag: bool,
}

/// `(variance, mean_position)` of a unit vector on sites `1..=n`.
pub fn position_variance(u: &[Complex64]) -> Result<(f64, f64)> {
    if u.is_empty() {
        return Err(Error::EmptyInput);
    }
    let norm = u.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if !((norm - 1.0).abs() <= NORM_TOL) {
        return Err(Error::NotNormalized { norm });
    }
    Ok(weighted_spread(u.iter().map(|x| x.norm_sqr())))
}

/// Spread and mean of weights `w_k` on sites `1..`, assumed to sum to one.
fn weighted_spread(weights: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let mean: f64 = weights
        .clone()
        .enumerate()
        .map(|(i, w)| (i + 1) as f64 * w)
        .sum();
    let second: f64 = weights
        .enumerate()
        .map(|(i, w)| ((i + 1) as f64 - mean).powi(2) * w)
        .sum();
    (second.max(0.0).sqrt(), mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdealVariance {
    pub value: f64,
    /// `γ n ≥ RELIABLE_GAMMA_N`.
    pub reliable: bool,
}

/// Spread of `|v_k|² ∝ e^(-2γ|k|)` summed over `k ∈ [-n/2, n/2]` and
/// renormalized on that window.
pub fn ideal_variance(gamma: f64, n: usize) -> Result<IdealVariance> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "ideal profile needs a positive rate, got {gamma}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("chain length must be positive".into()));
    }
    let half = (n / 2) as i64;
    // symmetric window: the mean is exactly zero
    let (mut mass, mut second) = (0.0, 0.0);
    for k in -half..=half {
        let w = (-2.0 * gamma * k.unsigned_abs() as f64).exp();
        mass += w;
        second += w * (k * k) as f64;
    }
    Ok(IdealVariance {
        value: (second / mass).sqrt(),
        reliable: gamma * n as f64 >= RELIABLE_GAMMA_N,
    })
}

/// The closed form `sinh(1/γ)` quoted for the ideal profile; reported next to
/// [`ideal_variance`] as a diagnostic only.
pub fn sinh_closed_form(gamma: f64) -> f64 {
    (1.0 / gamma).sinh()
}

/// Closed-form spread `1/(√2 sinh γ)` of the untruncated ideal profile.
pub fn untruncated_ideal_variance(gamma: f64) -> f64 {
    1.0 / (std::f64::consts::SQRT_2 * gamma.sinh())
}

/// Inverts [`ideal_variance`] by bisection on `[MIN_RATE, MAX_RATE]`.
///
/// Returns `None` when the spread exceeds that of the slowest rate in the
/// bracket; spreads below that of `MAX_RATE` clamp to `MAX_RATE`.
pub fn variance_to_rate(variance: f64, n: usize) -> Result<Option<f64>> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "rate extraction needs a positive variance, got {variance}"
        )));
    }
    let spread = |g: f64| ideal_variance(g, n).map(|v| v.value);
    if variance > spread(MIN_RATE)? {
        return Ok(None);
    }
    if variance <= spread(MAX_RATE)? {
        return Ok(Some(MAX_RATE));
    }
    // spread decreases with the rate
    let (mut lo, mut hi) = (MIN_RATE, MAX_RATE);
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if spread(mid)? > variance {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

/// One record per eigenpair of `m`.
pub fn localization_spectrum(m: &DenseMatrix) -> Result<Vec<LocalizationRecord>> {
    let spectrum = eigenpairs(m)?;
    let n = m.n();
    let vectors = spectrum.vectors.as_ref().expect("eigenpairs returns vectors");
    spectrum
        .eigenvalues
        .par_iter()
        .zip(vectors.par_iter())
        .zip(spectrum.flagged.par_iter())
        .map(|((&eigenvalue, v), &flagged)| {
            let weights = v.iter().map(|x| x.norm_sqr());
            let total: f64 = weights.clone().sum();
            let (variance, mean_position) = if total > 0.0 && total.is_finite() {
                weighted_spread(weights.map(|w| w / total))
            } else {
                (0.0, 0.0)
            };
            let peak = v
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
                .map_or(0, |(i, _)| i);
            let seam_flag = peak < SEAM_SITES || peak + SEAM_SITES >= n;
            let rate = if flagged || variance <= 0.0 {
                None
            } else {
                variance_to_rate(variance, n)?
            };
            Ok(LocalizationRecord {
                eigenvalue,
                variance,
                rate,
                mean_position,
                flagged,
                seam_flag,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaloMatchReport {
    /// `(before, after, displacement)` in increasing displacement.
    pub matched: Vec<(Complex64, Complex64, f64)>,
    pub unmatched_undeformed: usize,
    pub unmatched_deformed: usize,
    pub tolerance: f64,
}

/// Greedy pairing of two eigenvalue lists, closest pairs first; a pair is
/// accepted only if both members are still free and within `tol`.
pub fn halo_match(before: &[Complex64], after: &[Complex64], tol: f64) -> Result<HaloMatchReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "match tolerance must be positive, got {tol}"
        )));
    }
    let mut order: Vec<usize> = (0..after.len()).collect();
    order.sort_by(|&i, &j| after[i].re.total_cmp(&after[j].re));
    let sorted_re: Vec<f64> = order.iter().map(|&j| after[j].re).collect();
    let mut candidates = Vec::new();
    for (i, x) in before.iter().enumerate() {
        let start = sorted_re.partition_point(|&re| re < x.re - tol);
        for &j in order[start..].iter().take_while(|&&j| after[j].re <= x.re + tol) {
            let d = (x - after[j]).norm();
            if d <= tol {
                candidates.push((d, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_before = vec![false; before.len()];
    let mut used_after = vec![false; after.len()];
    let mut matched = Vec::new();
    for (d, i, j) in candidates {
        if !used_before[i] && !used_after[j] {
            used_before[i] = true;
            used_after[j] = true;
            matched.push((before[i], after[j], d));
        }
    }
    Ok(HaloMatchReport {
        unmatched_undeformed: before.len() - matched.len(),
        unmatched_deformed: after.len() - matched.len(),
        matched,
        tolerance: tol,
    })
}

/// Indices of a deformed spectrum split by distance from the hole boundary.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Classification {
    /// `||E| - hole_r| ≤ band`.
    pub circle: Vec<usize>,
    /// `|E| > hole_r + band`.
    pub halo: Vec<usize>,
    /// `|E| < hole_r - band`: inside the predicted hole.
    pub anomalies: Vec<usize>,
}

pub fn classify(eigs: &[Complex64], hole_r: f64, band: f64) -> Result<Classification> {
    if !(hole_r > 0.0) || !(band > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "classification needs a hole radius and band > 0, got {hole_r} and {band}"
        )));
    }
    let mut out = Classification::default();
    for (i, e) in eigs.iter().enumerate() {
        let r = e.norm();
        if (r - hole_r).abs() <= band {
            out.circle.push(i);
        } else if r > hole_r {
            out.halo.push(i);
        } else {
            out.anomalies.push(i);
        }
    }
    Ok(out)
}

/// [`classify`] against a predicted hole; refuses when no hole opens.
pub fn classify_predicted(
    eigs: &[Complex64],
    hole: &HolePrediction,
    band: f64,
) -> Result<Classification> {
    match hole.radius {
        Some(r) => classify(eigs, r, band),
        None => Err(Error::InvalidParameter(format!(
            "no hole is predicted at xi = {}",
            hole.xi
        ))),
    }
}
