//! Transfer matrices of the eigenvalue recursion
//! `c_k u_{k-1} + a_k u_k + b_k u_{k+1} = E u_k`.
//!
//! The factor `T_k = [[(E - a_k)/b_k, -c_k/b_k], [1, 0]]` maps
//! `(u_k, u_{k-1})` to `(u_{k+1}, u_k)`, and the chain product is
//! `t(E) = T_n ... T_1`. Products are rescaled after every factor so chains of
//! any length stay representable; the scale is kept as a logarithm.
//!
//! The duality determinant expresses `det[E - M_b(z)]` through the 2x2
//! characteristic polynomial of `t(E)`:
//!
//! ```text
//! det[E - M_b(z)] = -(b_1 ... b_n) z^n det[t(E) - z^-n]
//!                 = -(b_1 ... b_n) (z^-n - tr t(E) + z^n det t(E))
//! ```
//!
//! evaluated entirely in log space, which is what makes zero counting by the
//! argument principle possible at `n xi` in the hundreds.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::eigensolver::{wrap_phase, LogPolar};
use crate::ensemble::MatrixSample;
use crate::error::{Error, Result};
use crate::operators::Deformation;

pub type Mat2 = [[Complex64; 2]; 2];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Duality determinants whose leading terms cancel to below this fraction are
/// reported as having reduced precision.
pub const CANCELLATION_TOL: f64 = 1e-8;

/// Contour points whose cancellation falls below this are treated as lying on
/// a zero of the determinant.
const ZERO_HIT_TOL: f64 = 1e-13;

/// Relative radius change applied once when the contour hits a zero.
pub const CONTOUR_NUDGE: f64 = 1e-6;

const MAX_REFINE_DEPTH: u32 = 40;

fn mat_mul(x: &Mat2, y: &Mat2) -> Mat2 {
    [
        [
            x[0][0] * y[0][0] + x[0][1] * y[1][0],
            x[0][0] * y[0][1] + x[0][1] * y[1][1],
        ],
        [
            x[1][0] * y[0][0] + x[1][1] * y[1][0],
            x[1][0] * y[0][1] + x[1][1] * y[1][1],
        ],
    ]
}

fn max_abs(x: &Mat2) -> f64 {
    x.iter()
        .flatten()
        .map(|v| v.norm())
        .fold(0.0, f64::max)
}

/// One factor of the chain product.
pub fn transfer_factor(a: Complex64, b: Complex64, c: Complex64, e: Complex64) -> Result<Mat2> {
    if b == ZERO {
        return Err(Error::SingularFactor { index: 0 });
    }
    Ok([[(e - a) / b, -c / b], [ONE, ZERO]])
}

/// Rescaled chain product `t(E) = e^log_scale · reduced`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    pub log_scale: f64,
    pub reduced: Mat2,
    /// `Σ log(c_k / b_k)` with the principal branch taken per factor.
    pub log_det: Complex64,
    pub n: usize,
}

impl TransferResult {
    /// Product over explicit entry sequences (any length ≥ 1).
    pub fn from_entries(
        a: &[Complex64],
        b: &[Complex64],
        c: &[Complex64],
        e: Complex64,
    ) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() || a.len() != c.len() {
            return Err(Error::InvalidParameter(
                "transfer product needs equal, nonempty entry sequences".into(),
            ));
        }
        let mut acc: Mat2 = [[ONE, ZERO], [ZERO, ONE]];
        let mut log_scale = 0.0;
        let mut log_det = ZERO;
        for (k, ((&ak, &bk), &ck)) in a.iter().zip(b).zip(c).enumerate() {
            let factor =
                transfer_factor(ak, bk, ck, e).map_err(|_| Error::SingularFactor { index: k })?;
            acc = mat_mul(&factor, &acc);
            let top = max_abs(&acc);
            if top > 0.0 && top.is_finite() {
                acc.iter_mut().flatten().for_each(|v| *v /= top);
                log_scale += top.ln();
            }
            log_det += (ck / bk).ln();
        }
        Ok(Self {
            log_scale,
            reduced: acc,
            log_det,
            n: a.len(),
        })
    }

    /// `e^log_scale · reduced`; overflows for long chains.
    pub fn full(&self) -> Mat2 {
        let s = self.log_scale.exp();
        let mut m = self.reduced;
        m.iter_mut().flatten().for_each(|v| *v *= s);
        m
    }

    /// `log tr t(E)` as a log-polar number.
    pub fn log_trace(&self) -> LogPolar {
        let tr = self.reduced[0][0] + self.reduced[1][1];
        let mut lp = LogPolar::from_complex(tr);
        lp.log_magnitude += self.log_scale;
        lp
    }

    /// Eigenvalue of larger modulus of `t(E)`, as `(log|λ₊|, arg λ₊)`.
    ///
    /// The smaller one follows from `det t`, which avoids the cancellation in
    /// the nearly rank-one reduced product.
    pub fn dominant_eigenvalue(&self) -> (f64, f64) {
        let tr = self.reduced[0][0] + self.reduced[1][1];
        let det = self.reduced[0][0] * self.reduced[1][1] - self.reduced[0][1] * self.reduced[1][0];
        let root = (tr * tr - 4.0 * det).sqrt();
        let plus = 0.5 * (tr + root);
        let minus = 0.5 * (tr - root);
        let big = if plus.norm() >= minus.norm() { plus } else { minus };
        (self.log_scale + big.norm().ln(), big.arg())
    }
}

pub fn transfer_product(s: &MatrixSample, e: Complex64) -> Result<TransferResult> {
    TransferResult::from_entries(&s.a, &s.b, &s.c, e)
}

/// `(xi_plus, xi_minus)` with `t(E)` eigenvalues `e^(n (xi± + i phi±))`.
///
/// `xi_plus + xi_minus` equals `(1/n) Σ (log|c_k| - log|b_k|)` by
/// construction.
pub fn lyapunov_exponents(s: &MatrixSample, e: Complex64) -> Result<(f64, f64)> {
    let t = transfer_product(s, e)?;
    Ok(exponents_of(&t))
}

fn exponents_of(t: &TransferResult) -> (f64, f64) {
    let n = t.n as f64;
    let (log_plus, _) = t.dominant_eigenvalue();
    let xi_plus = log_plus / n;
    let xi_minus = t.log_det.re / n - xi_plus;
    (xi_plus, xi_minus)
}

/// Log-polar value of `det[E - M_b(z)]` from the transfer matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualityDet {
    pub value: LogPolar,
    /// `|sum of terms| / |largest term|`; small values mean the result lost
    /// roughly `-log10(cancellation)` digits.
    pub cancellation: f64,
}

impl DualityDet {
    pub fn log_magnitude(&self) -> f64 {
        self.value.log_magnitude
    }

    pub fn phase(&self) -> Option<f64> {
        self.value.phase
    }

    pub fn reduced_precision(&self) -> bool {
        self.cancellation < CANCELLATION_TOL
    }
}

/// Sum of terms given as `(log|x|, arg x)`, returned as
/// `(log|Σ|, arg Σ, |Σ| / max|x|)`.
fn log_sum(terms: &[(f64, f64)]) -> (f64, f64, f64) {
    let top = terms
        .iter()
        .map(|t| t.0)
        .fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return (f64::NEG_INFINITY, 0.0, 0.0);
    }
    let sum: Complex64 = terms
        .iter()
        .filter(|t| t.0 > f64::NEG_INFINITY)
        .map(|&(l, p)| Complex64::from_polar((l - top).exp(), p))
        .sum();
    (top + sum.norm().ln(), sum.arg(), sum.norm())
}

/// Evaluates `det[E - M_b(z)]` through the duality identity.
pub fn duality_det(s: &MatrixSample, e: Complex64, d: &Deformation) -> Result<DualityDet> {
    let t = transfer_product(s, e)?;
    Ok(duality_from_transfer(s, &t, d))
}

fn duality_from_transfer(s: &MatrixSample, t: &TransferResult, d: &Deformation) -> DualityDet {
    let n = s.n() as i64;
    let (lz, pz) = d.log_z_pow(n);
    let trace = t.log_trace();
    let mut terms = Vec::with_capacity(3);
    // z^-n
    terms.push((-lz, -pz));
    // -tr t
    if let Some(p) = trace.phase {
        terms.push((trace.log_magnitude, p + PI));
    }
    // z^n det t
    terms.push((lz + t.log_det.re, pz + t.log_det.im));
    let (log_sum_mag, sum_phase, cancellation) = log_sum(&terms);

    // prefactor -(b_1 ... b_n)
    let (pre_mag, pre_phase) = s
        .b
        .iter()
        .fold((0.0, PI), |(m, p), b| (m + b.norm().ln(), p + b.arg()));
    if cancellation == 0.0 {
        return DualityDet {
            value: LogPolar::zero(),
            cancellation,
        };
    }
    DualityDet {
        value: LogPolar {
            log_magnitude: pre_mag + log_sum_mag,
            phase: Some(wrap_phase(pre_phase + sum_phase)),
        },
        cancellation,
    }
}

/// Result of counting zeros of `det[E - M_b(z)]` inside `|E| < radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindingReport {
    /// Radius actually used (after a possible nudge off a zero).
    pub radius: f64,
    pub z: Deformation,
    pub winding: i64,
    pub samples_on_contour: usize,
    /// Smallest `log|det|` met on the contour.
    pub min_log_det_on_contour: f64,
    /// Smallest term cancellation met on the contour.
    pub min_cancellation: f64,
}

struct ContourPoint {
    phase: f64,
    log_mag: f64,
    cancellation: f64,
}

struct Contour<'a> {
    s: &'a MatrixSample,
    d: &'a Deformation,
    radius: f64,
    evaluations: usize,
    min_log_mag: f64,
    min_cancellation: f64,
    hit_zero: bool,
}

impl Contour<'_> {
    fn eval(&mut self, theta: f64) -> Result<ContourPoint> {
        let e = Complex64::from_polar(self.radius, theta);
        let dd = duality_det(self.s, e, self.d)?;
        self.evaluations += 1;
        self.min_log_mag = self.min_log_mag.min(dd.log_magnitude());
        self.min_cancellation = self.min_cancellation.min(dd.cancellation);
        let point = ContourPoint {
            phase: dd.phase().unwrap_or(0.0),
            log_mag: dd.log_magnitude(),
            cancellation: dd.cancellation,
        };
        if point.cancellation < ZERO_HIT_TOL || point.log_mag == f64::NEG_INFINITY {
            self.hit_zero = true;
        }
        Ok(point)
    }

    /// Phase change over `[t0, t1]`, bisecting while a step exceeds π/2.
    fn increment(&mut self, t0: f64, p0: f64, t1: f64, p1: f64, depth: u32) -> Result<f64> {
        let step = wrap_phase(p1 - p0);
        if step.abs() <= 0.5 * PI {
            return Ok(step);
        }
        if depth >= MAX_REFINE_DEPTH {
            self.hit_zero = true;
            return Ok(step);
        }
        let tm = 0.5 * (t0 + t1);
        let pm = self.eval(tm)?.phase;
        Ok(self.increment(t0, p0, tm, pm, depth + 1)? + self.increment(tm, pm, t1, p1, depth + 1)?)
    }

    fn total_phase(&mut self, m_points: usize) -> Result<f64> {
        let first = self.eval(0.0)?.phase;
        let mut prev = first;
        let mut total = 0.0;
        for j in 1..=m_points {
            let theta = TAU * j as f64 / m_points as f64;
            let p = if j == m_points {
                first
            } else {
                self.eval(theta)?.phase
            };
            let t0 = TAU * (j - 1) as f64 / m_points as f64;
            total += self.increment(t0, prev, theta, p, 0)?;
            prev = p;
        }
        Ok(total)
    }
}

/// Number of eigenvalues of `M_b(z)` inside `|E| < r`, by the argument
/// principle applied to the duality determinant.
///
/// `m_points` must be at least `8n`. Steps whose phase change exceeds π/2 are
/// bisected. If the contour passes through a zero the radius is nudged once by
/// [`CONTOUR_NUDGE`].
pub fn winding_number(
    s: &MatrixSample,
    d: &Deformation,
    r: f64,
    m_points: usize,
) -> Result<WindingReport> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameter(format!("contour radius must be positive, got {r}")));
    }
    if m_points < 8 * s.n() {
        return Err(Error::InvalidParameter(format!(
            "need at least {} contour points, got {m_points}",
            8 * s.n()
        )));
    }
    for radius in [r, r * (1.0 + CONTOUR_NUDGE)] {
        let mut contour = Contour {
            s,
            d,
            radius,
            evaluations: 0,
            min_log_mag: f64::INFINITY,
            min_cancellation: f64::INFINITY,
            hit_zero: false,
        };
        let total = contour.total_phase(m_points)?;
        if contour.hit_zero {
            continue;
        }
        let winding = (total / TAU).round() as i64;
        return Ok(WindingReport {
            radius,
            z: *d,
            winding,
            samples_on_contour: contour.evaluations,
            min_log_det_on_contour: contour.min_log_mag,
            min_cancellation: contour.min_cancellation,
        });
    }
    Err(Error::ContourThroughZero { radius: r })
}
