//! Dense complex eigendecomposition and log-polar determinants.
//!
//! Eigenvalues go through a diagonal balancing pass (Osborne iteration on the
//! off-diagonal sparsity pattern) before the Hessenberg/QR solve in `faer`.
//! Balancing matters here: the corner-deformed matrix carries entries of size
//! `e^(±n xi)` and is only tractable after a diagonal similarity spreads that
//! factor along the ring.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::evd::{self, ComputeEigenvectors};
use faer::diag::Diag;
use faer::{Mat, Par};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::operators::DenseMatrix;

/// Relative residual bound `‖Mv - λv‖ ≤ RESIDUAL_TOL ‖M‖` for accepted pairs.
pub const RESIDUAL_TOL: f64 = 1e-8;

/// Balancing stops once a sweep lowers the log of the squared off-diagonal
/// Frobenius norm by less than this.
const BALANCE_STOP: f64 = 1e-3;

/// Eigenvalues, and optionally unit-norm right eigenvectors, of one matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
    pub vectors: Option<Vec<Vec<Complex64>>>,
    pub residuals: Option<Vec<f64>>,
    /// Pairs that failed the residual contract or are nearly defective.
    pub flagged: Vec<bool>,
    /// Frobenius norm of the decomposed matrix.
    pub norm: f64,
    pub source: String,
}

impl Spectrum {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|f| **f).count()
    }
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let top = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    top + terms.map(|t| (t - top).exp()).sum::<f64>().ln()
}

/// Log-scales `l_i` such that `D^-1 M D` with `D = diag(e^l)` has comparable
/// off-diagonal row and column norms.
fn balance_log_scales(m: &DenseMatrix) -> Vec<f64> {
    let n = m.n();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        for (j, x) in m.row(i).iter().enumerate() {
            // squared magnitudes of corner entries can leave the f64 range
            let mag = x.norm();
            if i != j && mag > 0.0 {
                let log_sq = 2.0 * mag.ln();
                rows[i].push((j, log_sq));
                cols[j].push((i, log_sq));
            }
        }
    }
    let mut scale = vec![0.0f64; n];
    let log_norm = |scale: &[f64]| {
        log_sum_exp(rows.iter().enumerate().flat_map(|(i, r)| {
            r.iter().map(move |&(j, l)| l + 2.0 * (scale[j] - scale[i]))
        }))
    };
    let mut current = log_norm(&scale);
    let max_sweeps = 100 * n + 1000;
    for _ in 0..max_sweeps {
        for i in 0..n {
            if rows[i].is_empty() || cols[i].is_empty() {
                continue;
            }
            let row_ss = log_sum_exp(rows[i].iter().map(|&(j, l)| l + 2.0 * (scale[j] - scale[i])));
            let col_ss = log_sum_exp(cols[i].iter().map(|&(j, l)| l + 2.0 * (scale[i] - scale[j])));
            let step = 0.25 * (row_ss - col_ss);
            if step.is_finite() {
                scale[i] += step;
            }
        }
        let next = log_norm(&scale);
        if !(current - next > BALANCE_STOP) {
            break;
        }
        current = next;
    }
    let mean = scale.iter().sum::<f64>() / n as f64;
    scale.iter().map(|s| s - mean).collect()
}

fn balanced_faer(m: &DenseMatrix, scale: &[f64]) -> Mat<Complex64> {
    let n = m.n();
    Mat::from_fn(n, n, |i, j| m[(i, j)] * (scale[j] - scale[i]).exp())
}

fn check_finite(m: &DenseMatrix) -> Result<()> {
    if !m.is_finite() {
        return Err(Error::InvalidParameter("matrix has non-finite entries".into()));
    }
    if m.n() == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// Real input goes through the real Schur form, so real eigenvalues come out
/// exactly real and complex ones in exact conjugate pairs.
fn solve_real(m: &DenseMatrix, scale: &[f64]) -> Result<Vec<Complex64>> {
    let n = m.n();
    let a = Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)].re * (scale[j] - scale[i]).exp());
    let mut re = Diag::<f64>::zeros(n);
    let mut im = Diag::<f64>::zeros(n);
    let par = Par::Seq;
    let mut buf = MemBuffer::new(evd::evd_scratch::<f64>(
        n,
        ComputeEigenvectors::No,
        ComputeEigenvectors::No,
        par,
        Default::default(),
    ));
    evd::evd_real(
        a.as_ref(),
        re.as_mut(),
        im.as_mut(),
        None,
        None,
        par,
        MemStack::new(&mut buf),
        Default::default(),
    )
    .map_err(|_| Error::NoConvergence { n })?;
    let values: Vec<Complex64> = re
        .column_vector()
        .iter()
        .zip(im.column_vector().iter())
        .map(|(&r, &i)| Complex64::new(r, i))
        .collect();
    if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NoConvergence { n });
    }
    Ok(values)
}

fn solve(m: &DenseMatrix, vectors: bool) -> Result<(Vec<Complex64>, Option<Mat<Complex64>>)> {
    check_finite(m)?;
    let n = m.n();
    let scale = balance_log_scales(m);
    if !vectors && m.as_slice().iter().all(|x| x.im == 0.0) {
        return solve_real(m, &scale).map(|v| (v, None));
    }
    let a = balanced_faer(m, &scale);
    let mut s = Diag::<Complex64>::zeros(n);
    let mut u = vectors.then(|| Mat::<Complex64>::zeros(n, n));
    let want = if vectors {
        ComputeEigenvectors::Yes
    } else {
        ComputeEigenvectors::No
    };
    // Sequential on purpose: results must not depend on the thread count.
    let par = Par::Seq;
    let mut buf = MemBuffer::new(evd::evd_scratch::<Complex64>(
        n,
        ComputeEigenvectors::No,
        want,
        par,
        Default::default(),
    ));
    evd::evd_cplx(
        a.as_ref(),
        s.as_mut(),
        None,
        u.as_mut().map(|u| u.as_mut()),
        par,
        MemStack::new(&mut buf),
        Default::default(),
    )
    .map_err(|_| Error::NoConvergence { n })?;
    let values: Vec<Complex64> = s.column_vector().iter().copied().collect();
    if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NoConvergence { n });
    }
    // undo the balancing on the vectors: v = D v_balanced
    let u = u.map(|mut u| {
        for j in 0..n {
            for i in 0..n {
                u[(i, j)] *= scale[i].exp();
            }
        }
        u
    });
    Ok((values, u))
}

/// All eigenvalues, with multiplicity, in solver order.
pub fn eigenvalues(m: &DenseMatrix) -> Result<Vec<Complex64>> {
    solve(m, false).map(|(v, _)| v)
}

/// Eigenvalues with unit-norm right eigenvectors and residuals.
///
/// Pairs whose residual exceeds `RESIDUAL_TOL · ‖M‖`, or whose eigenvector is
/// nearly parallel to that of a coincident eigenvalue, are flagged rather than
/// dropped.
pub fn eigenpairs(m: &DenseMatrix) -> Result<Spectrum> {
    let (values, u) = solve(m, true)?;
    let u = u.expect("eigenvectors requested");
    let n = m.n();
    let norm = m.frobenius_norm();
    let mut vectors = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    let mut flagged = Vec::with_capacity(n);
    for (j, &lambda) in values.iter().enumerate() {
        let mut v: Vec<Complex64> = (0..n).map(|i| u[(i, j)]).collect();
        let vnorm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let ok_norm = vnorm.is_finite() && vnorm > 0.0;
        if ok_norm {
            v.iter_mut().for_each(|x| *x /= vnorm);
        }
        let mv = m.mul_vec(&v);
        let r = mv
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - lambda * b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        flagged.push(!ok_norm || !r.is_finite() || r > RESIDUAL_TOL * norm);
        residuals.push(r);
        vectors.push(v);
    }
    flag_near_defective(&values, &vectors, norm, &mut flagged);
    Ok(Spectrum {
        eigenvalues: values,
        vectors: Some(vectors),
        residuals: Some(residuals),
        flagged,
        norm,
        source: String::new(),
    })
}

fn flag_near_defective(
    values: &[Complex64],
    vectors: &[Vec<Complex64>],
    norm: f64,
    flagged: &mut [bool],
) {
    let close = RESIDUAL_TOL * norm.max(f64::MIN_POSITIVE);
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].re.total_cmp(&values[b].re));
    for (pos, &i) in order.iter().enumerate() {
        for &j in &order[pos + 1..] {
            if values[j].re - values[i].re > close {
                break;
            }
            if (values[i] - values[j]).norm() > close {
                continue;
            }
            let overlap: Complex64 = vectors[i]
                .iter()
                .zip(&vectors[j])
                .map(|(a, b)| a.conj() * b)
                .sum();
            if overlap.norm() > 1.0 - 1e-6 {
                flagged[i] = true;
                flagged[j] = true;
            }
        }
    }
}

/// A complex number in log-polar form. `phase` is `None` when the value is an
/// exact zero (`log_magnitude = -inf`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogPolar {
    pub log_magnitude: f64,
    pub phase: Option<f64>,
}

impl LogPolar {
    pub fn zero() -> Self {
        Self {
            log_magnitude: f64::NEG_INFINITY,
            phase: None,
        }
    }

    pub fn from_complex(z: Complex64) -> Self {
        if z == Complex64::new(0.0, 0.0) {
            return Self::zero();
        }
        Self {
            log_magnitude: z.norm().ln(),
            phase: Some(z.arg()),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.phase.is_none()
    }

    /// `exp(log_magnitude + i phase)`; may overflow for large magnitudes.
    pub fn to_complex(&self) -> Complex64 {
        match self.phase {
            Some(p) => Complex64::from_polar(self.log_magnitude.exp(), p),
            None => Complex64::new(0.0, 0.0),
        }
    }

    /// `|self / other - 1|`, evaluated without leaving log space.
    pub fn relative_difference(&self, other: &LogPolar) -> f64 {
        match (self.phase, other.phase) {
            (Some(p), Some(q)) => {
                let ratio = Complex64::from_polar(
                    (self.log_magnitude - other.log_magnitude).exp(),
                    p - q,
                );
                (ratio - 1.0).norm()
            }
            (None, None) => 0.0,
            _ => f64::INFINITY,
        }
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_phase(phase: f64) -> f64 {
    let w = (phase + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// `det(shift·I - m)` in log-polar form by partially pivoted elimination.
///
/// The logarithm of each pivot is accumulated, so the result stays finite
/// where the determinant itself would over- or underflow.
pub fn determinant(m: &DenseMatrix, shift: Complex64) -> Result<LogPolar> {
    check_finite(m)?;
    let n = m.n();
    let mut a: Vec<Complex64> = (0..n * n)
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            let diag = if i == j { shift } else { Complex64::new(0.0, 0.0) };
            diag - m[(i, j)]
        })
        .collect();
    let mut log_mag = 0.0;
    let mut phase = 0.0;
    for k in 0..n {
        let pivot_row = (k..n)
            .max_by(|&x, &y| a[x * n + k].norm().total_cmp(&a[y * n + k].norm()))
            .expect("nonempty range");
        let pivot = a[pivot_row * n + k];
        if pivot == Complex64::new(0.0, 0.0) {
            return Ok(LogPolar::zero());
        }
        if pivot_row != k {
            for j in 0..n {
                a.swap(k * n + j, pivot_row * n + j);
            }
            phase += PI;
        }
        log_mag += pivot.norm().ln();
        phase += pivot.arg();
        for i in k + 1..n {
            let factor = a[i * n + k] / pivot;
            if factor == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in k + 1..n {
                let upd = factor * a[k * n + j];
                a[i * n + j] -= upd;
            }
        }
    }
    Ok(LogPolar {
        log_magnitude: log_mag,
        phase: Some(wrap_phase(phase)),
    })
}

/// Largest distance between paired eigenvalues after greedy nearest-pair
/// matching of two multisets of equal size.
///
/// Both lists are sorted by `(re, im)`; each element of the first list then
/// takes the nearest still-unused element of the second.
pub fn spectral_distance(first: &[Complex64], second: &[Complex64]) -> f64 {
    if first.len() != second.len() {
        return f64::INFINITY;
    }
    let sort = |v: &[Complex64]| {
        let mut v = v.to_vec();
        v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        v
    };
    let a = sort(first);
    let b = sort(second);
    let mut used = vec![false; b.len()];
    let mut worst = 0.0f64;
    for x in &a {
        let (best, dist) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .expect("lists have equal length");
        used[best] = true;
        worst = worst.max(dist);
    }
    worst
}
