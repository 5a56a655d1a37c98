//! Dense assembly of the periodic tridiagonal matrix and its two
//! Hatano-Nelson deformations.
//!
//! With `z = e^(xi + i phi)`:
//!
//! - the undeformed matrix `M` has diagonal `a`, super-diagonal `b_1..b_{n-1}`,
//!   sub-diagonal `c_2..c_n` and corners `M[1,n] = c_1`, `M[n,1] = b_n`;
//! - the corner-deformed matrix `M(z^n)` multiplies the top-right corner by
//!   `z^n` and divides the bottom-left corner by `z^n`;
//! - the balanced matrix `M_b(z)` divides every `b` entry by `z` and multiplies
//!   every `c` entry by `z`.
//!
//! `M_b(z) = S M(z^n) S^-1` with `S = diag(z, z^2, ..., z^n)`.

use std::f64::consts::TAU;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ensemble::{MatrixSample, MIN_SIZE};
use crate::error::{Error, Result};

/// Largest `|n xi|` for which `z^n` and `z^-n` are safely representable.
pub const MAX_CORNER_EXPONENT: f64 = 600.0;

/// The deformation parameter `z = e^(xi + i phi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deformation {
    xi: f64,
    phi: f64,
}

impl Deformation {
    /// `phi` is reduced to `[0, 2π)`.
    pub fn new(xi: f64, phi: f64) -> Result<Self> {
        if !xi.is_finite() || !phi.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "deformation must be finite, got xi = {xi}, phi = {phi}"
            )));
        }
        let mut phi = phi.rem_euclid(TAU);
        if phi >= TAU {
            phi = 0.0;
        }
        Ok(Self { xi, phi })
    }

    pub const fn identity() -> Self {
        Self { xi: 0.0, phi: 0.0 }
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn is_identity(&self) -> bool {
        self.xi == 0.0 && self.phi == 0.0
    }

    pub fn z(&self) -> Complex64 {
        Complex64::from_polar(self.xi.exp(), self.phi)
    }

    /// `z^k`, computed from the exponent rather than by repeated products.
    pub fn z_pow(&self, k: i64) -> Complex64 {
        let k = k as f64;
        Complex64::from_polar((k * self.xi).exp(), (k * self.phi).rem_euclid(TAU))
    }

    /// `log z^k = k (xi + i phi)` with the phase reduced to `[0, 2π)`.
    pub fn log_z_pow(&self, k: i64) -> (f64, f64) {
        let k = k as f64;
        (k * self.xi, (k * self.phi).rem_euclid(TAU))
    }

    /// The same `xi` with `phi` shifted by `delta`.
    pub fn rotated(&self, delta: f64) -> Result<Self> {
        Self::new(self.xi, self.phi + delta)
    }
}

/// Square complex matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<Complex64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![Complex64::new(0.0, 0.0); n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn from_diagonal(diag: &[Complex64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (k, &d) in diag.iter().enumerate() {
            m[(k, k)] = d;
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.re.is_finite() && x.im.is_finite())
    }

    pub fn nonzero_count(&self) -> usize {
        self.data.iter().filter(|x| **x != Complex64::new(0.0, 0.0)).count()
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.n);
        (0..self.n)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.n).map(|k| self[(k, k)]).sum()
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = Complex64;

    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.n + j]
    }
}

/// Places the band and corners given per-position weights.
fn assemble(
    s: &MatrixSample,
    super_scale: Complex64,
    sub_scale: Complex64,
    top_right: Complex64,
    bottom_left: Complex64,
) -> DenseMatrix {
    let n = s.n();
    let mut m = DenseMatrix::zeros(n);
    for k in 0..n {
        m[(k, k)] = s.a[k];
    }
    for k in 0..n - 1 {
        m[(k, k + 1)] = s.b[k] * super_scale;
        m[(k + 1, k)] = s.c[k + 1] * sub_scale;
    }
    m[(0, n - 1)] = top_right;
    m[(n - 1, 0)] = bottom_left;
    m
}

fn check_size(s: &MatrixSample) -> Result<()> {
    if s.n() < MIN_SIZE {
        return Err(Error::SizeTooSmall { n: s.n() });
    }
    Ok(())
}

pub fn build_undeformed(s: &MatrixSample) -> DenseMatrix {
    let n = s.n();
    let one = Complex64::new(1.0, 0.0);
    assemble(s, one, one, s.c[0], s.b[n - 1])
}

/// `M(z^n)`: the deformation enters only through the two corners.
///
/// Refuses when `|n xi|` exceeds [`MAX_CORNER_EXPONENT`]; the balanced matrix
/// carries the same spectrum without overflow.
pub fn build_corner_deformed(s: &MatrixSample, d: &Deformation) -> Result<DenseMatrix> {
    check_size(s)?;
    if d.is_identity() {
        return Ok(build_undeformed(s));
    }
    let n = s.n();
    let n_xi = n as f64 * d.xi();
    if n_xi.abs() > MAX_CORNER_EXPONENT {
        return Err(Error::CornerOverflow { n_xi });
    }
    let zn = d.z_pow(n as i64);
    let one = Complex64::new(1.0, 0.0);
    Ok(assemble(s, one, one, zn * s.c[0], s.b[n - 1] / zn))
}

/// `M_b(z)`: every hopping carries a single power of `z`.
pub fn build_balanced(s: &MatrixSample, d: &Deformation) -> DenseMatrix {
    if d.is_identity() {
        return build_undeformed(s);
    }
    let n = s.n();
    let z = d.z();
    let z_inv = d.z_pow(-1);
    assemble(s, z_inv, z, z * s.c[0], s.b[n - 1] * z_inv)
}

/// Applies `S = diag(z, z^2, ..., z^n)`.
///
/// Maps an eigenvector of `M(z^n)` to an eigenvector of `M_b(z)` with the same
/// eigenvalue.
pub fn gauge_transform(u: &[Complex64], d: &Deformation) -> Result<Vec<Complex64>> {
    if u.len() < MIN_SIZE {
        return Err(Error::SizeTooSmall { n: u.len() });
    }
    Ok(u.iter()
        .enumerate()
        .map(|(k, &x)| d.z_pow(k as i64 + 1) * x)
        .collect())
}
