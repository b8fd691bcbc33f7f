//! Dense complex matrices, single-qubit rotation unitaries and gate fidelity.
//!
//! Everything here works on tiny matrices (2×2 and 4×4), so the matrix type is
//! a plain row-major `Vec` without any blocking or SIMD tricks.

use std::f64::consts::{PI, TAU};
use std::ops::Mul;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Tolerance used when checking matrices this crate builds itself.
pub const CONSTRUCTION_TOL: f64 = 1e-12;
/// Tolerance used when accepting matrices from callers.
pub const INPUT_TOL: f64 = 1e-8;
/// Below this |sin(δ/2)| the rotation axis is considered undefined.
const AXIS_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn from_rows(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid("matrix dimensions must be positive"));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, got: data.len() });
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(invalid("matrix entries must be finite"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d, d);
        for i in 0..d {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn diag_real(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = C64::new(v, 0.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&z| z * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch { expected: self.rows * self.cols, got: other.rows * other.cols });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch { expected: self.cols, got: other.rows });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == ZERO {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    /// Kronecker product with `self` as the leading (most significant) factor.
    pub fn kron(&self, other: &Self) -> Self {
        let rows = self.rows * other.rows;
        let cols = self.cols * other.cols;
        let mut out = Self::zeros(rows, cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self[(i, j)];
                for k in 0..other.rows {
                    for l in 0..other.cols {
                        out[(i * other.rows + k, j * other.cols + l)] = a * other[(k, l)];
                    }
                }
            }
        }
        out
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.is_square() && self.max_abs_diff(&self.adjoint()) <= tol
    }

    /// Largest entrywise deviation of `self† self` from the identity.
    pub fn unitarity_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let g = self.adjoint().matmul(self).expect("square");
        g.max_abs_diff(&Self::identity(self.rows))
    }
}

impl std::ops::Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Axis/angle triple of a single-qubit rotation: polar angle `theta` and
/// azimuth `phi` of the rotation axis, and rotation angle `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationParams {
    pub theta: f64,
    pub phi: f64,
    pub delta: f64,
}

impl RotationParams {
    pub const fn new(theta: f64, phi: f64, delta: f64) -> Self {
        Self { theta, phi, delta }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.is_finite() && self.phi.is_finite() && self.delta.is_finite()
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.theta, self.phi, self.delta]
    }
}

/// A unitary of dimension 2 or 4.
#[derive(Debug, Clone, PartialEq)]
pub struct Unitary(ComplexMatrix);

impl Unitary {
    /// Wraps a caller-supplied matrix, checking unitarity to [`INPUT_TOL`].
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        Self::with_tolerance(m, INPUT_TOL)
    }

    pub fn with_tolerance(m: ComplexMatrix, tol: f64) -> Result<Self> {
        if !m.is_square() || !matches!(m.rows(), 2 | 4) {
            return Err(invalid(format!("unitary must be 2x2 or 4x4, got {}x{}", m.rows(), m.cols())));
        }
        let defect = m.unitarity_defect();
        if defect > tol {
            return Err(invalid(format!("matrix is not unitary (defect {defect:.3e})")));
        }
        Ok(Self(m))
    }

    pub fn identity(d: usize) -> Self {
        Self(ComplexMatrix::identity(d))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    /// Product `self · other` (so `other` acts first).
    pub fn compose(&self, other: &Unitary) -> Result<Unitary> {
        Ok(Self(self.0.matmul(&other.0)?))
    }

    pub fn with_phase(&self, alpha: f64) -> Unitary {
        Self(self.0.scale(C64::from_polar(1.0, alpha)))
    }
}

impl Mul for &Unitary {
    type Output = Unitary;
    fn mul(self, rhs: &Unitary) -> Unitary {
        self.compose(rhs).expect("unitary dimensions must agree")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(ComplexMatrix);

impl DensityMatrix {
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        if !m.is_square() || !matches!(m.rows(), 2 | 4) {
            return Err(invalid("density matrix must be 2x2 or 4x4"));
        }
        if !m.is_hermitian(INPUT_TOL) {
            return Err(invalid("density matrix must be Hermitian"));
        }
        if (m.trace() - ONE).norm() > INPUT_TOL {
            return Err(invalid("density matrix must have unit trace"));
        }
        if min_eigenvalue_hermitian(&m) < -INPUT_TOL {
            return Err(invalid("density matrix must be positive semidefinite"));
        }
        Ok(Self(m))
    }

    /// `|0…0⟩⟨0…0|` of dimension `d`.
    pub fn ground(d: usize) -> Self {
        let mut m = ComplexMatrix::zeros(d, d);
        m[(0, 0)] = ONE;
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }
}

fn min_eigenvalue_hermitian(m: &ComplexMatrix) -> f64 {
    let d = m.rows();
    let h = nalgebra::DMatrix::from_fn(d, d, |i, j| m[(i, j)]);
    let eig = nalgebra::SymmetricEigen::new(h);
    eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid("angles must be finite"))
    }
}

/// Rotation by `delta` about the axis with spherical angles (`theta`, `phi`):
///
/// ```text
/// [ cos(δ/2) − i cosθ sin(δ/2)      −i sinθ e^{−iφ} sin(δ/2) ]
/// [ −i sinθ e^{+iφ} sin(δ/2)        cos(δ/2) + i cosθ sin(δ/2) ]
/// ```
pub fn u_rotation(p: RotationParams) -> Result<Unitary> {
    check_finite(&p.as_array())?;
    let (s, c) = (p.delta / 2.0).sin_cos();
    let (st, ct) = p.theta.sin_cos();
    let off = -C64::i() * st * s;
    let m = ComplexMatrix {
        rows: 2,
        cols: 2,
        data: vec![
            C64::new(c, -ct * s),
            off * C64::from_polar(1.0, -p.phi),
            off * C64::from_polar(1.0, p.phi),
            C64::new(c, ct * s),
        ],
    };
    Ok(Unitary(m))
}

/// `Z(δ) = U(0, 0, δ)`.
pub fn z_rotation(delta: f64) -> Result<Unitary> {
    u_rotation(RotationParams::new(0.0, 0.0, delta))
}

/// Equatorial rotation `R_φ(δ) = U(π/2, φ, δ)`.
pub fn equatorial_rotation(phi: f64, delta: f64) -> Result<Unitary> {
    u_rotation(RotationParams::new(PI / 2.0, phi, delta))
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_pi(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(TAU) - PI;
    if y >= PI {
        y - TAU
    } else {
        y
    }
}

/// Removes the global phase of a 2×2 unitary, returning an SU(2) element
/// together with its (unit-norm) components `(c, sx, sy, sz)` where
/// `V = c·I − i(sx·X + sy·Y + sz·Z)`.
pub(crate) fn su2_components(u: &ComplexMatrix) -> [f64; 4] {
    let det = u[(0, 0)] * u[(1, 1)] - u[(0, 1)] * u[(1, 0)];
    let root = det.sqrt();
    let v = |i, j| u[(i, j)] / root;
    let c = 0.5 * (v(0, 0) + v(1, 1)).re;
    let sz = 0.5 * (v(1, 1).im - v(0, 0).im);
    let sx = -0.5 * (v(0, 1).im + v(1, 0).im);
    let sy = 0.5 * (v(1, 0).re - v(0, 1).re);
    [c, sx, sy, sz]
}

/// Canonical rotation parameters of a 2×2 unitary, up to global phase.
///
/// The sign of the SU(2) representative is chosen so that `cos(δ/2) ≥ 0`,
/// which puts `δ` in `[0, π]` and removes the `(θ, φ, δ) ↔ (π−θ, φ+π, 2π−δ)`
/// double cover. When the rotation angle vanishes the axis is reported as
/// `θ = φ = 0`.
pub fn unitary_to_rotation(u: &Unitary) -> Result<RotationParams> {
    if u.dim() != 2 {
        return Err(invalid("unitary_to_rotation expects a 2x2 unitary"));
    }
    let defect = u.matrix().unitarity_defect();
    if defect > INPUT_TOL {
        return Err(invalid(format!("matrix is not unitary (defect {defect:.3e})")));
    }
    let [mut c, mut sx, mut sy, mut sz] = su2_components(u.matrix());
    if c < 0.0 {
        c = -c;
        sx = -sx;
        sy = -sy;
        sz = -sz;
    }
    let s = (sx * sx + sy * sy + sz * sz).sqrt();
    let delta = 2.0 * s.atan2(c);
    if s < AXIS_EPS {
        return Ok(RotationParams::new(0.0, 0.0, delta));
    }
    let theta = (sx * sx + sy * sy).sqrt().atan2(sz);
    let phi = wrap_pi(sy.atan2(sx));
    Ok(RotationParams::new(theta, phi, delta))
}

/// Gate fidelity `|Tr(U†V)|² / d²`.
pub fn fidelity(u: &Unitary, v: &Unitary) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch { expected: u.dim(), got: v.dim() });
    }
    let d = u.dim();
    let a = u.matrix();
    let b = v.matrix();
    let mut tr = ZERO;
    for i in 0..d {
        for k in 0..d {
            tr += a[(k, i)].conj() * b[(k, i)];
        }
    }
    Ok((tr.norm_sqr() / (d * d) as f64).clamp(0.0, 1.0))
}

/// `1 − F(U, V)`, computed without the cancellation of `1 − |Tr|²/d²` for
/// single-qubit gates.
pub fn infidelity(u: &Unitary, v: &Unitary) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch { expected: u.dim(), got: v.dim() });
    }
    if u.dim() == 2 {
        // W = U†V in SU(2) form; 1 − F = |s|² where s is the sine vector.
        let w = u.adjoint().compose(v)?;
        let [c, sx, sy, sz] = su2_components(w.matrix());
        let s2 = sx * sx + sy * sy + sz * sz;
        // Normalize against rounding in the components.
        return Ok((s2 / (s2 + c * c)).clamp(0.0, 1.0));
    }
    Ok(1.0 - fidelity(u, v)?)
}

/// Kronecker product `A ⊗ B` of two single-qubit unitaries; `A` acts on the
/// first qubit.
pub fn tensor(a: &Unitary, b: &Unitary) -> Result<Unitary> {
    if a.dim() != 2 || b.dim() != 2 {
        return Err(invalid("tensor expects two 2x2 unitaries"));
    }
    Ok(Unitary(a.0.kron(&b.0)))
}

/// `U ρ U†`.
pub fn apply(u: &Unitary, rho: &DensityMatrix) -> Result<DensityMatrix> {
    if u.dim() != rho.dim() {
        return Err(Error::DimensionMismatch { expected: rho.dim(), got: u.dim() });
    }
    let out = u.0.matmul(&rho.0)?.matmul(&u.0.adjoint())?;
    Ok(DensityMatrix(out))
}
