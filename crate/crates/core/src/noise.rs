//! Ground-truth error models: readout POVM, the affine gate-parameter model,
//! cross-talk, and the parameters of the gates used for tomography itself.

use std::f64::consts::{FRAC_PI_2, PI};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::qmath::{ComplexMatrix, RotationParams};
use crate::rng;

/// Classical bit-flip probabilities of the thresholded readout.
///
/// `e10` is the probability of reading "1" from the bright state `|0⟩`,
/// `e01` the probability of reading "0" from the dark state `|1⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutErrors {
    pub e10: f64,
    pub e01: f64,
}

impl ReadoutErrors {
    pub const IDEAL: Self = Self { e10: 0.0, e01: 0.0 };

    pub fn new(e10: f64, e01: f64) -> Result<Self> {
        let r = Self { e10, e01 };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| p.is_finite() && (0.0..=1.0).contains(&p);
        if !ok(self.e10) || !ok(self.e01) {
            return Err(invalid(format!("readout error rates must lie in [0, 1], got ({}, {})", self.e10, self.e01)));
        }
        if self.e10 + self.e01 >= 1.0 {
            return Err(invalid("readout outcomes indistinguishable: e10 + e01 >= 1"));
        }
        Ok(())
    }

    /// Diagonals of the two POVM effects: `([P0_00, P0_11], [P1_00, P1_11])`.
    pub fn effect_diagonals(&self) -> ([f64; 2], [f64; 2]) {
        ([1.0 - self.e10, self.e01], [self.e10, 1.0 - self.e01])
    }
}

/// POVM effects `(P0, P1)` of the noisy z-readout.
pub fn readout_povm(e: &ReadoutErrors) -> Result<(ComplexMatrix, ComplexMatrix)> {
    e.validate()?;
    let (p0, p1) = e.effect_diagonals();
    Ok((ComplexMatrix::diag_real(&p0), ComplexMatrix::diag_real(&p1)))
}

/// Affine map from commanded pulse parameters `(φ, δ)` to the realized
/// rotation `(θ_r, φ_r, δ_r) = a · (φ, δ, 1)ᵀ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearGateModel {
    pub a: [[f64; 3]; 3],
}

impl LinearGateModel {
    pub fn new(a: [[f64; 3]; 3]) -> Result<Self> {
        let m = Self { a };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.iter().flatten().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(invalid("linear gate model coefficients must be finite"))
        }
    }

    pub fn realize(&self, phi: f64, delta: f64) -> RotationParams {
        let row = |r: &[f64; 3]| r[0] * phi + r[1] * delta + r[2];
        RotationParams::new(row(&self.a[0]), row(&self.a[1]), row(&self.a[2]))
    }

    /// Largest absolute coefficient difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.a.iter().flatten().zip(other.a.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    /// Adds `epsilon · N(0,1)` to every coefficient.
    pub fn perturbed(&self, epsilon: f64, seed: u64) -> Self {
        let mut r = rng::stream(seed);
        let mut a = self.a;
        for v in a.iter_mut().flatten() {
            let n: f64 = StandardNormal.sample(&mut r);
            *v += epsilon * n;
        }
        Self { a }
    }
}

/// The error-free pulse model: every pulse is an equatorial rotation with
/// exactly the commanded phase and angle.
pub fn ideal_model() -> LinearGateModel {
    LinearGateModel { a: [[0.0, 0.0, FRAC_PI_2], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] }
}

pub fn realized_rotation(m: &LinearGateModel, phi: f64, delta: f64) -> RotationParams {
    m.realize(phi, delta)
}

pub fn random_perturbed_model(epsilon: f64, seed: u64) -> Result<LinearGateModel> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(invalid("epsilon must be a finite non-negative number"));
    }
    Ok(ideal_model().perturbed(epsilon, seed))
}

/// Default fractional rotation picked up by the non-addressed neighbor.
pub const DEFAULT_NEIGHBOR_PICKUP: f64 = 0.05;

/// Nominal neighbor model: a weak copy of the drive whose rotation angle is
/// `beta · δ + gamma`.
pub fn neighbor_model(beta: f64, gamma: f64) -> LinearGateModel {
    LinearGateModel { a: [[0.0, 0.0, FRAC_PI_2], [1.0, 0.0, 0.0], [0.0, beta, gamma]] }
}

/// Neighbor model that never rotates the other qubit.
pub fn no_crosstalk_model() -> LinearGateModel {
    neighbor_model(0.0, 0.0)
}

/// Effect of a pulse addressed to one ion on both ions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossTalkModel {
    pub target: LinearGateModel,
    pub neighbor: LinearGateModel,
}

impl CrossTalkModel {
    pub fn validate(&self) -> Result<()> {
        self.target.validate()?;
        self.neighbor.validate()
    }

    pub fn ideal_without_crosstalk() -> Self {
        Self { target: ideal_model(), neighbor: no_crosstalk_model() }
    }

    /// Nominal model (ideal target, default pickup) with both submodels
    /// perturbed by `epsilon`.
    pub fn random(epsilon: f64, seed: u64) -> Result<Self> {
        let target = random_perturbed_model(epsilon, rng::derive_seed(seed, 0))?;
        let neighbor = neighbor_model(DEFAULT_NEIGHBOR_PICKUP, 0.0).perturbed(epsilon, rng::derive_seed(seed, 1));
        Ok(Self { target, neighbor })
    }
}

/// `(target, neighbor)` rotations produced by one commanded pulse.
pub fn crosstalk_effect(ct: &CrossTalkModel, phi: f64, delta: f64) -> (RotationParams, RotationParams) {
    (ct.target.realize(phi, delta), ct.neighbor.realize(phi, delta))
}

/// Parameters of the gates used to prepare and measure during tomography:
/// `√X = U(a, 0, b)` and `√Y = Z(c)·√X·Z(−c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QtGateParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl QtGateParams {
    pub const IDEAL: Self = Self { a: FRAC_PI_2, b: FRAC_PI_2, c: FRAC_PI_2 };

    pub fn as_array(&self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }

    pub fn from_array(x: [f64; 3]) -> Self {
        Self { a: x[0], b: x[1], c: x[2] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|v| v.is_finite() && (0.0..=PI).contains(v)) {
            Ok(())
        } else {
            Err(invalid(format!("QT gate parameters must lie in [0, π], got {:?}", self.as_array())))
        }
    }
}

impl Default for QtGateParams {
    fn default() -> Self {
        Self::IDEAL
    }
}

/// Ideal QT-gate parameters plus `epsilon · N(0,1)` noise. Draws outside
/// `[0, π]` are clamped.
pub fn random_qt_gate_params(epsilon: f64, seed: u64) -> Result<QtGateParams> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(invalid("epsilon must be a finite non-negative number"));
    }
    let mut r = rng::stream(seed);
    let mut x = QtGateParams::IDEAL.as_array();
    for v in x.iter_mut() {
        let n: f64 = StandardNormal.sample(&mut r);
        let raw = *v + epsilon * n;
        *v = raw.clamp(0.0, PI);
        if raw != *v {
            log::warn!("QT gate parameter draw {raw} clamped to [0, π]");
        }
    }
    Ok(QtGateParams::from_array(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn povm_examples() {
        let (p0, p1) = readout_povm(&ReadoutErrors::IDEAL).unwrap();
        assert_eq!(p0, ComplexMatrix::diag_real(&[1.0, 0.0]));
        assert_eq!(p1, ComplexMatrix::diag_real(&[0.0, 1.0]));

        let (p0, p1) = readout_povm(&ReadoutErrors::new(0.01, 0.03).unwrap()).unwrap();
        assert_eq!(p0, ComplexMatrix::diag_real(&[0.99, 0.03]));
        assert_eq!(p0.add(&p1).unwrap(), ComplexMatrix::identity(2));
    }

    #[test]
    fn readout_validation() {
        assert!(ReadoutErrors::new(-0.1, 0.0).is_err());
        assert!(ReadoutErrors::new(0.6, 0.5).is_err());
        assert!(ReadoutErrors::new(f64::NAN, 0.0).is_err());
        let bad = ReadoutErrors { e10: 1.2, e01: 0.0 };
        assert!(readout_povm(&bad).is_err());
    }

    #[test]
    fn ideal_model_examples() {
        let m = ideal_model();
        let p = realized_rotation(&m, 0.3, 1.7);
        assert_eq!(p, RotationParams::new(FRAC_PI_2, 0.3, 1.7));
        assert_eq!(realized_rotation(&m, 0.0, PI), RotationParams::new(FRAC_PI_2, 0.0, PI));
        assert_eq!(realized_rotation(&m, FRAC_PI_2, FRAC_PI_2), RotationParams::new(FRAC_PI_2, FRAC_PI_2, FRAC_PI_2));
        assert_eq!(realized_rotation(&m, PI / 4.0, FRAC_PI_2), RotationParams::new(FRAC_PI_2, PI / 4.0, FRAC_PI_2));
    }

    #[test]
    fn affine_offset_and_structure() {
        let mut m = ideal_model();
        m.a[0][2] = FRAC_PI_2 + 0.01;
        for (phi, delta) in [(0.0, 0.0), (1.0, -2.0), (3.0, 0.5)] {
            assert_eq!(m.realize(phi, delta).theta, FRAC_PI_2 + 0.01);
        }

        let r = random_perturbed_model(0.3, 9).unwrap();
        let base = r.realize(0.0, 0.0).as_array();
        let f = |p: f64, d: f64| {
            let v = r.realize(p, d).as_array();
            [v[0] - base[0], v[1] - base[1], v[2] - base[2]]
        };
        let (x, y) = (f(0.4, -0.2), f(1.1, 0.9));
        let sum = f(1.5, 0.7);
        for k in 0..3 {
            assert_abs_diff_eq!(sum[k], x[k] + y[k], epsilon = 1e-12);
        }
        // Interpolation along φ.
        let alpha = 0.3;
        let (p1, p2) = (0.2, 2.4);
        let mid = r.realize(alpha * p1 + (1.0 - alpha) * p2, 1.0).as_array();
        let (v1, v2) = (r.realize(p1, 1.0).as_array(), r.realize(p2, 1.0).as_array());
        for k in 0..3 {
            assert_abs_diff_eq!(mid[k], alpha * v1[k] + (1.0 - alpha) * v2[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn random_model_determinism() {
        assert_eq!(random_perturbed_model(0.0, 123).unwrap(), ideal_model());
        assert_eq!(random_perturbed_model(0.01, 5).unwrap(), random_perturbed_model(0.01, 5).unwrap());
        assert_ne!(random_perturbed_model(0.01, 5).unwrap(), random_perturbed_model(0.01, 6).unwrap());
        assert!(random_perturbed_model(-1.0, 0).is_err());
    }

    #[test]
    fn random_model_spread() {
        let n = 10_000;
        let xs: Vec<f64> = (0..n).map(|s| random_perturbed_model(0.01, s).unwrap().a[0][0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        assert!((sd - 0.01).abs() <= 0.001, "sample sd {sd}");
    }

    #[test]
    fn random_qt_params() {
        assert_eq!(random_qt_gate_params(0.0, 1).unwrap(), QtGateParams::IDEAL);
        assert_eq!(random_qt_gate_params(0.01, 77).unwrap(), random_qt_gate_params(0.01, 77).unwrap());
        let eps = 0.01;
        let n = 20_000;
        let inside = (0..n)
            .filter(|&s| {
                let p = random_qt_gate_params(eps, s).unwrap();
                p.as_array().iter().all(|v| (v - FRAC_PI_2).abs() <= 5.0 * eps)
            })
            .count();
        assert!(inside as f64 / n as f64 >= 0.9999);
        // Large noise gets clamped into the search domain.
        for s in 0..50 {
            random_qt_gate_params(5.0, s).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn crosstalk_examples() {
        let mut neighbor = LinearGateModel { a: [[0.3, 0.1, 0.2], [0.5, 0.7, 0.1], [0.0, 0.0, 0.0]] };
        let ct = CrossTalkModel { target: ideal_model(), neighbor };
        let (t, n) = crosstalk_effect(&ct, 0.4, 1.2);
        assert_eq!(n.delta, 0.0);
        assert_eq!(t, RotationParams::new(FRAC_PI_2, 0.4, 1.2));

        neighbor.a[2] = [0.0, 0.05, 0.0];
        let ct = CrossTalkModel { target: ideal_model(), neighbor };
        let (_, n) = crosstalk_effect(&ct, 0.0, 2.0);
        assert_abs_diff_eq!(n.delta, 0.1, epsilon = 1e-15);

        let r = CrossTalkModel::random(0.02, 4).unwrap();
        let (t0, n0) = crosstalk_effect(&r, 0.0, 0.0);
        let (t1, n1) = crosstalk_effect(&r, 1.0, 0.0);
        let (t2, n2) = crosstalk_effect(&r, 2.0, 0.0);
        for k in 0..3 {
            assert_abs_diff_eq!(t2.as_array()[k] - t1.as_array()[k], t1.as_array()[k] - t0.as_array()[k], epsilon = 1e-12);
            assert_abs_diff_eq!(n2.as_array()[k] - n1.as_array()[k], n1.as_array()[k] - n0.as_array()[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn json_field_names() {
        let e = ReadoutErrors::new(0.01, 0.03).unwrap();
        assert_eq!(serde_json::to_string(&e).unwrap(), r#"{"e10":0.01,"e01":0.03}"#);
        let m: LinearGateModel = serde_json::from_str(r#"{"a":[[0,0,1.5],[1,0,0],[0,1,0]]}"#).unwrap();
        assert_eq!(m.a[0][2], 1.5);
        let ct = CrossTalkModel::ideal_without_crosstalk();
        let v: serde_json::Value = serde_json::to_value(ct).unwrap();
        assert!(v.get("target").is_some() && v.get("neighbor").is_some());
        assert!(serde_json::from_str::<ReadoutErrors>(r#"{"e10":0.1}"#).is_err());
    }
}
