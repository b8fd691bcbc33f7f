//! Fitting the affine pulse model from tomography results, and synthesizing
//! short corrective pulse sequences from imperfect pulses.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::noise::{crosstalk_effect, ideal_model, CrossTalkModel, LinearGateModel};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::qmath::{infidelity, su2_components, tensor, u_rotation, RotationParams, Unitary};
use crate::sim::GateModel;

/// Predicted fidelity a plan must reach to count as converged.
pub const PLAN_FIDELITY_THRESHOLD: f64 = 1.0 - 1e-8;

/// Centroid of the calibration gates' `(φ, δ)`. Pulses are commanded near it
/// so that fitted models are extrapolated as little as possible.
const PHI_CENTER: f64 = FRAC_PI_2;
const DELTA_CENTER: f64 = 3.0 * PI / 4.0;

// ---------------------------------------------------------------------------
// Model fitting

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub phi: f64,
    pub delta: f64,
    pub realized: RotationParams,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CalibrationSet {
    pub points: Vec<CalibrationPoint>,
}

/// Commanded `(φ, δ)` of the four calibration gates.
pub const CALIBRATION_GATES: [(f64, f64); 4] =
    [(PI / 4.0, FRAC_PI_2), (PI / 4.0, PI), (3.0 * PI / 4.0, FRAC_PI_2), (3.0 * PI / 4.0, PI)];

/// Representative of the rotation `p` closest to `reference` among
/// `(θ, φ + 2πk, δ + 2πm)` and `(π − θ, φ + π + 2πk, 2π − δ + 2πm)`.
pub fn align_branch(p: &RotationParams, reference: &RotationParams) -> RotationParams {
    let bases = [(p.theta, p.phi, p.delta), (PI - p.theta, p.phi + PI, TAU - p.delta)];
    let nearest = |x: f64, r: f64| x + TAU * ((r - x) / TAU).round();
    bases
        .iter()
        .map(|&(t, f, d)| RotationParams::new(t, nearest(f, reference.phi), nearest(d, reference.delta)))
        .min_by(|a, b| {
            let dist = |q: &RotationParams| {
                (q.theta - reference.theta).powi(2) + (q.phi - reference.phi).powi(2) + (q.delta - reference.delta).powi(2)
            };
            dist(a).total_cmp(&dist(b))
        })
        .expect("two candidates")
}

/// Row-wise least squares of the affine model, aligning reconstructed angles
/// to the ideal model's predictions first.
pub fn fit_linear_model(cal: &CalibrationSet) -> Result<LinearGateModel> {
    fit_linear_model_with_reference(cal, &ideal_model())
}

/// As [`fit_linear_model`], aligning branches to the predictions of
/// `reference` (e.g. the nominal neighbor model for cross-talk fits).
pub fn fit_linear_model_with_reference(cal: &CalibrationSet, reference: &LinearGateModel) -> Result<LinearGateModel> {
    let n = cal.points.len();
    if n < 3 {
        return Err(invalid(format!("need at least 3 calibration points, got {n}")));
    }
    if cal.points.iter().any(|p| !(p.phi.is_finite() && p.delta.is_finite() && p.realized.is_finite())) {
        return Err(invalid("calibration points must be finite"));
    }
    let design = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => cal.points[i].phi,
        1 => cal.points[i].delta,
        _ => 1.0,
    });
    let svd = design.clone().svd(true, true);
    let (smax, smin) = svd.singular_values.iter().fold((0.0f64, f64::INFINITY), |(hi, lo), &s| (hi.max(s), lo.min(s)));
    if smin <= 1e-10 * smax.max(1.0) {
        return Err(invalid(format!(
            "calibration design is rank deficient: commanded (φ, δ, 1) rows are not affinely independent (singular values {:?})",
            svd.singular_values.as_slice()
        )));
    }
    let aligned: Vec<RotationParams> =
        cal.points.iter().map(|p| align_branch(&p.realized, &reference.realize(p.phi, p.delta))).collect();
    let mut a = [[0.0; 3]; 3];
    for (row, out) in a.iter_mut().enumerate() {
        let y = DVector::from_iterator(n, aligned.iter().map(|p| p.as_array()[row]));
        let coef = svd.solve(&y, 1e-14).map_err(|e| invalid(e.to_string()))?;
        out.copy_from_slice(coef.as_slice());
    }
    LinearGateModel::new(a)
}

// ---------------------------------------------------------------------------
// Sequence plans

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedPulse {
    pub qubit: usize,
    pub phi: f64,
    pub delta: f64,
}

/// Commanded pulses in time order plus what they are predicted to achieve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequencePlan {
    pub pulses: Vec<PlannedPulse>,
    pub predicted_fidelity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qubit_fidelities: Option<[f64; 2]>,
    #[serde(skip)]
    pub predicted_unitary: Option<Unitary>,
    #[serde(skip)]
    pub below_threshold: bool,
}

/// Ordered product of the realized pulses of `plan` under `model`.
pub fn predicted_sequence_unitary(plan: &SequencePlan, model: &GateModel) -> Result<Unitary> {
    sequence_unitary(&plan.pulses, model)
}

fn sequence_unitary(pulses: &[PlannedPulse], model: &GateModel) -> Result<Unitary> {
    let d = match model {
        GateModel::Linear(_) => 2,
        GateModel::CrossTalk(_) => 4,
    };
    let mut acc = Unitary::identity(d);
    for p in pulses {
        let u = match model {
            GateModel::Linear(m) => {
                if p.qubit != 0 {
                    return Err(invalid(format!("pulse on qubit {} under a single-qubit model", p.qubit)));
                }
                u_rotation(m.realize(p.phi, p.delta))?
            }
            GateModel::CrossTalk(cts) => {
                let [a, b] = pair_factors(cts, p)?;
                tensor(&a, &b)?
            }
        };
        acc = u.compose(&acc)?;
    }
    Ok(acc)
}

/// Per-qubit factors `[on qubit 0, on qubit 1]` of one addressed pulse.
fn pair_factors(cts: &[CrossTalkModel; 2], p: &PlannedPulse) -> Result<[Unitary; 2]> {
    if p.qubit > 1 {
        return Err(invalid(format!("qubit index {} out of range", p.qubit)));
    }
    let (t, n) = crosstalk_effect(&cts[p.qubit], p.phi, p.delta);
    let (t, n) = (u_rotation(t)?, u_rotation(n)?);
    Ok(if p.qubit == 0 { [t, n] } else { [n, t] })
}

fn wrap_centered(x: f64, center: f64) -> f64 {
    (x - center + PI).rem_euclid(TAU) - PI + center
}

/// The representative of `R_φ(δ) ≅ R_{φ+π}(2π − δ)` (phases taken mod 2π)
/// closest to the calibration centroid.
fn normalize_pulse(phi: f64, delta: f64) -> (f64, f64) {
    let d = delta.rem_euclid(TAU);
    let a = (wrap_centered(phi, PHI_CENTER), d);
    let b = (wrap_centered(phi + PI, PHI_CENTER), TAU - d);
    let dist = |(p, d): (f64, f64)| (p - PHI_CENTER).powi(2) + (d - DELTA_CENTER).powi(2);
    if dist(b) < dist(a) {
        b
    } else {
        a
    }
}

/// Quaternion `(c, s)` of `c·I − i s·σ`; products follow matrix products.
fn qmul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + b[0] * a[1] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] + b[0] * a[2] + a[3] * b[1] - a[1] * b[3],
        a[0] * b[3] + b[0] * a[3] + a[1] * b[2] - a[2] * b[1],
    ]
}

/// The member of the two-pulse family of `u` whose first pulse has phase
/// `phi1`. The first angle is fixed by requiring `u·R_{φ1}(δ1)⁻¹` to have no
/// z component.
fn two_pulse_member(u: [f64; 4], phi1: f64) -> [(f64, f64); 2] {
    let (sp, cp) = phi1.sin_cos();
    let h = u[3].atan2(u[1] * sp - u[2] * cp);
    let (sh, ch) = h.sin_cos();
    let a = qmul(u, [ch, -sh * cp, -sh * sp, 0.0]);
    let phi2 = a[2].atan2(a[1]);
    let delta2 = 2.0 * a[1].hypot(a[2]).atan2(a[0]);
    [normalize_pulse(phi1, 2.0 * h), normalize_pulse(phi2, delta2)]
}

fn centroid_distance(d: &[(f64, f64); 2]) -> f64 {
    d.iter().map(|(p, dl)| (p - PHI_CENTER).powi(2) + (dl - DELTA_CENTER).powi(2)).sum()
}

/// Exact decomposition of a single-qubit unitary into two equatorial
/// rotations `R_{φ2}(δ2)·R_{φ1}(δ1)`; returns `[(φ1, δ1), (φ2, δ2)]`.
///
/// Decompositions form a one-parameter family (indexed by `φ1`); the member
/// whose pulses lie closest to the calibration gates is returned, so that a
/// fitted pulse model is used where it is best determined.
pub fn ideal_two_pulse(target: &Unitary) -> Result<[(f64, f64); 2]> {
    if target.dim() != 2 {
        return Err(invalid("two-pulse decomposition needs a single-qubit target"));
    }
    let u = su2_components(target.matrix());
    let best_on = |grid: &mut dyn Iterator<Item = f64>| {
        grid.map(|p| (p, two_pulse_member(u, p)))
            .min_by(|a, b| centroid_distance(&a.1).total_cmp(&centroid_distance(&b.1)))
            .expect("non-empty grid")
    };
    const COARSE: usize = 720;
    let step = TAU / COARSE as f64;
    let (p0, _) = best_on(&mut (0..COARSE).map(|k| k as f64 * step));
    let (_, best) = best_on(&mut (0..=200).map(|k| p0 + step * (k as f64 / 100.0 - 1.0)));
    Ok(best)
}

/// Commanded `(φ, δ)` whose realized phase and angle under `m` equal the
/// requested ones, ignoring the axis tilt. Falls back to the request when the
/// model's phase/angle block is singular.
fn invert_pulse(m: &LinearGateModel, phi_r: f64, delta_r: f64) -> (f64, f64) {
    let [_, r1, r2] = m.a;
    let det = r1[0] * r2[1] - r1[1] * r2[0];
    if det.abs() < 1e-9 {
        return (phi_r, delta_r);
    }
    let (y1, y2) = (phi_r - r1[2], delta_r - r2[2]);
    ((y1 * r2[1] - r1[1] * y2) / det, (r1[0] * y2 - y1 * r2[0]) / det)
}

fn synthesis_options(n: usize) -> NelderMeadOptions {
    NelderMeadOptions { max_evals: 4_000 * n, initial_step: 0.05, xtol: 1e-10, ftol: 1e-15, max_restarts: 6, ..Default::default() }
}

/// Runs the optimizer from each start in order and stops at the first one
/// reaching `goal`; otherwise returns the best. Ties go to the earlier start.
fn search(objective: impl Fn(&[f64]) -> f64, starts: &[Vec<f64>], goal: f64) -> (Vec<f64>, f64) {
    let opts = synthesis_options(starts[0].len());
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in starts {
        let m = nelder_mead(&objective, s, &opts);
        if best.as_ref().is_none_or(|b| m.value < b.1) {
            best = Some((m.x, m.value));
        }
        if best.as_ref().is_some_and(|b| b.1 <= goal) {
            break;
        }
    }
    best.expect("at least one start")
}

fn two_gate_starts(ideal: [(f64, f64); 2], m: &LinearGateModel) -> Vec<Vec<f64>> {
    let inverted: Vec<f64> = ideal.iter().flat_map(|&(p, d)| {
        let (p, d) = invert_pulse(m, p, d);
        [p, d]
    }).collect();
    let plain: Vec<f64> = ideal.iter().flat_map(|&(p, d)| [p, d]).collect();
    // The same rotations on the other branch, R_{φ+π}(2π−δ) ≅ R_φ(δ).
    let flipped: Vec<f64> = ideal.iter().flat_map(|&(p, d)| {
        let (p, d) = invert_pulse(m, p + PI, TAU - d);
        [p, d]
    }).collect();
    vec![inverted, plain, flipped]
}

/// Two imperfect pulses, optimized under `m`, approximating `target`.
pub fn decompose_two_gate(target: &Unitary, m: &LinearGateModel) -> Result<SequencePlan> {
    if target.dim() != 2 {
        return Err(invalid("two-gate synthesis needs a single-qubit target"));
    }
    m.validate()?;
    let ideal = ideal_two_pulse(target)?;
    let model = GateModel::Linear(*m);
    let to_pulses = |x: &[f64]| -> Vec<PlannedPulse> {
        x.chunks(2).map(|c| PlannedPulse { qubit: 0, phi: c[0], delta: c[1] }).collect()
    };
    let objective = |x: &[f64]| match sequence_unitary(&to_pulses(x), &model) {
        Ok(u) => infidelity(&u, target).unwrap_or(f64::INFINITY),
        Err(_) => f64::INFINITY,
    };
    let starts = two_gate_starts(ideal, m);
    // The first start is exact for any model with untilted axes; skip the
    // search when it already matches.
    let first = objective(&starts[0]);
    let (x, value) = if first <= 1e-15 { (starts[0].clone(), first) } else { search(objective, &starts, 1.0 - PLAN_FIDELITY_THRESHOLD) };
    finish_plan(to_pulses(&x), &model, target, value, None)
}

fn finish_plan(
    pulses: Vec<PlannedPulse>,
    model: &GateModel,
    target: &Unitary,
    objective: f64,
    qubit_fidelities: Option<[f64; 2]>,
) -> Result<SequencePlan> {
    if !objective.is_finite() {
        return Err(Error::Synthesis { reason: "objective is not finite".into(), best_fidelity: f64::NAN });
    }
    let u = sequence_unitary(&pulses, model)?;
    let predicted_fidelity = 1.0 - infidelity(&u, target)?;
    let below_threshold = predicted_fidelity < PLAN_FIDELITY_THRESHOLD;
    if below_threshold {
        log::warn!("sequence synthesis reached fidelity {predicted_fidelity:.12} below threshold");
    }
    Ok(SequencePlan { pulses, predicted_fidelity, qubit_fidelities, predicted_unitary: Some(u), below_threshold })
}

/// Four addressed pulses (qubit 0, 1, 0, 1) approximating `U1 ⊗ U2` on an
/// ion pair. `cts[q]` describes pulses addressed to qubit `q`.
pub fn compensate_crosstalk(u1: &Unitary, u2: &Unitary, ct1: &CrossTalkModel, ct2: &CrossTalkModel) -> Result<SequencePlan> {
    if u1.dim() != 2 || u2.dim() != 2 {
        return Err(invalid("cross-talk compensation needs single-qubit targets"));
    }
    ct1.validate()?;
    ct2.validate()?;
    let cts = [*ct1, *ct2];
    const ORDER: [usize; 4] = [0, 1, 0, 1];
    let to_pulses = |x: &[f64]| -> Vec<PlannedPulse> {
        x.chunks(2).zip(ORDER).map(|(c, q)| PlannedPulse { qubit: q, phi: c[0], delta: c[1] }).collect()
    };
    let factors = |x: &[f64]| -> Result<[Unitary; 2]> {
        let mut acc = [Unitary::identity(2), Unitary::identity(2)];
        for p in to_pulses(x) {
            let [a, b] = pair_factors(&cts, &p)?;
            acc = [a.compose(&acc[0])?, b.compose(&acc[1])?];
        }
        Ok(acc)
    };
    let per_qubit = |x: &[f64]| -> Result<[f64; 2]> {
        let [a, b] = factors(x)?;
        Ok([infidelity(&a, u1)?, infidelity(&b, u2)?])
    };
    let objective = |x: &[f64]| match per_qubit(x) {
        Ok([i0, i1]) => i0 + i1 - i0 * i1,
        Err(_) => f64::INFINITY,
    };

    let d1 = ideal_two_pulse(u1)?;
    let d2 = ideal_two_pulse(u2)?;
    let interleave = |p: [(f64, f64); 2], q: [(f64, f64); 2]| vec![p[0].0, p[0].1, q[0].0, q[0].1, p[1].0, p[1].1, q[1].0, q[1].1];
    let inv = |m: &LinearGateModel, d: [(f64, f64); 2]| d.map(|(p, dl)| invert_pulse(m, p, dl));
    let mut starts = vec![interleave(inv(&ct1.target, d1), inv(&ct2.target, d2)), interleave(d1, d2)];
    let flip = |d: [(f64, f64); 2]| d.map(|(p, dl)| (p + PI, TAU - dl));
    starts.push(interleave(inv(&ct1.target, flip(d1)), inv(&ct2.target, d2)));
    starts.push(interleave(inv(&ct1.target, d1), inv(&ct2.target, flip(d2))));

    let (x, value) = search(objective, &starts, 1.0 - PLAN_FIDELITY_THRESHOLD);
    let [i0, i1] = per_qubit(&x)?;
    let model = GateModel::CrossTalk(cts);
    let target = tensor(u1, u2)?;
    finish_plan(to_pulses(&x), &model, &target, value, Some([1.0 - i0, 1.0 - i1]))
}
