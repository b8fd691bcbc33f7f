//! Estimators: readout error rates, the parameters of the gates used for
//! tomography, and maximum-likelihood tomography of a single-qubit unitary
//! under the fuzzy (SPAM-aware) measurement model.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::noise::{ideal_model, QtGateParams, ReadoutErrors};
use crate::optim::{multistart, nelder_mead, NelderMeadOptions};
use crate::qmath::{unitary_to_rotation, u_rotation, ComplexMatrix, RotationParams, Unitary};
use crate::rng;
use crate::sim::{
    exact_probabilities, realize_gate, run_protocol, sample_multinomial, Circuit, CircuitCounts, GateRef, NoiseContext, Shots,
    TomographyDataset,
};

// ---------------------------------------------------------------------------
// Readout

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutEstimate {
    pub e10: f64,
    pub e01: f64,
    /// Binomial standard errors of `e10` and `e01`.
    pub stderr: [f64; 2],
}

impl ReadoutEstimate {
    pub fn errors(&self) -> ReadoutErrors {
        ReadoutErrors { e10: self.e10, e01: self.e01 }
    }
}

/// Estimates readout errors from a bright run (ion left in `|0⟩`) and a dark
/// run (no fluorescence, equivalent to `|1⟩`). Counts are `(n0, n1)`.
pub fn estimate_readout_errors(bright: (f64, f64), dark: (f64, f64)) -> Result<ReadoutEstimate> {
    let check = |(a, b): (f64, f64), name: &str| {
        if !(a.is_finite() && b.is_finite() && a >= 0.0 && b >= 0.0) {
            return Err(invalid(format!("{name} counts must be finite and non-negative")));
        }
        let total = a + b;
        if total <= 0.0 {
            return Err(invalid(format!("{name} calibration run has no shots")));
        }
        Ok(total)
    };
    let nb = check(bright, "bright")?;
    let nd = check(dark, "dark")?;
    let e10 = bright.1 / nb;
    let e01 = dark.0 / nd;
    let se = |p: f64, n: f64| (p * (1.0 - p) / n).sqrt();
    Ok(ReadoutEstimate { e10, e01, stderr: [se(e10, nb), se(e01, nd)] })
}

/// The two readout calibration circuits: bright (`|0⟩`) and dark (`|1⟩`,
/// prepared exactly).
pub fn readout_calibration_circuits() -> [Circuit; 2] {
    let flip = GateRef::Rotation(RotationParams::new(FRAC_PI_2, 0.0, PI));
    [
        Circuit::new("bright", 1, vec![], vec![]).expect("valid"),
        Circuit::new("dark", 1, vec![flip], vec![]).expect("valid"),
    ]
}

/// Simulates both calibration runs; returns `(bright, dark)` counts.
pub fn simulate_readout_calibration(readout: &ReadoutErrors, shots: Shots, seed: u64) -> Result<((f64, f64), (f64, f64))> {
    let ctx = NoiseContext::single(*readout, QtGateParams::IDEAL, ideal_model());
    let ds = run_protocol(&readout_calibration_circuits(), &ctx, shots, seed)?;
    let pair = |r: &CircuitCounts| (r.counts[0], r.counts[1]);
    Ok((pair(&ds.records[0]), pair(&ds.records[1])))
}

// ---------------------------------------------------------------------------
// Tomography-gate parameters

/// Four circuits that pin down `(a, b, c)`: `√X`, `√X·√X`, `√Y·√X` and
/// `√X·√Y` (operator order; the rightmost gate acts first).
pub fn qt_gate_circuits() -> Vec<Circuit> {
    use GateRef::{SqrtX, SqrtY};
    [("qt_sx", vec![SqrtX]), ("qt_sx_sx", vec![SqrtX, SqrtX]), ("qt_sx_sy", vec![SqrtX, SqrtY]), ("qt_sy_sx", vec![SqrtY, SqrtX])]
        .into_iter()
        .map(|(id, prep)| Circuit::new(id, 1, prep, vec![]).expect("valid"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QtGateEstimate {
    #[serde(flatten)]
    pub params: QtGateParams,
    pub stderr: [f64; 3],
    #[serde(skip)]
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StdErrMethod {
    None,
    /// Inverse multinomial Fisher information at the estimate.
    Fisher,
    /// Parametric bootstrap from the fitted model.
    Bootstrap { resamples: usize, seed: u64 },
}

impl Default for StdErrMethod {
    fn default() -> Self {
        StdErrMethod::Bootstrap { resamples: 100, seed: 0 }
    }
}

const QT_BOUNDS: (f64, f64) = (0.0, PI);

fn qt_model_probs(circuits: &[Circuit], readout: &ReadoutErrors, x: &[f64]) -> Vec<Vec<f64>> {
    let qt = QtGateParams { a: x[0], b: x[1], c: x[2] };
    let ctx = NoiseContext::single(*readout, qt, ideal_model());
    circuits.iter().map(|c| exact_probabilities(c, &ctx).expect("valid circuit")).collect()
}

fn qt_objective(circuits: &[Circuit], freqs: &[Vec<f64>], readout: &ReadoutErrors, x: &[f64]) -> f64 {
    let model = qt_model_probs(circuits, readout, x);
    model.iter().zip(freqs).flat_map(|(p, f)| p.iter().zip(f).map(|(a, b)| (a - b).powi(2))).sum()
}

fn qt_options() -> NelderMeadOptions {
    NelderMeadOptions { bounds: Some(vec![QT_BOUNDS; 3]), initial_step: 0.1, ..Default::default() }
}

fn qt_starts() -> Vec<Vec<f64>> {
    let h = FRAC_PI_2;
    let d = 0.4;
    vec![
        vec![h, h, h],
        vec![h + d, h + d, h + d],
        vec![h - d, h + d, h - d],
        vec![h + d, h - d, h - d],
        vec![h - d, h - d, h + d],
    ]
}

fn fit_qt(circuits: &[Circuit], freqs: &[Vec<f64>], readout: &ReadoutErrors, starts: &[Vec<f64>]) -> Result<(QtGateParams, f64)> {
    let (m, _) = multistart(|x| qt_objective(circuits, freqs, readout, x), starts, &qt_options());
    if !m.converged || !m.value.is_finite() {
        return Err(Error::Estimation(format!(
            "QT gate fit did not converge after {} evaluations (objective {:.3e}, point {:?})",
            m.evals, m.value, m.x
        )));
    }
    Ok((QtGateParams::from_array([m.x[0], m.x[1], m.x[2]]), m.value))
}

/// Least-squares fit of `(a, b, c)` over `[0, π]³` to the outcome
/// frequencies of [`qt_gate_circuits`], with readout errors taken as known.
pub fn estimate_qt_gates(data: &TomographyDataset, readout: &ReadoutErrors, stderr: StdErrMethod) -> Result<QtGateEstimate> {
    let circuits = qt_gate_circuits();
    data.check_aligned(&circuits)?;
    readout.validate()?;
    let freqs: Vec<Vec<f64>> = data.records.iter().map(|r| r.frequencies()).collect();
    let (params, residual) = fit_qt(&circuits, &freqs, readout, &qt_starts())?;

    let stderr = if data.is_exact() {
        [0.0; 3]
    } else {
        let shots: Vec<f64> = data.records.iter().map(|r| r.shots).collect();
        match stderr {
            StdErrMethod::None => [f64::NAN; 3],
            StdErrMethod::Fisher => fisher_stderr(|x| qt_model_probs(&circuits, readout, x), &params.as_array(), &shots),
            StdErrMethod::Bootstrap { resamples, seed } => {
                let model = qt_model_probs(&circuits, readout, &params.as_array());
                let draws: Vec<[f64; 3]> = (0..resamples as u64)
                    .filter_map(|b| {
                        let mut r = rng::substream(seed, &[b]);
                        let f: Vec<Vec<f64>> = model
                            .iter()
                            .zip(&shots)
                            .map(|(p, &n)| {
                                let n = n.round() as u64;
                                sample_multinomial(p, n, &mut r).into_iter().map(|k| k as f64 / n as f64).collect()
                            })
                            .collect();
                        fit_qt(&circuits, &f, readout, &[params.as_array().to_vec()]).ok().map(|(p, _)| p.as_array())
                    })
                    .collect();
                sample_sd(&draws)
            }
        }
    };
    Ok(QtGateEstimate { params, stderr, residual })
}

fn sample_sd(draws: &[[f64; 3]]) -> [f64; 3] {
    let n = draws.len() as f64;
    if draws.len() < 2 {
        return [f64::NAN; 3];
    }
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mean = draws.iter().map(|d| d[k]).sum::<f64>() / n;
        *o = (draws.iter().map(|d| (d[k] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    }
    out
}

/// Standard errors from the inverse multinomial Fisher information of a
/// three-parameter model, using central differences.
fn fisher_stderr(model: impl Fn(&[f64]) -> Vec<Vec<f64>>, x: &[f64; 3], shots: &[f64]) -> [f64; 3] {
    let h = 1e-6;
    let p0 = model(x);
    let grads: Vec<Vec<Vec<f64>>> = (0..3)
        .map(|j| {
            let mut xp = *x;
            let mut xm = *x;
            xp[j] += h;
            xm[j] -= h;
            let (pp, pm) = (model(&xp), model(&xm));
            pp.iter().zip(&pm).map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v) / (2.0 * h)).collect()).collect()
        })
        .collect();
    let mut info = Matrix3::<f64>::zeros();
    for (c, probs) in p0.iter().enumerate() {
        for (k, &p) in probs.iter().enumerate() {
            if p <= 1e-15 {
                continue;
            }
            for i in 0..3 {
                for j in 0..3 {
                    info[(i, j)] += shots[c] * grads[i][c][k] * grads[j][c][k] / p;
                }
            }
        }
    }
    match info.try_inverse() {
        Some(cov) => [cov[(0, 0)].max(0.0).sqrt(), cov[(1, 1)].max(0.0).sqrt(), cov[(2, 2)].max(0.0).sqrt()],
        None => [f64::INFINITY; 3],
    }
}

// ---------------------------------------------------------------------------
// Process tomography

const PREP_LABELS: [&str; 4] = ["I", "X", "SX", "SY"];
const BASIS_LABELS: [&str; 3] = ["I", "SX", "SY"];

fn prep_gates() -> [GateRef; 4] {
    [GateRef::Identity, GateRef::X, GateRef::SqrtX, GateRef::SqrtY]
}

fn basis_gates() -> [GateRef; 3] {
    [GateRef::Identity, GateRef::SqrtX, GateRef::SqrtY]
}

/// The 4 × 3 standard protocol around `process`: input states prepared by
/// `{I, X, √X, √Y}` and measurement bases changed by `{I, √X, √Y}`.
pub fn standard_protocol_circuits(process: &[GateRef]) -> Result<Vec<Circuit>> {
    let mut out = Vec::with_capacity(12);
    for (p, pl) in prep_gates().into_iter().zip(PREP_LABELS) {
        for (b, bl) in basis_gates().into_iter().zip(BASIS_LABELS) {
            out.push(Circuit::with_process(format!("prep_{pl}_meas_{bl}"), 1, vec![p.clone()], process.to_vec(), vec![b])?);
        }
    }
    Ok(out)
}

/// Same protocol, run on qubit `qubit` of an ion pair. `process` is given in
/// two-qubit form (e.g. addressed pulses); only the measured qubit's marginal
/// is used for estimation.
pub fn standard_protocol_circuits_on(qubit: usize, process: &[GateRef]) -> Result<Vec<Circuit>> {
    let mut out = Vec::with_capacity(12);
    for (p, pl) in prep_gates().into_iter().zip(PREP_LABELS) {
        for (b, bl) in basis_gates().into_iter().zip(BASIS_LABELS) {
            out.push(Circuit::with_process(
                format!("prep_{pl}_meas_{bl}"),
                2,
                vec![GateRef::on(qubit, p.clone())],
                process.to_vec(),
                vec![GateRef::on(qubit, b)],
            )?);
        }
    }
    Ok(out)
}

/// Realized preparation and measurement gates assumed by the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuzzyModel {
    pub readout: ReadoutErrors,
    pub qt_gates: QtGateParams,
}

impl FuzzyModel {
    pub fn ideal() -> Self {
        Self { readout: ReadoutErrors::IDEAL, qt_gates: QtGateParams::IDEAL }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessEstimate {
    pub unitary: Unitary,
    pub params: RotationParams,
    pub loglik: f64,
}

#[derive(Serialize, Deserialize)]
struct ProcessEstimateJson {
    theta: f64,
    phi: f64,
    delta: f64,
    loglik: f64,
}

impl Serialize for ProcessEstimate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let p = self.params;
        ProcessEstimateJson { theta: p.theta, phi: p.phi, delta: p.delta, loglik: self.loglik }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ProcessEstimate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = ProcessEstimateJson::deserialize(d)?;
        let params = RotationParams::new(j.theta, j.phi, j.delta);
        let unitary = u_rotation(params).map_err(serde::de::Error::custom)?;
        Ok(Self { unitary, params, loglik: j.loglik })
    }
}

/// `exp(−i v·σ/2)` for a rotation vector `v`.
fn rotation_vector_unitary(v: &[f64]) -> ComplexMatrix {
    let angle = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let (s, c) = (angle / 2.0).sin_cos();
    let k = if angle > 1e-300 { s / angle } else { 0.5 };
    let (x, y, z) = (k * v[0], k * v[1], k * v[2]);
    ComplexMatrix::from_rows(
        2,
        2,
        vec![Complex64::new(c, -z), Complex64::new(-y, -x), Complex64::new(y, -x), Complex64::new(c, z)],
    )
    .expect("finite")
}

fn mat_vec(m: &ComplexMatrix, v: [Complex64; 2]) -> [Complex64; 2] {
    [m[(0, 0)] * v[0] + m[(0, 1)] * v[1], m[(1, 0)] * v[0] + m[(1, 1)] * v[1]]
}

/// Precomputed fuzzy gates of the standard protocol.
struct ProtocolModel {
    prep_states: Vec<[Complex64; 2]>,
    basis: Vec<ComplexMatrix>,
    effects: ([f64; 2], [f64; 2]),
}

impl ProtocolModel {
    fn new(fuzzy: &FuzzyModel) -> Result<Self> {
        let ctx = NoiseContext::single(fuzzy.readout, fuzzy.qt_gates, ideal_model());
        let zero = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        let prep_states =
            prep_gates().iter().map(|g| Ok(mat_vec(realize_gate(g, &ctx)?.matrix(), zero))).collect::<Result<_>>()?;
        let basis = basis_gates().iter().map(|g| Ok(realize_gate(g, &ctx)?.matrix().clone())).collect::<Result<_>>()?;
        Ok(Self { prep_states, basis, effects: fuzzy.readout.effect_diagonals() })
    }

    /// Outcome probabilities of all 12 circuits (prep-major order).
    fn probabilities(&self, process: &ComplexMatrix) -> [[f64; 2]; 12] {
        let mut out = [[0.0; 2]; 12];
        let (e0, e1) = self.effects;
        for (i, s) in self.prep_states.iter().enumerate() {
            let mid = mat_vec(process, *s);
            for (j, b) in self.basis.iter().enumerate() {
                let psi = mat_vec(b, mid);
                let pops = [psi[0].norm_sqr(), psi[1].norm_sqr()];
                out[i * 3 + j] = [e0[0] * pops[0] + e0[1] * pops[1], e1[0] * pops[0] + e1[1] * pops[1]];
            }
        }
        out
    }
}

fn log_likelihood(probs: &[[f64; 2]; 12], data: &[CircuitCounts]) -> f64 {
    probs.iter().zip(data).flat_map(|(p, r)| p.iter().zip(&r.counts).map(|(p, n)| if *n > 0.0 { n * p.max(1e-300).ln() } else { 0.0 })).sum()
}

/// Candidate rotation vectors used to seed the likelihood search.
fn seed_rotation_vectors() -> Vec<[f64; 3]> {
    let mut axes = Vec::new();
    for x in -1i32..=1 {
        for y in -1i32..=1 {
            for z in -1i32..=1 {
                if (x, y, z) != (0, 0, 0) {
                    let n = ((x * x + y * y + z * z) as f64).sqrt();
                    axes.push([x as f64 / n, y as f64 / n, z as f64 / n]);
                }
            }
        }
    }
    let mut out = vec![[0.0; 3]];
    for angle in [PI / 4.0, PI / 2.0, 3.0 * PI / 4.0, PI] {
        for a in &axes {
            out.push([angle * a[0], angle * a[1], angle * a[2]]);
        }
    }
    out
}

/// Maximum-likelihood estimate of a single-qubit unitary process from the
/// standard protocol, with preparation and measurement modelled by `fuzzy`.
pub fn process_tomography_mle(data: &TomographyDataset, fuzzy: &FuzzyModel) -> Result<ProcessEstimate> {
    let circuits = standard_protocol_circuits(&[])?;
    data.check_aligned(&circuits)?;
    fuzzy.readout.validate()?;
    let model = ProtocolModel::new(fuzzy)?;
    let records = &data.records;

    // Per-shot negative log-likelihood offset by its value at the empirical
    // frequencies, so the optimum sits near zero at any sample size.
    let offset: f64 = records
        .iter()
        .flat_map(|r| r.counts.iter().map(move |n| if *n > 0.0 { n * (n / r.shots).ln() } else { 0.0 }))
        .sum();
    let total: f64 = records.iter().map(|r| r.shots).sum();
    let objective =
        |v: &[f64]| (offset - log_likelihood(&model.probabilities(&rotation_vector_unitary(v)), records)) / total;

    let mut seeds: Vec<(f64, [f64; 3])> = seed_rotation_vectors().into_iter().map(|v| (objective(&v), v)).collect();
    seeds.sort_by(|a, b| a.0.total_cmp(&b.0));
    let starts: Vec<Vec<f64>> = seeds.iter().take(3).map(|(_, v)| v.to_vec()).collect();

    let opts = NelderMeadOptions { initial_step: 0.1, ftol: 1e-13, ..Default::default() };
    let (best, _) = multistart(objective, &starts, &opts);
    // A final polish from the winner at a finer scale.
    let best = {
        let polish = nelder_mead(objective, &best.x, &NelderMeadOptions { initial_step: 1e-3, ..opts.clone() });
        if polish.value <= best.value {
            polish
        } else {
            best
        }
    };
    if !best.converged || !best.value.is_finite() {
        return Err(Error::Estimation(format!(
            "likelihood maximization did not converge after {} evaluations (objective {:.3e})",
            best.evals, best.value
        )));
    }
    let m = rotation_vector_unitary(&best.x);
    let unitary = Unitary::new(m)?;
    let params = unitary_to_rotation(&unitary)?;
    let unitary = u_rotation(params)?;
    let loglik = log_likelihood(&model.probabilities(unitary.matrix()), records);
    Ok(ProcessEstimate { unitary, params, loglik })
}

/// Log-likelihood of `process` under the fuzzy model, for comparisons
/// against the estimator's optimum.
pub fn process_log_likelihood(data: &TomographyDataset, fuzzy: &FuzzyModel, process: &Unitary) -> Result<f64> {
    data.check_aligned(&standard_protocol_circuits(&[])?)?;
    if process.dim() != 2 {
        return Err(invalid("process must be a single-qubit unitary"));
    }
    let model = ProtocolModel::new(fuzzy)?;
    Ok(log_likelihood(&model.probabilities(process.matrix()), &data.records))
}

/// Convenience wrapper: rotation vector of canonical parameters (used in
/// tests and diagnostics).
pub fn rotation_vector(p: &RotationParams) -> Vector3<f64> {
    let (st, ct) = p.theta.sin_cos();
    let (sp, cp) = p.phi.sin_cos();
    Vector3::new(st * cp, st * sp, ct) * p.delta
}
