//! Experiment campaigns and dataset pipelines behind the `iontomo` binary.
//!
//! Each campaign is a pure function of an [`ExperimentConfig`]: trials run in
//! parallel, but trial `t` draws only from streams derived from
//! `(seed, t, ...)`, so outputs are byte-identical across runs and thread
//! counts.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::{
    compensate_crosstalk, decompose_two_gate, fit_linear_model_with_reference, predicted_sequence_unitary,
    CalibrationPoint, CalibrationSet, CALIBRATION_GATES,
};
use crate::error::Error;
use crate::noise::{
    ideal_model, neighbor_model, no_crosstalk_model, random_perturbed_model, random_qt_gate_params, CrossTalkModel,
    LinearGateModel, QtGateParams, ReadoutErrors, DEFAULT_NEIGHBOR_PICKUP,
};
use crate::qmath::{infidelity, u_rotation, RotationParams, Unitary};
use crate::rng;
use crate::sim::{run_protocol, GateModel, GateRef, NoiseContext, Shots, TomographyDataset};
use crate::tomo::{
    estimate_qt_gates, estimate_readout_errors, process_tomography_mle, qt_gate_circuits, simulate_readout_calibration,
    standard_protocol_circuits, standard_protocol_circuits_on, FuzzyModel, ProcessEstimate, QtGateEstimate,
    ReadoutEstimate, StdErrMethod,
};

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelOptions {
    /// Nominal fraction of a pulse's rotation picked up by the neighbor ion.
    pub neighbor_pickup: f64,
    /// Switch cross-talk off entirely (neighbor rotations vanish).
    pub zero_crosstalk: bool,
    /// Shots per circuit for the readout and tomography-gate calibration
    /// that precedes pulse-model tomography. Exact campaigns use exact
    /// calibration regardless.
    pub spam_shots: Shots,
}

impl ModelOptions {
    /// SPAM calibration shots for a campaign running at `shots`.
    pub fn spam_shots_for(&self, shots: Shots) -> Shots {
        if shots == Shots::Exact {
            Shots::Exact
        } else {
            self.spam_shots
        }
    }
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self { neighbor_pickup: DEFAULT_NEIGHBOR_PICKUP, zero_crosstalk: false, spam_shots: Shots::Finite(100_000) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    pub trials: usize,
    /// Shots per circuit; `None` picks the command's default list.
    pub shots: Option<Vec<Shots>>,
    pub epsilon: f64,
    pub readout: ReadoutErrors,
    pub model: ModelOptions,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: String::new(),
            seed: 0,
            trials: 100,
            shots: None,
            epsilon: 0.01,
            readout: ReadoutErrors { e10: 0.01, e01: 0.03 },
            model: ModelOptions::default(),
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.trials < 1 {
            return usage("trials must be at least 1".into());
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return usage(format!("epsilon must be finite and non-negative, got {}", self.epsilon));
        }
        if let Some(s) = &self.shots {
            if s.is_empty() {
                return usage("shots list is empty".into());
            }
            if s.contains(&Shots::Finite(0)) {
                return usage("shot counts must be at least 1".into());
            }
        }
        if self.model.spam_shots == Shots::Finite(0) {
            return usage("spam_shots must be at least 1".into());
        }
        if !(self.model.neighbor_pickup.is_finite()) {
            return usage("neighbor_pickup must be finite".into());
        }
        self.readout.validate().map_err(|e| CliError::Usage(e.to_string()))
    }

    fn shots_or(&self, default: &[Shots]) -> Vec<Shots> {
        self.shots.clone().unwrap_or_else(|| default.to_vec())
    }
}

/// Failure of a command, mapped to the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Failed(#[from] Error),
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(Error::InvalidArgument(_) | Error::DimensionMismatch { .. } | Error::Json(_) | Error::Io(_)) => 2,
            CliError::Failed(_) => 3,
            CliError::Check(_) => 4,
        }
    }
}

/// Command output plus the outcome of the optional acceptance check.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub failures: Vec<String>,
}

// ---------------------------------------------------------------------------
// Small numeric helpers

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(xs: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = xs.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// `−log₁₀(1 − F)`: the number of nines in the fidelity.
pub fn nines(infid: f64) -> f64 {
    -infid.max(f64::MIN_POSITIVE).log10()
}

/// Least-squares slope of `y` against `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn shots_key(s: Shots) -> u64 {
    match s {
        Shots::Finite(n) => n,
        Shots::Exact => u64::MAX,
    }
}

/// A Haar-random single-qubit target.
pub fn random_target(r: &mut impl Rng) -> Unitary {
    let theta = r.random_range(-1.0f64..1.0).acos();
    let params = RotationParams::new(theta, r.random_range(-PI..PI), r.random_range(0.0..TAU));
    u_rotation(params).expect("finite angles")
}

// Stream tags below the trial level.
const TAG_TRUTH: u64 = 0;
const TAG_TARGET: u64 = 1;
const TAG_READOUT: u64 = 2;
const TAG_QT: u64 = 3;
const TAG_PROCESS: u64 = 4;
const TAG_QT_TRUTH: u64 = 5;

// ---------------------------------------------------------------------------
// Shared estimation steps

/// Readout calibration followed by QT-gate estimation, for one qubit.
pub fn estimate_fuzzy_model(readout: &ReadoutErrors, qt: &QtGateParams, shots: Shots, seed: u64) -> crate::Result<FuzzyModel> {
    let (bright, dark) = simulate_readout_calibration(readout, shots, rng::derive_seed(seed, TAG_READOUT))?;
    let readout_hat = estimate_readout_errors(bright, dark)?.errors();
    let ctx = NoiseContext::single(*readout, *qt, ideal_model());
    let ds = run_protocol(&qt_gate_circuits(), &ctx, shots, rng::derive_seed(seed, TAG_QT))?;
    let qt_hat = estimate_qt_gates(&ds, &readout_hat, StdErrMethod::None)?.params;
    Ok(FuzzyModel { readout: readout_hat, qt_gates: qt_hat })
}

/// Tomography of the four calibration pulses under `truth`, then a fit.
pub fn calibrate_linear_model(
    truth: &LinearGateModel,
    ctx_base: &NoiseContext,
    fuzzy: &FuzzyModel,
    shots: Shots,
    seed: u64,
) -> crate::Result<LinearGateModel> {
    let ctx = NoiseContext { gate_model: GateModel::Linear(*truth), ..ctx_base.clone() };
    let mut points = Vec::with_capacity(CALIBRATION_GATES.len());
    for (k, &(phi, delta)) in CALIBRATION_GATES.iter().enumerate() {
        let circuits = standard_protocol_circuits(&[GateRef::Pulse { phi, delta }])?;
        let ds = run_protocol(&circuits, &ctx, shots, rng::derive_path(seed, &[TAG_PROCESS, k as u64]))?;
        let est = process_tomography_mle(&ds, fuzzy)?;
        points.push(CalibrationPoint { phi, delta, realized: est.params });
    }
    fit_linear_model_with_reference(&CalibrationSet { points }, &ideal_model())
}

// ---------------------------------------------------------------------------
// Readout calibration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutRun {
    pub shots: Shots,
    pub trial: usize,
    pub estimate: ReadoutEstimate,
    /// `[low, high]` bounds at three binomial standard errors for `e10`, `e01`.
    pub ci: [[f64; 2]; 2],
    pub covers_truth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutReport {
    pub truth: ReadoutErrors,
    pub seed: u64,
    pub runs: Vec<ReadoutRun>,
    /// Fraction of runs per shot setting whose intervals cover the truth.
    pub coverage: Vec<(Shots, f64)>,
}

/// One seeded readout calibration with 3σ binomial intervals.
pub fn readout_trial(truth: &ReadoutErrors, shots: Shots, seed: u64) -> crate::Result<(ReadoutEstimate, [[f64; 2]; 2], bool)> {
    let (bright, dark) = simulate_readout_calibration(truth, shots, seed)?;
    let est = estimate_readout_errors(bright, dark)?;
    let ci = [0, 1].map(|i| {
        let p = [est.e10, est.e01][i];
        [(p - 3.0 * est.stderr[i]).max(0.0), (p + 3.0 * est.stderr[i]).min(1.0)]
    });
    let covers = [truth.e10, truth.e01].iter().zip(&ci).all(|(t, [lo, hi])| {
        // Exact runs have zero width; allow rounding.
        *t >= lo - 1e-12 && *t <= hi + 1e-12
    });
    Ok((est, ci, covers))
}

pub fn cmd_readout_calib(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    cfg.validate()?;
    let shots = cfg.shots_or(&[Shots::Finite(100_000)]);
    let mut runs = Vec::new();
    let mut coverage = Vec::new();
    let mut failures = Vec::new();
    for &n in &shots {
        let batch: Vec<ReadoutRun> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let seed = rng::derive_path(cfg.seed, &[t as u64, shots_key(n)]);
                let (estimate, ci, covers_truth) = readout_trial(&cfg.readout, n, seed)?;
                Ok(ReadoutRun { shots: n, trial: t, estimate, ci, covers_truth })
            })
            .collect::<crate::Result<_>>()?;
        let frac = batch.iter().filter(|r| r.covers_truth).count() as f64 / batch.len() as f64;
        match n {
            Shots::Exact => {
                for r in &batch {
                    let err = (r.estimate.e10 - cfg.readout.e10).abs().max((r.estimate.e01 - cfg.readout.e01).abs());
                    if err > 1e-12 {
                        failures.push(format!("exact readout estimate off by {err:e}"));
                    }
                }
            }
            Shots::Finite(_) if frac < 0.98 => failures.push(format!("coverage {frac} < 0.98 at N = {n}")),
            _ => {}
        }
        log::info!("readout-calib: N = {n} done, coverage {frac}");
        coverage.push((n, frac));
        runs.extend(batch);
    }
    let report = ReadoutReport { truth: cfg.readout, seed: cfg.seed, runs, coverage };
    let text = serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n";
    Ok(Report { text, failures })
}

// ---------------------------------------------------------------------------
// QT-gate scaling campaign

/// One trial: infidelity of the estimated `√X` against the true one.
pub fn fig2b_trial(readout: &ReadoutErrors, epsilon: f64, shots: Shots, seed: u64, trial: u64) -> crate::Result<f64> {
    let truth = random_qt_gate_params(epsilon, rng::derive_path(seed, &[trial, TAG_QT_TRUTH]))?;
    let fuzzy = estimate_fuzzy_model(readout, &truth, shots, rng::derive_path(seed, &[trial, shots_key(shots)]))?;
    let sx = |q: &QtGateParams| u_rotation(RotationParams::new(q.a, 0.0, q.b));
    infidelity(&sx(&fuzzy.qt_gates)?, &sx(&truth)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRow {
    pub shots: Shots,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

pub fn fig2b_rows(cfg: &ExperimentConfig) -> Result<Vec<ScalingRow>, CliError> {
    cfg.validate()?;
    let shots = cfg.shots_or(&[100, 1_000, 10_000, 100_000].map(Shots::Finite));
    let mut rows = Vec::new();
    for n in shots {
        let inf: Vec<f64> = (0..cfg.trials as u64)
            .into_par_iter()
            .map(|t| fig2b_trial(&cfg.readout, cfg.epsilon, n, cfg.seed, t))
            .collect::<crate::Result<_>>()?;
        let s = sorted(inf);
        log::info!("fig2b: N = {n} done, median infidelity {:.3e}", quantile(&s, 0.5));
        rows.push(ScalingRow { shots: n, median: quantile(&s, 0.5), q25: quantile(&s, 0.25), q75: quantile(&s, 0.75) });
    }
    Ok(rows)
}

/// Checks on scaling rows: medians strictly decrease with N and the
/// log-log slope lies in `[−1.15, −0.85]`; exact rows must be below 1e−10.
pub fn check_scaling(rows: &[ScalingRow]) -> Vec<String> {
    let mut failures = Vec::new();
    let finite: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| match r.shots {
            Shots::Finite(n) => Some((n as f64, r.median)),
            Shots::Exact => None,
        })
        .collect();
    for w in finite.windows(2) {
        if !(w[1].0 > w[0].0 && w[1].1 < w[0].1) {
            failures.push(format!("median infidelity not decreasing between N = {} and N = {}", w[0].0, w[1].0));
        }
    }
    if finite.len() >= 2 {
        let x: Vec<f64> = finite.iter().map(|p| p.0.log10()).collect();
        let y: Vec<f64> = finite.iter().map(|p| p.1.log10()).collect();
        let k = slope(&x, &y);
        if !(-1.15..=-0.85).contains(&k) {
            failures.push(format!("log-log slope {k} outside [-1.15, -0.85]"));
        }
    }
    for r in rows.iter().filter(|r| r.shots == Shots::Exact) {
        if r.q75.max(r.median) > 1e-10 {
            failures.push(format!("exact-mode infidelity {} above 1e-10", r.q75));
        }
    }
    failures
}

pub fn cmd_fig2b(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let rows = fig2b_rows(cfg)?;
    let mut text = String::from("N,median,q25,q75\n");
    for r in &rows {
        let _ = writeln!(text, "{},{},{},{}", r.shots, num(r.median), num(r.q25), num(r.q75));
    }
    // Exact-mode checks need every trial, not the quartiles.
    let mut failures = check_scaling(&rows);
    if cfg.shots.as_deref().is_some_and(|s| s.contains(&Shots::Exact)) {
        let worst = (0..cfg.trials as u64)
            .into_par_iter()
            .map(|t| fig2b_trial(&cfg.readout, cfg.epsilon, Shots::Exact, cfg.seed, t))
            .collect::<crate::Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        if worst > 1e-10 {
            failures.push(format!("exact-mode infidelity {worst} above 1e-10"));
        }
    }
    Ok(Report { text, failures })
}

// ---------------------------------------------------------------------------
// Calibrated synthesis campaign

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisTrial {
    pub f_reconstructed: f64,
    pub f_standard: f64,
    /// Infidelities, kept separately to avoid cancellation near 1.
    pub inf_reconstructed: f64,
    pub inf_standard: f64,
}

/// One trial: calibrate readout and tomography gates at `spam_shots`, fit
/// the pulse model from tomography at `shots`, synthesize a random target
/// with the fitted and with the ideal model, and evaluate both plans under
/// the true model. Truth and target depend only on the trial.
pub fn fig3_trial(
    readout: &ReadoutErrors,
    epsilon: f64,
    shots: Shots,
    spam_shots: Shots,
    seed: u64,
    trial: u64,
) -> crate::Result<SynthesisTrial> {
    let truth = random_perturbed_model(epsilon, rng::derive_path(seed, &[trial, TAG_TRUTH]))?;
    let qt_truth = random_qt_gate_params(epsilon, rng::derive_path(seed, &[trial, TAG_QT_TRUTH]))?;
    let target = random_target(&mut rng::substream(seed, &[trial, TAG_TARGET]));
    let run_seed = rng::derive_path(seed, &[trial, shots_key(shots)]);

    let fuzzy = estimate_fuzzy_model(readout, &qt_truth, spam_shots, run_seed)?;
    let ctx = NoiseContext::single(*readout, qt_truth, truth);
    let fitted = calibrate_linear_model(&truth, &ctx, &fuzzy, shots, run_seed)?;

    let truth_model = GateModel::Linear(truth);
    let evaluate = |m: &LinearGateModel| -> crate::Result<f64> {
        let plan = decompose_two_gate(&target, m)?;
        infidelity(&predicted_sequence_unitary(&plan, &truth_model)?, &target)
    };
    let inf_reconstructed = evaluate(&fitted)?;
    let inf_standard = evaluate(&ideal_model())?;
    Ok(SynthesisTrial {
        f_reconstructed: 1.0 - inf_reconstructed,
        f_standard: 1.0 - inf_standard,
        inf_reconstructed,
        inf_standard,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisBatch {
    pub shots: Shots,
    pub trials: Vec<SynthesisTrial>,
}

impl SynthesisBatch {
    pub fn median_nines(&self) -> (f64, f64) {
        let r = sorted(self.trials.iter().map(|t| nines(t.inf_reconstructed)));
        let s = sorted(self.trials.iter().map(|t| nines(t.inf_standard)));
        (quantile(&r, 0.5), quantile(&s, 0.5))
    }
}

pub fn fig3_batches(cfg: &ExperimentConfig) -> Result<Vec<SynthesisBatch>, CliError> {
    cfg.validate()?;
    let shots = cfg.shots_or(&[1_000, 10_000, 100_000].map(Shots::Finite));
    let mut out = Vec::new();
    for n in shots {
        let trials = (0..cfg.trials as u64)
            .into_par_iter()
            .map(|t| fig3_trial(&cfg.readout, cfg.epsilon, n, cfg.model.spam_shots_for(n), cfg.seed, t))
            .collect::<crate::Result<_>>()?;
        let batch = SynthesisBatch { shots: n, trials };
        let (rec, std) = batch.median_nines();
        log::info!("fig3: N = {n} done, median nines {rec:.3} reconstructed, {std:.3} standard");
        out.push(batch);
    }
    Ok(out)
}

/// Median nines ≥ 3.5 at N = 10⁴, reconstructed beats standard at every
/// finite N, and exact mode reaches `1 − 1e−8` in every trial.
pub fn check_synthesis(batches: &[SynthesisBatch]) -> Vec<String> {
    let mut failures = Vec::new();
    for b in batches {
        let (rec, std) = b.median_nines();
        match b.shots {
            Shots::Exact => {
                let worst = b.trials.iter().map(|t| t.inf_reconstructed).fold(0.0, f64::max);
                if worst > 1e-8 {
                    failures.push(format!("exact mode: worst reconstructed infidelity {worst:e} above 1e-8"));
                }
            }
            Shots::Finite(n) => {
                if n == 10_000 && rec < 3.5 {
                    failures.push(format!("N = 1e4: median nines {rec} < 3.5"));
                }
                if rec <= std {
                    failures.push(format!("N = {n}: reconstructed median nines {rec} not above standard {std}"));
                }
            }
        }
    }
    failures
}

pub fn cmd_fig3(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let batches = fig3_batches(cfg)?;
    let mut text = String::from("kind,N,trial,F_reconstructed,F_standard,nines_reconstructed,nines_standard\n");
    for b in &batches {
        for (i, t) in b.trials.iter().enumerate() {
            let _ = writeln!(
                text,
                "trial,{},{i},{},{},{},{}",
                b.shots,
                num(t.f_reconstructed),
                num(t.f_standard),
                num(nines(t.inf_reconstructed)),
                num(nines(t.inf_standard))
            );
        }
    }
    for b in &batches {
        let fr = sorted(b.trials.iter().map(|t| t.f_reconstructed));
        let fs = sorted(b.trials.iter().map(|t| t.f_standard));
        let nr = sorted(b.trials.iter().map(|t| nines(t.inf_reconstructed)));
        let ns = sorted(b.trials.iter().map(|t| nines(t.inf_standard)));
        for (label, q) in [("q25", 0.25), ("median", 0.5), ("q75", 0.75)] {
            let _ = writeln!(
                text,
                "{label},{},,{},{},{},{}",
                b.shots,
                num(quantile(&fr, q)),
                num(quantile(&fs, q)),
                num(quantile(&nr, q)),
                num(quantile(&ns, q))
            );
        }
    }
    Ok(Report { text, failures: check_synthesis(&batches) })
}

// ---------------------------------------------------------------------------
// Cross-talk campaign

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrosstalkTrial {
    pub f_joint: f64,
    pub f_q0: f64,
    pub f_q1: f64,
}

/// Ground-truth pair models for one trial.
pub fn crosstalk_truth(epsilon: f64, opts: &ModelOptions, seed: u64) -> crate::Result<[CrossTalkModel; 2]> {
    let neighbor_nominal =
        if opts.zero_crosstalk { no_crosstalk_model() } else { neighbor_model(opts.neighbor_pickup, 0.0) };
    let one = |q: u64| -> crate::Result<CrossTalkModel> {
        let s = rng::derive_seed(seed, q);
        let target = random_perturbed_model(epsilon, rng::derive_seed(s, 0))?;
        let neighbor =
            if opts.zero_crosstalk { neighbor_nominal } else { neighbor_nominal.perturbed(epsilon, rng::derive_seed(s, 1)) };
        Ok(CrossTalkModel { target, neighbor })
    };
    Ok([one(0)?, one(1)?])
}

/// Tomography of both ions for each calibration pulse addressed to `q`,
/// giving fitted target and neighbor models for pulses on `q`.
fn calibrate_pair_model(
    q: usize,
    ctx: &NoiseContext,
    fuzzy: &[FuzzyModel; 2],
    nominal_neighbor: &LinearGateModel,
    shots: Shots,
    seed: u64,
) -> crate::Result<CrossTalkModel> {
    let mut sets = [CalibrationSet::default(), CalibrationSet::default()];
    for (k, &(phi, delta)) in CALIBRATION_GATES.iter().enumerate() {
        let pulse = GateRef::AddressedPulse { qubit: q, phi, delta };
        for (measured, set) in sets.iter_mut().enumerate() {
            let circuits = standard_protocol_circuits_on(measured, std::slice::from_ref(&pulse))?;
            let ds = run_protocol(&circuits, ctx, shots, rng::derive_path(seed, &[TAG_PROCESS, q as u64, k as u64, measured as u64]))?;
            let est = process_tomography_mle(&ds.marginal(measured)?, &fuzzy[measured])?;
            set.points.push(CalibrationPoint { phi, delta, realized: est.params });
        }
    }
    let (t, n) = if q == 0 { (&sets[0], &sets[1]) } else { (&sets[1], &sets[0]) };
    Ok(CrossTalkModel {
        target: fit_linear_model_with_reference(t, &ideal_model())?,
        neighbor: fit_linear_model_with_reference(n, nominal_neighbor)?,
    })
}

pub fn crosstalk_trial(cfg: &ExperimentConfig, shots: Shots, trial: u64) -> crate::Result<CrosstalkTrial> {
    let truth = crosstalk_truth(cfg.epsilon, &cfg.model, rng::derive_path(cfg.seed, &[trial, TAG_TRUTH]))?;
    let qt_draw = |q: u64| random_qt_gate_params(cfg.epsilon, rng::derive_path(cfg.seed, &[trial, TAG_QT_TRUTH, q]));
    let qt = [qt_draw(0)?, qt_draw(1)?];
    let u1 = random_target(&mut rng::substream(cfg.seed, &[trial, TAG_TARGET]));
    let run_seed = rng::derive_path(cfg.seed, &[trial, shots_key(shots)]);

    let spam = cfg.model.spam_shots_for(shots);
    let fuzzy_for = |q: usize| estimate_fuzzy_model(&cfg.readout, &qt[q], spam, rng::derive_seed(run_seed, q as u64));
    let fuzzy = [fuzzy_for(0)?, fuzzy_for(1)?];
    let ctx = NoiseContext::two_qubit([cfg.readout; 2], qt, truth);
    let nominal_neighbor =
        if cfg.model.zero_crosstalk { no_crosstalk_model() } else { neighbor_model(cfg.model.neighbor_pickup, 0.0) };
    let fitted = [
        calibrate_pair_model(0, &ctx, &fuzzy, &nominal_neighbor, shots, run_seed)?,
        calibrate_pair_model(1, &ctx, &fuzzy, &nominal_neighbor, shots, run_seed)?,
    ];
    let plan = compensate_crosstalk(&u1, &Unitary::identity(2), &fitted[0], &fitted[1])?;
    // Evaluate the commanded pulses under the true models.
    let achieved = predicted_sequence_unitary(&plan, &GateModel::CrossTalk(truth))?;
    let target = crate::qmath::tensor(&u1, &Unitary::identity(2))?;
    let f_joint = 1.0 - infidelity(&achieved, &target)?;
    let per_qubit = per_qubit_fidelities(&plan, &truth, &u1)?;
    Ok(CrosstalkTrial { f_joint, f_q0: per_qubit[0], f_q1: per_qubit[1] })
}

fn per_qubit_fidelities(plan: &crate::calib::SequencePlan, truth: &[CrossTalkModel; 2], u1: &Unitary) -> crate::Result<[f64; 2]> {
    let mut acc = [Unitary::identity(2), Unitary::identity(2)];
    for p in &plan.pulses {
        let (t, n) = crate::noise::crosstalk_effect(&truth[p.qubit], p.phi, p.delta);
        let (t, n) = (u_rotation(t)?, u_rotation(n)?);
        let [a, b] = if p.qubit == 0 { [t, n] } else { [n, t] };
        acc = [a.compose(&acc[0])?, b.compose(&acc[1])?];
    }
    Ok([1.0 - infidelity(&acc[0], u1)?, 1.0 - infidelity(&acc[1], &Unitary::identity(2))?])
}

pub fn cmd_crosstalk(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    cfg.validate()?;
    let shots = cfg.shots_or(&[Shots::Exact, Shots::Finite(10_000)]);
    let mut text = String::from("kind,N,trial,F_joint,F_q0,F_q1\n");
    let mut summary = String::new();
    let mut failures = Vec::new();
    for n in shots {
        let trials: Vec<CrosstalkTrial> = (0..cfg.trials as u64)
            .into_par_iter()
            .map(|t| crosstalk_trial(cfg, n, t))
            .collect::<crate::Result<_>>()?;
        log::info!("crosstalk: N = {n} done");
        for (i, t) in trials.iter().enumerate() {
            let _ = writeln!(text, "trial,{n},{i},{},{},{}", num(t.f_joint), num(t.f_q0), num(t.f_q1));
        }
        let j = sorted(trials.iter().map(|t| t.f_joint));
        let a = sorted(trials.iter().map(|t| t.f_q0));
        let b = sorted(trials.iter().map(|t| t.f_q1));
        for (label, q) in [("q25", 0.25), ("median", 0.5), ("q75", 0.75)] {
            let _ = writeln!(summary, "{label},{n},,{},{},{}", num(quantile(&j, q)), num(quantile(&a, q)), num(quantile(&b, q)));
        }
        if n == Shots::Exact && quantile(&j, 0.5) < 1.0 - 1e-6 {
            failures.push(format!("exact mode: median joint fidelity {} below 1 - 1e-6", quantile(&j, 0.5)));
        }
    }
    text.push_str(&summary);
    Ok(Report { text, failures })
}

// ---------------------------------------------------------------------------
// Pipeline on stored data

/// Input files for [`cmd_pipeline`]. Readout and QT-gate parameters are taken
/// from model files when given, otherwise estimated from calibration data.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineInputs {
    pub readout_data: Option<PathBuf>,
    pub readout_model: Option<PathBuf>,
    pub qt_data: Option<PathBuf>,
    pub qt_model: Option<PathBuf>,
    pub process_data: Vec<PathBuf>,
    /// Treat the process datasets as the four calibration pulses, in order,
    /// and fit the linear pulse model.
    pub fit_model: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ReadoutSource {
    Model { e10: f64, e01: f64 },
    Estimated(ReadoutEstimate),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum QtSource {
    Model(QtGateParams),
    Estimated(QtGateEstimate),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub readout: ReadoutSource,
    pub qt_gates: QtSource,
    pub processes: Vec<ProcessEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linear_model: Option<LinearGateModel>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn read_dataset(path: &Path) -> Result<TomographyDataset, CliError> {
    let ds: TomographyDataset = read_json(path)?;
    ds.validate().map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(ds)
}

/// Runs the estimators on stored datasets; no simulation happens here.
pub fn run_pipeline(inputs: &PipelineInputs) -> Result<PipelineOutput, CliError> {
    let readout = match (&inputs.readout_model, &inputs.readout_data) {
        (Some(p), _) => {
            let e: ReadoutErrors = read_json(p)?;
            e.validate().map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            ReadoutSource::Model { e10: e.e10, e01: e.e01 }
        }
        (None, Some(p)) => {
            let ds = read_dataset(p)?;
            let circuits = crate::tomo::readout_calibration_circuits();
            ds.check_aligned(&circuits).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            let pair = |i: usize| (ds.records[i].counts[0], ds.records[i].counts[1]);
            ReadoutSource::Estimated(estimate_readout_errors(pair(0), pair(1))?)
        }
        (None, None) => return Err(CliError::Usage("need --readout-model or --readout-data".into())),
    };
    let readout_errors = match &readout {
        ReadoutSource::Model { e10, e01 } => ReadoutErrors { e10: *e10, e01: *e01 },
        ReadoutSource::Estimated(e) => e.errors(),
    };
    let qt_gates = match (&inputs.qt_model, &inputs.qt_data) {
        (Some(p), _) => {
            let q: QtGateParams = read_json(p)?;
            q.validate().map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            QtSource::Model(q)
        }
        (None, Some(p)) => QtSource::Estimated(estimate_qt_gates(&read_dataset(p)?, &readout_errors, StdErrMethod::Fisher)?),
        (None, None) => return Err(CliError::Usage("need --qt-model or --qt-data".into())),
    };
    let fuzzy = FuzzyModel {
        readout: readout_errors,
        qt_gates: match &qt_gates {
            QtSource::Model(q) => *q,
            QtSource::Estimated(e) => e.params,
        },
    };
    let processes = inputs
        .process_data
        .iter()
        .map(|p| Ok(process_tomography_mle(&read_dataset(p)?, &fuzzy)?))
        .collect::<Result<Vec<_>, CliError>>()?;
    let linear_model = if inputs.fit_model {
        if processes.len() != CALIBRATION_GATES.len() {
            return Err(CliError::Usage(format!(
                "fitting the pulse model needs {} process datasets, got {}",
                CALIBRATION_GATES.len(),
                processes.len()
            )));
        }
        let points = CALIBRATION_GATES
            .iter()
            .zip(&processes)
            .map(|(&(phi, delta), e)| CalibrationPoint { phi, delta, realized: e.params })
            .collect();
        Some(fit_linear_model_with_reference(&CalibrationSet { points }, &ideal_model())?)
    } else {
        None
    };
    Ok(PipelineOutput { readout, qt_gates, processes, linear_model })
}

pub fn cmd_pipeline(inputs: &PipelineInputs) -> Result<Report, CliError> {
    let out = run_pipeline(inputs)?;
    let text = serde_json::to_string_pretty(&out).map_err(Error::from)? + "\n";
    Ok(Report { text, failures: vec![] })
}

/// Writes `report` to `out` (or stdout) and turns check failures into an
/// error when `check` is set.
pub fn emit(report: &Report, out: Option<&Path>, check: bool) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, &report.text).map_err(|e| CliError::Failed(Error::Io(e)))?,
        None => print!("{}", report.text),
    }
    for f in &report.failures {
        log::warn!("{f}");
    }
    if check && !report.failures.is_empty() {
        return Err(CliError::Check(report.failures.join("; ")));
    }
    Ok(())
}
