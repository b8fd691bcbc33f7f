//! Circuits, their noisy realization, exact outcome probabilities and
//! finite-shot sampling.
//!
//! A circuit starts from `|0…0⟩`, applies its preparation gates, the process
//! under test, and the basis-change gates (all in time order), and ends with a
//! per-qubit noisy z-readout. Evolving the state through the basis change and
//! then measuring the readout POVM gives the same statistics as measuring the
//! conjugated ("fuzzy") POVM on the state before the basis change.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::noise::{crosstalk_effect, CrossTalkModel, LinearGateModel, QtGateParams, ReadoutErrors};
use crate::qmath::{tensor, u_rotation, z_rotation, RotationParams, Unitary};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub enum GateRef {
    Identity,
    /// Realized as `U(a, 0, b)`.
    SqrtX,
    /// Realized as the realized `√X` applied twice.
    X,
    /// Realized as `Z(c)·√X·Z(−c)`.
    SqrtY,
    /// Single-qubit pulse, realized through the linear gate model.
    Pulse { phi: f64, delta: f64 },
    /// Pulse addressed to one ion of a pair, realized through the cross-talk
    /// model of that ion.
    AddressedPulse { qubit: usize, phi: f64, delta: f64 },
    /// A fixed rotation applied exactly. Used for the process under test.
    Rotation(RotationParams),
    /// A single-qubit gate acting on one qubit of a two-qubit register.
    On { qubit: usize, gate: Box<GateRef> },
}

impl GateRef {
    pub fn on(qubit: usize, gate: GateRef) -> Self {
        GateRef::On { qubit, gate: Box::new(gate) }
    }

    fn validate(&self, n_qubits: usize) -> Result<()> {
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match self {
            GateRef::Identity => Ok(()),
            GateRef::SqrtX | GateRef::X | GateRef::SqrtY | GateRef::Pulse { .. } | GateRef::Rotation(_)
                if n_qubits != 1 =>
            {
                Err(invalid(format!("{self:?} needs a single-qubit circuit; wrap it in GateRef::On")))
            }
            GateRef::SqrtX | GateRef::X | GateRef::SqrtY => Ok(()),
            GateRef::Pulse { phi, delta } if finite(&[*phi, *delta]) => Ok(()),
            GateRef::Rotation(p) if p.is_finite() => Ok(()),
            GateRef::AddressedPulse { qubit, phi, delta } => {
                if n_qubits != 2 || *qubit > 1 {
                    Err(invalid("addressed pulses need a two-qubit circuit and qubit index 0 or 1"))
                } else if !finite(&[*phi, *delta]) {
                    Err(invalid("pulse angles must be finite"))
                } else {
                    Ok(())
                }
            }
            GateRef::On { qubit, gate } => {
                if n_qubits != 2 || *qubit > 1 {
                    return Err(invalid("GateRef::On needs a two-qubit circuit and qubit index 0 or 1"));
                }
                if matches!(**gate, GateRef::On { .. } | GateRef::AddressedPulse { .. } | GateRef::Pulse { .. }) {
                    return Err(invalid("GateRef::On wraps fixed or tomography gates only"));
                }
                gate.validate(1)
            }
            _ => Err(invalid("gate angles must be finite")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    pub id: String,
    pub n_qubits: usize,
    pub prep: Vec<GateRef>,
    pub process: Vec<GateRef>,
    pub meas_basis_change: Vec<GateRef>,
}

impl Circuit {
    pub fn new(id: impl Into<String>, n_qubits: usize, prep: Vec<GateRef>, meas_basis_change: Vec<GateRef>) -> Result<Self> {
        Self::with_process(id, n_qubits, prep, Vec::new(), meas_basis_change)
    }

    pub fn with_process(
        id: impl Into<String>,
        n_qubits: usize,
        prep: Vec<GateRef>,
        process: Vec<GateRef>,
        meas_basis_change: Vec<GateRef>,
    ) -> Result<Self> {
        let c = Self { id: id.into(), n_qubits, prep, process, meas_basis_change };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.n_qubits, 1 | 2) {
            return Err(invalid("circuits have one or two qubits"));
        }
        self.gates().try_for_each(|g| g.validate(self.n_qubits))
    }

    /// All gates in time order.
    pub fn gates(&self) -> impl Iterator<Item = &GateRef> {
        self.prep.iter().chain(&self.process).chain(&self.meas_basis_change)
    }

    pub fn depth(&self) -> usize {
        self.prep.len() + self.process.len() + self.meas_basis_change.len()
    }

    pub fn n_outcomes(&self) -> usize {
        1 << self.n_qubits
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum GateModel {
    Linear(LinearGateModel),
    /// Cross-talk models of pulses addressed to qubit 0 and qubit 1.
    CrossTalk([CrossTalkModel; 2]),
}

/// Everything needed to turn a circuit into concrete unitaries and readout
/// effects.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseContext {
    pub readout: Vec<ReadoutErrors>,
    pub qt_gates: Vec<QtGateParams>,
    pub gate_model: GateModel,
}

impl NoiseContext {
    pub fn single(readout: ReadoutErrors, qt_gates: QtGateParams, model: LinearGateModel) -> Self {
        Self { readout: vec![readout], qt_gates: vec![qt_gates], gate_model: GateModel::Linear(model) }
    }

    pub fn ideal() -> Self {
        Self::single(ReadoutErrors::IDEAL, QtGateParams::IDEAL, crate::noise::ideal_model())
    }

    pub fn two_qubit(readout: [ReadoutErrors; 2], qt_gates: [QtGateParams; 2], crosstalk: [CrossTalkModel; 2]) -> Self {
        Self { readout: readout.to_vec(), qt_gates: qt_gates.to_vec(), gate_model: GateModel::CrossTalk(crosstalk) }
    }

    pub fn n_qubits(&self) -> usize {
        self.readout.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.readout.len();
        if !matches!(n, 1 | 2) || self.qt_gates.len() != n {
            return Err(invalid("noise context must describe one or two qubits consistently"));
        }
        match (&self.gate_model, n) {
            (GateModel::Linear(m), 1) => m.validate()?,
            (GateModel::CrossTalk(cts), 2) => cts.iter().try_for_each(|c| c.validate())?,
            _ => return Err(invalid("gate model does not match the number of qubits")),
        }
        self.readout.iter().try_for_each(|r| r.validate())?;
        if self.qt_gates.iter().flat_map(|q| q.as_array()).all(f64::is_finite) {
            Ok(())
        } else {
            Err(invalid("QT gate parameters must be finite"))
        }
    }

    /// Single-qubit view of qubit `q` (used for local gates of a pair).
    fn local(&self, q: usize) -> Self {
        Self {
            readout: vec![self.readout[q]],
            qt_gates: vec![self.qt_gates[q]],
            gate_model: GateModel::Linear(crate::noise::ideal_model()),
        }
    }
}

fn sqrt_x(p: &QtGateParams) -> Result<Unitary> {
    u_rotation(RotationParams::new(p.a, 0.0, p.b))
}

/// Concrete unitary implementing `g` under `ctx`.
pub fn realize_gate(g: &GateRef, ctx: &NoiseContext) -> Result<Unitary> {
    let n = ctx.n_qubits();
    g.validate(n)?;
    match g {
        GateRef::Identity => Ok(Unitary::identity(1 << n)),
        GateRef::SqrtX => sqrt_x(&ctx.qt_gates[0]),
        GateRef::X => {
            let s = sqrt_x(&ctx.qt_gates[0])?;
            s.compose(&s)
        }
        GateRef::SqrtY => {
            let c = ctx.qt_gates[0].c;
            let s = sqrt_x(&ctx.qt_gates[0])?;
            z_rotation(c)?.compose(&s)?.compose(&z_rotation(-c)?)
        }
        GateRef::Pulse { phi, delta } => match &ctx.gate_model {
            GateModel::Linear(m) => u_rotation(m.realize(*phi, *delta)),
            GateModel::CrossTalk(_) => Err(invalid("single-qubit pulse in a cross-talk context")),
        },
        GateRef::AddressedPulse { qubit, phi, delta } => match &ctx.gate_model {
            GateModel::CrossTalk(cts) => {
                let (t, nb) = crosstalk_effect(&cts[*qubit], *phi, *delta);
                let (t, nb) = (u_rotation(t)?, u_rotation(nb)?);
                if *qubit == 0 {
                    tensor(&t, &nb)
                } else {
                    tensor(&nb, &t)
                }
            }
            GateModel::Linear(_) => Err(invalid("addressed pulse needs a cross-talk context")),
        },
        GateRef::Rotation(p) => u_rotation(*p),
        GateRef::On { qubit, gate } => {
            let local = realize_gate(gate, &ctx.local(*qubit))?;
            let id = Unitary::identity(2);
            if *qubit == 0 {
                tensor(&local, &id)
            } else {
                tensor(&id, &local)
            }
        }
    }
}

/// Final state vector of a circuit started in `|0…0⟩`.
fn evolve(c: &Circuit, ctx: &NoiseContext) -> Result<Vec<Complex64>> {
    let d = 1 << c.n_qubits;
    let mut psi = vec![Complex64::new(0.0, 0.0); d];
    psi[0] = Complex64::new(1.0, 0.0);
    let mut next = psi.clone();
    for g in c.gates() {
        let u = realize_gate(g, ctx)?;
        let m = u.matrix();
        for (i, out) in next.iter_mut().enumerate() {
            *out = (0..d).map(|k| m[(i, k)] * psi[k]).sum();
        }
        std::mem::swap(&mut psi, &mut next);
    }
    Ok(psi)
}

/// Outcome probabilities `p_k = Tr(M_k ρ_out)` with per-qubit readout effects.
/// Two-qubit outcomes are indexed `2·k₀ + k₁`.
pub fn exact_probabilities(c: &Circuit, ctx: &NoiseContext) -> Result<Vec<f64>> {
    c.validate()?;
    if c.n_qubits != ctx.n_qubits() {
        return Err(Error::DimensionMismatch { expected: ctx.n_qubits(), got: c.n_qubits });
    }
    let psi = evolve(c, ctx)?;
    let pops: Vec<f64> = psi.iter().map(|z| z.norm_sqr()).collect();
    let effects: Vec<([f64; 2], [f64; 2])> = ctx.readout.iter().map(|r| r.effect_diagonals()).collect();
    let n = c.n_qubits;
    let d = 1 << n;
    let bit = |idx: usize, q: usize| (idx >> (n - 1 - q)) & 1;
    let probs = (0..d)
        .map(|k| {
            (0..d)
                .map(|i| {
                    let w: f64 = (0..n)
                        .map(|q| {
                            let (e0, e1) = effects[q];
                            let eff = if bit(k, q) == 0 { e0 } else { e1 };
                            eff[bit(i, q)]
                        })
                        .product();
                    w * pops[i]
                })
                .sum()
        })
        .collect();
    Ok(probs)
}

/// Number of shots per circuit, or the infinite-statistics oracle mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Shots {
    Finite(u64),
    #[serde(with = "exact_tag")]
    Exact,
}

mod exact_tag {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("exact")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "exact" {
            Ok(())
        } else {
            Err(serde::de::Error::custom(format!("expected \"exact\" or a shot count, got {s:?}")))
        }
    }
}

impl std::fmt::Display for Shots {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shots::Finite(n) => write!(f, "{n}"),
            Shots::Exact => f.write_str("exact"),
        }
    }
}

impl std::str::FromStr for Shots {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("exact") {
            return Ok(Shots::Exact);
        }
        // Accept forms like 1e4 as well as plain integers.
        let v: f64 = s.trim().parse().map_err(|_| invalid(format!("bad shot count {s:?}")))?;
        if v >= 1.0 && v.fract() == 0.0 && v < 1e15 {
            Ok(Shots::Finite(v as u64))
        } else {
            Err(invalid(format!("shot count must be a positive integer, got {s:?}")))
        }
    }
}

/// Multinomial draw of `shots` outcomes from `probs` via conditional binomials.
pub fn sample_multinomial(probs: &[f64], shots: u64, rng: &mut impl Rng) -> Vec<u64> {
    let mut counts = vec![0; probs.len()];
    let mut left = shots;
    let mut mass = 1.0;
    for (k, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if k + 1 == probs.len() {
            counts[k] = left;
            break;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let n = Binomial::new(left, q).expect("probability in [0, 1]").sample(rng);
        counts[k] = n;
        left -= n;
        mass -= p;
    }
    counts
}

pub fn sample_counts(c: &Circuit, ctx: &NoiseContext, shots: u64, seed: u64) -> Result<Vec<u64>> {
    if shots == 0 {
        return Err(invalid("shot count must be at least 1"));
    }
    let p = exact_probabilities(c, ctx)?;
    Ok(sample_multinomial(&p, shots, &mut rng::stream(seed)))
}

/// Outcome counts of one circuit. In exact mode `counts` are probabilities
/// and `shots` is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitCounts {
    pub circuit_id: String,
    pub counts: Vec<f64>,
    pub shots: f64,
}

impl CircuitCounts {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.counts.len(), 2 | 4) {
            return Err(invalid(format!("{}: expected 2 or 4 outcome counts, got {}", self.circuit_id, self.counts.len())));
        }
        if !(self.shots.is_finite() && self.shots > 0.0) {
            return Err(invalid(format!("{}: shots must be positive", self.circuit_id)));
        }
        if self.counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(invalid(format!("{}: counts must be finite and non-negative", self.circuit_id)));
        }
        let total: f64 = self.counts.iter().sum();
        if (total - self.shots).abs() > 1e-9 * self.shots.max(1.0) {
            return Err(invalid(format!("{}: counts sum to {total} but shots = {}", self.circuit_id, self.shots)));
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.counts.iter().map(|c| c / self.shots).collect()
    }

    /// Fractional counts mark infinite-statistics data.
    pub fn is_exact(&self) -> bool {
        self.counts.iter().any(|c| c.fract() != 0.0)
    }

    /// Marginal counts of one qubit of a two-qubit record.
    pub fn marginal(&self, qubit: usize) -> Result<CircuitCounts> {
        if self.counts.len() != 4 || qubit > 1 {
            return Err(invalid("marginals are taken from two-qubit records"));
        }
        let c = &self.counts;
        let counts = if qubit == 0 { vec![c[0] + c[1], c[2] + c[3]] } else { vec![c[0] + c[2], c[1] + c[3]] };
        Ok(CircuitCounts { circuit_id: self.circuit_id.clone(), counts, shots: self.shots })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TomographyDataset {
    pub records: Vec<CircuitCounts>,
}

impl TomographyDataset {
    pub fn validate(&self) -> Result<()> {
        self.records.iter().try_for_each(|r| r.validate())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_exact(&self) -> bool {
        self.records.iter().any(|r| r.is_exact())
    }

    /// Checks that records line up one-to-one with `circuits`.
    pub fn check_aligned(&self, circuits: &[Circuit]) -> Result<()> {
        self.validate()?;
        if self.records.len() != circuits.len() {
            return Err(invalid(format!("dataset has {} records, protocol has {} circuits", self.records.len(), circuits.len())));
        }
        for (r, c) in self.records.iter().zip(circuits) {
            if r.circuit_id != c.id || r.counts.len() != c.n_outcomes() {
                return Err(invalid(format!("record {:?} does not match circuit {:?}", r.circuit_id, c.id)));
            }
        }
        Ok(())
    }

    pub fn marginal(&self, qubit: usize) -> Result<TomographyDataset> {
        Ok(TomographyDataset { records: self.records.iter().map(|r| r.marginal(qubit)).collect::<Result<_>>()? })
    }
}

/// Runs every circuit once, drawing circuit `i` from stream `(seed, i)`.
pub fn run_protocol(circuits: &[Circuit], ctx: &NoiseContext, shots: Shots, seed: u64) -> Result<TomographyDataset> {
    ctx.validate()?;
    let records = circuits
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let p = exact_probabilities(c, ctx)?;
            let (counts, total) = match shots {
                Shots::Exact => (p, 1.0),
                Shots::Finite(0) => return Err(invalid("shot count must be at least 1")),
                Shots::Finite(n) => {
                    let draw = sample_multinomial(&p, n, &mut rng::substream(seed, &[i as u64]));
                    (draw.into_iter().map(|x| x as f64).collect(), n as f64)
                }
            };
            Ok(CircuitCounts { circuit_id: c.id.clone(), counts, shots: total })
        })
        .collect::<Result<_>>()?;
    Ok(TomographyDataset { records })
}
