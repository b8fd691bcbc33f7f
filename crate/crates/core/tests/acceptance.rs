//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always reach the terminal.

use std::f64::consts::{PI, TAU};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::Rng;

use iontomo::calib::{compensate_crosstalk, decompose_two_gate, predicted_sequence_unitary};
use iontomo::cli::{
    calibrate_linear_model, check_scaling, check_synthesis, crosstalk_truth, estimate_fuzzy_model, fig2b_rows,
    fig3_batches, random_target, readout_trial, slope, ExperimentConfig, ModelOptions,
};
use iontomo::noise::{
    ideal_model, no_crosstalk_model, random_perturbed_model, random_qt_gate_params, readout_povm, CrossTalkModel,
    ReadoutErrors,
};
use iontomo::qmath::{fidelity, tensor, u_rotation, unitary_to_rotation, ComplexMatrix, RotationParams, Unitary};
use iontomo::rng;
use iontomo::sim::{exact_probabilities, GateModel, run_protocol, Circuit, GateRef, NoiseContext, Shots};
use iontomo::tomo::{estimate_qt_gates, estimate_readout_errors, qt_gate_circuits, simulate_readout_calibration, StdErrMethod};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const TRUE_READOUT: ReadoutErrors = ReadoutErrors { e10: 0.01, e01: 0.03 };

fn verdict(failures: Vec<String>, ok: String) -> Outcome {
    if failures.is_empty() {
        Ok(ok)
    } else {
        Err(failures.join("; "))
    }
}

fn scaling_law() -> Outcome {
    let cfg = ExperimentConfig { shots: Some([100, 1_000, 10_000, 100_000].map(Shots::Finite).to_vec()), ..Default::default() };
    let rows = fig2b_rows(&cfg).map_err(|e| e.to_string())?;
    let x: Vec<f64> = rows.iter().map(|r| if let Shots::Finite(n) = r.shots { (n as f64).log10() } else { f64::NAN }).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.median.log10()).collect();
    let medians: Vec<String> = rows.iter().map(|r| format!("{:.3e}", r.median)).collect();
    verdict(check_scaling(&rows), format!("medians {medians:?}, slope {:.3}", slope(&x, &y)))
}

fn calibrated_synthesis() -> Outcome {
    let cfg = ExperimentConfig { shots: Some([1_000, 10_000, 100_000].map(Shots::Finite).to_vec()), ..Default::default() };
    let batches = fig3_batches(&cfg).map_err(|e| e.to_string())?;
    let summary: Vec<String> = batches
        .iter()
        .map(|b| {
            let (r, s) = b.median_nines();
            format!("N={}: {r:.2} vs {s:.2} nines", b.shots)
        })
        .collect();
    verdict(check_synthesis(&batches), summary.join(", "))
}

fn oracle_consistency() -> Outcome {
    let mut failures = Vec::new();
    let mut r = rng::stream(301);

    let mut worst_readout = 0.0f64;
    for _ in 0..100 {
        let truth = ReadoutErrors { e10: r.random_range(0.0..0.2), e01: r.random_range(0.0..0.2) };
        let (b, d) = simulate_readout_calibration(&truth, Shots::Exact, 0).map_err(|e| e.to_string())?;
        let est = estimate_readout_errors(b, d).map_err(|e| e.to_string())?;
        worst_readout = worst_readout.max((est.e10 - truth.e10).abs()).max((est.e01 - truth.e01).abs());
    }
    if worst_readout > 1e-12 {
        failures.push(format!("readout error {worst_readout:e} > 1e-12"));
    }

    let mut worst_qt = 0.0f64;
    for s in 0..100 {
        let truth = random_qt_gate_params(0.05, s).map_err(|e| e.to_string())?;
        let ctx = NoiseContext::single(TRUE_READOUT, truth, ideal_model());
        let ds = run_protocol(&qt_gate_circuits(), &ctx, Shots::Exact, 0).map_err(|e| e.to_string())?;
        let est = estimate_qt_gates(&ds, &TRUE_READOUT, StdErrMethod::None).map_err(|e| e.to_string())?;
        for (a, b) in est.params.as_array().iter().zip(truth.as_array()) {
            worst_qt = worst_qt.max((a - b).abs());
        }
    }
    if worst_qt > 1e-6 {
        failures.push(format!("QT-gate error {worst_qt:e} > 1e-6"));
    }

    // The full chain: readout and QT-gate estimation, process tomography of
    // the calibration pulses, then the fit.
    let mut worst_fit = 0.0f64;
    for s in 0..100 {
        let truth = random_perturbed_model(0.01, rng::derive_seed(s, 0)).map_err(|e| e.to_string())?;
        let qt = random_qt_gate_params(0.01, rng::derive_seed(s, 1)).map_err(|e| e.to_string())?;
        let fuzzy = estimate_fuzzy_model(&TRUE_READOUT, &qt, Shots::Exact, s).map_err(|e| e.to_string())?;
        let ctx = NoiseContext::single(TRUE_READOUT, qt, truth);
        let fitted = calibrate_linear_model(&truth, &ctx, &fuzzy, Shots::Exact, s).map_err(|e| e.to_string())?;
        worst_fit = worst_fit.max(fitted.max_abs_diff(&truth));
    }
    if worst_fit > 1e-6 {
        failures.push(format!("linear-model error {worst_fit:e} > 1e-6"));
    }

    let cfg = ExperimentConfig { shots: Some(vec![Shots::Exact]), ..Default::default() };
    let batches = fig3_batches(&cfg).map_err(|e| e.to_string())?;
    let worst_f3 = batches[0].trials.iter().map(|t| t.inf_reconstructed).fold(0.0, f64::max);
    failures.extend(check_synthesis(&batches));
    verdict(
        failures,
        format!("readout {worst_readout:.1e}, QT gates {worst_qt:.1e}, model {worst_fit:.1e}, end-to-end 1-F {worst_f3:.1e}"),
    )
}

fn random_unitary(r: &mut impl Rng) -> Unitary {
    random_target(r).with_phase(r.random_range(0.0..TAU))
}

fn random_single_gate(r: &mut impl Rng) -> GateRef {
    match r.random_range(0..6) {
        0 => GateRef::Identity,
        1 => GateRef::SqrtX,
        2 => GateRef::X,
        3 => GateRef::SqrtY,
        4 => GateRef::Pulse { phi: r.random_range(-PI..PI), delta: r.random_range(0.0..TAU) },
        _ => GateRef::Rotation(RotationParams::new(r.random_range(0.0..PI), r.random_range(-PI..PI), r.random_range(0.0..TAU))),
    }
}

fn random_pair_gate(r: &mut impl Rng) -> GateRef {
    if r.random_bool(0.5) {
        GateRef::AddressedPulse { qubit: r.random_range(0..2), phi: r.random_range(-PI..PI), delta: r.random_range(0.0..TAU) }
    } else {
        let g = loop {
            let g = random_single_gate(r);
            if !matches!(g, GateRef::Pulse { .. }) {
                break g;
            }
        };
        GateRef::on(r.random_range(0..2), g)
    }
}

fn invariants() -> Outcome {
    let mut failures = Vec::new();
    let mut r = rng::stream(404);

    let mut povm_ok = true;
    for _ in 0..1000 {
        let e10 = r.random_range(0.0..0.5);
        let e = ReadoutErrors { e10, e01: r.random_range(0.0..0.5) };
        let (p0, p1) = readout_povm(&e).map_err(|e| e.to_string())?;
        povm_ok &= p0.add(&p1).map_err(|e| e.to_string())?.max_abs_diff(&ComplexMatrix::identity(2)) == 0.0;
    }
    if !povm_ok {
        failures.push("POVM elements do not sum to I exactly".into());
    }

    let mut worst_norm = 0.0f64;
    for i in 0..10_000 {
        let two = i % 2 == 1;
        let draw_readout = |r: &mut rng::StreamRng| ReadoutErrors { e10: r.random_range(0.0..0.3), e01: r.random_range(0.0..0.3) };
        let (ctx, c) = if two {
            let ro = [draw_readout(&mut r), draw_readout(&mut r)];
            let qt = [random_qt_gate_params(0.2, r.random()).unwrap(), random_qt_gate_params(0.2, r.random()).unwrap()];
            let ct = [CrossTalkModel::random(0.05, r.random()).unwrap(), CrossTalkModel::random(0.05, r.random()).unwrap()];
            let n = r.random_range(0..4);
            let gates: Vec<Vec<GateRef>> = (0..3).map(|_| (0..n).map(|_| random_pair_gate(&mut r)).collect()).collect();
            let c = Circuit::with_process("c", 2, gates[0].clone(), gates[1].clone(), gates[2].clone()).unwrap();
            (NoiseContext::two_qubit(ro, qt, ct), c)
        } else {
            let ro = draw_readout(&mut r);
            let qt = random_qt_gate_params(0.2, r.random()).unwrap();
            let m = random_perturbed_model(0.05, r.random()).unwrap();
            let n = r.random_range(0..4);
            let gates: Vec<Vec<GateRef>> = (0..3).map(|_| (0..n).map(|_| random_single_gate(&mut r)).collect()).collect();
            let c = Circuit::with_process("c", 1, gates[0].clone(), gates[1].clone(), gates[2].clone()).unwrap();
            (NoiseContext::single(ro, qt, m), c)
        };
        let p = exact_probabilities(&c, &ctx).map_err(|e| e.to_string())?;
        if p.iter().any(|x| *x < -1e-15) {
            failures.push(format!("negative probability in circuit {i}"));
        }
        worst_norm = worst_norm.max((p.iter().sum::<f64>() - 1.0).abs());
    }
    if worst_norm > 1e-12 {
        failures.push(format!("probability normalization off by {worst_norm:e}"));
    }

    let mut worst_fid = 0.0f64;
    for _ in 0..10_000 {
        let (u, v) = (random_unitary(&mut r), random_unitary(&mut r));
        let f = fidelity(&u, &v).map_err(|e| e.to_string())?;
        let back = fidelity(&v, &u).map_err(|e| e.to_string())?;
        let phased = fidelity(&u.with_phase(r.random_range(0.0..TAU)), &v).map_err(|e| e.to_string())?;
        let own = fidelity(&u, &u).map_err(|e| e.to_string())?;
        if !(-1e-15..=1.0 + 1e-15).contains(&f) {
            failures.push(format!("fidelity {f} out of [0, 1]"));
            break;
        }
        worst_fid = worst_fid.max((f - back).abs()).max((f - phased).abs()).max((own - 1.0).abs());
    }
    if worst_fid > 1e-12 {
        failures.push(format!("fidelity symmetry/phase invariance off by {worst_fid:e}"));
    }

    let mut worst_round = 0.0f64;
    for _ in 0..10_000 {
        // Matrices come back equal up to the sign fixed by the canonical form.
        let u = random_target(&mut r);
        let p = unitary_to_rotation(&u).map_err(|e| e.to_string())?;
        if !(0.0..TAU).contains(&p.delta) || !(0.0..=PI).contains(&p.theta) {
            failures.push(format!("extracted parameters {p:?} outside the canonical ranges"));
            break;
        }
        let back = u_rotation(p).map_err(|e| e.to_string())?;
        let diff = back.matrix().max_abs_diff(u.matrix()).min(back.matrix().max_abs_diff(u.with_phase(PI).matrix()));
        worst_round = worst_round.max(diff);

        // Parameters drawn in the canonical domain come back unchanged.
        let q = RotationParams::new(r.random_range(0.0..PI), r.random_range(-PI..PI), r.random_range(0.0..PI));
        let q2 = unitary_to_rotation(&u_rotation(q).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let dphi = (q.phi - q2.phi + PI).rem_euclid(TAU) - PI;
        worst_round = worst_round.max((q.theta - q2.theta).abs()).max(dphi.abs()).max((q.delta - q2.delta).abs());
    }
    if worst_round > 1e-12 {
        failures.push(format!("rotation round trip off by {worst_round:e}"));
    }

    let mut worst_dec = 0.0f64;
    for _ in 0..1000 {
        let t = random_target(&mut r);
        let plan = decompose_two_gate(&t, &ideal_model()).map_err(|e| e.to_string())?;
        worst_dec = worst_dec.max(1.0 - plan.predicted_fidelity);
    }
    if worst_dec > 1e-10 {
        failures.push(format!("two-pulse decomposition infidelity {worst_dec:e} > 1e-10"));
    }
    verdict(
        failures,
        format!("normalization {worst_norm:.1e}, fidelity {worst_fid:.1e}, round trip {worst_round:.1e}, decomposition {worst_dec:.1e}"),
    )
}

fn readout_coverage() -> Outcome {
    let runs = 1000;
    let mut covered = 0;
    for t in 0..runs {
        let (_, _, ok) = readout_trial(&TRUE_READOUT, Shots::Finite(100_000), rng::derive_seed(505, t)).map_err(|e| e.to_string())?;
        covered += ok as usize;
    }
    let frac = covered as f64 / runs as f64;
    let msg = format!("{covered}/{runs} runs within 3σ");
    if frac >= 0.98 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn crosstalk_compensation() -> Outcome {
    let mut failures = Vec::new();
    let mut r = rng::stream(606);
    let mut good = 0;
    let mut worst: f64 = 1.0;
    for t in 0..100 {
        let truth = crosstalk_truth(0.01, &ModelOptions::default(), rng::derive_seed(606, t)).map_err(|e| e.to_string())?;
        let u1 = random_target(&mut r);
        let plan = compensate_crosstalk(&u1, &Unitary::identity(2), &truth[0], &truth[1]).map_err(|e| e.to_string())?;
        worst = worst.min(plan.predicted_fidelity);
        good += (plan.predicted_fidelity >= 1.0 - 1e-6) as usize;
    }
    if good < 95 {
        failures.push(format!("only {good}/100 trials reach 1 - 1e-6"));
    }
    let clean = CrossTalkModel { target: ideal_model(), neighbor: no_crosstalk_model() };
    let mut worst_clean = 0.0f64;
    for _ in 0..20 {
        let u1 = random_target(&mut r);
        let plan = compensate_crosstalk(&u1, &Unitary::identity(2), &clean, &clean).map_err(|e| e.to_string())?;
        // Check the plan independently of the optimizer's own bookkeeping.
        let achieved = predicted_sequence_unitary(&plan, &GateModel::CrossTalk([clean, clean]))
            .map_err(|e| e.to_string())?;
        let target = tensor(&u1, &Unitary::identity(2)).map_err(|e| e.to_string())?;
        worst_clean = worst_clean.max(1.0 - fidelity(&achieved, &target).map_err(|e| e.to_string())?);
    }
    if worst_clean > 1e-10 {
        failures.push(format!("cross-talk-free pair reaches only 1 - {worst_clean:e}"));
    }
    verdict(failures, format!("{good}/100 trials at 1 - 1e-6 (worst F {worst:.9}), cross-talk-free 1-F {worst_clean:.1e}"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_iontomo");
    let commands: [(&str, &[&str]); 4] = [
        ("readout-calib", &["--trials", "20", "--shots", "1e4,exact"]),
        ("fig2b", &["--trials", "10", "--shots", "100,1000"]),
        ("fig3", &["--trials", "5", "--shots", "1000,exact"]),
        ("crosstalk", &["--trials", "3", "--shots", "exact,1000"]),
    ];
    let mut failures = Vec::new();
    for (name, args) in commands {
        let mut outputs = Vec::new();
        for (run, threads) in ["1", "4"].iter().enumerate() {
            let out = dir.path().join(format!("{name}-{run}"));
            let status = Command::new(bin)
                .arg(name)
                .args(args)
                .args(["--seed", "77", "--out"])
                .arg(&out)
                .env("RAYON_NUM_THREADS", threads)
                .status()
                .map_err(|e| e.to_string())?;
            if !status.success() {
                failures.push(format!("{name} exited with {status}"));
            }
            outputs.push(std::fs::read(&out).unwrap_or_default());
        }
        if outputs[0].is_empty() || outputs[0] != outputs[1] {
            failures.push(format!("{name} outputs differ between runs"));
        }
    }
    verdict(failures, "readout-calib, fig2b, fig3, crosstalk byte-identical across runs and thread counts".into())
}

fn main() -> ExitCode {
    // Silence expected clamping warnings from random draws.
    let _ = env_logger::builder().is_test(true).filter_level(log::LevelFilter::Error).try_init();
    let criteria: [Criterion; 7] = [
        ("scaling law of tomography-gate infidelity", scaling_law),
        ("calibrated two-pulse synthesis", calibrated_synthesis),
        ("oracle consistency", oracle_consistency),
        ("invariants", invariants),
        ("readout statistical coverage", readout_coverage),
        ("cross-talk compensation", crosstalk_compensation),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} ({name}): PASS [{secs:.1}s] {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL [{secs:.1}s] {detail}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
