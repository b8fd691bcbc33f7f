use iontomo::cli::{fig3_batches, random_target, ExperimentConfig};
use iontomo::noise::{ideal_model, random_qt_gate_params, ReadoutErrors};
use iontomo::qmath::{infidelity, unitary_to_rotation};
use iontomo::rng::{derive_path, stream};
use iontomo::sim::{run_protocol, GateRef, NoiseContext, Shots};
use iontomo::tomo::{process_tomography_mle, standard_protocol_circuits, FuzzyModel};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// Same data, two models: the one that knows the SPAM errors should win.
#[test]
fn fuzzy_model_beats_ideal_model_on_shared_data() {
    let readout = ReadoutErrors { e10: 0.01, e01: 0.03 };
    let trials = 100u64;
    let (mut fuzzy_inf, mut ideal_inf, mut wins) = (Vec::new(), Vec::new(), 0);
    for t in 0..trials {
        let qt = random_qt_gate_params(0.01, derive_path(3, &[t, 0])).unwrap();
        let truth = random_target(&mut stream(derive_path(3, &[t, 1])));
        let params = unitary_to_rotation(&truth).unwrap();
        let circuits = standard_protocol_circuits(&[GateRef::Rotation(params)]).unwrap();
        let ctx = NoiseContext::single(readout, qt, ideal_model());
        let data = run_protocol(&circuits, &ctx, Shots::Finite(10_000), derive_path(3, &[t, 2])).unwrap();

        let correct = FuzzyModel { readout, qt_gates: qt };
        let a = infidelity(&process_tomography_mle(&data, &correct).unwrap().unitary, &truth).unwrap();
        let b = infidelity(&process_tomography_mle(&data, &FuzzyModel::ideal()).unwrap().unitary, &truth).unwrap();
        wins += usize::from(a < b);
        fuzzy_inf.push(a);
        ideal_inf.push(b);
    }
    let (mf, mi) = (median(fuzzy_inf), median(ideal_inf));
    assert!(mf < mi, "median infidelity: fuzzy {mf:e}, ideal {mi:e}");
    assert!(wins > trials as usize / 2, "fuzzy model wins {wins}/{trials}");
}

#[test]
fn standard_plans_do_not_depend_on_shot_count() {
    let cfg = ExperimentConfig {
        trials: 4,
        shots: Some(vec![Shots::Finite(1_000), Shots::Finite(100_000)]),
        ..Default::default()
    };
    let batches = fig3_batches(&cfg).unwrap();
    let standard = |k: usize| batches[k].trials.iter().map(|t| t.f_standard).collect::<Vec<_>>();
    assert_eq!(standard(0), standard(1));
    assert_ne!(
        batches[0].trials.iter().map(|t| t.f_reconstructed).collect::<Vec<_>>(),
        batches[1].trials.iter().map(|t| t.f_reconstructed).collect::<Vec<_>>()
    );
}
