use std::f64::consts::{PI, TAU};

use proptest::prelude::*;

use iontomo::calib::{decompose_two_gate, fit_linear_model, CalibrationPoint, CalibrationSet, CALIBRATION_GATES};
use iontomo::noise::{ideal_model, LinearGateModel, QtGateParams, ReadoutErrors};
use iontomo::qmath::{fidelity, u_rotation, unitary_to_rotation, RotationParams};
use iontomo::sim::{exact_probabilities, Circuit, GateRef, NoiseContext, Shots};

fn params() -> impl Strategy<Value = RotationParams> {
    (0.0..PI, -PI..PI, 0.0..TAU).prop_map(|(t, p, d)| RotationParams::new(t, p, d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rotation_round_trip_up_to_sign(p in params()) {
        let u = u_rotation(p).unwrap();
        let back = u_rotation(unitary_to_rotation(&u).unwrap()).unwrap();
        let diff = back.matrix().max_abs_diff(u.matrix()).min(back.matrix().max_abs_diff(u.with_phase(PI).matrix()));
        prop_assert!(diff < 1e-12);
    }

    #[test]
    fn fidelity_is_symmetric_and_bounded(p in params(), q in params(), phase in 0.0..TAU) {
        let (u, v) = (u_rotation(p).unwrap(), u_rotation(q).unwrap());
        let f = fidelity(&u, &v).unwrap();
        prop_assert!((0.0..=1.0 + 1e-15).contains(&f));
        prop_assert!((f - fidelity(&v, &u).unwrap()).abs() < 1e-14);
        prop_assert!((f - fidelity(&u.with_phase(phase), &v).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn probabilities_are_normalized(
        pulses in prop::collection::vec((-PI..PI, 0.0..TAU), 0..5),
        e10 in 0.0..0.3, e01 in 0.0..0.3,
    ) {
        let prep: Vec<GateRef> = pulses.iter().map(|&(phi, delta)| GateRef::Pulse { phi, delta }).collect();
        let c = Circuit::new("c", 1, prep, vec![GateRef::SqrtY]).unwrap();
        let ctx = NoiseContext::single(ReadoutErrors { e10, e01 }, QtGateParams::IDEAL, ideal_model());
        let p = exact_probabilities(&c, &ctx).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn two_pulse_synthesis_is_exact_under_the_ideal_model(p in params()) {
        let plan = decompose_two_gate(&u_rotation(p).unwrap(), &ideal_model()).unwrap();
        prop_assert!(plan.predicted_fidelity >= 1.0 - 1e-10);
        prop_assert_eq!(plan.pulses.len(), 2);
    }

    #[test]
    fn linear_fit_recovers_exact_models(noise in prop::array::uniform9(-0.03..0.03f64)) {
        let mut a = ideal_model().a;
        for (v, n) in a.iter_mut().flatten().zip(noise) {
            *v += n;
        }
        let truth = LinearGateModel::new(a).unwrap();
        let points = CALIBRATION_GATES
            .iter()
            .map(|&(phi, delta)| CalibrationPoint {
                phi,
                delta,
                realized: unitary_to_rotation(&u_rotation(truth.realize(phi, delta)).unwrap()).unwrap(),
            })
            .collect();
        let fitted = fit_linear_model(&CalibrationSet { points }).unwrap();
        prop_assert!(fitted.max_abs_diff(&truth) < 1e-9);
    }

    #[test]
    fn shots_parse_round_trip(n in 1u64..1_000_000_000) {
        let s: Shots = n.to_string().parse().unwrap();
        prop_assert_eq!(s, Shots::Finite(n));
        prop_assert_eq!(s.to_string().parse::<Shots>().unwrap(), s);
    }
}
