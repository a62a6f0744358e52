use causal_order_lab::causal_order::{apply_quantum_diffeo, order_product};
use causal_order_lab::geometry::{
    pushforward_metric, Diffeomorphism, MetricField, PointMass, SpacetimePoint, WeakField,
};
use causal_order_lab::invariance::{trial_rng, DiffeoSampler};
use causal_order_lab::quantum::{
    default_omega, order_state, postselect_order_qubit, protocol_timing, run_switch_protocol,
    spin_evolve, tomography, BlochVector, LabeledRegister, QuantumState, Role,
};
use causal_order_lab::scenarios::{
    gravitational_switch, superposed_paths_switch, GravitationalSwitchParams, SuperposedPathsParams,
};
use causal_order_lab::worldlines::{
    detect_coincidences, proper_time, CurveLabel, Worldline, CROSSING_TOL,
};
use num_complex::Complex64;
use proptest::prelude::*;

fn point(t: f64, x: f64) -> SpacetimePoint {
    SpacetimePoint::new(vec![t, x]).unwrap()
}

/// Boost, shear wave and translation with drawn parameters.
fn diffeo() -> impl Strategy<Value = Diffeomorphism> {
    (
        -0.6..0.6f64,
        -0.3..0.3f64,
        0.2..1.5f64,
        0.0..6.0f64,
        -2.0..2.0f64,
        -2.0..2.0f64,
    )
        .prop_map(|(v, amp, k, phase, dt, dx)| {
            Diffeomorphism::chain(&[
                Diffeomorphism::boost(2, 1, v).unwrap(),
                Diffeomorphism::shear_wave(2, 0, 1, amp, k, phase).unwrap(),
                Diffeomorphism::translation(&[dt, dx]),
            ])
            .unwrap()
        })
}

fn weak_field() -> MetricField {
    MetricField::new(
        WeakField::new(
            2,
            vec![PointMass {
                position: vec![0.4],
                mass: 0.003,
            }],
            0.05,
        )
        .unwrap(),
    )
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn diffeo_round_trip(phi in diffeo(), t in -3.0..3.0f64, x in -3.0..3.0f64) {
        let p = point(t, x);
        prop_assert!(phi.inverse(&phi.forward(&p)).chart_distance(&p) < 1e-9);
        prop_assert!(phi.forward(&phi.inverse(&p)).chart_distance(&p) < 1e-9);
    }

    #[test]
    fn pushforward_composes(phi in diffeo(), psi in diffeo(), t in -2.0..2.0f64, x in -2.0..2.0f64) {
        let g = weak_field();
        let composed = pushforward_metric(&phi.then(&psi).unwrap(), &g).unwrap();
        let stepwise = pushforward_metric(&psi, &pushforward_metric(&phi, &g).unwrap()).unwrap();
        let p = point(t, x);
        prop_assert!((composed.eval(&p) - stepwise.eval(&p)).amax() < 1e-7);
    }

    #[test]
    fn proper_time_is_diffeo_invariant(phi in diffeo(), v in -0.8..0.8f64, x0 in -1.0..1.0f64) {
        let g = weak_field();
        let gamma = Worldline::uniform_velocity(&[x0], &[v], (0.0, 3.0), CurveLabel::TestParticle).unwrap();
        let tau = proper_time(&gamma, &g, 0.0, 3.0).unwrap();
        let pushed = proper_time(&gamma.pushforward(&phi).unwrap(), &pushforward_metric(&phi, &g).unwrap(), 0.0, 3.0).unwrap();
        prop_assert!(rel(tau, pushed) < 1e-6, "{} vs {}", tau, pushed);
    }

    #[test]
    fn proper_time_additive_and_monotone(v in -0.85..0.85f64, a in 0.0..1.0f64, b in 1.0..2.0f64, c in 2.0..3.0f64) {
        let g = weak_field();
        let gamma = Worldline::uniform_velocity(&[0.1], &[v], (0.0, 3.0), CurveLabel::TestParticle).unwrap();
        let whole = proper_time(&gamma, &g, a, c).unwrap();
        let parts = proper_time(&gamma, &g, a, b).unwrap() + proper_time(&gamma, &g, b, c).unwrap();
        prop_assert!(rel(whole, parts) < 1e-9, "rel {:e}", rel(whole, parts));
        prop_assert!(proper_time(&gamma, &g, a, b).unwrap() < whole);
    }

    #[test]
    fn coincidences_are_covariant(phi in diffeo(), v0 in -0.7..0.7f64, v1 in -0.7..0.7f64) {
        prop_assume!((v0 - v1).abs() > 0.1);
        // both lines pass through (1.5, 0.2)
        let g0 = Worldline::uniform_velocity(&[0.2 - 1.5 * v0], &[v0], (0.0, 3.0), CurveLabel::TestParticle).unwrap();
        let g1 = Worldline::uniform_velocity(&[0.2 - 1.5 * v1], &[v1], (0.0, 3.0), CurveLabel::System1).unwrap();
        let hits = detect_coincidences(&g0.pushforward(&phi).unwrap(), &g1.pushforward(&phi).unwrap(), CROSSING_TOL).unwrap();
        prop_assert_eq!(hits.len(), 1);
        prop_assert!(hits[0].point.chart_distance(&phi.forward(&point(1.5, 0.2))) < 1e-7);
        prop_assert!((hits[0].lambda0 - 1.5).abs() < 1e-7);
    }

    #[test]
    fn spin_evolution_is_unitary(re in -1.0..1.0f64, im in -1.0..1.0f64, dt in -10.0..10.0f64, omega in -3.0..3.0f64) {
        let a = Complex64::new(re, im);
        let n = (a.norm_sqr() + 1.0).sqrt();
        let state = QuantumState::single(
            LabeledRegister::qubit(Role::Spin),
            nalgebra::DVector::from_vec(vec![a / n, Complex64::new(1.0 / n, 0.0)]),
        ).unwrap();
        let evolved = spin_evolve(&state, dt, omega).unwrap();
        prop_assert!((evolved.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn postselection_matches_amplitudes(theta in 0.0..std::f64::consts::PI, phase in 0.0..6.3f64) {
        let alpha = Complex64::new((theta / 2.0).cos(), 0.0);
        let beta = Complex64::from_polar((theta / 2.0).sin(), phase);
        let ps = postselect_order_qubit(&order_state(alpha, beta).unwrap()).unwrap();
        prop_assert!((ps.probability - 0.5).abs() < 1e-12);
        prop_assert!(tomography(&ps.rho).unwrap().distance(&BlochVector::of_amplitudes(alpha, beta)) < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn protocol_is_equivariant(trial in 0usize..10_000, theta in 0.1..3.0f64) {
        let s = superposed_paths_switch(&SuperposedPathsParams::default()).unwrap()
            .with_amplitudes(Complex64::new((theta / 2.0).cos(), 0.0), Complex64::new(0.0, (theta / 2.0).sin()))
            .unwrap();
        let mut rng = trial_rng(99, trial);
        let phi_a = DiffeoSampler::for_branch(&s.branch_a).sample(&mut rng).unwrap();
        let phi_b = DiffeoSampler::for_branch(&s.branch_b).sample(&mut rng).unwrap();
        let moved = apply_quantum_diffeo(&s, &phi_a, &phi_b).unwrap();
        let omega = default_omega(&protocol_timing(&s).unwrap());
        let before = run_switch_protocol(&s, omega).unwrap();
        let after = run_switch_protocol(&moved, omega).unwrap();
        prop_assert!(before.max_deviation(&after).unwrap() < 1e-9);
        prop_assert!((after.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn order_product_symmetries(mass in 0.001..0.0045f64, re in -1.0..1.0f64) {
        let s = gravitational_switch(&GravitationalSwitchParams { mass, ..Default::default() }).unwrap();
        prop_assert_eq!(order_product(&s), -1);
        prop_assert_eq!(order_product(&s.swap_branches()), -1);
        // relabelling the two systems flips both signs
        let a = s.branch_a.swap_events().unwrap();
        let b = s.branch_b.swap_events().unwrap();
        prop_assert_eq!((a.s, b.s), (-s.branch_a.s, -s.branch_b.s));
        let n = (re * re + 1.0).sqrt();
        let reweighted = s.with_amplitudes(Complex64::new(re / n, 0.0), Complex64::new(0.0, 1.0 / n)).unwrap();
        prop_assert_eq!(order_product(&reweighted), -1);
    }
}

#[test]
fn referee_is_injective_on_populated_labels() {
    use causal_order_lab::quantum::{referee_transform, ProtocolTiming};
    let timing = ProtocolTiming {
        tau_star_1: 1.3,
        tau_star_2: 2.9,
        agents_a: [1, 2],
        agents_b: [2, 1],
    };
    let mem = |role| LabeledRegister::new(role, vec![0.0, 1.3, 2.9]).unwrap();
    let registers = vec![mem(Role::Memory1), mem(Role::Memory2)];
    let mut images = Vec::new();
    for a in 1..3 {
        for b in 1..3 {
            let s = QuantumState::from_terms(
                registers.clone(),
                &[(Complex64::new(1.0, 0.0), vec![a, b])],
            )
            .unwrap();
            let out = referee_transform(&s, &timing).unwrap();
            let idx = out
                .amplitudes()
                .iter()
                .position(|z| z.norm() > 0.5)
                .unwrap();
            images.push(idx);
        }
    }
    images.sort();
    images.dedup();
    assert_eq!(images.len(), 4);
    let empty =
        QuantumState::from_terms(registers, &[(Complex64::new(1.0, 0.0), vec![0, 1])]).unwrap();
    assert!(referee_transform(&empty, &timing).is_err());
}

#[test]
fn proper_time_across_potential_kink_matches_reference() {
    // worldline crosses the mass at t ~ 1.295; reference from 30-digit quadrature split at the kink
    let gamma = Worldline::uniform_velocity(
        &[0.1],
        &[0.23168231201175465],
        (0.0, 3.0),
        CurveLabel::TestParticle,
    )
    .unwrap();
    let tau = proper_time(
        &gamma,
        &weak_field(),
        0.13221123845438695,
        2.4608015366603357,
    )
    .unwrap();
    assert!(rel(tau, 2.212_361_493_570_376_7) < 1e-10, "{tau}");
}
