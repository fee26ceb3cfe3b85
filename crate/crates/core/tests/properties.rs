use ndarray_linalg::Determinant;
use proptest::prelude::*;

use rydpump::channel::LocalChannel;
use rydpump::floquet::{period_propagators, IntegratorSettings};
use rydpump::linalg::{
    c, dagger, eig_herm, expm, hermiticity_error, hermitize, hs_distance, kron, matexp, matlog_unitary, max_abs,
    trace, CMat, DensityMatrix,
};
use rydpump::lindblad::{
    build_liouvillian, closed_form_eigenvalues, default_step, eigenvalue_mismatch, integrate_master_eq,
    kraus_from_superoperator, liouvillian_spectrum, three_level_model, Collapse, DissipationMode, Hamiltonian,
    LindbladModel, E0, EP, ER,
};
use rydpump::noise::{apply_noise, sample_noise, NoiseSources};
use rydpump::protocol::{parallel_schedule, parallel_steps, run_protocol, Engine, Schedule};
use rydpump::stabilizer::{pump_plan, stabilizer_set, Pauli, PauliString, PumpScheme, PumpSet, StabilizerKind};
use rydpump::system::{
    build_ha, build_hb, AtomDrive, DriveSpec, GeometryKind, QubitState, System, GAMMA_P_RB, LEVEL_R,
};

fn matrix(d: usize, v: &[f64]) -> CMat {
    CMat::from_shape_fn((d, d), |(i, j)| c(v[2 * (i * d + j)], v[2 * (i * d + j) + 1]))
}

fn hermitian(d: usize, v: &[f64]) -> CMat {
    hermitize(&matrix(d, v))
}

fn density(d: usize, v: &[f64]) -> CMat {
    let a = matrix(d, v);
    let m = a.dot(&dagger(&a)) + CMat::eye(d) * c(1e-3, 0.0);
    let tr = trace(&m).re;
    m.mapv(|x| x / tr)
}

fn entries(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 2 * d * d)
}

fn min_eigenvalue(m: &CMat) -> f64 {
    eig_herm(&hermitize(m)).unwrap().0.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn pauli() -> impl Strategy<Value = Pauli> {
    prop_oneof![Just(Pauli::I), Just(Pauli::X), Just(Pauli::Y), Just(Pauli::Z)]
}

fn graph_kind() -> impl Strategy<Value = (StabilizerKind, PumpScheme)> {
    prop_oneof![
        (2usize..=6).prop_map(|n| (StabilizerKind::Chain(n), PumpScheme::Realistic)),
        (3usize..=6).prop_map(|n| (StabilizerKind::Chain(n), PumpScheme::Complete)),
        Just((StabilizerKind::Tshape, PumpScheme::FourBody)),
        Just((StabilizerKind::SixQubit2d, PumpScheme::FourBody)),
        Just((StabilizerKind::Bell, PumpScheme::Realistic)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn matexp_inverts_matlog(v in entries(4), scale in 0.1..3.0f64) {
        let h = hermitian(4, &v) * c(scale, 0.0);
        let u = matexp(&h, 1.0).unwrap();
        let back = matexp(&matlog_unitary(&u, 1.0).unwrap(), 1.0).unwrap();
        prop_assert!(max_abs(&(back - &u)) < 1e-8);
    }

    #[test]
    fn kron_is_associative_and_bilinear(a in entries(2), b in entries(2), e in entries(2), k in -2.0..2.0f64) {
        let (a, b, e) = (matrix(2, &a), matrix(2, &b), matrix(2, &e));
        let left = kron(&kron(&a, &b), &e);
        let right = kron(&a, &kron(&b, &e));
        prop_assert!(max_abs(&(left - right)) < 1e-12);
        let lin = kron(&(&a * c(k, 0.0) + &e), &b);
        let sum = kron(&a, &b) * c(k, 0.0) + kron(&e, &b);
        prop_assert!(max_abs(&(lin - sum)) < 1e-12);
    }

    #[test]
    fn hs_distance_triangle(x in entries(3), y in entries(3), z in entries(3)) {
        let [x, y, z] = [x, y, z].map(|v| DensityMatrix::from_trusted(density(3, &v)));
        let xz = hs_distance(&x, &z).unwrap();
        let via = hs_distance(&x, &y).unwrap() + hs_distance(&y, &z).unwrap();
        prop_assert!(xz <= via + 1e-12);
    }

    #[test]
    fn hamiltonians_hermitian(ratio in 5.0..60.0f64, frac in 0.0..1.0f64, g1 in 0usize..4, g2 in 0usize..4) {
        let states = [QubitState::Zero, QubitState::One, QubitState::Plus, QubitState::Minus];
        let sys = System::standard(GeometryKind::Zigzag, 2, ratio).unwrap();
        let drive = DriveSpec::idle(2).with(0, AtomDrive::both(states[g1])).with(1, AtomDrive::both(states[g2]));
        let ha = build_ha(&sys, &drive).unwrap();
        prop_assert!(hermiticity_error(&ha) < 1e-9 * max_abs(&ha).max(1.0));
        let hb = build_hb(&sys, &drive, frac * sys.pulse.timings().kicked).unwrap();
        prop_assert!(hermiticity_error(&hb) < 1e-9 * max_abs(&hb).max(1.0));
    }

    #[test]
    fn vdw_needs_two_rydberg_atoms(levels in prop::collection::vec(0usize..3, 3), ratio in 5.0..60.0f64) {
        let sys = System::standard(GeometryKind::Zigzag, 3, ratio).unwrap();
        let e = sys.diagonal_energy(&levels);
        let excited = levels.iter().filter(|&&l| l == LEVEL_R).count();
        if excited < 2 {
            prop_assert_eq!(e, 0.0);
        } else {
            prop_assert!(e < 0.0);
        }
    }

    #[test]
    fn liouvillian_spectrum_is_stable_and_closed_form(ratio in 0.05..60.0f64) {
        let g = GAMMA_P_RB;
        let m = three_level_model(ratio * g, g).unwrap();
        let spec = liouvillian_spectrum(&m, None).unwrap();
        prop_assert!(spec.eigenvalues.iter().all(|l| l.re <= 1e-9 * g));
        let closed = closed_form_eigenvalues(ratio * g, g);
        prop_assert!(eigenvalue_mismatch(&spec.eigenvalues, &closed, g, 1e-6) < 1e-9);
    }

    #[test]
    fn pauli_algebra(a in prop::collection::vec(pauli(), 1..6), b_seed in prop::collection::vec(pauli(), 6)) {
        let n = a.len();
        let p = PauliString::new(a, 1);
        let q = PauliString::new(b_seed[..n].to_vec(), 1);
        prop_assert_eq!(p.commutes_with(&q), q.commutes_with(&p));
        let (mp, mq) = (p.matrix(), q.matrix());
        let comm = mp.dot(&mq) - mq.dot(&mp);
        prop_assert_eq!(max_abs(&comm) < 1e-12, p.commutes_with(&q));
        if p.commutes_with(&q) {
            prop_assert!(max_abs(&(p.product(&q).matrix() - mp.dot(&mq))) < 1e-12);
        }
    }

    #[test]
    fn stabilizer_group_and_pump_kets((kind, scheme) in graph_kind()) {
        let n = kind.n_qubits();
        let set = stabilizer_set(kind).unwrap();
        prop_assert_eq!(set.group().len(), 1usize << n);
        prop_assert!((trace(&set.group_projector()).re - 1.0).abs() < 1e-10);
        let pumps = PumpSet::from_plan(&pump_plan(kind, scheme).unwrap()).unwrap();
        let target = kind.target();
        for k in pumps.kets() {
            prop_assert!(k.overlap(&target) < 1e-12);
        }
    }

    #[test]
    fn parallel_steps_partition_generators(n in 3usize..=14) {
        let steps = parallel_steps(n).unwrap();
        let mut seen = vec![0; n];
        for s in &steps {
            for &g in s {
                seen[g] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&k| k == 1));
        // disjointness of supports is checked by the schedule constructor
        prop_assert!(parallel_schedule(n, Engine::Effective, 1, DissipationMode::Reset).is_ok());
    }

    #[test]
    fn noise_sources_are_independent(seed in any::<u64>()) {
        let sys = System::standard(GeometryKind::Zigzag, 3, 15.7).unwrap();
        let p = &sys.physical;
        let both = sample_noise(p, 3, seed, NoiseSources::default()).unwrap();
        prop_assert_eq!(&both, &sample_noise(p, 3, seed, NoiseSources::default()).unwrap());
        let doppler = sample_noise(p, 3, seed, NoiseSources { doppler: true, position: false }).unwrap();
        let position = sample_noise(p, 3, seed, NoiseSources { doppler: false, position: true }).unwrap();
        prop_assert_eq!(&doppler.doppler, &both.doppler);
        prop_assert_eq!(&position.offsets, &both.offsets);
        let d_sys = apply_noise(&sys, &doppler).unwrap();
        let p_sys = apply_noise(&sys, &position).unwrap();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            prop_assert_eq!(d_sys.interaction(i, j), sys.interaction(i, j));
        }
        prop_assert_eq!(&p_sys.rydberg_shift, &sys.rydberg_shift);
        prop_assert_eq!(&d_sys.rydberg_shift, &doppler.doppler);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn period_propagator_has_unit_determinant(ratio in 10.0..60.0f64) {
        let sys = System::standard(GeometryKind::Zigzag, 2, ratio).unwrap();
        let g = QubitState::One;
        let drive = DriveSpec::idle(2).with(0, AtomDrive::both(g)).with(1, AtomDrive::both(g));
        let u = period_propagators(&sys, &drive, &IntegratorSettings::default()).unwrap().period();
        prop_assert!((u.det().unwrap().norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn random_lindblad_channels_are_cptp(h in entries(3), l in entries(3), rate in 0.0..2.0f64, t in 0.01..2.0f64, r in entries(3)) {
        let model = LindbladModel::new(
            Hamiltonian::Static(hermitian(3, &h)),
            vec![Collapse::new(matrix(3, &l), rate).unwrap()],
        ).unwrap();
        let s = expm(&(build_liouvillian(&model).unwrap() * c(t, 0.0))).unwrap();
        let ch = LocalChannel::new(vec![1], 3, kraus_from_superoperator(&s, 3).unwrap()).unwrap();
        prop_assert!(ch.trace_defect() < 1e-8);
        let rho = kron(&density(3, &r), &density(3, &r));
        let out = ch.apply(&rho, 2).unwrap();
        prop_assert!((trace(&out).re - 1.0).abs() < 1e-9);
        prop_assert!(min_eigenvalue(&out) > -1e-9);
    }

    #[test]
    fn master_equation_keeps_trace_and_positivity(ratio in 0.1..50.0f64, pr in 0.0..1.0f64, x in -1.0..1.0f64) {
        let g = GAMMA_P_RB;
        let m = three_level_model(ratio * g, g).unwrap();
        let mut rho = CMat::zeros((3, 3));
        rho[[ER, ER]] = c(pr, 0.0);
        rho[[EP, EP]] = c(1.0 - pr, 0.0);
        let coh = x * (pr * (1.0 - pr)).sqrt();
        rho[[ER, EP]] = c(coh, 0.0);
        rho[[EP, ER]] = c(coh, 0.0);
        let with = integrate_master_eq(&m, &DensityMatrix::from_trusted(rho.clone()), 4.0 / g, default_step(&m, None), 20).unwrap();
        for s in &with.states {
            prop_assert!((s.trace() - 1.0).abs() < 1e-8);
            prop_assert!(min_eigenvalue(s.matrix()) >= -1e-7);
        }
        // the symmetric r–p coherence does not feed the ground population
        rho[[ER, EP]] = c(0.0, 0.0);
        rho[[EP, ER]] = c(0.0, 0.0);
        let without = integrate_master_eq(&m, &DensityMatrix::from_trusted(rho), 4.0 / g, default_step(&m, None), 20).unwrap();
        for (a, b) in with.states.iter().zip(&without.states) {
            prop_assert!((a.matrix()[[E0, E0]].re - b.matrix()[[E0, E0]].re).abs() < 1e-9);
        }
    }

    #[test]
    fn target_is_dark_and_convergence_monotone(n in 2usize..=5, parallel in any::<bool>()) {
        let sys = System::standard(GeometryKind::Zigzag, n, 50.0).unwrap();
        let kind = StabilizerKind::Chain(n);
        let sch = if parallel && n >= 3 {
            parallel_schedule(n, Engine::Effective, 6, DissipationMode::Reset).unwrap()
        } else {
            Schedule::sequential(kind, PumpScheme::Realistic, Engine::Effective, 6, DissipationMode::Reset).unwrap()
        };
        let target = DensityMatrix::from_ket(&kind.target());
        for r in run_protocol(&sys, &sch, Some(&target)).unwrap() {
            prop_assert!(r.fidelity > 1.0 - 1e-9);
            prop_assert!(r.leaked < 1e-9);
        }
        let tr = run_protocol(&sys, &sch, None).unwrap();
        for w in tr.windows(2) {
            prop_assert!(w[1].fidelity >= w[0].fidelity - 1e-6);
            prop_assert!(w[1].leaked < 1e-9);
        }
    }
}
