use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use timekeeper::flow::IntegratorConfig;
use timekeeper::kahler::*;

fn tight() -> IntegratorConfig {
    IntegratorConfig::default().with_tolerances(1e-12, 1e-14)
}

/// `e^{-isF}ψ` by the matrix exponential.
fn schrodinger(f: &CMatrix, psi: &CVector, s: f64) -> CVector {
    (f * Complex64::new(0.0, -s)).exp() * psi
}

#[test]
fn flows_match_matrix_exponential() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for n in [2, 3, 5] {
        for _ in 0..3 {
            let sys = QuantumSystem::new(random_hermitian(n, &mut rng)).unwrap();
            let f = random_hermitian(n, &mut rng);
            let obs = ObservableFunction::expectation("F", f.clone()).unwrap();
            let psi0 = random_state(n, &mut rng);
            let (traj, outcome) = projective_flow(&sys, &obs, &psi0, (0.0, 10.0), &tight()).unwrap();
            assert!(outcome.is_completed());
            for (s, x) in traj.iter().step_by(7) {
                let got = ProjectivePoint::from_real(x).unwrap();
                let want = ProjectivePoint::new(schrodinger(&f, psi0.representative(), s)).unwrap();
                let d = got.distance(&want).unwrap();
                assert!(d <= 1e-8, "n={n} s={s} distance {d:e}");
            }
        }
    }
}

#[test]
fn energy_stays_inside_spectrum() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for n in [2, 3, 5] {
        let sys = QuantumSystem::new(random_hermitian(n, &mut rng)).unwrap();
        let spec = sys.spectrum();
        let h = sys.energy();
        let f = ObservableFunction::expectation("F", random_hermitian(n, &mut rng)).unwrap();
        let (traj, _) = projective_flow(&sys, &f, &random_state(n, &mut rng), (0.0, 10.0), &tight()).unwrap();
        for p in trajectory_points(&traj).unwrap() {
            let e = expectation_value(&h, &p).unwrap();
            assert!(e >= spec[0] - 1e-10 && e <= spec[n - 1] + 1e-10);
        }
    }
}

#[test]
fn kahler_identities_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [2, 3, 5] {
        let r = kahler_identities(n, 50, &mut rng).unwrap();
        assert!(r.max_residual() <= 1e-12, "{r:?}");
    }
}

#[test]
fn flow_ignores_global_phase_of_start() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sys = QuantumSystem::new(random_hermitian(3, &mut rng)).unwrap();
    let p = random_state(3, &mut rng);
    let u = Complex64::from_polar(1.0, rng.random_range(0.0..6.0));
    let q = ProjectivePoint::new(p.representative() * u).unwrap();
    assert!((p.representative() - q.representative()).iter().all(|z| z.norm() <= 1e-12));
    let (a, _) = projective_flow(&sys, &sys.energy(), &p, (0.0, 3.0), &tight()).unwrap();
    let (b, _) = projective_flow(&sys, &sys.energy(), &q, (0.0, 3.0), &tight()).unwrap();
    let end_a = ProjectivePoint::from_real(a.last().unwrap().1).unwrap();
    let end_b = ProjectivePoint::from_real(b.last().unwrap().1).unwrap();
    assert!(end_a.distance(&end_b).unwrap() <= 1e-12);
}

#[test]
fn killing_dichotomy() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for n in [2, 3, 5] {
        for _ in 0..3 {
            let f = ObservableFunction::expectation("F", random_hermitian(n, &mut rng)).unwrap();
            let p = random_state(n, &mut rng);
            let r = killing_residual(&f, &p, 20, 1e-4, &mut rng).unwrap();
            assert!(r <= 1e-5, "n={n} residual {r:e}");
        }
    }
    for (w, p) in designated_weinberg() {
        let r = killing_residual(&w, &p, 50, 1e-4, &mut rng).unwrap();
        assert!(r >= 1e-3, "{} residual {r:e}", w.label);
    }
}

#[test]
fn rational_gaps_recur_at_least_common_period() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for energies in [vec![0.0, 1.0], vec![0.0, 1.0, 3.0], vec![0.0, 0.5, 2.0]] {
        let sys = QuantumSystem::diagonal(&energies).unwrap();
        let period = sys.recurrence_period().unwrap();
        let p = random_state(energies.len(), &mut rng);
        let r = projective_recurrence(&sys, &p, 1.2 * period, 1e-6, &tight()).unwrap().unwrap();
        assert!((r.period - period).abs() <= 1e-5, "{energies:?}: {} vs {period}", r.period);
        let back = ProjectivePoint::new(
            schrodinger(sys.hamiltonian(), p.representative(), period),
        )
        .unwrap();
        assert!(back.distance(&p).unwrap() <= 1e-6);
    }
}

#[test]
fn pauli_demo_rejects_every_candidate() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for energies in [vec![0.0, 1.0], vec![0.0, 1.0, 3.0]] {
        let sys = QuantumSystem::diagonal(&energies).unwrap();
        let candidates = pauli_candidates(energies.len(), 5, &mut rng);
        let r = pauli_obstruction_demo(&sys, &candidates, 1e-6, &PauliDemoConfig::default(), &tight(), &mut rng)
            .unwrap();
        assert!(r.passed);
        for c in &r.candidates {
            assert!(c.deviation_at_recurrence >= 1.0, "{}: {}", c.label, c.deviation_at_recurrence);
        }
    }
}
