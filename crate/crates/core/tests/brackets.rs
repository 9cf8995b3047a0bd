mod common;

use proptest::prelude::*;
use timekeeper::flow::{integrate, IntegratorConfig};
use timekeeper::geometry::{DynamicalSystem, PhaseSpace, ScalarField};

// coordinates (q1, q2, p1, p2)
fn f() -> ScalarField {
    ScalarField::with_gradient(
        "f",
        |x| x[0].sin() * x[3] + x[1] * x[1],
        |x| vec![x[0].cos() * x[3], 2.0 * x[1], 0.0, x[0].sin()],
    )
}

fn g() -> ScalarField {
    ScalarField::with_gradient(
        "g",
        |x| (x[2] / 3.0).exp() * x[0] + x[3] * x[1],
        |x| vec![(x[2] / 3.0).exp(), x[3], x[0] * (x[2] / 3.0).exp() / 3.0, x[1]],
    )
}

fn k() -> ScalarField {
    ScalarField::with_gradient("k", |x| x[1].cos() + x[2] * x[3], |x| vec![0.0, -x[1].sin(), x[3], x[2]])
}

fn system() -> DynamicalSystem {
    DynamicalSystem::canonical(PhaseSpace::canonical(2).unwrap(), f())
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, 4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bracket_is_antisymmetric(x in point()) {
        let sys = system();
        let fg = sys.poisson_bracket(&f(), &g(), &x).unwrap();
        let gf = sys.poisson_bracket(&g(), &f(), &x).unwrap();
        prop_assert!((fg + gf).abs() <= 1e-12 * (1.0 + fg.abs()));
    }

    #[test]
    fn bracket_obeys_leibniz(x in point()) {
        let sys = system();
        let gk = ScalarField::product(&g(), &k());
        let lhs = sys.poisson_bracket(&f(), &gk, &x).unwrap();
        let rhs = sys.poisson_bracket(&f(), &g(), &x).unwrap() * k().value(&x)
            + g().value(&x) * sys.poisson_bracket(&f(), &k(), &x).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn fd_gradient_matches_closed_form(x in point()) {
        let space = PhaseSpace::canonical(2).unwrap();
        for field in [f(), g(), k()] {
            let exact = field.gradient(&space, &x).unwrap();
            let fd = field.fd_gradient(&space, &x).unwrap();
            for (a, b) in exact.iter().zip(&fd) {
                prop_assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "{} {a} {b}", field.name());
            }
        }
    }

    #[test]
    fn bracket_is_rate_along_flow(x in point()) {
        // {h, τ} = dτ/dt along the h-flow
        let sys = system();
        let cfg = IntegratorConfig::default().with_tolerances(1e-12, 1e-14);
        let dt = 1e-4;
        let fwd = integrate(&sys, &f(), &x, (0.0, dt), &cfg).unwrap().0;
        let bwd = integrate(&sys, &f(), &x, (0.0, -dt), &cfg).unwrap().0;
        let rate = (g().value(fwd.last().unwrap().1) - g().value(bwd.last().unwrap().1)) / (2.0 * dt);
        let bracket = sys.poisson_bracket(&f(), &g(), &x).unwrap();
        prop_assert!((rate - bracket).abs() <= 1e-6 * (1.0 + bracket.abs()));
    }

    #[test]
    fn flow_is_reversible(x in point(), t in 0.1..3.0f64) {
        let sys = system();
        let cfg = IntegratorConfig::default();
        let (there, outcome) = integrate(&sys, &f(), &x, (0.0, t), &cfg).unwrap();
        prop_assert!(outcome.is_completed());
        let (back, _) = integrate(&sys, &f(), there.last().unwrap().1, (t, 0.0), &cfg).unwrap();
        let y = back.last().unwrap().1;
        for (a, b) in x.iter().zip(y) {
            prop_assert!((a - b).abs() <= 1e-7, "{x:?} -> {y:?}");
        }
    }

    #[test]
    fn energy_is_conserved(x in point(), t in 0.1..5.0f64) {
        let sys = common::pendulum();
        let y = vec![x[0], x[2]];
        let (traj, _) = integrate(&sys, sys.hamiltonian(), &y, (0.0, t), &IntegratorConfig::default()).unwrap();
        let h = sys.hamiltonian();
        prop_assert!((h.value(traj.last().unwrap().1) - h.value(&y)).abs() <= 1e-8);
    }
}
