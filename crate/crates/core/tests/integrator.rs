mod common;

use std::f64::consts::PI;

use timekeeper::flow::{dopri5_step, integrate, HamiltonianFlow, IntegratorConfig, Method, VectorField};

fn fixed_step_error<V: VectorField>(field: &V, x0: &[f64], t: f64, steps: usize, exact: &[f64]) -> f64 {
    let h = t / steps as f64;
    let mut x = x0.to_vec();
    let mut v = vec![0.0; x.len()];
    for _ in 0..steps {
        field.velocity(&x, &mut v).unwrap();
        x = dopri5_step(field, &x, &v, h).unwrap().x;
    }
    x.iter().zip(exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn observed_orders<V: VectorField>(field: &V, x0: &[f64], t: f64, exact: &[f64]) -> Vec<f64> {
    let errs: Vec<f64> = [4, 8, 16, 32].iter().map(|n| fixed_step_error(field, x0, t, *n, exact)).collect();
    errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

#[test]
fn dormand_prince_is_fifth_order_on_norton_clock_flow() {
    let (sys, tau) = common::norton();
    let field = HamiltonianFlow::new(&sys, &tau.tau);
    let (q0, p0, s) = (1.0f64, 0.0f64, 0.6f64);
    let exact = [q0 * (1.0 - s * (-p0).exp()), (p0.exp() - s).ln()];
    for order in observed_orders(&field, &[q0, p0], s, &exact) {
        assert!(order >= 4.0, "observed order {order}");
    }
}

#[test]
fn dormand_prince_is_fifth_order_on_oscillator() {
    let sys = common::oscillator();
    let field = HamiltonianFlow::new(&sys, sys.hamiltonian());
    let t = 2.0f64;
    let exact = [t.sin(), t.cos()];
    for order in observed_orders(&field, &[0.0, 1.0], t, &exact) {
        assert!(order >= 4.0, "observed order {order}");
    }
}

#[test]
fn adaptive_error_tracks_tolerance() {
    let sys = common::oscillator();
    let t = 20.0f64;
    let err = |tol: f64| {
        let cfg = IntegratorConfig::default().with_tolerances(tol, tol * 1e-2);
        let (traj, _) = integrate(&sys, sys.hamiltonian(), &[0.0, 1.0], (0.0, t), &cfg).unwrap();
        let x = traj.last().unwrap().1;
        ((x[0] - t.sin()).powi(2) + (x[1] - t.cos()).powi(2)).sqrt()
    };
    let (coarse, fine) = (err(1e-6), err(1e-9));
    assert!(fine < coarse / 50.0, "{coarse:e} -> {fine:e}");
    assert!(fine < 1e-6);
}

#[test]
fn implicit_midpoint_keeps_energy_over_ten_thousand_periods() {
    let sys = common::oscillator();
    let cfg = IntegratorConfig {
        method: Method::ImplicitMidpoint,
        max_step: 0.25,
        ..Default::default()
    };
    let t = 1e4 * 2.0 * PI;
    let (traj, outcome) = integrate(&sys, sys.hamiltonian(), &[1.0, 0.0], (0.0, t), &cfg).unwrap();
    assert!(outcome.is_completed());
    let h = sys.hamiltonian();
    let drift = traj.states.iter().map(|x| (h.value(x) - 0.5).abs()).fold(0.0, f64::max);
    assert!(drift <= 1e-10, "energy drift {drift:e}");
}
