#![allow(dead_code)]

use timekeeper::clockwork::CandidateObservable;
use timekeeper::geometry::{DynamicalSystem, PhaseSpace, ScalarField};

/// `h = p²/2m` on `p > 0`, with the clock `τ = mq/p`.
pub fn free_particle(m: f64) -> (DynamicalSystem, CandidateObservable) {
    let space = PhaseSpace::with_names(["q", "p"]).unwrap().with_domain(|x| x[1] > 0.0);
    let h = ScalarField::with_gradient("h", move |x| x[1] * x[1] / (2.0 * m), move |x| vec![0.0, x[1] / m]);
    let tau = ScalarField::with_gradient(
        "mq/p",
        move |x| m * x[0] / x[1],
        move |x| vec![m / x[1], -m * x[0] / (x[1] * x[1])],
    );
    (DynamicalSystem::canonical(space, h), CandidateObservable::new("mq/p", tau))
}

/// `h = e^p` with the clock `τ = q e^{-p}`.
pub fn norton() -> (DynamicalSystem, CandidateObservable) {
    let h = ScalarField::with_gradient("h", |x| x[1].exp(), |x| vec![0.0, x[1].exp()]);
    let tau = ScalarField::with_gradient(
        "q/e^p",
        |x| x[0] * (-x[1]).exp(),
        |x| vec![(-x[1]).exp(), -x[0] * (-x[1]).exp()],
    );
    (
        DynamicalSystem::canonical(PhaseSpace::with_names(["q", "p"]).unwrap(), h),
        CandidateObservable::new("q/e^p", tau),
    )
}

pub fn oscillator() -> DynamicalSystem {
    DynamicalSystem::canonical(
        PhaseSpace::with_names(["q", "p"]).unwrap(),
        ScalarField::with_gradient("h", |x| 0.5 * (x[0] * x[0] + x[1] * x[1]), |x| x.to_vec()),
    )
}

/// `h = p²/2 - cos q`.
pub fn pendulum() -> DynamicalSystem {
    DynamicalSystem::canonical(
        PhaseSpace::with_names(["q", "p"]).unwrap(),
        ScalarField::with_gradient("h", |x| 0.5 * x[1] * x[1] - x[0].cos(), |x| vec![x[0].sin(), x[1]]),
    )
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| if i == n { b } else { a + (b - a) * i as f64 / n as f64 }).collect()
}
