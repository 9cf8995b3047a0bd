//! Clocks on dynamical systems.
//!
//! A candidate `τ` is *timely* when `τ(c_t) = τ(c_0) + t` along every flow
//! line of the Hamiltonian, and *locally timely* when `{h, τ} = 1`. This
//! module checks both on finite samples, builds flow-time clocks near
//! non-stationary points, compares clocks up to constants of motion, and
//! probes the energy-descent law `h(c_s) = h(c_0) - s` along a clock's own
//! flow, which forces that flow to be incomplete whenever `h` is bounded
//! below.
//!
//! All verdicts are relative to the supplied grids and samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{
    first_crossing, first_return, integrate, sample_on_grid, Direction, FlowOutcome, HamiltonianFlow,
    IntegratorConfig, Section, LEVEL_TOL,
};
use crate::geometry::{norm, DynamicalSystem, ScalarField};

/// Field norm below which a point counts as stationary.
pub const STATIONARY_TOL: f64 = 1e-8;

/// A function offered as a clock.
#[derive(Debug, Clone)]
pub struct CandidateObservable {
    pub tau: ScalarField,
    pub label: String,
}

impl CandidateObservable {
    pub fn new(label: impl Into<String>, tau: ScalarField) -> Self {
        Self { tau, label: label.into() }
    }
}

/// Deviation from `τ(c_t) = τ(c_0) + t` along one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryDeviation {
    pub initial_state: Vec<f64>,
    pub max_deviation: f64,
    /// Grid parameter where the deviation peaks.
    pub worst_t: f64,
    /// Range of the grid actually reached by the flow.
    pub covered: (f64, f64),
    pub forward: FlowOutcome,
    pub backward: FlowOutcome,
}

impl TrajectoryDeviation {
    /// Builds the record from `(t, τ(c_t))` samples that include `t = 0`.
    pub fn from_samples(
        initial_state: Vec<f64>,
        samples: &[(f64, f64)],
        forward: FlowOutcome,
        backward: FlowOutcome,
    ) -> Self {
        let tau0 = samples.iter().find(|(t, _)| *t == 0.0).map(|s| s.1).unwrap_or(f64::NAN);
        let mut max_deviation: f64 = 0.0;
        let mut worst_t = 0.0;
        for &(t, tau) in samples {
            let dev = (tau - tau0 - t).abs();
            let dev = if dev.is_finite() { dev } else { f64::INFINITY };
            if dev > max_deviation {
                max_deviation = dev;
                worst_t = t;
            }
        }
        let covered = (
            samples.first().map_or(0.0, |s| s.0),
            samples.last().map_or(0.0, |s| s.0),
        );
        Self { initial_state, max_deviation, worst_t, covered, forward, backward }
    }

    pub fn flow_completed(&self) -> bool {
        self.forward.is_completed() && self.backward.is_completed()
    }
}

/// Timeliness of a candidate on a finite grid of parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimelinessReport {
    pub label: String,
    pub per_trajectory: Vec<TrajectoryDeviation>,
    pub tolerance: f64,
    /// Extent of the grid the verdict refers to.
    pub grid: (f64, f64),
    pub passed: bool,
}

impl TimelinessReport {
    pub fn assemble(label: String, per_trajectory: Vec<TrajectoryDeviation>, tolerance: f64, grid: &[f64]) -> Self {
        let passed = per_trajectory
            .iter()
            .all(|d| d.max_deviation <= tolerance && d.flow_completed());
        let grid = (grid[0], grid[grid.len() - 1]);
        Self { label, per_trajectory, tolerance, grid, passed }
    }

    pub fn max_deviation(&self) -> f64 {
        self.per_trajectory.iter().map(|d| d.max_deviation).fold(0.0, f64::max)
    }
}

fn require_zero(grid: &[f64]) -> Result<()> {
    crate::flow::validate_grid(grid)?;
    if !grid.contains(&0.0) {
        return Err(Error::Config("parameter grid must contain 0".into()));
    }
    Ok(())
}

/// Integrates the Hamiltonian flow from each initial state and measures
/// `|τ(c_t) - τ(c_0) - t|` on `t_grid`. Flows that escape before the grid
/// ends are reported (and fail) with the deviation on the reached part.
pub fn verify_timeliness(
    system: &DynamicalSystem,
    candidate: &CandidateObservable,
    initial_states: &[Vec<f64>],
    t_grid: &[f64],
    tol: f64,
    config: &IntegratorConfig,
) -> Result<TimelinessReport> {
    require_zero(t_grid)?;
    for x in initial_states {
        system.space().check(x)?;
    }
    let per_trajectory = initial_states
        .par_iter()
        .map(|x0| {
            let flow = sample_on_grid(system, system.hamiltonian(), x0, t_grid, config)?;
            let samples: Vec<(f64, f64)> =
                flow.trajectory.iter().map(|(t, x)| (t, candidate.tau.value(x))).collect();
            Ok(TrajectoryDeviation::from_samples(x0.clone(), &samples, flow.forward, flow.backward))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TimelinessReport::assemble(candidate.label.clone(), per_trajectory, tol, t_grid))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalTimelinessReport {
    pub label: String,
    pub samples: usize,
    /// max |{h, τ}(x) - 1|.
    pub max_deviation: f64,
    pub worst_state: Vec<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Checks `{h, τ} = 1` at each sample.
pub fn verify_local_timeliness(
    system: &DynamicalSystem,
    candidate: &CandidateObservable,
    sample_states: &[Vec<f64>],
    tol: f64,
) -> Result<LocalTimelinessReport> {
    let mut max_deviation: f64 = 0.0;
    let mut worst_state = Vec::new();
    for x in sample_states {
        let b = system.poisson_bracket(system.hamiltonian(), &candidate.tau, x)?;
        let dev = if b.is_finite() { (b - 1.0).abs() } else { f64::INFINITY };
        if dev > max_deviation || worst_state.is_empty() {
            max_deviation = max_deviation.max(dev);
            worst_state = x.clone();
        }
    }
    Ok(LocalTimelinessReport {
        label: candidate.label.clone(),
        samples: sample_states.len(),
        max_deviation,
        worst_state,
        tolerance: tol,
        passed: max_deviation <= tol,
    })
}

/// Monte Carlo validation settings for [`construct_local_clock`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClockValidation {
    pub samples: usize,
    pub pairs: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub max_halvings: u32,
}

impl Default for ClockValidation {
    fn default() -> Self {
        Self { samples: 200, pairs: 50, tolerance: 1e-6, seed: 0, max_halvings: 10 }
    }
}

/// Flow time from a transversal hyperplane, valid inside a sampled ball.
#[derive(Debug, Clone)]
pub struct LocalClock {
    pub section: Section,
    pub radius: f64,
    pub system: DynamicalSystem,
    /// Largest flow time searched for a crossing.
    pub time_bound: f64,
    /// Worst two-point residual seen during validation.
    pub validation_residual: f64,
    pub pairs_checked: usize,
}

impl LocalClock {
    pub fn anchor(&self) -> &[f64] {
        &self.section.anchor
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        distance(y, self.anchor()) <= self.radius * (1.0 + 1e-12)
    }

    /// Signed flow time from the section to `y`.
    pub fn value(&self, y: &[f64], config: &IntegratorConfig) -> Result<f64> {
        if !self.contains(y) {
            return Err(Error::OutsideBall { state: y.to_vec(), radius: self.radius });
        }
        let l = self.section.level.value(y);
        if l.abs() <= LEVEL_TOL {
            return Ok(0.0);
        }
        let direction = if l > 0.0 { Direction::Backward } else { Direction::Forward };
        let cfg = config.with_horizon(self.time_bound);
        let c = first_crossing(&self.system, self.system.hamiltonian(), y, &self.section, direction, &cfg)?;
        Ok(-c.t)
    }

    /// The clock as a scalar field; NaN wherever [`LocalClock::value`] fails.
    pub fn as_field(&self, config: &IntegratorConfig) -> ScalarField {
        let clock = self.clone();
        let cfg = config.clone();
        ScalarField::new("local_clock", move |y| clock.value(y, &cfg).unwrap_or(f64::NAN))
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn sample_ball<R: Rng>(center: &[f64], radius: f64, rng: &mut R) -> Vec<f64> {
    let d = center.len();
    let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let n = norm(&dir);
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    center.iter().zip(&dir).map(|(c, u)| c + r * u / n).collect()
}

/// Clock value for the affine section through `clock.anchor()` with normal
/// `H^a(anchor)`, validated on a shrinking ball.
pub fn construct_local_clock(
    system: &DynamicalSystem,
    x: &[f64],
    requested_radius: f64,
    config: &IntegratorConfig,
    validation: &ClockValidation,
) -> Result<LocalClock> {
    system.space().check(x)?;
    config.validate()?;
    if !(requested_radius > 0.0) {
        return Err(Error::Config(format!("radius must be positive, got {requested_radius}")));
    }
    let speed = system.field_norm(x)?;
    if speed <= STATIONARY_TOL {
        return Err(Error::StationaryPoint { state: x.to_vec(), norm: speed });
    }
    let section = Section::hyperplane(system, system.hamiltonian(), x)?;

    let mut last_reason = String::new();
    for k in 0..=validation.max_halvings {
        let radius = requested_radius / 2f64.powi(k as i32);
        let mut clock = LocalClock {
            section: section.clone(),
            radius,
            system: system.clone(),
            time_bound: 4.0 * radius / speed,
            validation_residual: 0.0,
            pairs_checked: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(validation.seed.wrapping_add(k as u64));
        match validate_clock(&clock, speed, config, validation, &mut rng) {
            Ok((residual, pairs)) => {
                clock.validation_residual = residual;
                clock.pairs_checked = pairs;
                return Ok(clock);
            }
            Err(reason) => last_reason = format!("radius {radius:e}: {reason}"),
        }
    }
    Err(Error::ValidationFailed(last_reason))
}

fn validate_clock(
    clock: &LocalClock,
    speed: f64,
    config: &IntegratorConfig,
    validation: &ClockValidation,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<(f64, usize), String> {
    let system = &clock.system;
    let h = system.hamiltonian();
    let bounded = config.with_horizon(clock.time_bound);
    let mut residual: f64 = 0.0;
    let mut pairs = 0;
    for i in 0..validation.samples {
        let y = sample_ball(clock.anchor(), clock.radius, rng);
        if !system.space().contains(&y) {
            return Err("ball leaves the domain".into());
        }
        let l = clock.section.level.value(&y);
        if l.abs() > LEVEL_TOL {
            let (toward, away) = if l > 0.0 {
                (Direction::Backward, Direction::Forward)
            } else {
                (Direction::Forward, Direction::Backward)
            };
            let c = first_crossing(system, h, &y, &clock.section, toward, &bounded).map_err(|e| e.to_string())?;
            if c.rate <= 0.0 {
                return Err("crossing against the anchor orientation".into());
            }
            match first_crossing(system, h, &y, &clock.section, away, &bounded) {
                Err(Error::NoCrossing(_)) => {}
                Ok(_) | Err(Error::TangentialCrossing { .. }) => {
                    return Err("trajectory meets the section twice".into());
                }
                Err(e) => return Err(e.to_string()),
            }
        }
        if i < validation.pairs {
            let tau_y = clock.value(&y, config).map_err(|e| e.to_string())?;
            let mut dt = 0.5 * clock.radius / speed * rng.random_range(-1.0..=1.0);
            for _ in 0..4 {
                let (traj, outcome) = integrate(system, h, &y, (0.0, dt), config).map_err(|e| e.to_string())?;
                let (_, y2) = traj.last().expect("non-empty trajectory");
                if outcome.is_completed() && clock.contains(y2) {
                    let tau_y2 = clock.value(y2, config).map_err(|e| e.to_string())?;
                    residual = residual.max((tau_y2 - tau_y - dt).abs());
                    pairs += 1;
                    break;
                }
                dt *= 0.25;
            }
        }
    }
    if pairs == 0 && validation.pairs > 0 {
        return Err("no sampled pair stayed inside the ball".into());
    }
    if residual > validation.tolerance {
        return Err(format!("two-point residual {residual:e} exceeds {:e}", validation.tolerance));
    }
    Ok((residual, pairs))
}

/// Signed flow time from the clock's section to `y`.
pub fn clock_value(clock: &LocalClock, y: &[f64], config: &IntegratorConfig) -> Result<f64> {
    clock.value(y, config)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftRecord {
    pub initial_state: Vec<f64>,
    pub drift: f64,
    pub flow_completed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub labels: (String, String),
    pub per_trajectory: Vec<DriftRecord>,
    pub max_drift: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Checks that `tau2 - tau1` is constant along each Hamiltonian trajectory.
pub fn uniqueness_decomposition(
    system: &DynamicalSystem,
    tau1: &CandidateObservable,
    tau2: &CandidateObservable,
    initial_states: &[Vec<f64>],
    t_grid: &[f64],
    tol: f64,
    config: &IntegratorConfig,
) -> Result<UniquenessReport> {
    crate::flow::validate_grid(t_grid)?;
    for x in initial_states {
        system.space().check(x)?;
    }
    let per_trajectory = initial_states
        .par_iter()
        .map(|x0| {
            let flow = sample_on_grid(system, system.hamiltonian(), x0, t_grid, config)?;
            let diff = |x: &[f64]| tau2.tau.value(x) - tau1.tau.value(x);
            let f0 = diff(x0);
            let drift = flow
                .trajectory
                .iter()
                .map(|(_, x)| {
                    let d = (diff(x) - f0).abs();
                    if d.is_finite() { d } else { f64::INFINITY }
                })
                .fold(0.0, f64::max);
            Ok(DriftRecord { initial_state: x0.clone(), drift, flow_completed: flow.completed() })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_drift = per_trajectory.iter().map(|r| r.drift).fold(0.0, f64::max);
    let passed = per_trajectory.iter().all(|r| r.drift <= tol && r.flow_completed);
    Ok(UniquenessReport {
        labels: (tau1.label.clone(), tau2.label.clone()),
        per_trajectory,
        max_drift,
        tolerance: tol,
        passed,
    })
}

/// Least-squares line `y ≈ intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// max |y_i - fit(x_i)|.
    pub max_residual: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_residual = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).abs())
        .fold(0.0, f64::max);
    Some(LinearFit { slope, intercept, max_residual })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyDescentReport {
    pub label: String,
    pub x0: Vec<f64>,
    pub h0: f64,
    /// Grid parameters reached by the clock's flow.
    pub surviving: Vec<f64>,
    /// max |h(c_s) - h(c_0) + s| over the surviving grid.
    pub max_deviation: f64,
    pub fit: Option<LinearFit>,
    pub forward: FlowOutcome,
    pub backward: FlowOutcome,
    pub h_inf: Option<f64>,
    /// The flow completed past `h0 - h_inf`, which the descent law forbids.
    pub bound_violated: bool,
    pub tolerance: f64,
    pub passed: bool,
}

/// Follows the flow generated by the candidate and compares `h(c_s)` with
/// `h(c_0) - s`.
pub fn energy_descent_check(
    system: &DynamicalSystem,
    candidate: &CandidateObservable,
    x0: &[f64],
    s_grid: &[f64],
    tol: f64,
    h_inf: Option<f64>,
    config: &IntegratorConfig,
) -> Result<EnergyDescentReport> {
    require_zero(s_grid)?;
    system.space().check(x0)?;
    let h = system.hamiltonian();
    let flow = sample_on_grid(system, &candidate.tau, x0, s_grid, config)?;
    let h0 = h.value(x0);
    let (surviving, energies): (Vec<f64>, Vec<f64>) = flow.trajectory.iter().map(|(s, x)| (s, h.value(x))).unzip();
    let max_deviation = surviving
        .iter()
        .zip(&energies)
        .map(|(s, e)| {
            let d = (e - h0 + s).abs();
            if d.is_finite() { d } else { f64::INFINITY }
        })
        .fold(0.0, f64::max);
    let fit = linear_fit(&surviving, &energies);
    let reached = surviving.last().copied().unwrap_or(0.0);
    let bound_violated = match h_inf {
        Some(inf) => flow.forward.is_completed() && reached > h0 - inf,
        None => false,
    };
    Ok(EnergyDescentReport {
        label: candidate.label.clone(),
        x0: x0.to_vec(),
        h0,
        surviving,
        max_deviation,
        fit,
        forward: flow.forward,
        backward: flow.backward,
        h_inf,
        bound_violated,
        tolerance: tol,
        passed: max_deviation <= tol && !bound_violated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleEscape {
    pub x0: Vec<f64>,
    /// `h(x0) - h_inf`, the latest parameter the descent law allows.
    pub predicted_bound: f64,
    pub outcome: FlowOutcome,
    pub escape: Option<f64>,
    pub within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncompletenessCertificate {
    pub label: String,
    /// Caller-asserted infimum of `h`.
    pub h_inf: f64,
    pub local_timeliness: LocalTimelinessReport,
    pub samples: Vec<SampleEscape>,
    pub certified: bool,
}

/// Slack allowed between a detected escape and its predicted bound.
pub const ESCAPE_SLACK: f64 = 1e-3;

/// Certifies that the flow generated by a locally timely candidate escapes
/// no later than `h(x0) - h_inf`.
pub fn incompleteness_certificate(
    system: &DynamicalSystem,
    candidate: &CandidateObservable,
    sample_states: &[Vec<f64>],
    h_inf: f64,
    local_tol: f64,
    config: &IntegratorConfig,
) -> Result<IncompletenessCertificate> {
    let local = verify_local_timeliness(system, candidate, sample_states, local_tol)?;
    if !local.passed {
        return Err(Error::PreconditionUnverified(format!(
            "{{h, {}}} deviates from 1 by {:e}",
            candidate.label, local.max_deviation
        )));
    }
    let h = system.hamiltonian();
    let samples = sample_states
        .par_iter()
        .map(|x0| {
            let bound = h.value(x0) - h_inf;
            if bound < 0.0 {
                return Err(Error::PreconditionUnverified(format!(
                    "h({x0:?}) lies below the asserted infimum {h_inf}"
                )));
            }
            let reach = bound + (1e-2 * bound).max(1e-2);
            let (_, outcome) = integrate(system, &candidate.tau, x0, (0.0, reach), config)?;
            let escape = outcome.escape_time();
            let within_bound = escape.is_some_and(|s| s <= bound + ESCAPE_SLACK);
            Ok(SampleEscape { x0: x0.clone(), predicted_bound: bound, outcome, escape, within_bound })
        })
        .collect::<Result<Vec<_>>>()?;
    let certified = samples.iter().any(|s| s.within_bound)
        && samples.iter().all(|s| s.escape.is_none() || s.within_bound)
        && !samples.iter().any(|s| s.outcome.is_completed());
    Ok(IncompletenessCertificate {
        label: candidate.label.clone(),
        h_inf,
        local_timeliness: local,
        samples,
        certified,
    })
}

/// A near-return of a Hamiltonian orbit, which rules out any timely
/// function along it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecurrenceReport {
    pub period: f64,
    pub distance: f64,
    pub eps: f64,
}

impl RecurrenceReport {
    /// Lower bound on `|τ(c_T) - τ(c_0) - T|` for any `τ` with Lipschitz
    /// constant `lipschitz`.
    pub fn violation_lower_bound(&self, lipschitz: f64) -> f64 {
        self.period - lipschitz * self.distance
    }
}

/// First `T > t_min` with `|c_T - c_0| ≤ eps` along the Hamiltonian flow.
pub fn recurrence_obstruction(
    system: &DynamicalSystem,
    x0: &[f64],
    horizon: f64,
    eps: f64,
    t_min: Option<f64>,
    config: &IntegratorConfig,
) -> Result<Option<RecurrenceReport>> {
    system.space().check(x0)?;
    let field = HamiltonianFlow::new(system, system.hamiltonian());
    Ok(first_return(&field, x0, horizon, eps, t_min, config)?
        .map(|r| RecurrenceReport { period: r.t, distance: r.distance, eps }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PhaseSpace;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn oscillator() -> DynamicalSystem {
        DynamicalSystem::canonical(
            PhaseSpace::with_names(["q", "p"]).unwrap(),
            ScalarField::with_gradient("h", |x| 0.5 * (x[0] * x[0] + x[1] * x[1]), |x| x.to_vec()),
        )
    }

    fn halfplane() -> (DynamicalSystem, CandidateObservable) {
        let space = PhaseSpace::with_names(["q", "p"]).unwrap().with_domain(|x| x[1] > 0.0);
        let h = ScalarField::with_gradient("h", |x| 0.5 * x[1] * x[1], |x| vec![0.0, x[1]]);
        let tau = ScalarField::with_gradient("q/p", |x| x[0] / x[1], |x| vec![1.0 / x[1], -x[0] / (x[1] * x[1])]);
        (DynamicalSystem::canonical(space, h), CandidateObservable::new("q/p", tau))
    }

    #[test]
    fn timeliness_grid_must_contain_zero() {
        let (sys, tau) = halfplane();
        let err = verify_timeliness(&sys, &tau, &[vec![0.0, 1.0]], &[1.0, 2.0], 1e-6, &Default::default());
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn oscillator_coordinate_is_not_a_clock() {
        let sys = oscillator();
        let q = CandidateObservable::new("q", ScalarField::coordinate("q", 0));
        let grid: Vec<f64> = (0..=64).map(|i| i as f64 * 2.0 * PI / 64.0).collect();
        let report = verify_timeliness(&sys, &q, &[vec![0.0, 1.0]], &grid, 1e-6, &Default::default()).unwrap();
        assert!(!report.passed);
        let dev = &report.per_trajectory[0];
        // q(t) = sin t: deviation |sin t - t| peaks at the end of the grid
        assert_abs_diff_eq!(dev.max_deviation, 2.0 * PI, epsilon = 1e-8);
        assert_abs_diff_eq!(dev.worst_t, 2.0 * PI, epsilon = 1e-12);

        let local = verify_local_timeliness(&sys, &q, &[vec![0.3, 0.25]], 1e-6).unwrap();
        assert!(!local.passed);
        assert_abs_diff_eq!(local.max_deviation, 0.75, epsilon = 1e-12);
    }

    #[test]
    fn stationary_point_has_no_clock() {
        let sys = oscillator();
        let err = construct_local_clock(&sys, &[0.0, 0.0], 0.5, &Default::default(), &Default::default()).unwrap_err();
        assert!(matches!(err, Error::StationaryPoint { .. }));
    }

    #[test]
    fn free_particle_clock_values() {
        let (sys, _) = halfplane();
        let cfg = IntegratorConfig::default();
        let clock = construct_local_clock(&sys, &[0.0, 1.0], 0.5, &cfg, &ClockValidation::default()).unwrap();
        assert_eq!(clock.radius, 0.5);
        assert_eq!(clock.value(&[0.0, 1.0], &cfg).unwrap(), 0.0);
        assert_abs_diff_eq!(clock.value(&[0.2, 1.0], &cfg).unwrap(), 0.2, epsilon = 1e-9);
        // the section is q = 0, so the clock equals q/p in the ball
        assert_abs_diff_eq!(clock.value(&[-0.1, 1.2], &cfg).unwrap(), -0.1 / 1.2, epsilon = 1e-9);
        let err = clock.value(&[2.0, 1.0], &cfg).unwrap_err();
        assert!(matches!(err, Error::OutsideBall { .. }));
    }

    #[test]
    fn clock_radius_shrinks_near_boundary() {
        let (sys, _) = halfplane();
        let clock = construct_local_clock(&sys, &[0.0, 0.3], 1.0, &Default::default(), &ClockValidation::default()).unwrap();
        assert!(clock.radius < 0.3);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let fit = linear_fit(&xs, &ys).unwrap();
        assert_abs_diff_eq!(fit.slope, -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(fit.intercept, 2.0, epsilon = 1e-15);
        assert!(linear_fit(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn energy_descent_at_zero_is_exact() {
        let (sys, tau) = halfplane();
        let r = energy_descent_check(&sys, &tau, &[0.0, 1.0], &[0.0], 1e-12, Some(0.0), &Default::default()).unwrap();
        assert_eq!(r.max_deviation, 0.0);
        assert!(r.passed);
        assert!(r.fit.is_none());
    }

    #[test]
    fn certificate_gate() {
        let sys = oscillator();
        let q = CandidateObservable::new("q", ScalarField::coordinate("q", 0));
        let err = incompleteness_certificate(&sys, &q, &[vec![0.5, 0.5]], 0.0, 1e-6, &Default::default()).unwrap_err();
        assert!(matches!(err, Error::PreconditionUnverified(_)));
    }

    #[test]
    fn free_particle_has_no_recurrence() {
        let (sys, _) = halfplane();
        assert!(recurrence_obstruction(&sys, &[0.0, 1.0], 100.0, 1e-6, None, &Default::default()).unwrap().is_none());
        let osc = oscillator();
        let r = recurrence_obstruction(&osc, &[1.0, 0.0], 20.0, 1e-6, None, &Default::default()).unwrap().unwrap();
        assert_abs_diff_eq!(r.period, 2.0 * PI, epsilon = 1e-5);
        assert!(r.violation_lower_bound(1.0) > 6.0);
    }
}
