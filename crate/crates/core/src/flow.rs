//! Integral curves of vector fields: adaptive Dormand–Prince 5(4) and the
//! implicit midpoint rule, section crossings, near-returns, and detection of
//! incomplete flows.
//!
//! A flow that cannot be continued is reported with one of three verdicts,
//! each carrying a bracket `(t_lo, t_hi)` around the escape parameter:
//!
//! * [`Verdict::LeftDomain`]: trial states kept leaving the domain predicate;
//! * [`Verdict::Blowup`]: the state norm exceeded `blowup_norm` or the field
//!   produced non-finite values;
//! * [`Verdict::StepUnderflow`]: error control drove the step below
//!   `1e3·ε·max(|t|, 1)`.
//!
//! A [`Verdict::Completed`] flow only says that no escape happened up to the
//! requested parameter. It is evidence of completeness, never a proof.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot, norm, DynamicalSystem, ScalarField};

/// |level| below which a state counts as lying on a section.
pub const LEVEL_TOL: f64 = 1e-10;
/// Minimal |d level/dt| for a crossing to count as transversal.
pub const TRANSVERSALITY_MIN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Embedded Dormand–Prince 4(5) pair with error control.
    AdaptiveRk,
    /// Fixed-step implicit midpoint rule (symplectic); the step is `max_step`.
    ImplicitMidpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub max_steps: usize,
    pub blowup_norm: f64,
    /// Largest |parameter| explored by open-ended probes.
    pub horizon: f64,
    /// Target width of escape brackets.
    pub bracket_tol: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::AdaptiveRk,
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: 0.5,
            max_steps: 10_000_000,
            blowup_norm: 1e8,
            horizon: 100.0,
            bracket_tol: 1e-6,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("rel_tol", self.rel_tol)?;
        positive("abs_tol", self.abs_tol)?;
        positive("max_step", self.max_step)?;
        positive("horizon", self.horizon)?;
        positive("bracket_tol", self.bracket_tol)?;
        if !(self.blowup_norm > 1.0) {
            return Err(Error::Config(format!("blowup_norm must exceed 1, got {}", self.blowup_norm)));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }

    pub fn with_horizon(&self, horizon: f64) -> Self {
        Self { horizon, ..self.clone() }
    }

    pub fn with_tolerances(&self, rel_tol: f64, abs_tol: f64) -> Self {
        Self { rel_tol, abs_tol, ..self.clone() }
    }
}

/// A first-order vector field on an open subset of `ℝ^d`.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;
    /// Writes the velocity at `x` into `out`.
    fn velocity(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
    fn contains(&self, x: &[f64]) -> bool;
    /// Maps an accepted state back onto the manifold the flow lives on.
    fn project(&self, _x: &mut [f64]) {}
    fn projects(&self) -> bool {
        false
    }
    fn tag(&self) -> String;
}

/// The Hamiltonian vector field of `generator` on `system`.
pub struct HamiltonianFlow<'a> {
    pub system: &'a DynamicalSystem,
    pub generator: &'a ScalarField,
}

impl<'a> HamiltonianFlow<'a> {
    pub fn new(system: &'a DynamicalSystem, generator: &'a ScalarField) -> Self {
        Self { system, generator }
    }
}

impl VectorField for HamiltonianFlow<'_> {
    fn dim(&self) -> usize {
        self.system.dim()
    }

    fn velocity(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let v = self.system.hamiltonian_vector_field(self.generator, x)?;
        out.copy_from_slice(&v);
        Ok(())
    }

    fn contains(&self, x: &[f64]) -> bool {
        self.system.space().contains(x)
    }

    fn tag(&self) -> String {
        self.generator.name().to_string()
    }
}

/// A sampled integral curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub parameter_samples: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub generator_tag: String,
}

impl Trajectory {
    pub fn new(tag: impl Into<String>) -> Self {
        Self { parameter_samples: Vec::new(), states: Vec::new(), generator_tag: tag.into() }
    }

    pub fn push(&mut self, t: f64, x: Vec<f64>) {
        self.parameter_samples.push(t);
        self.states.push(x);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> Option<(f64, &[f64])> {
        self.parameter_samples.last().map(|t| (*t, self.states.last().unwrap().as_slice()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &[f64])> {
        self.parameter_samples.iter().copied().zip(self.states.iter().map(Vec::as_slice))
    }

    /// CSV with header `t,<names>` and 17 significant digits per value.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = String::from("t");
        for n in names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (t, x) in self.iter() {
            out.push_str(&format!("{t:.16e}"));
            for v in x {
                out.push_str(&format!(",{v:.16e}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Completed,
    LeftDomain,
    Blowup,
    StepUnderflow,
    MaxSteps,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowOutcome {
    pub verdict: Verdict,
    /// Ordered `(t_lo, t_hi)` around the escape parameter.
    pub escape_bracket: Option<(f64, f64)>,
}

impl FlowOutcome {
    pub fn completed() -> Self {
        Self { verdict: Verdict::Completed, escape_bracket: None }
    }

    pub fn is_completed(&self) -> bool {
        self.verdict == Verdict::Completed
    }

    pub fn escape_time(&self) -> Option<f64> {
        self.escape_bracket.map(|(lo, hi)| 0.5 * (lo + hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FailKind {
    Domain,
    NonFinite,
    ErrorControl,
}

impl FailKind {
    fn verdict(self) -> Verdict {
        match self {
            FailKind::Domain => Verdict::LeftDomain,
            FailKind::NonFinite => Verdict::Blowup,
            FailKind::ErrorControl => Verdict::StepUnderflow,
        }
    }
}

fn eval_velocity<V: VectorField + ?Sized>(field: &V, x: &[f64], out: &mut [f64]) -> std::result::Result<(), FailKind> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FailKind::NonFinite);
    }
    if !field.contains(x) {
        return Err(FailKind::Domain);
    }
    match field.velocity(x, out) {
        Ok(()) if out.iter().all(|v| v.is_finite()) => Ok(()),
        Ok(()) => Err(FailKind::NonFinite),
        Err(_) => Err(FailKind::Domain),
    }
}

// Dormand–Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Result of one Runge–Kutta step.
#[derive(Debug, Clone)]
pub struct RkStep {
    pub x: Vec<f64>,
    /// Velocity at the new state (first stage of the next step).
    pub v: Vec<f64>,
    /// Embedded error estimate, componentwise.
    pub error: Vec<f64>,
}

/// One Dormand–Prince step of signed size `h` from `(x, v)`, `v = f(x)`.
pub fn dopri5_step<V: VectorField + ?Sized>(field: &V, x: &[f64], v: &[f64], h: f64) -> Result<RkStep> {
    dopri5_raw(field, x, v, h).map_err(|_| Error::Domain { state: x.to_vec() })
}

fn dopri5_raw<V: VectorField + ?Sized>(
    field: &V,
    x: &[f64],
    v: &[f64],
    h: f64,
) -> std::result::Result<RkStep, FailKind> {
    let d = x.len();
    let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
    k.push(v.to_vec());
    let mut stage = vec![0.0; d];
    for s in 1..7 {
        for i in 0..d {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc += A[s][j] * kj[i];
            }
            stage[i] = x[i] + h * acc;
        }
        let mut out = vec![0.0; d];
        eval_velocity(field, &stage, &mut out)?;
        k.push(out);
    }
    // stage 7 is evaluated at the 5th-order solution (FSAL)
    let x_new = stage;
    let error = (0..d).map(|i| h * (0..7).map(|j| E[j] * k[j][i]).sum::<f64>()).collect();
    let v_new = k.pop().unwrap();
    Ok(RkStep { x: x_new, v: v_new, error })
}

/// One implicit midpoint step solved by fixed-point iteration.
fn midpoint_raw<V: VectorField + ?Sized>(
    field: &V,
    x: &[f64],
    v: &[f64],
    h: f64,
) -> std::result::Result<(Vec<f64>, Vec<f64>), FailKind> {
    let d = x.len();
    let mut y: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
    let mut mid = vec![0.0; d];
    let mut f = vec![0.0; d];
    for _ in 0..100 {
        for i in 0..d {
            mid[i] = 0.5 * (x[i] + y[i]);
        }
        eval_velocity(field, &mid, &mut f)?;
        let mut change: f64 = 0.0;
        let mut scale: f64 = 1.0;
        for i in 0..d {
            let yi = x[i] + h * f[i];
            change = change.max((yi - y[i]).abs());
            scale = scale.max(yi.abs());
            y[i] = yi;
        }
        if change <= 4.0 * f64::EPSILON * scale {
            let mut v_new = vec![0.0; d];
            eval_velocity(field, &y, &mut v_new)?;
            return Ok((y, v_new));
        }
    }
    Err(FailKind::ErrorControl)
}

fn error_norm(err: &[f64], x0: &[f64], x1: &[f64], cfg: &IntegratorConfig) -> f64 {
    let d = err.len() as f64;
    let s: f64 = err
        .iter()
        .zip(x0.iter().zip(x1))
        .map(|(e, (a, b))| {
            let sc = cfg.abs_tol + cfg.rel_tol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / d).sqrt()
}

/// A single uncontrolled step of the configured method, followed by projection.
fn single_step<V: VectorField + ?Sized>(
    field: &V,
    method: Method,
    x: &[f64],
    v: &[f64],
    h: f64,
) -> std::result::Result<Vec<f64>, FailKind> {
    if h == 0.0 {
        return Ok(x.to_vec());
    }
    let mut y = match method {
        Method::AdaptiveRk => dopri5_raw(field, x, v, h)?.x,
        Method::ImplicitMidpoint => midpoint_raw(field, x, v, h)?.0,
    };
    field.project(&mut y);
    Ok(y)
}

enum Advance {
    Stepped,
    Failed(FlowOutcome),
}

struct Engine<'a, V: VectorField + ?Sized> {
    field: &'a V,
    cfg: &'a IntegratorConfig,
    t: f64,
    x: Vec<f64>,
    v: Vec<f64>,
    dir: f64,
    h: f64,
    steps: usize,
    fail: Option<(f64, FailKind)>,
    prev: Option<(f64, Vec<f64>, Vec<f64>)>,
    refine: bool,
}

impl<'a, V: VectorField + ?Sized> Engine<'a, V> {
    fn new(field: &'a V, cfg: &'a IntegratorConfig, t0: f64, x0: &[f64], dir: f64) -> Result<Self> {
        if x0.len() != field.dim() {
            return Err(Error::DimensionMismatch { expected: field.dim(), got: x0.len() });
        }
        let mut v = vec![0.0; x0.len()];
        eval_velocity(field, x0, &mut v).map_err(|_| Error::Domain { state: x0.to_vec() })?;
        let h = match cfg.method {
            Method::AdaptiveRk => initial_step(field, x0, &v, cfg),
            Method::ImplicitMidpoint => cfg.max_step,
        };
        Ok(Self {
            field,
            cfg,
            t: t0,
            x: x0.to_vec(),
            v,
            dir,
            h,
            steps: 0,
            fail: None,
            prev: None,
            refine: true,
        })
    }

    fn underflow_limit(&self) -> f64 {
        1e3 * f64::EPSILON * self.t.abs().max(1.0)
    }

    fn note_failure(&mut self, t_hi: f64, kind: FailKind) {
        let closer = match self.fail {
            Some((old, _)) => (t_hi - old) * self.dir < 0.0,
            None => true,
        };
        if closer {
            self.fail = Some((t_hi, kind));
        }
    }

    /// Takes one accepted step towards `target` without passing it.
    fn advance(&mut self, target: f64) -> Advance {
        loop {
            if self.steps >= self.cfg.max_steps {
                return Advance::Failed(FlowOutcome { verdict: Verdict::MaxSteps, escape_bracket: None });
            }
            let remaining = (target - self.t) * self.dir;
            let proposal = self.h.min(self.cfg.max_step);
            let clipped = proposal >= remaining;
            let h = if clipped { remaining } else { proposal };
            if !clipped && h < self.underflow_limit() {
                return Advance::Failed(self.underflow(h));
            }
            let t_new = if clipped { target } else { self.t + self.dir * h };
            let signed = t_new - self.t;

            let attempt = match self.cfg.method {
                Method::AdaptiveRk => dopri5_raw(self.field, &self.x, &self.v, signed).map(|s| {
                    let err = error_norm(&s.error, &self.x, &s.x, self.cfg);
                    (s.x, s.v, err)
                }),
                Method::ImplicitMidpoint => {
                    midpoint_raw(self.field, &self.x, &self.v, signed).map(|(x, v)| (x, v, 0.0))
                }
            };

            match attempt {
                Ok((mut x_new, mut v_new, err)) if err <= 1.0 => {
                    if self.field.projects() {
                        self.field.project(&mut x_new);
                        if eval_velocity(self.field, &x_new, &mut v_new).is_err() {
                            self.note_failure(t_new, FailKind::Domain);
                            self.h = 0.25 * h;
                            continue;
                        }
                    }
                    if norm(&x_new) > self.cfg.blowup_norm {
                        return Advance::Failed(self.blowup(t_new));
                    }
                    self.steps += 1;
                    let x_old = std::mem::replace(&mut self.x, x_new);
                    let v_old = std::mem::replace(&mut self.v, v_new);
                    self.prev = Some((self.t, x_old, v_old));
                    self.t = t_new;
                    if let Some((t_hi, _)) = self.fail {
                        if (t_hi - self.t) * self.dir <= 0.0 {
                            self.fail = None;
                        }
                    }
                    match self.cfg.method {
                        Method::AdaptiveRk => {
                            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                            if !clipped {
                                self.h = h * fac;
                            } else {
                                self.h = self.h.max(h * fac);
                            }
                        }
                        Method::ImplicitMidpoint => self.h = self.cfg.max_step,
                    }
                    return Advance::Stepped;
                }
                Ok((_, _, err)) => {
                    let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.2, 0.9) } else { 0.2 };
                    self.h = h * fac;
                }
                Err(FailKind::ErrorControl) => {
                    self.h = 0.5 * h;
                }
                Err(kind) => {
                    self.note_failure(t_new, kind);
                    self.h = 0.25 * h;
                }
            }
        }
    }

    fn underflow(&mut self, h: f64) -> FlowOutcome {
        let (t_hi, kind) = match self.fail {
            Some((t_hi, kind)) => (t_hi, kind),
            None => (self.t + self.dir * h.max(self.underflow_limit()), FailKind::ErrorControl),
        };
        let bracket = self.refine_bracket(t_hi, |_| true);
        FlowOutcome { verdict: kind.verdict(), escape_bracket: Some(bracket) }
    }

    fn blowup(&mut self, t_hi: f64) -> FlowOutcome {
        let limit = self.cfg.blowup_norm;
        let bracket = self.refine_bracket(t_hi, |x| norm(x) <= limit);
        FlowOutcome { verdict: Verdict::Blowup, escape_bracket: Some(bracket) }
    }

    /// Bisects between the current state and `t_hi` using fresh sub-integrations.
    fn refine_bracket(&self, t_hi: f64, healthy: impl Fn(&[f64]) -> bool) -> (f64, f64) {
        let mut lo = self.t;
        let mut hi = t_hi;
        let mut x_lo = self.x.clone();
        if self.refine {
            let mut iterations = 0;
            while (hi - lo).abs() > self.cfg.bracket_tol && iterations < 64 {
                iterations += 1;
                let mid = 0.5 * (lo + hi);
                match self.sub_integrate(lo, &x_lo, mid) {
                    Some(x) if healthy(&x) => {
                        lo = mid;
                        x_lo = x;
                    }
                    _ => hi = mid,
                }
            }
        }
        if lo <= hi {
            (lo, hi)
        } else {
            (hi, lo)
        }
    }

    fn sub_integrate(&self, t0: f64, x0: &[f64], t1: f64) -> Option<Vec<f64>> {
        let mut sub = Engine::new(self.field, self.cfg, t0, x0, self.dir).ok()?;
        sub.refine = false;
        while sub.t != t1 {
            match sub.advance(t1) {
                Advance::Stepped => {}
                Advance::Failed(_) => return None,
            }
        }
        Some(sub.x)
    }
}

/// Starting step heuristic (Hairer, Nørsett & Wanner, II.4).
fn initial_step<V: VectorField + ?Sized>(field: &V, x: &[f64], v: &[f64], cfg: &IntegratorConfig) -> f64 {
    let scale: Vec<f64> = x.iter().map(|a| cfg.abs_tol + cfg.rel_tol * a.abs()).collect();
    let rms = |u: &[f64]| {
        (u.iter().zip(&scale).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / u.len() as f64).sqrt()
    };
    let d0 = rms(x);
    let d1 = rms(v);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(cfg.max_step);
    let x1: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h0 * b).collect();
    let mut v1 = vec![0.0; x.len()];
    if eval_velocity(field, &x1, &mut v1).is_err() {
        return h0 * 0.01;
    }
    let dv: Vec<f64> = v1.iter().zip(v).map(|(a, b)| a - b).collect();
    let d2 = rms(&dv) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(cfg.max_step)
}

/// Integrates `field` from `x0` over `span`, recording every accepted step.
pub fn integrate_field<V: VectorField + ?Sized>(
    field: &V,
    x0: &[f64],
    span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<(Trajectory, FlowOutcome)> {
    cfg.validate()?;
    let (t0, t1) = span;
    if !t0.is_finite() || !t1.is_finite() {
        return Err(Error::Config(format!("span must be finite, got ({t0}, {t1})")));
    }
    if !field.contains(x0) {
        return Err(Error::Domain { state: x0.to_vec() });
    }
    let mut traj = Trajectory::new(field.tag());
    traj.push(t0, x0.to_vec());
    if t1 == t0 {
        return Ok((traj, FlowOutcome::completed()));
    }
    let dir = (t1 - t0).signum();
    let mut engine = Engine::new(field, cfg, t0, x0, dir)?;
    loop {
        match engine.advance(t1) {
            Advance::Stepped => {
                traj.push(engine.t, engine.x.clone());
                if engine.t == t1 {
                    return Ok((traj, FlowOutcome::completed()));
                }
            }
            Advance::Failed(outcome) => return Ok((traj, outcome)),
        }
    }
}

/// Flow of `generator`'s Hamiltonian vector field from `x0` over `span`.
pub fn integrate(
    system: &DynamicalSystem,
    generator: &ScalarField,
    x0: &[f64],
    span: (f64, f64),
    config: &IntegratorConfig,
) -> Result<(Trajectory, FlowOutcome)> {
    system.space().check(x0)?;
    integrate_field(&HamiltonianFlow::new(system, generator), x0, span, config)
}

/// States of a flow sampled on a parameter grid, integrated outward from 0
/// in both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFlow {
    /// Reached grid points, ascending in `t`.
    pub trajectory: Trajectory,
    pub forward: FlowOutcome,
    pub backward: FlowOutcome,
}

impl GridFlow {
    pub fn completed(&self) -> bool {
        self.forward.is_completed() && self.backward.is_completed()
    }
}

/// Samples the flow through `x0` (taken as the state at parameter 0) at
/// every point of a strictly increasing `grid`.
pub fn sample_field_on_grid<V: VectorField + ?Sized>(
    field: &V,
    x0: &[f64],
    grid: &[f64],
    cfg: &IntegratorConfig,
) -> Result<GridFlow> {
    cfg.validate()?;
    validate_grid(grid)?;
    if !field.contains(x0) {
        return Err(Error::Domain { state: x0.to_vec() });
    }
    let run = |targets: Vec<f64>, dir: f64| -> Result<(Vec<(f64, Vec<f64>)>, FlowOutcome)> {
        let mut out = Vec::new();
        if targets.is_empty() {
            return Ok((out, FlowOutcome::completed()));
        }
        let mut engine = Engine::new(field, cfg, 0.0, x0, dir)?;
        for target in targets {
            while engine.t != target {
                if let Advance::Failed(outcome) = engine.advance(target) {
                    return Ok((out, outcome));
                }
            }
            out.push((target, engine.x.clone()));
        }
        Ok((out, FlowOutcome::completed()))
    };
    let forward_targets: Vec<f64> = grid.iter().copied().filter(|t| *t > 0.0).collect();
    let backward_targets: Vec<f64> = grid.iter().rev().copied().filter(|t| *t < 0.0).collect();
    let (fwd, forward) = run(forward_targets, 1.0)?;
    let (bwd, backward) = run(backward_targets, -1.0)?;

    let mut trajectory = Trajectory::new(field.tag());
    for (t, x) in bwd.into_iter().rev() {
        trajectory.push(t, x);
    }
    if grid.contains(&0.0) {
        trajectory.push(0.0, x0.to_vec());
    }
    for (t, x) in fwd {
        trajectory.push(t, x);
    }
    Ok(GridFlow { trajectory, forward, backward })
}

pub fn sample_on_grid(
    system: &DynamicalSystem,
    generator: &ScalarField,
    x0: &[f64],
    grid: &[f64],
    cfg: &IntegratorConfig,
) -> Result<GridFlow> {
    system.space().check(x0)?;
    sample_field_on_grid(&HamiltonianFlow::new(system, generator), x0, grid, cfg)
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("parameter grid is empty".into()));
    }
    if grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::Config("parameter grid has non-finite entries".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("parameter grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Outcomes of probing a flow towards `+horizon` and `-horizon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeProbe {
    pub forward: FlowOutcome,
    pub backward: FlowOutcome,
    pub horizon: f64,
}

impl EscapeProbe {
    /// Signed escape parameter of the earliest failing direction, if any.
    pub fn escape_time(&self) -> Option<f64> {
        match (self.forward.escape_time(), self.backward.escape_time()) {
            (Some(f), Some(b)) => Some(if f.abs() <= b.abs() { f } else { b }),
            (f, b) => f.or(b),
        }
    }
}

pub fn probe_escape(
    system: &DynamicalSystem,
    generator: &ScalarField,
    x0: &[f64],
    config: &IntegratorConfig,
) -> Result<EscapeProbe> {
    let (_, forward) = integrate(system, generator, x0, (0.0, config.horizon), config)?;
    let (_, backward) = integrate(system, generator, x0, (0.0, -config.horizon), config)?;
    Ok(EscapeProbe { forward, backward, horizon: config.horizon })
}

/// Midpoint of the escape bracket of the earliest failing direction; `None`
/// when both directions reach the horizon, which is evidence of (not proof
/// of) completeness up to the horizon.
pub fn escape_time(
    system: &DynamicalSystem,
    generator: &ScalarField,
    x0: &[f64],
    config: &IntegratorConfig,
) -> Result<Option<f64>> {
    Ok(probe_escape(system, generator, x0, config)?.escape_time())
}

/// A hypersurface `{level = 0}` crossed transversally by a flow.
#[derive(Debug, Clone)]
pub struct Section {
    pub level: ScalarField,
    pub anchor: Vec<f64>,
    /// |d level/dt| at the anchor along the generating flow.
    pub transversality: f64,
}

impl Section {
    pub fn new(
        system: &DynamicalSystem,
        generator: &ScalarField,
        level: ScalarField,
        anchor: &[f64],
    ) -> Result<Self> {
        let value = level.value(anchor);
        if !(value.abs() <= LEVEL_TOL) {
            return Err(Error::InvalidSection(format!("anchor is off the section (level {value:e})")));
        }
        let rate = dot(
            &system.gradient(&level, anchor)?,
            &system.hamiltonian_vector_field(generator, anchor)?,
        );
        if !(rate.abs() > TRANSVERSALITY_MIN) {
            return Err(Error::InvalidSection(format!("flow is tangent at the anchor (rate {rate:e})")));
        }
        Ok(Self { level, anchor: anchor.to_vec(), transversality: rate.abs() })
    }

    /// Affine hyperplane through `anchor` with Euclidean normal equal to the
    /// generator's field there.
    pub fn hyperplane(system: &DynamicalSystem, generator: &ScalarField, anchor: &[f64]) -> Result<Self> {
        let normal = system.hamiltonian_vector_field(generator, anchor)?;
        let n2 = dot(&normal, &normal);
        if !(n2.sqrt() > TRANSVERSALITY_MIN) {
            return Err(Error::InvalidSection("flow vanishes at the anchor".into()));
        }
        let (a, nrm) = (anchor.to_vec(), normal.clone());
        let level = ScalarField::with_gradient(
            "section",
            move |y| y.iter().zip(&a).zip(&nrm).map(|((yi, ai), ni)| (yi - ai) * ni).sum(),
            move |_| normal.clone(),
        );
        Ok(Self { level, anchor: anchor.to_vec(), transversality: n2 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crossing {
    pub t: f64,
    pub state: Vec<f64>,
    /// Signed d level/dt at the crossing.
    pub rate: f64,
}

/// First parameter of the given sign at which the flow meets `section`.
/// A start state already on the section crosses at `t = 0`.
pub fn first_crossing(
    system: &DynamicalSystem,
    generator: &ScalarField,
    x0: &[f64],
    section: &Section,
    direction: Direction,
    config: &IntegratorConfig,
) -> Result<Crossing> {
    crossing_search(system, generator, x0, section, direction, config, true)
}

/// Like [`first_crossing`] but ignores the start state, so a start on the
/// section yields the next return to it.
pub fn next_crossing(
    system: &DynamicalSystem,
    generator: &ScalarField,
    x0: &[f64],
    section: &Section,
    direction: Direction,
    config: &IntegratorConfig,
) -> Result<Crossing> {
    crossing_search(system, generator, x0, section, direction, config, false)
}

fn hermite(t0: f64, x0: &[f64], v0: &[f64], t1: f64, x1: &[f64], v1: &[f64], t: f64) -> Vec<f64> {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let (s2, s3) = (s * s, s * s * s);
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    (0..x0.len())
        .map(|i| h00 * x0[i] + h10 * h * v0[i] + h01 * x1[i] + h11 * h * v1[i])
        .collect()
}

fn crossing_search(
    system: &DynamicalSystem,
    generator: &ScalarField,
    x0: &[f64],
    section: &Section,
    direction: Direction,
    config: &IntegratorConfig,
    include_start: bool,
) -> Result<Crossing> {
    config.validate()?;
    system.space().check(x0)?;
    let field = HamiltonianFlow::new(system, generator);
    let level = &section.level;
    let finish = |t: f64, state: Vec<f64>| -> Result<Crossing> {
        let rate = dot(
            &system.gradient(level, &state)?,
            &system.hamiltonian_vector_field(generator, &state)?,
        );
        if !(rate.abs() > TRANSVERSALITY_MIN) {
            return Err(Error::TangentialCrossing { t, transversality: rate.abs() });
        }
        Ok(Crossing { t, state, rate })
    };

    let l0 = level.value(x0);
    if include_start && l0.abs() <= LEVEL_TOL {
        return finish(0.0, x0.to_vec());
    }
    let mut reference = if l0.abs() > LEVEL_TOL { Some(l0.signum()) } else { None };

    let dir = direction.sign();
    let target = dir * config.horizon;
    let mut engine = Engine::new(&field, config, 0.0, x0, dir)?;
    loop {
        match engine.advance(target) {
            Advance::Failed(outcome) => {
                return Err(Error::NoCrossing(format!("flow escaped ({:?})", outcome.verdict)));
            }
            Advance::Stepped => {}
        }
        let l = level.value(&engine.x);
        match reference {
            None => {
                if l.abs() > LEVEL_TOL {
                    reference = Some(l.signum());
                }
            }
            Some(sign) => {
                if l.abs() <= LEVEL_TOL {
                    return finish(engine.t, engine.x.clone());
                }
                if l.signum() != sign {
                    let (ta, xa, va) = engine.prev.clone().expect("accepted step has a predecessor");
                    let (t, state) = locate(&field, config.method, level, (ta, &xa, &va), (engine.t, &engine.x, &engine.v), sign);
                    return finish(t, state);
                }
            }
        }
        if engine.t == target {
            return Err(Error::NoCrossing(format!("horizon {}", config.horizon)));
        }
    }
}

/// Root of `level` along one accepted step: Hermite pre-localisation, then
/// bisection on states produced by uncontrolled partial steps.
fn locate<V: VectorField + ?Sized>(
    field: &V,
    method: Method,
    level: &ScalarField,
    a: (f64, &[f64], &[f64]),
    b: (f64, &[f64], &[f64]),
    sign_a: f64,
) -> (f64, Vec<f64>) {
    let (ta, xa, va) = a;
    let (tb, xb, vb) = b;
    let state_at = |t: f64| single_step(field, method, xa, va, t - ta).ok();
    let same_side = |x: &[f64]| level.value(x).signum() == sign_a;

    let (mut lo, mut hi) = (ta, tb);
    {
        let (mut l, mut h) = (ta, tb);
        for _ in 0..60 {
            let m = 0.5 * (l + h);
            if same_side(&hermite(ta, xa, va, tb, xb, vb, m)) {
                l = m;
            } else {
                h = m;
            }
        }
        let guess = 0.5 * (l + h);
        let w = 1e-4 * (tb - ta);
        let (cl, ch) = (guess - w, guess + w);
        let inside = |t: f64| (t - ta) * (tb - t) > 0.0;
        if inside(cl) && inside(ch) {
            if let (Some(sl), Some(sh)) = (state_at(cl), state_at(ch)) {
                if same_side(&sl) && !same_side(&sh) {
                    lo = cl;
                    hi = ch;
                }
            }
        }
    }

    let mut best = (tb, xb.to_vec());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let Some(s) = state_at(mid) else {
            hi = mid;
            continue;
        };
        let l = level.value(&s);
        best = (mid, s);
        if l.abs() <= LEVEL_TOL || (hi - lo).abs() <= 4.0 * f64::EPSILON * mid.abs().max(1.0) {
            break;
        }
        if l.signum() == sign_a {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    best
}

/// max over samples of |f(c_t) - f(c_0)|.
pub fn drift_along(field: &ScalarField, trajectory: &Trajectory) -> Result<f64> {
    let Some(first) = trajectory.states.first() else {
        return Ok(0.0);
    };
    let f0 = field.value(first);
    if !f0.is_finite() {
        return Err(Error::Domain { state: first.clone() });
    }
    let mut drift: f64 = 0.0;
    for x in &trajectory.states {
        let f = field.value(x);
        if !f.is_finite() {
            return Err(Error::Domain { state: x.clone() });
        }
        drift = drift.max((f - f0).abs());
    }
    Ok(drift)
}

/// A near-return `|c_T - c_0| ≤ eps` of a flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Return {
    pub t: f64,
    pub distance: f64,
}

/// First local minimum of `|c_t - c_0|` beyond `t_min` whose value is at
/// most `eps`, searched up to `horizon`. `t_min` defaults to ten times the
/// first accepted step.
pub fn first_return<V: VectorField + ?Sized>(
    field: &V,
    x0: &[f64],
    horizon: f64,
    eps: f64,
    t_min: Option<f64>,
    cfg: &IntegratorConfig,
) -> Result<Option<Return>> {
    if !(eps > 0.0) || !(horizon > 0.0) {
        return Err(Error::Config("eps and horizon must be positive".into()));
    }
    let (traj, _) = integrate_field(field, x0, (0.0, horizon), cfg)?;
    if traj.len() < 3 {
        return Ok(None);
    }
    let t_min = t_min.unwrap_or(10.0 * traj.parameter_samples[1]);
    let dist2 = |x: &[f64]| x.iter().zip(x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let d: Vec<f64> = traj.states.iter().map(|x| dist2(x)).collect();
    let velocity = |x: &[f64]| {
        let mut v = vec![0.0; x.len()];
        field.velocity(x, &mut v).map(|_| v)
    };

    for i in 1..traj.len() - 1 {
        let ti = traj.parameter_samples[i];
        if ti < t_min || !(d[i] <= d[i - 1] && d[i] <= d[i + 1]) {
            continue;
        }
        let (ta, tb) = (traj.parameter_samples[i - 1], traj.parameter_samples[i + 1]);
        let xa = &traj.states[i - 1];
        let xi = &traj.states[i];
        let va = velocity(xa)?;
        let vi = velocity(xi)?;
        let eval = |t: f64| -> f64 {
            let s = if t <= ti {
                single_step(field, cfg.method, xa, &va, t - ta)
            } else {
                single_step(field, cfg.method, xi, &vi, t - ti)
            };
            s.map(|x| dist2(&x)).unwrap_or(f64::INFINITY)
        };
        let (t_star, d_star) = golden_minimum(eval, ta, tb);
        if d_star.sqrt() <= eps && t_star >= t_min {
            return Ok(Some(Return { t: t_star, distance: d_star.sqrt() }));
        }
    }
    Ok(None)
}

fn golden_minimum(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * a.abs().max(1.0) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}
