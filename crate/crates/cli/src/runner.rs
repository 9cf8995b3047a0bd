//! Scenario execution.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sha2::{Digest, Sha256};
use timekeeper::clockwork::{self, CandidateObservable, ClockValidation};
use timekeeper::flow::{integrate, sample_on_grid, IntegratorConfig, Trajectory};
use timekeeper::geometry::{DynamicalSystem, PhaseSpace};
use timekeeper::kahler::{self, PauliDemoConfig, ProjectivePoint, QuantumSystem};

use crate::builtins;
use crate::expr;
use crate::report::{CheckRecord, CheckVerdict, RunReport};
use crate::scenario::{CheckSpec, ClockExpectation, Format, PointSpec, Presence, Scenario, SystemSpec, TauSpec};
use crate::CliError;

/// Command-line overrides applied on top of a scenario.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub tol: Option<f64>,
    pub horizon: Option<f64>,
}

pub enum ResolvedSystem {
    Classical { system: DynamicalSystem, names: Vec<String> },
    Quantum(QuantumSystem),
}

/// A validated scenario with its system built.
pub struct Prepared {
    pub scenario: Scenario,
    pub source: String,
    pub system: ResolvedSystem,
    pub out_dir: Option<PathBuf>,
    pub format: Format,
}

/// Reads a scenario file, or a built-in by name.
pub fn load(target: &str) -> Result<(Scenario, String, PathBuf), CliError> {
    let path = Path::new(target);
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{target}: {e}")))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        return Ok((Scenario::from_json(&text)?, target.to_string(), base));
    }
    match builtins::find(target) {
        Some(b) => Ok((b.scenario(), format!("builtin:{}", b.name), PathBuf::new())),
        None => Err(CliError::NotFound(target.to_string())),
    }
}

pub fn prepare(mut scenario: Scenario, source: String, base: &Path, overrides: &Overrides) -> Result<Prepared, CliError> {
    if let Some(seed) = overrides.seed {
        scenario.seed = seed;
    }
    if let Some(tol) = overrides.tol {
        scenario.checks.iter_mut().for_each(|c| c.set_tolerance(tol));
    }
    if let Some(h) = overrides.horizon {
        scenario.integrator.horizon = h;
        scenario.checks.iter_mut().for_each(|c| c.set_horizon(h));
    }
    scenario.validate()?;
    let system = resolve_system(&scenario.system, base, 0)?;
    for (i, check) in scenario.checks.iter().enumerate() {
        match (&system, check.is_quantum(), check) {
            (ResolvedSystem::Classical { .. }, true, _) => {
                return Err(CliError::Invalid(format!("check {} ({}) needs a quantum system", i + 1, check.name())))
            }
            (ResolvedSystem::Quantum(_), false, CheckSpec::Recurrence { x0, .. }) => {
                if let Some(PointSpec::Real(_)) = x0 {
                    return Err(CliError::Invalid(format!("check {}: quantum x0 must be [re, im] pairs", i + 1)));
                }
            }
            (ResolvedSystem::Quantum(_), false, _) => {
                return Err(CliError::Invalid(format!("check {} ({}) needs a classical system", i + 1, check.name())))
            }
            (ResolvedSystem::Classical { names, .. }, false, _) => precheck_classical(check, names, i)?,
            _ => {}
        }
    }
    let out_dir = overrides.out.clone().or_else(|| scenario.outputs.dir.clone());
    let format = overrides.format.unwrap_or(scenario.outputs.format);
    Ok(Prepared { scenario, source, system, out_dir, format })
}

fn precheck_classical(check: &CheckSpec, names: &[String], index: usize) -> Result<(), CliError> {
    let taus: Vec<&TauSpec> = match check {
        CheckSpec::Timeliness { tau, .. }
        | CheckSpec::LocalTimeliness { tau, .. }
        | CheckSpec::EnergyDescent { tau, .. }
        | CheckSpec::Incompleteness { tau, .. } => vec![tau],
        CheckSpec::Uniqueness { tau1, tau2, .. } => vec![tau1, tau2],
        _ => vec![],
    };
    for tau in taus {
        if let TauSpec::Expr(src) = tau {
            expr::parse(src, names).map_err(|e| CliError::Parse(format!("check {} tau", index + 1), e))?;
        }
    }
    if let CheckSpec::Recurrence { x0: Some(PointSpec::Complex(_)), .. } = check {
        return Err(CliError::Invalid(format!("check {}: classical x0 must be a real vector", index + 1)));
    }
    Ok(())
}

fn resolve_system(spec: &SystemSpec, base: &Path, depth: usize) -> Result<ResolvedSystem, CliError> {
    match spec {
        SystemSpec::Builtin(name) => {
            let b = builtins::find(name).ok_or_else(|| CliError::NotFound(name.clone()))?;
            if depth > 0 {
                return Err(CliError::Invalid(format!("built-in system {name} refers to another built-in")));
            }
            resolve_system(&b.scenario().system, base, depth + 1)
        }
        SystemSpec::Inline(inline) => {
            let names = inline.coordinates.clone();
            let space = PhaseSpace::with_names(names.clone()).map_err(|e| CliError::Invalid(e.to_string()))?;
            let h = expr::scalar_field(&inline.hamiltonian, &names)
                .map_err(|e| CliError::Parse("hamiltonian".into(), e))?;
            let mut constraints = Vec::new();
            for (k, src) in inline.domain.iter().enumerate() {
                constraints
                    .push(expr::parse(src, &names).map_err(|e| CliError::Parse(format!("domain[{k}]"), e))?);
            }
            let space = if constraints.is_empty() {
                space
            } else {
                space.with_domain(move |x| constraints.iter().all(|c| c.eval(x) > 0.0))
            };
            Ok(ResolvedSystem::Classical { system: DynamicalSystem::canonical(space, h), names })
        }
        SystemSpec::Quantum(path) => {
            let full = base.join(path);
            let text = fs::read_to_string(&full).map_err(|e| CliError::Io(format!("{}: {e}", full.display())))?;
            Ok(ResolvedSystem::Quantum(QuantumSystem::from_json(&text).map_err(CliError::Model)?))
        }
        SystemSpec::QuantumInline(q) => Ok(ResolvedSystem::Quantum(QuantumSystem::from_spec(q).map_err(CliError::Model)?)),
    }
}

/// SHA-256 of the scenario with output settings cleared.
pub fn config_hash(scenario: &Scenario) -> String {
    let mut s = scenario.clone();
    s.outputs = Default::default();
    let text = serde_json::to_string(&s).expect("scenario serializes");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

struct Outcome {
    passed: bool,
    label: String,
    residuals: BTreeMap<String, f64>,
    brackets: Vec<(f64, f64)>,
    message: Option<String>,
    details: serde_json::Value,
    trajectories: Vec<(Trajectory, Vec<String>)>,
}

impl Outcome {
    fn new(passed: bool, label: impl Into<String>) -> Self {
        Self {
            passed,
            label: label.into(),
            residuals: BTreeMap::new(),
            brackets: Vec::new(),
            message: None,
            details: serde_json::Value::Null,
            trajectories: Vec::new(),
        }
    }

    fn residual(mut self, name: &str, v: f64) -> Self {
        self.residuals.insert(name.to_string(), v);
        self
    }

    fn details<T: serde::Serialize>(mut self, d: &T) -> Self {
        self.details = serde_json::to_value(d).unwrap_or(serde_json::Value::Null);
        self
    }
}

type CheckResult = Result<Outcome, timekeeper::Error>;

fn check_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Runs every check in order and writes outputs.
pub fn execute(p: &Prepared) -> Result<RunReport, CliError> {
    let want_files = p.out_dir.is_some() && p.scenario.outputs.trajectories;
    if let Some(dir) = &p.out_dir {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    let mut checks = Vec::new();
    for (i, spec) in p.scenario.checks.iter().enumerate() {
        let mut rng = check_rng(p.scenario.seed, i);
        let started = Instant::now();
        let result = match &p.system {
            ResolvedSystem::Classical { system, names } => {
                run_classical(spec, system, names, &p.scenario.integrator, &mut rng, want_files)
            }
            ResolvedSystem::Quantum(q) => run_quantum(spec, q, &p.scenario.integrator, &mut rng),
        };
        let timing_ms = started.elapsed().as_secs_f64() * 1e3;
        let mut record = CheckRecord {
            index: i + 1,
            name: spec.name().to_string(),
            label: String::new(),
            verdict: CheckVerdict::Error,
            residuals: BTreeMap::new(),
            escape_brackets: Vec::new(),
            message: None,
            details: serde_json::Value::Null,
            files: Vec::new(),
            timing_ms,
        };
        match result {
            Ok(o) => {
                record.verdict = if o.passed { CheckVerdict::Pass } else { CheckVerdict::Fail };
                record.label = o.label;
                record.residuals = o.residuals;
                record.escape_brackets = o.brackets;
                record.message = o.message;
                record.details = o.details;
                if let (true, Some(dir)) = (want_files, &p.out_dir) {
                    for (k, (traj, names)) in o.trajectories.iter().enumerate() {
                        let file = format!("{:02}_{}_{}.csv", i + 1, spec.name(), k + 1);
                        fs::write(dir.join(&file), traj.to_csv(names))
                            .map_err(|e| CliError::Io(format!("{file}: {e}")))?;
                        record.files.push(file);
                    }
                }
            }
            Err(e) => record.message = Some(e.to_string()),
        }
        checks.push(record);
    }
    let report = RunReport {
        scenario: p.scenario.name.clone(),
        source: p.source.clone(),
        config_hash: config_hash(&p.scenario),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: p.scenario.seed,
        passed: checks.iter().all(|c| c.verdict == CheckVerdict::Pass),
        checks,
    };
    if let Some(dir) = &p.out_dir {
        fs::write(dir.join("report.json"), report.to_json()).map_err(|e| CliError::Io(format!("report.json: {e}")))?;
    }
    Ok(report)
}

fn resolve_tau(
    spec: &TauSpec,
    system: &DynamicalSystem,
    names: &[String],
    cfg: &IntegratorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<CandidateObservable, timekeeper::Error> {
    match spec {
        TauSpec::Expr(src) => {
            let f = expr::scalar_field(src, names).map_err(|e| timekeeper::Error::Config(e.to_string()))?;
            Ok(CandidateObservable::new(src.trim(), f))
        }
        TauSpec::LocalClock { local_clock } => {
            let validation = ClockValidation { seed: rng.next_u64(), ..Default::default() };
            let clock = clockwork::construct_local_clock(system, &local_clock.at, local_clock.radius, cfg, &validation)?;
            Ok(CandidateObservable::new(format!("clock@{:?}", local_clock.at), clock.as_field(cfg)))
        }
    }
}

fn with_names(names: &[String]) -> Vec<String> {
    names.to_vec()
}

fn run_classical(
    spec: &CheckSpec,
    system: &DynamicalSystem,
    names: &[String],
    cfg: &IntegratorConfig,
    rng: &mut ChaCha8Rng,
    want_files: bool,
) -> CheckResult {
    match spec {
        CheckSpec::Timeliness { tau, starts, grid, tol } => {
            let tau = resolve_tau(tau, system, names, cfg, rng)?;
            let starts = starts.draw(rng);
            let grid = grid.values();
            let r = clockwork::verify_timeliness(system, &tau, &starts, &grid, *tol, cfg)?;
            let mut o = Outcome::new(r.passed, &tau.label)
                .residual("max_deviation", r.max_deviation())
                .details(&r);
            o.message = Some(format!("on the grid [{}, {}]", r.grid.0, r.grid.1));
            if want_files {
                for x0 in &starts {
                    let flow = sample_on_grid(system, system.hamiltonian(), x0, &grid, cfg)?;
                    o.trajectories.push((flow.trajectory, with_names(names)));
                }
            }
            Ok(o)
        }
        CheckSpec::LocalTimeliness { tau, samples, tol } => {
            let tau = resolve_tau(tau, system, names, cfg, rng)?;
            let r = clockwork::verify_local_timeliness(system, &tau, &samples.draw(rng), *tol)?;
            Ok(Outcome::new(r.passed, &tau.label).residual("max_deviation", r.max_deviation).details(&r))
        }
        CheckSpec::ConstructClock { points, radius, expect, samples, pairs, tol } => {
            let mut records = Vec::new();
            let mut passed = true;
            let mut worst: f64 = 0.0;
            let mut smallest = f64::INFINITY;
            for x in points.draw(rng) {
                let validation = ClockValidation {
                    samples: *samples,
                    pairs: *pairs,
                    tolerance: *tol,
                    seed: rng.next_u64(),
                    max_halvings: 10,
                };
                let result = clockwork::construct_local_clock(system, &x, *radius, cfg, &validation);
                let ok = match (&result, expect) {
                    (Ok(_), ClockExpectation::Success) => true,
                    (Err(timekeeper::Error::StationaryPoint { .. }), ClockExpectation::Stationary) => true,
                    _ => false,
                };
                passed &= ok;
                match result {
                    Ok(clock) => {
                        worst = worst.max(clock.validation_residual);
                        smallest = smallest.min(clock.radius);
                        records.push(json!({
                            "point": x,
                            "radius": clock.radius,
                            "residual": clock.validation_residual,
                            "pairs": clock.pairs_checked,
                        }));
                    }
                    Err(e) => records.push(json!({ "point": x, "error": e.to_string() })),
                }
            }
            let label = match expect {
                ClockExpectation::Success => "flow-time clock",
                ClockExpectation::Stationary => "expect stationary",
            };
            let mut o = Outcome::new(passed, label).details(&records);
            if *expect == ClockExpectation::Success {
                o = o.residual("max_two_point_residual", worst).residual("min_radius", smallest);
            }
            Ok(o)
        }
        CheckSpec::Uniqueness { tau1, tau2, starts, grid, tol } => {
            let t1 = resolve_tau(tau1, system, names, cfg, rng)?;
            let t2 = resolve_tau(tau2, system, names, cfg, rng)?;
            let r = clockwork::uniqueness_decomposition(system, &t1, &t2, &starts.draw(rng), &grid.values(), *tol, cfg)?;
            Ok(Outcome::new(r.passed, format!("{} vs {}", t1.label, t2.label))
                .residual("max_drift", r.max_drift)
                .details(&r))
        }
        CheckSpec::EnergyDescent { tau, x0, grid, h_inf, tol } => {
            let tau = resolve_tau(tau, system, names, cfg, rng)?;
            let r = clockwork::energy_descent_check(system, &tau, x0, &grid.values(), *tol, *h_inf, cfg)?;
            let slope_error = r.fit.map_or(0.0, |f| (f.slope + 1.0).abs());
            let passed = r.passed && slope_error <= *tol;
            let mut o = Outcome::new(passed, &tau.label).residual("max_deviation", r.max_deviation);
            if let Some(fit) = r.fit {
                o = o.residual("slope_error", slope_error).residual("fit_residual", fit.max_residual);
            }
            o.brackets.extend(r.forward.escape_bracket);
            let mut o = o.details(&r);
            if want_files {
                let (traj, _) = integrate(system, &tau.tau, x0, (0.0, *r.surviving.last().unwrap_or(&0.0)), cfg)?;
                o.trajectories.push((traj, with_names(names)));
            }
            Ok(o)
        }
        CheckSpec::Incompleteness { tau, samples, h_inf, tol } => {
            let tau = resolve_tau(tau, system, names, cfg, rng)?;
            let samples = samples.draw(rng);
            let c = clockwork::incompleteness_certificate(system, &tau, &samples, *h_inf, *tol, cfg)?;
            let mut o = Outcome::new(c.certified, &tau.label);
            let margin = c
                .samples
                .iter()
                .filter_map(|s| s.escape.map(|e| e - s.predicted_bound))
                .fold(f64::NEG_INFINITY, f64::max);
            o = o.residual("escape_minus_bound", margin);
            o.brackets.extend(c.samples.iter().filter_map(|s| s.outcome.escape_bracket));
            let mut o = o.details(&c);
            if want_files {
                for s in &c.samples {
                    let end = s.escape.unwrap_or(s.predicted_bound);
                    let (traj, _) = integrate(system, &tau.tau, &s.x0, (0.0, end), cfg)?;
                    o.trajectories.push((traj, with_names(names)));
                }
            }
            Ok(o)
        }
        CheckSpec::Recurrence { x0, horizon, eps, expect, period, period_tol } => {
            let x0 = match x0 {
                Some(PointSpec::Real(x)) => x.clone(),
                _ => return Err(timekeeper::Error::Config("recurrence needs a real x0".into())),
            };
            let horizon = horizon.unwrap_or(cfg.horizon);
            let r = clockwork::recurrence_obstruction(system, &x0, horizon, *eps, None, cfg)?;
            let mut o = recurrence_outcome(r, *expect, *period, *period_tol, horizon);
            if let (true, Some(r)) = (want_files, r) {
                let (traj, _) = integrate(system, system.hamiltonian(), &x0, (0.0, r.period), cfg)?;
                o.trajectories.push((traj, with_names(names)));
            }
            Ok(o)
        }
        _ => Err(timekeeper::Error::Config(format!("{} needs a quantum system", spec.name()))),
    }
}

fn recurrence_outcome(
    r: Option<clockwork::RecurrenceReport>,
    expect: Presence,
    period: Option<f64>,
    period_tol: f64,
    horizon: f64,
) -> Outcome {
    let mut o = match (r, expect) {
        (Some(r), Presence::Present) => {
            let error = period.map(|t| (r.period - t).abs());
            let passed = error.is_none_or(|e| e <= period_tol);
            let mut o = Outcome::new(passed, "near-return").residual("period", r.period).residual("distance", r.distance);
            if let Some(e) = error {
                o = o.residual("period_error", e);
            }
            o.message = Some(format!("no timely function along this orbit: violation >= {:.6}", r.violation_lower_bound(1.0)));
            o
        }
        (Some(r), Presence::Absent) => Outcome::new(false, "no return expected").residual("period", r.period),
        (None, Presence::Present) => {
            let mut o = Outcome::new(false, "near-return");
            o.message = Some(format!("no return within {horizon}"));
            o
        }
        (None, Presence::Absent) => {
            let mut o = Outcome::new(true, "no return expected");
            o.message = Some(format!("no return within {horizon}"));
            o
        }
    };
    o = o.details(&r);
    o
}

fn run_quantum(spec: &CheckSpec, q: &QuantumSystem, cfg: &IntegratorConfig, rng: &mut ChaCha8Rng) -> CheckResult {
    let n = q.dim();
    match spec {
        CheckSpec::KahlerIdentities { dims, samples, tol } => {
            let mut reports = Vec::new();
            let mut o = Outcome::new(true, format!("n in {dims:?}"));
            for &d in dims {
                let r = kahler::kahler_identities(d, *samples, rng)?;
                o.passed &= r.max_residual() <= *tol;
                o = o.residual(&format!("n{d}_max_residual"), r.max_residual());
                reports.push(r);
            }
            Ok(o.details(&reports))
        }
        CheckSpec::Schrodinger { dims, per_dim, span, tol } => {
            let mut o = Outcome::new(true, format!("n in {dims:?}, s in [0, {span}]"));
            for &d in dims {
                let mut worst: f64 = 0.0;
                for _ in 0..*per_dim {
                    let f = kahler::random_hermitian(d, rng);
                    let psi0 = kahler::random_state(d, rng);
                    worst = worst.max(kahler::schrodinger_deviation(&f, &psi0, *span, cfg)?);
                }
                o.passed &= worst <= *tol;
                o = o.residual(&format!("n{d}_max_distance"), worst);
            }
            Ok(o)
        }
        CheckSpec::Killing { expectation_count, tangent_samples, delta, tol, weinberg_floor, norm_span, norm_tol } => {
            let mut expectation_worst: f64 = 0.0;
            let mut norm_drift: f64 = 0.0;
            let grid: Vec<f64> = (0..=64).map(|i| norm_span * i as f64 / 64.0).collect();
            for k in 0..*expectation_count {
                let f = kahler::ObservableFunction::expectation(format!("F{k}"), kahler::random_hermitian(n, rng))?;
                let p = kahler::random_state(n, rng);
                expectation_worst = expectation_worst.max(kahler::killing_residual(&f, &p, *tangent_samples, *delta, rng)?);
                if k < 3 {
                    norm_drift = norm_drift.max(kahler::killing_norm_constancy(&f, &p, &grid, cfg, false)?);
                }
            }
            let mut weinberg = Vec::new();
            let mut weinberg_min = f64::INFINITY;
            for (w, p) in kahler::designated_weinberg().into_iter().filter(|(w, _)| w.dim() == n) {
                let r = kahler::killing_residual(&w, &p, *tangent_samples, *delta, rng)?;
                weinberg_min = weinberg_min.min(r);
                weinberg.push(json!({ "function": w.label, "residual": r }));
            }
            let passed = expectation_worst <= *tol
                && norm_drift <= *norm_tol
                && (weinberg.is_empty() || weinberg_min >= *weinberg_floor);
            let mut o = Outcome::new(passed, format!("{expectation_count} expectation, {} Weinberg", weinberg.len()))
                .residual("expectation_max_residual", expectation_worst)
                .residual("norm_max_drift", norm_drift);
            if !weinberg.is_empty() {
                o = o.residual("weinberg_min_residual", weinberg_min);
            }
            Ok(o.details(&weinberg))
        }
        CheckSpec::PauliDemo { random, tol, bracket_samples, orbits, min_failure, period_tol } => {
            let candidates = kahler::pauli_candidates(n, *random, rng);
            let settings = PauliDemoConfig { bracket_samples: *bracket_samples, orbits: *orbits, ..Default::default() };
            let r = kahler::pauli_obstruction_demo(q, &candidates, *tol, &settings, cfg, rng)?;
            let min_dev = r.candidates.iter().map(|c| c.deviation_at_recurrence).fold(f64::INFINITY, f64::min);
            let min_bracket = r.candidates.iter().map(|c| c.bracket_deviation).fold(f64::INFINITY, f64::min);
            let period_error = match (r.recurrence, r.predicted_period) {
                (Some(rec), Some(t)) => (rec.period - t).abs(),
                _ => f64::INFINITY,
            };
            let passed = r.passed && min_dev >= *min_failure && period_error <= *period_tol;
            let mut o = Outcome::new(passed, format!("{} candidates", candidates.len()))
                .residual("min_deviation_at_recurrence", min_dev)
                .residual("min_bracket_deviation", min_bracket)
                .residual("period_error", period_error);
            if let Some(rec) = r.recurrence {
                o = o.residual("recurrence_period", rec.period);
                o.message = Some(format!(
                    "compact phase space: orbits return after T = {:.9}, so no candidate can advance by T",
                    rec.period
                ));
            }
            Ok(o.details(&r))
        }
        CheckSpec::Recurrence { x0, horizon, eps, expect, period, period_tol } => {
            let psi0 = match x0 {
                Some(PointSpec::Complex(v)) => {
                    let c: Vec<Complex64> = v.iter().map(|[re, im]| Complex64::new(*re, *im)).collect();
                    ProjectivePoint::from_components(&c)?
                }
                Some(PointSpec::Real(_)) => {
                    return Err(timekeeper::Error::Config("quantum x0 must be [re, im] pairs".into()))
                }
                None => kahler::random_state(n, rng),
            };
            let horizon = horizon.unwrap_or_else(|| q.recurrence_period().map_or(cfg.horizon, |t| 1.25 * t));
            let r = kahler::projective_recurrence(q, &psi0, horizon, *eps, cfg)?;
            Ok(recurrence_outcome(r, *expect, *period, *period_tol, horizon))
        }
        _ => Err(timekeeper::Error::Config(format!("{} needs a classical system", spec.name()))),
    }
}
