//! Finite-dimensional quantum mechanics as a dynamical system.
//!
//! States are rays of `ℂⁿ`, stored as unit representatives whose first
//! component of largest modulus is real and positive. Tangent vectors are
//! horizontal lifts (orthogonal to the representative). On lifts the inner
//! product splits as `⟨X, Y⟩ = g(X, Y) + iΩ(X, Y)` and `J` is multiplication
//! by `i`. Inner products are antilinear in the first slot.
//!
//! The Hamiltonian field of an expectation function `f = ⟨ψ, Fψ⟩` is lifted
//! as `-i(F - f)ψ`, so its flow is the projected Schrödinger orbit
//! `e^{-isF}ψ`. This is the Hamiltonian field for the form `2Ω`; the real
//! chart below carries `2·Σ dq∧dp` accordingly.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clockwork::{RecurrenceReport, TrajectoryDeviation};
use crate::error::{Error, Result};
use crate::flow::{
    dopri5_step, first_return, integrate_field, sample_field_on_grid, FlowOutcome, IntegratorConfig, Trajectory,
    VectorField,
};
use crate::geometry::{DynamicalSystem, PhaseSpace, ScalarField, SymplecticForm};

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

/// Largest tolerated `max |H - H†|`.
pub const HERMITICITY_TOL: f64 = 1e-12;
/// Relative gap below which two moduli count as tied when fixing the phase.
const TIE_TOL: f64 = 1e-10;

const I: Complex64 = Complex64::new(0.0, 1.0);

fn inner(a: &CVector, b: &CVector) -> Complex64 {
    a.dotc(b)
}

fn hermiticity_residual(m: &CMatrix) -> f64 {
    let mut r: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            r = r.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    r
}

fn check_hermitian(m: &CMatrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
    }
    let r = hermiticity_residual(m);
    if !(r <= HERMITICITY_TOL) {
        return Err(Error::NotHermitian(r));
    }
    Ok(())
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn spectrum(m: &CMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// A Hamiltonian on `ℂⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumSystem {
    hamiltonian: CMatrix,
}

/// JSON layout: `{"dim": n, "hamiltonian": [[re, im], ...]}`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantumSystemSpec {
    pub dim: usize,
    pub hamiltonian: Vec<[f64; 2]>,
}

impl QuantumSystem {
    pub fn new(hamiltonian: CMatrix) -> Result<Self> {
        if hamiltonian.nrows() < 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: hamiltonian.nrows() });
        }
        check_hermitian(&hamiltonian)?;
        Ok(Self { hamiltonian })
    }

    pub fn diagonal(energies: &[f64]) -> Result<Self> {
        let d: Vec<Complex64> = energies.iter().map(|e| Complex64::new(*e, 0.0)).collect();
        Self::new(CMatrix::from_diagonal(&CVector::from_vec(d)))
    }

    pub fn from_spec(spec: &QuantumSystemSpec) -> Result<Self> {
        let n = spec.dim;
        if spec.hamiltonian.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, got: spec.hamiltonian.len() });
        }
        let m = CMatrix::from_row_iterator(n, n, spec.hamiltonian.iter().map(|[re, im]| Complex64::new(*re, *im)));
        Self::new(m)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: QuantumSystemSpec =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("quantum system JSON: {e}")))?;
        Self::from_spec(&spec)
    }

    pub fn to_spec(&self) -> QuantumSystemSpec {
        let n = self.dim();
        let mut hamiltonian = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let z = self.hamiltonian[(i, j)];
                hamiltonian.push([z.re, z.im]);
            }
        }
        QuantumSystemSpec { dim: n, hamiltonian }
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.nrows()
    }

    pub fn hamiltonian(&self) -> &CMatrix {
        &self.hamiltonian
    }

    pub fn spectrum(&self) -> Vec<f64> {
        spectrum(&self.hamiltonian)
    }

    /// The energy function `⟨ψ, Hψ⟩`.
    pub fn energy(&self) -> ObservableFunction {
        ObservableFunction { label: "H".into(), kind: ObservableKind::Expectation(self.hamiltonian.clone()) }
    }

    /// Least common period of every projective `h`-orbit, if the spectral
    /// gaps are commensurate.
    pub fn recurrence_period(&self) -> Option<f64> {
        least_common_period(&self.spectrum())
    }
}

/// A ray of `ℂⁿ` with its canonical representative.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectivePoint {
    representative: CVector,
}

fn fixed_index(v: &CVector) -> usize {
    let max = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    v.iter().position(|z| z.norm() >= max * (1.0 - TIE_TOL)).unwrap_or(0)
}

impl ProjectivePoint {
    pub fn new(v: CVector) -> Result<Self> {
        Self::fix_phase(&v).map(|(p, _)| p)
    }

    pub fn from_components(components: &[Complex64]) -> Result<Self> {
        Self::new(CVector::from_column_slice(components))
    }

    /// The canonical point and the unit-modulus factor `c` with
    /// `representative = c·v/|v|`.
    pub fn fix_phase(v: &CVector) -> Result<(Self, Complex64)> {
        let n = v.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::ZeroVector);
        }
        let k = fixed_index(v);
        let phase = v[k].conj() / v[k].norm();
        let mut rep = v * (phase / n);
        rep[k] = Complex64::new(rep[k].norm(), 0.0);
        Ok((Self { representative: rep }, phase))
    }

    pub fn representative(&self) -> &CVector {
        &self.representative
    }

    pub fn dim(&self) -> usize {
        self.representative.len()
    }

    /// Index of the component made real and positive.
    pub fn fixed_index(&self) -> usize {
        fixed_index(&self.representative)
    }

    /// `[Re ψ, Im ψ]`.
    pub fn to_real(&self) -> Vec<f64> {
        to_real(&self.representative)
    }

    pub fn from_real(x: &[f64]) -> Result<Self> {
        Self::new(from_real(x))
    }

    /// `min_θ |ψ - e^{iθ}φ|`.
    pub fn distance(&self, other: &ProjectivePoint) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        let a = &self.representative;
        let b = &other.representative;
        let overlap = inner(b, a);
        let phase = if overlap.norm() > 0.0 { overlap / overlap.norm() } else { Complex64::new(1.0, 0.0) };
        Ok((a - b * phase).norm())
    }
}

fn to_real(v: &CVector) -> Vec<f64> {
    v.iter().map(|z| z.re).chain(v.iter().map(|z| z.im)).collect()
}

fn from_real(x: &[f64]) -> CVector {
    let n = x.len() / 2;
    CVector::from_iterator(n, (0..n).map(|i| Complex64::new(x[i], x[n + i])))
}

/// A tangent vector to projective space, as a horizontal lift.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectiveTangent {
    base: ProjectivePoint,
    vector: CVector,
}

impl ProjectiveTangent {
    pub fn new(base: ProjectivePoint, vector: CVector) -> Result<Self> {
        if vector.len() != base.dim() {
            return Err(Error::DimensionMismatch { expected: base.dim(), got: vector.len() });
        }
        let overlap = inner(base.representative(), &vector).norm();
        if !(overlap <= 1e-12) {
            return Err(Error::NotHorizontal(overlap));
        }
        Ok(Self { base, vector })
    }

    /// Tangent of the ray through `raw_base` represented by the displacement
    /// `raw_vector` of `raw_base`.
    pub fn from_lift(raw_base: &CVector, raw_vector: &CVector) -> Result<Self> {
        if raw_vector.len() != raw_base.len() {
            return Err(Error::DimensionMismatch { expected: raw_base.len(), got: raw_vector.len() });
        }
        let (base, phase) = ProjectivePoint::fix_phase(raw_base)?;
        let v = raw_vector * (phase / raw_base.norm());
        Ok(Self::horizontal(base, v))
    }

    /// Removes the component along the representative.
    pub fn horizontal(base: ProjectivePoint, vector: CVector) -> Self {
        let rep = base.representative();
        let vector = &vector - rep * inner(rep, &vector);
        Self { base, vector }
    }

    pub fn base(&self) -> &ProjectivePoint {
        &self.base
    }

    pub fn vector(&self) -> &CVector {
        &self.vector
    }

    /// The complex structure: multiplication by `i`.
    pub fn j(&self) -> Self {
        Self { base: self.base.clone(), vector: &self.vector * I }
    }
}

/// `(g, Ω) = (Re⟨X, Y⟩, Im⟨X, Y⟩)`.
pub fn kahler_forms(x: &ProjectiveTangent, y: &ProjectiveTangent) -> Result<(f64, f64)> {
    if x.base.dim() != y.base.dim() {
        return Err(Error::DimensionMismatch { expected: x.base.dim(), got: y.base.dim() });
    }
    if x.base.distance(&y.base)? > 1e-12 {
        return Err(Error::BaseMismatch);
    }
    let z = inner(&x.vector, &y.vector);
    Ok((z.re, z.im))
}

/// A smooth function of expectation values, with its partial derivatives.
#[derive(Clone)]
pub struct WeinbergFunction {
    pub observables: Vec<CMatrix>,
    value: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    partials: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
}

impl WeinbergFunction {
    pub fn new(
        observables: Vec<CMatrix>,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        partials: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        let n = observables.first().map(|m| m.nrows()).ok_or_else(|| Error::Config("no observables".into()))?;
        for m in &observables {
            if m.nrows() != n {
                return Err(Error::DimensionMismatch { expected: n, got: m.nrows() });
            }
            check_hermitian(m)?;
        }
        Ok(Self { observables, value: Arc::new(value), partials: Arc::new(partials) })
    }

    /// `⟨F⟩²`.
    pub fn square(f: CMatrix) -> Result<Self> {
        Self::new(vec![f], |e| e[0] * e[0], |e| vec![2.0 * e[0]])
    }

    /// `⟨F⟩⟨G⟩`.
    pub fn product(f: CMatrix, g: CMatrix) -> Result<Self> {
        Self::new(vec![f, g], |e| e[0] * e[1], |e| vec![e[1], e[0]])
    }

    /// `exp⟨F⟩`.
    pub fn exponential(f: CMatrix) -> Result<Self> {
        Self::new(vec![f], |e| e[0].exp(), |e| vec![e[0].exp()])
    }
}

impl fmt::Debug for WeinbergFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeinbergFunction").field("observables", &self.observables.len()).finish()
    }
}

#[derive(Debug, Clone)]
pub enum ObservableKind {
    Expectation(CMatrix),
    Weinberg(WeinbergFunction),
}

/// A phase-space function on projective space.
#[derive(Debug, Clone)]
pub struct ObservableFunction {
    pub label: String,
    pub kind: ObservableKind,
}

impl ObservableFunction {
    pub fn expectation(label: impl Into<String>, f: CMatrix) -> Result<Self> {
        check_hermitian(&f)?;
        Ok(Self { label: label.into(), kind: ObservableKind::Expectation(f) })
    }

    pub fn weinberg(label: impl Into<String>, w: WeinbergFunction) -> Self {
        Self { label: label.into(), kind: ObservableKind::Weinberg(w) }
    }

    pub fn zero(n: usize) -> Self {
        Self { label: "0".into(), kind: ObservableKind::Expectation(CMatrix::zeros(n, n)) }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            ObservableKind::Expectation(f) => f.nrows(),
            ObservableKind::Weinberg(w) => w.observables[0].nrows(),
        }
    }

    pub fn is_expectation(&self) -> bool {
        matches!(self.kind, ObservableKind::Expectation(_))
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if self.dim() != n {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: n });
        }
        Ok(())
    }

    /// Value at the unit vector `psi` and the Hermitian matrix whose
    /// expectation has the same differential there.
    fn linearize(&self, psi: &CVector) -> (f64, CMatrix) {
        match &self.kind {
            ObservableKind::Expectation(f) => (expect(f, psi), f.clone()),
            ObservableKind::Weinberg(w) => {
                let e: Vec<f64> = w.observables.iter().map(|m| expect(m, psi)).collect();
                let c = (w.partials)(&e);
                let mut eff = CMatrix::zeros(psi.len(), psi.len());
                for (ci, m) in c.iter().zip(&w.observables) {
                    eff += m * Complex64::new(*ci, 0.0);
                }
                ((w.value)(&e), eff)
            }
        }
    }

    fn value_at(&self, psi: &CVector) -> f64 {
        match &self.kind {
            ObservableKind::Expectation(f) => expect(f, psi),
            ObservableKind::Weinberg(w) => {
                let e: Vec<f64> = w.observables.iter().map(|m| expect(m, psi)).collect();
                (w.value)(&e)
            }
        }
    }
}

fn expect(f: &CMatrix, psi: &CVector) -> f64 {
    inner(psi, &(f * psi)).re
}

pub fn expectation_value(obs: &ObservableFunction, psi: &ProjectivePoint) -> Result<f64> {
    obs.check_dim(psi.dim())?;
    Ok(obs.value_at(psi.representative()))
}

/// Horizontal lift of the Hamiltonian field of `obs` at the unit vector
/// `psi`: `-i(F - ⟨F⟩)ψ` with `F` the linearization of `obs`.
fn lift_at(obs: &ObservableFunction, psi: &CVector) -> CVector {
    let (_, f) = obs.linearize(psi);
    let mean = expect(&f, psi);
    (f * psi - psi * Complex64::new(mean, 0.0)) * (-I)
}

/// The Hamiltonian field of `obs` at `psi`.
pub fn hamiltonian_lift(obs: &ObservableFunction, psi: &ProjectivePoint) -> Result<ProjectiveTangent> {
    obs.check_dim(psi.dim())?;
    let v = lift_at(obs, psi.representative());
    Ok(ProjectiveTangent::horizontal(psi.clone(), v))
}

/// The lifted Hamiltonian field on `ℝ^{2n} ≅ ℂⁿ`. Each accepted step is
/// renormalized and, unless disabled, put back into phase-fixed form.
#[derive(Debug, Clone)]
pub struct ProjectiveFlow {
    obs: ObservableFunction,
    phase_fix: bool,
}

impl ProjectiveFlow {
    pub fn new(obs: ObservableFunction) -> Self {
        Self { obs, phase_fix: true }
    }

    /// Keeps the phase of the lift instead of fixing it.
    pub fn unfixed(obs: ObservableFunction) -> Self {
        Self { obs, phase_fix: false }
    }
}

impl VectorField for ProjectiveFlow {
    fn dim(&self) -> usize {
        2 * self.obs.dim()
    }

    fn velocity(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let psi = from_real(x);
        let n = psi.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Domain { state: x.to_vec() });
        }
        let (_, f) = self.obs.linearize(&(&psi / Complex64::new(n, 0.0)));
        let mean = expect(&f, &psi) / (n * n);
        let v = (f * &psi - &psi * Complex64::new(mean, 0.0)) * (-I);
        out.copy_from_slice(&to_real(&v));
        Ok(())
    }

    fn contains(&self, x: &[f64]) -> bool {
        let n2: f64 = x.iter().map(|v| v * v).sum();
        n2 > 0.0 && n2.is_finite()
    }

    fn project(&self, x: &mut [f64]) {
        let psi = from_real(x);
        let fixed = if self.phase_fix {
            ProjectivePoint::new(psi).map(|p| p.representative)
        } else {
            let n = psi.norm();
            Ok(psi / Complex64::new(n, 0.0))
        };
        if let Ok(v) = fixed {
            x.copy_from_slice(&to_real(&v));
        }
    }

    fn projects(&self) -> bool {
        true
    }

    fn tag(&self) -> String {
        self.obs.label.clone()
    }
}

/// Integrates the Hamiltonian flow of `obs` on projective space. States in
/// the trajectory are `[Re ψ, Im ψ]` of phase-fixed representatives.
pub fn projective_flow(
    system: &QuantumSystem,
    obs: &ObservableFunction,
    psi0: &ProjectivePoint,
    span: (f64, f64),
    config: &IntegratorConfig,
) -> Result<(Trajectory, FlowOutcome)> {
    obs.check_dim(system.dim())?;
    obs.check_dim(psi0.dim())?;
    integrate_field(&ProjectiveFlow::new(obs.clone()), &psi0.to_real(), span, config)
}

/// Largest distance between the integrated flow of `⟨F⟩` and the projected
/// orbit `e^{-isF}ψ0` (matrix exponential) over the accepted steps on
/// `[0, span]`.
pub fn schrodinger_deviation(
    f: &CMatrix,
    psi0: &ProjectivePoint,
    span: f64,
    config: &IntegratorConfig,
) -> Result<f64> {
    let obs = ObservableFunction::expectation("F", f.clone())?;
    obs.check_dim(psi0.dim())?;
    let (traj, outcome) = integrate_field(&ProjectiveFlow::new(obs), &psi0.to_real(), (0.0, span), config)?;
    if !outcome.is_completed() {
        return Ok(f64::INFINITY);
    }
    let mut worst: f64 = 0.0;
    for (s, x) in traj.iter() {
        let oracle = ProjectivePoint::new((f * Complex64::new(0.0, -s)).exp() * psi0.representative())?;
        worst = worst.max(ProjectivePoint::from_real(x)?.distance(&oracle)?);
    }
    Ok(worst)
}

/// Points of a trajectory produced by [`projective_flow`].
pub fn trajectory_points(trajectory: &Trajectory) -> Result<Vec<ProjectivePoint>> {
    trajectory.states.iter().map(|x| ProjectivePoint::from_real(x)).collect()
}

/// Time-`delta` flow map of the unfixed lift, by eight fixed Dormand–Prince
/// steps.
fn flow_map(field: &ProjectiveFlow, x: &[f64], delta: f64) -> Result<Vec<f64>> {
    const STEPS: usize = 8;
    let mut x = x.to_vec();
    field.project(&mut x);
    if delta == 0.0 {
        return Ok(x);
    }
    let h = delta / STEPS as f64;
    let mut v = vec![0.0; x.len()];
    for _ in 0..STEPS {
        field.velocity(&x, &mut v)?;
        x = dopri5_step(field, &x, &v, h)?.x;
        field.project(&mut x);
    }
    Ok(x)
}

/// Metric `g` between the pushforwards of `X` and `Y` under the flow map.
fn transported_metric(
    field: &ProjectiveFlow,
    psi: &CVector,
    x: &CVector,
    y: &CVector,
    delta: f64,
    eps: f64,
) -> Result<f64> {
    let push = |t: &CVector| -> Result<CVector> {
        let plus = from_real(&flow_map(field, &to_real(&(psi + t * Complex64::new(eps, 0.0))), delta)?);
        let minus = from_real(&flow_map(field, &to_real(&(psi - t * Complex64::new(eps, 0.0))), delta)?);
        Ok((plus - minus) / Complex64::new(2.0 * eps, 0.0))
    };
    let base = from_real(&flow_map(field, &to_real(psi), delta)?);
    let horizontal = |v: CVector| &v - &base * inner(&base, &v);
    let xp = horizontal(push(x)?);
    let yp = horizontal(push(y)?);
    Ok(inner(&xp, &yp).re)
}

/// Step of the finite-difference pushforward in [`killing_residual`].
pub const KILLING_FD_STEP: f64 = 1e-5;

/// Largest `|g(X', Y') - g(X, Y)| / delta` over random unit tangent pairs,
/// where primes denote transport by the time-`delta` flow of `obs`.
pub fn killing_residual<R: Rng + ?Sized>(
    obs: &ObservableFunction,
    psi: &ProjectivePoint,
    tangent_samples: usize,
    delta: f64,
    rng: &mut R,
) -> Result<f64> {
    obs.check_dim(psi.dim())?;
    if !(delta != 0.0 && delta.is_finite()) {
        return Err(Error::Config(format!("delta must be finite and nonzero, got {delta}")));
    }
    let field = ProjectiveFlow::unfixed(obs.clone());
    let rep = psi.representative();
    let mut worst: f64 = 0.0;
    for _ in 0..tangent_samples {
        let x = random_tangent(psi, rng).vector;
        let y = random_tangent(psi, rng).vector;
        let moved = transported_metric(&field, rep, &x, &y, delta, KILLING_FD_STEP)?;
        let still = transported_metric(&field, rep, &x, &y, 0.0, KILLING_FD_STEP)?;
        worst = worst.max((moved - still).abs() / delta.abs());
    }
    Ok(worst)
}

/// Largest drift of `g(F, F)` along the flow of `obs` sampled on `s_grid`.
/// Non-expectation inputs are refused unless `diagnostic` is set.
pub fn killing_norm_constancy(
    obs: &ObservableFunction,
    psi0: &ProjectivePoint,
    s_grid: &[f64],
    config: &IntegratorConfig,
    diagnostic: bool,
) -> Result<f64> {
    obs.check_dim(psi0.dim())?;
    if !obs.is_expectation() && !diagnostic {
        return Err(Error::KindMismatch(format!("{} is not an expectation function", obs.label)));
    }
    let flow = sample_field_on_grid(&ProjectiveFlow::new(obs.clone()), &psi0.to_real(), s_grid, config)?;
    let norm2 = |x: &[f64]| {
        let psi = from_real(x);
        let psi = &psi / Complex64::new(psi.norm(), 0.0);
        lift_at(obs, &psi).norm_squared()
    };
    let n0 = norm2(&psi0.to_real());
    Ok(flow.trajectory.iter().map(|(_, x)| (norm2(x) - n0).abs()).fold(0.0, f64::max))
}

/// Affine real chart around the phase-fixed component `fixed`:
/// coordinates `(Re z_j, Im z_j)` for `j ≠ fixed`, with
/// `ψ_fixed = sqrt(1 - |z|²)`. The form is `2·Σ dq∧dp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RealChart {
    n: usize,
    fixed: usize,
}

impl RealChart {
    pub fn new(n: usize, fixed: usize) -> Result<Self> {
        if n < 2 || fixed >= n {
            return Err(Error::Config(format!("chart index {fixed} invalid for dimension {n}")));
        }
        Ok(Self { n, fixed })
    }

    pub fn anchored_at(p: &ProjectivePoint) -> Self {
        Self { n: p.dim(), fixed: p.fixed_index() }
    }

    pub fn fixed(&self) -> usize {
        self.fixed
    }

    pub fn dof(&self) -> usize {
        self.n - 1
    }

    fn others(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |j| *j != self.fixed)
    }

    /// The fixed component has become too small for a well-conditioned chart.
    pub fn needs_reanchor(&self, p: &ProjectivePoint) -> bool {
        let c = p.representative()[self.fixed].norm();
        c < 1.0 / (2.0 * self.n as f64).sqrt()
    }

    pub fn coordinates(&self, p: &ProjectivePoint) -> Result<Vec<f64>> {
        if p.dim() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: p.dim() });
        }
        let rep = p.representative();
        let c = rep[self.fixed];
        if c.norm() == 0.0 {
            return Err(Error::Domain { state: p.to_real() });
        }
        let phase = c.conj() / c.norm();
        let z: Vec<Complex64> = self.others().map(|j| rep[j] * phase).collect();
        Ok(z.iter().map(|w| w.re).chain(z.iter().map(|w| w.im)).collect())
    }

    pub fn unit_vector(&self, x: &[f64]) -> Result<CVector> {
        let m = self.dof();
        if x.len() != 2 * m {
            return Err(Error::DimensionMismatch { expected: 2 * m, got: x.len() });
        }
        let r2: f64 = x.iter().map(|v| v * v).sum();
        if !(r2 < 1.0) {
            return Err(Error::Domain { state: x.to_vec() });
        }
        let mut psi = CVector::zeros(self.n);
        psi[self.fixed] = Complex64::new((1.0 - r2).sqrt(), 0.0);
        for (i, j) in self.others().enumerate() {
            psi[j] = Complex64::new(x[i], x[m + i]);
        }
        Ok(psi)
    }

    pub fn point(&self, x: &[f64]) -> Result<ProjectivePoint> {
        ProjectivePoint::new(self.unit_vector(x)?)
    }

    pub fn space(&self) -> PhaseSpace {
        let names: Vec<String> = self
            .others()
            .map(|j| format!("re_z{}", j + 1))
            .chain(self.others().map(|j| format!("im_z{}", j + 1)))
            .collect();
        PhaseSpace::with_names(names)
            .expect("even coordinate count")
            .with_domain(|x| x.iter().map(|v| v * v).sum::<f64>() < 1.0)
    }

    pub fn form(&self) -> SymplecticForm {
        SymplecticForm::scaled_canonical(self.dof(), 2.0)
    }

    /// `obs` in chart coordinates, with its chain-rule gradient.
    pub fn field(&self, obs: &ObservableFunction) -> Result<ScalarField> {
        obs.check_dim(self.n)?;
        let (chart, o1) = (*self, obs.clone());
        let (chart2, o2) = (*self, obs.clone());
        Ok(ScalarField::with_gradient(
            obs.label.clone(),
            move |x| chart.unit_vector(x).map(|psi| o1.value_at(&psi)).unwrap_or(f64::NAN),
            move |x| match chart2.unit_vector(x) {
                Ok(psi) => chart2.gradient(&o2, &psi, x),
                Err(_) => vec![f64::NAN; x.len()],
            },
        ))
    }

    fn gradient(&self, obs: &ObservableFunction, psi: &CVector, x: &[f64]) -> Vec<f64> {
        let m = self.dof();
        let (_, f) = obs.linearize(psi);
        let w = f * psi;
        let ck = psi[self.fixed].re;
        let wk = w[self.fixed].re;
        let mut g = vec![0.0; 2 * m];
        for (i, j) in self.others().enumerate() {
            g[i] = 2.0 * (w[j].re - wk * x[i] / ck);
            g[m + i] = 2.0 * (w[j].im - wk * x[m + i] / ck);
        }
        g
    }

    /// The dynamical system with Hamiltonian `obs` on this chart.
    pub fn system(&self, obs: &ObservableFunction) -> Result<DynamicalSystem> {
        DynamicalSystem::new(self.space(), self.form(), self.field(obs)?)
    }
}

/// `{f, g}` at `p`, evaluated in a chart anchored at `p`.
pub fn chart_bracket(f: &ObservableFunction, g: &ObservableFunction, p: &ProjectivePoint) -> Result<f64> {
    let chart = RealChart::anchored_at(p);
    let sys = chart.system(f)?;
    sys.poisson_bracket(sys.hamiltonian(), &chart.field(g)?, &chart.coordinates(p)?)
}

/// Best rational `p/q` with `q ≤ max_den` and `|x - p/q| ≤ tol`.
fn rational(x: f64, max_den: i64, tol: f64) -> Option<(i64, i64)> {
    let (mut h0, mut h1) = (0i64, 1i64);
    let (mut k0, mut k1) = (1i64, 0i64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        if a.abs() > 1e15 {
            return None;
        }
        let a = a as i64;
        let h2 = a.checked_mul(h1)?.checked_add(h0)?;
        let k2 = a.checked_mul(k1)?.checked_add(k0)?;
        if k2 > max_den {
            return None;
        }
        if (x - h2 as f64 / k2 as f64).abs() <= tol {
            return Some((h2, k2));
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = r - a as f64;
        if frac == 0.0 {
            return None;
        }
        r = 1.0 / frac;
    }
    None
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// `2π / γ` where `γ` is the largest number dividing every eigenvalue gap,
/// found by rationalizing the gaps (denominators up to 1000). `None` for a
/// degenerate or incommensurate spectrum.
pub fn least_common_period(eigenvalues: &[f64]) -> Option<f64> {
    let mut gaps: Vec<f64> = Vec::new();
    for (i, a) in eigenvalues.iter().enumerate() {
        for b in &eigenvalues[i + 1..] {
            let d = (b - a).abs();
            if d > 1e-9 {
                gaps.push(d);
            }
        }
    }
    let unit = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    if !unit.is_finite() {
        return None;
    }
    let (mut num, mut den) = (0i128, 1i128);
    for g in &gaps {
        let (p, q) = rational(g / unit, 1000, 1e-9 * (g / unit).max(1.0))?;
        let (p, q) = (p as i128, q as i128);
        let n = gcd(num * q, p * den);
        let d = den * q;
        let c = gcd(n, d);
        (num, den) = (n / c, d / c);
    }
    let gamma = unit * num as f64 / den as f64;
    Some(2.0 * std::f64::consts::PI / gamma)
}

/// First near-return of the projective `h`-orbit through `psi0`.
pub fn projective_recurrence(
    system: &QuantumSystem,
    psi0: &ProjectivePoint,
    horizon: f64,
    eps: f64,
    config: &IntegratorConfig,
) -> Result<Option<RecurrenceReport>> {
    let field = ProjectiveFlow::new(system.energy());
    Ok(first_return(&field, &psi0.to_real(), horizon, eps, None, config)?
        .map(|r| RecurrenceReport { period: r.t, distance: r.distance, eps }))
}

pub fn random_state<R: Rng + ?Sized>(n: usize, rng: &mut R) -> ProjectivePoint {
    loop {
        let v = CVector::from_fn(n, |_, _| {
            Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
        });
        if let Ok(p) = ProjectivePoint::new(v) {
            return p;
        }
    }
}

/// A random unit horizontal tangent at `p`.
pub fn random_tangent<R: Rng + ?Sized>(p: &ProjectivePoint, rng: &mut R) -> ProjectiveTangent {
    loop {
        let v = CVector::from_fn(p.dim(), |_, _| {
            Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
        });
        let t = ProjectiveTangent::horizontal(p.clone(), v);
        let n = t.vector.norm();
        if n > 1e-6 {
            return ProjectiveTangent { base: t.base, vector: t.vector / Complex64::new(n, 0.0) };
        }
    }
}

/// `(A + A†)/2` with standard complex Gaussian entries.
pub fn random_hermitian<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix {
    let a = CMatrix::from_fn(n, n, |_, _| Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng)));
    let h = (&a + a.adjoint()) * Complex64::new(0.5, 0.0);
    // exact Hermiticity
    CMatrix::from_fn(n, n, |i, j| {
        if i == j {
            Complex64::new(h[(i, i)].re, 0.0)
        } else if i < j {
            h[(i, j)]
        } else {
            h[(j, i)].conj()
        }
    })
}

/// Spin matrices `(S_x, S_y, S_z)` for spin `(n-1)/2`. For `n = 2` these are
/// scaled to the Pauli matrices.
pub fn spin_matrices(n: usize) -> [CMatrix; 3] {
    let j = (n as f64 - 1.0) / 2.0;
    let m = |k: usize| j - k as f64;
    let mut plus = CMatrix::zeros(n, n);
    for k in 1..n {
        let mk = m(k);
        plus[(k - 1, k)] = Complex64::new((j * (j + 1.0) - mk * (mk + 1.0)).sqrt(), 0.0);
    }
    let minus = plus.adjoint();
    let scale = if n == 2 { 2.0 } else { 1.0 };
    let sx = (&plus + &minus) * Complex64::new(0.5 * scale, 0.0);
    let sy = (&plus - &minus) * Complex64::new(0.0, -0.5 * scale);
    let sz = CMatrix::from_diagonal(&CVector::from_fn(n, |k, _| Complex64::new(scale * m(k), 0.0)));
    [sx, sy, sz]
}

/// Spin-type matrices, the identity and `random` seeded random Hermitian
/// matrices, all as expectation functions.
pub fn pauli_candidates<R: Rng + ?Sized>(n: usize, random: usize, rng: &mut R) -> Vec<ObservableFunction> {
    let [sx, sy, sz] = spin_matrices(n);
    let mut out = vec![
        ObservableFunction { label: "Sx".into(), kind: ObservableKind::Expectation(sx) },
        ObservableFunction { label: "Sy".into(), kind: ObservableKind::Expectation(sy) },
        ObservableFunction { label: "Sz".into(), kind: ObservableKind::Expectation(sz) },
        ObservableFunction { label: "identity".into(), kind: ObservableKind::Expectation(CMatrix::identity(n, n)) },
    ];
    for k in 0..random {
        out.push(ObservableFunction {
            label: format!("random{}", k + 1),
            kind: ObservableKind::Expectation(random_hermitian(n, rng)),
        });
    }
    out
}

/// Weinberg test functions with points where their flows are not isometric.
pub fn designated_weinberg() -> Vec<(ObservableFunction, ProjectivePoint)> {
    let c = |re: f64, im: f64| Complex64::new(re, im);
    let diag = |d: &[f64]| CMatrix::from_diagonal(&CVector::from_iterator(d.len(), d.iter().map(|v| c(*v, 0.0))));
    let [sx2, sy2, sz2] = spin_matrices(2);
    let [sx3, _, sz3] = spin_matrices(3);
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let point = |v: &[Complex64]| ProjectivePoint::from_components(v).expect("nonzero");
    let w = |label: &str, f: Result<WeinbergFunction>| ObservableFunction::weinberg(label, f.expect("Hermitian"));
    vec![
        (w("<diag(0,1)>^2", WeinbergFunction::square(diag(&[0.0, 1.0]))), point(&[c(h, 0.0), c(h, 0.0)])),
        (w("<Sz><Sx>", WeinbergFunction::product(sz2.clone(), sx2)), point(&[c(0.8, 0.0), c(0.36, 0.48)])),
        (w("exp<Sy>", WeinbergFunction::exponential(sy2)), point(&[c(0.6, 0.0), c(0.0, 0.8)])),
        (
            w("<diag(0,1,3)>^2", WeinbergFunction::square(diag(&[0.0, 1.0, 3.0]))),
            point(&[c(0.6, 0.0), c(0.0, 0.48), c(0.64, 0.0)]),
        ),
        (w("<Sz><Sx> spin 1", WeinbergFunction::product(sz3, sx3)), point(&[c(0.7, 0.0), c(0.1, 0.5), c(0.3, -0.4)])),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KahlerIdentityReport {
    pub n: usize,
    pub samples: usize,
    /// max |g(X, Y) - Ω(X, JY)|.
    pub compatibility: f64,
    /// max |g(JX, JY) - g(X, Y)|.
    pub j_invariance_g: f64,
    /// max |Ω(JX, JY) - Ω(X, Y)|.
    pub j_invariance_omega: f64,
    /// Largest change of representatives, forms and expectation values under
    /// a random global phase.
    pub phase_invariance: f64,
}

impl KahlerIdentityReport {
    pub fn max_residual(&self) -> f64 {
        self.compatibility.max(self.j_invariance_g).max(self.j_invariance_omega).max(self.phase_invariance)
    }
}

/// Checks the Kähler compatibility relations and phase invariance at random
/// points and tangent pairs.
pub fn kahler_identities<R: Rng + ?Sized>(n: usize, samples: usize, rng: &mut R) -> Result<KahlerIdentityReport> {
    let mut r = KahlerIdentityReport {
        n,
        samples,
        compatibility: 0.0,
        j_invariance_g: 0.0,
        j_invariance_omega: 0.0,
        phase_invariance: 0.0,
    };
    for _ in 0..samples {
        let p = random_state(n, rng);
        let x = random_tangent(&p, rng);
        let y = random_tangent(&p, rng);
        let (g, om) = kahler_forms(&x, &y)?;
        let (_, om_compat) = kahler_forms(&x, &y.j())?;
        let (gjj, omjj) = kahler_forms(&x.j(), &y.j())?;
        r.compatibility = r.compatibility.max((g - om_compat).abs());
        r.j_invariance_g = r.j_invariance_g.max((gjj - g).abs());
        r.j_invariance_omega = r.j_invariance_omega.max((omjj - om).abs());

        let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let u = Complex64::from_polar(1.0, theta);
        let rep = p.representative();
        let p2 = ProjectivePoint::new(rep * u)?;
        let x2 = ProjectiveTangent::from_lift(&(rep * u), &(x.vector() * u))?;
        let y2 = ProjectiveTangent::from_lift(&(rep * u), &(y.vector() * u))?;
        let (g2, om2) = kahler_forms(&x2, &y2)?;
        let f = ObservableFunction::expectation("F", random_hermitian(n, rng))?;
        let e1 = expectation_value(&f, &p)?;
        let e2 = expectation_value(&f, &p2)?;
        let rep_shift = (p2.representative() - rep).camax();
        r.phase_invariance = r
            .phase_invariance
            .max(rep_shift)
            .max((g2 - g).abs())
            .max((om2 - om).abs())
            .max((e2 - e1).abs());
    }
    Ok(r)
}

/// Settings for [`pauli_obstruction_demo`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PauliDemoConfig {
    /// Points where the bracket is evaluated.
    pub bracket_samples: usize,
    /// Orbits along which timeliness is tested.
    pub orbits: usize,
    /// Grid intervals on `[0, T]`.
    pub grid_intervals: usize,
    pub recurrence_eps: f64,
}

impl Default for PauliDemoConfig {
    fn default() -> Self {
        Self { bracket_samples: 20, orbits: 3, grid_intervals: 64, recurrence_eps: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateVerdict {
    pub label: String,
    /// max |{h, t} - 1| over the bracket samples.
    pub bracket_deviation: f64,
    /// max over orbits of `|t(c_T) - t(c_0) - T|` at the recurrence time.
    pub deviation_at_recurrence: f64,
    pub timeliness: Vec<TrajectoryDeviation>,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PauliReport {
    pub spectrum: Vec<f64>,
    /// Least common period from the spectral gaps.
    pub predicted_period: Option<f64>,
    /// Near-return of the first orbit found by integration.
    pub recurrence: Option<RecurrenceReport>,
    pub candidates: Vec<CandidateVerdict>,
    pub tolerance: f64,
    /// Every candidate failed a check by more than the tolerance.
    pub passed: bool,
}

/// Tests each expectation-kind candidate as a clock for `system`, by the
/// bracket `{h, t}` in a real chart and by timeliness along projective
/// orbits up to the recurrence time.
pub fn pauli_obstruction_demo<R: Rng + ?Sized>(
    system: &QuantumSystem,
    candidates: &[ObservableFunction],
    tol: f64,
    settings: &PauliDemoConfig,
    config: &IntegratorConfig,
    rng: &mut R,
) -> Result<PauliReport> {
    let n = system.dim();
    for c in candidates {
        if !c.is_expectation() {
            return Err(Error::KindMismatch(format!("{} is not an expectation function", c.label)));
        }
        c.check_dim(n)?;
    }
    let h = system.energy();
    let points: Vec<ProjectivePoint> = (0..settings.bracket_samples.max(settings.orbits).max(1))
        .map(|_| random_state(n, rng))
        .collect();
    let spectrum = system.spectrum();
    let predicted_period = least_common_period(&spectrum);

    let horizon = predicted_period.map_or(config.horizon, |t| 1.25 * t);
    let recurrence = projective_recurrence(system, &points[0], horizon, settings.recurrence_eps, config)?;
    let t_end = predicted_period.or(recurrence.map(|r| r.period)).unwrap_or(config.horizon);
    let k = settings.grid_intervals.max(1);
    let grid: Vec<f64> = (0..=k).map(|i| if i == k { t_end } else { t_end * i as f64 / k as f64 }).collect();

    let field = ProjectiveFlow::new(h.clone());
    let orbits = points
        .iter()
        .take(settings.orbits)
        .map(|p| sample_field_on_grid(&field, &p.to_real(), &grid, config).map(|f| (p, f)))
        .collect::<Result<Vec<_>>>()?;

    let verdicts = candidates
        .par_iter()
        .map(|cand| {
            let mut bracket_deviation: f64 = 0.0;
            for p in points.iter().take(settings.bracket_samples) {
                let b = chart_bracket(&h, cand, p)?;
                bracket_deviation = bracket_deviation.max(if b.is_finite() { (b - 1.0).abs() } else { f64::INFINITY });
            }
            let mut timeliness = Vec::new();
            let mut deviation_at_recurrence: f64 = 0.0;
            for (p, flow) in &orbits {
                let values: Vec<(f64, f64)> = flow
                    .trajectory
                    .iter()
                    .map(|(t, x)| (t, from_real(x)))
                    .map(|(t, psi)| (t, cand.value_at(&(&psi / Complex64::new(psi.norm(), 0.0)))))
                    .collect();
                if let (Some(first), Some(last)) = (values.first(), values.last()) {
                    deviation_at_recurrence = deviation_at_recurrence.max((last.1 - first.1 - last.0).abs());
                }
                timeliness.push(TrajectoryDeviation::from_samples(
                    p.to_real(),
                    &values,
                    flow.forward,
                    flow.backward,
                ));
            }
            let failed = bracket_deviation > tol
                || timeliness.iter().any(|d| d.max_deviation > tol || !d.flow_completed());
            Ok(CandidateVerdict {
                label: cand.label.clone(),
                bracket_deviation,
                deviation_at_recurrence,
                timeliness,
                failed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let passed = verdicts.iter().all(|v| v.failed);
    Ok(PauliReport { spectrum, predicted_period, recurrence, candidates: verdicts, tolerance: tol, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn diag(d: &[f64]) -> CMatrix {
        CMatrix::from_diagonal(&CVector::from_iterator(d.len(), d.iter().map(|v| c(*v, 0.0))))
    }

    fn plus() -> ProjectivePoint {
        ProjectivePoint::from_components(&[c(FRAC_1_SQRT_2, 0.0), c(FRAC_1_SQRT_2, 0.0)]).unwrap()
    }

    /// `e^{-isF}ψ` by the matrix exponential.
    fn schrodinger(f: &CMatrix, psi: &CVector, s: f64) -> CVector {
        (f * c(0.0, -s)).exp() * psi
    }

    fn tight() -> IntegratorConfig {
        IntegratorConfig::default().with_tolerances(1e-12, 1e-14)
    }

    #[test]
    fn phase_fixing_is_canonical() {
        let p = ProjectivePoint::from_components(&[c(0.0, 0.3), c(0.0, -0.4)]).unwrap();
        let rep = p.representative();
        assert_abs_diff_eq!(rep[1].re, 0.8, epsilon = 1e-15);
        assert_eq!(rep[1].im, 0.0);
        assert_abs_diff_eq!(rep[0].re, -0.6, epsilon = 1e-15);
        // ties go to the lowest index
        let q = ProjectivePoint::from_components(&[c(0.0, 1.0), c(-1.0, 0.0)]).unwrap();
        assert_eq!(q.fixed_index(), 0);
        assert!(matches!(ProjectivePoint::from_components(&[c(0.0, 0.0); 2]), Err(Error::ZeroVector)));
    }

    #[test]
    fn hermiticity_is_enforced() {
        let mut m = diag(&[0.0, 1.0]);
        m[(0, 1)] = c(1.0, 0.0);
        assert!(matches!(QuantumSystem::new(m), Err(Error::NotHermitian(_))));
        let json = r#"{"dim": 2, "hamiltonian": [[0,0],[0,-1],[0,1],[1,0]]}"#;
        let sys = QuantumSystem::from_json(json).unwrap();
        assert_eq!(sys.hamiltonian()[(0, 1)], c(0.0, -1.0));
        assert_eq!(QuantumSystem::from_spec(&sys.to_spec()).unwrap(), sys);
    }

    #[test]
    fn form_examples() {
        let e1 = ProjectivePoint::from_components(&[c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let x = ProjectiveTangent::new(e1.clone(), CVector::from_vec(vec![c(0.0, 0.0), c(1.0, 0.0)])).unwrap();
        let y = ProjectiveTangent::new(e1.clone(), CVector::from_vec(vec![c(0.0, 0.0), c(0.0, 1.0)])).unwrap();
        assert_eq!(kahler_forms(&x, &y).unwrap(), (0.0, 1.0));
        assert_eq!(kahler_forms(&x, &x).unwrap(), (1.0, 0.0));
        let other = ProjectiveTangent::new(
            ProjectivePoint::from_components(&[c(0.0, 0.0), c(1.0, 0.0)]).unwrap(),
            CVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]),
        )
        .unwrap();
        assert_eq!(kahler_forms(&x, &other), Err(Error::BaseMismatch));
        assert!(matches!(
            ProjectiveTangent::new(e1, CVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)])),
            Err(Error::NotHorizontal(_))
        ));
    }

    #[test]
    fn expectation_examples() {
        let p = plus();
        let id = ObservableFunction::expectation("I", CMatrix::identity(2, 2)).unwrap();
        assert_abs_diff_eq!(expectation_value(&id, &p).unwrap(), 1.0, epsilon = 1e-15);
        let f = ObservableFunction::expectation("F", diag(&[0.0, 1.0])).unwrap();
        assert_abs_diff_eq!(expectation_value(&f, &p).unwrap(), 0.5, epsilon = 1e-15);
        let w = ObservableFunction::weinberg("F^2", WeinbergFunction::square(diag(&[0.0, 1.0])).unwrap());
        assert_abs_diff_eq!(expectation_value(&w, &p).unwrap(), 0.25, epsilon = 1e-15);
        let three = ProjectivePoint::from_components(&[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert!(matches!(expectation_value(&f, &three), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn flow_matches_schrodinger_on_qubit() {
        let sys = QuantumSystem::diagonal(&[0.0, 1.0]).unwrap();
        let p = plus();
        let (traj, outcome) = projective_flow(&sys, &sys.energy(), &p, (0.0, PI), &tight()).unwrap();
        assert!(outcome.is_completed());
        let end = ProjectivePoint::from_real(traj.last().unwrap().1).unwrap();
        let oracle = ProjectivePoint::new(schrodinger(sys.hamiltonian(), p.representative(), PI)).unwrap();
        assert!(end.distance(&oracle).unwrap() <= 1e-8);
    }

    #[test]
    fn stationary_flows() {
        let sys = QuantumSystem::diagonal(&[0.0, 1.0]).unwrap();
        let id = ObservableFunction::expectation("I", CMatrix::identity(2, 2)).unwrap();
        let p = plus();
        let (traj, _) = projective_flow(&sys, &id, &p, (0.0, 5.0), &tight()).unwrap();
        for x in &traj.states {
            assert!(ProjectivePoint::from_real(x).unwrap().distance(&p).unwrap() <= 1e-14);
        }
        let w = ObservableFunction::weinberg("F^2", WeinbergFunction::square(diag(&[0.0, 1.0])).unwrap());
        let e2 = ProjectivePoint::from_components(&[c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
        assert_eq!(hamiltonian_lift(&w, &e2).unwrap().vector().norm(), 0.0);
        let (traj, _) = projective_flow(&sys, &w, &e2, (0.0, 5.0), &tight()).unwrap();
        assert!(ProjectivePoint::from_real(traj.last().unwrap().1).unwrap().distance(&e2).unwrap() <= 1e-14);
    }

    #[test]
    fn chart_is_darboux_for_expectations() {
        // {h, t} = ⟨ψ, i[H, T]ψ⟩
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [2, 3, 4] {
            let h = random_hermitian(n, &mut rng);
            let t = random_hermitian(n, &mut rng);
            let fh = ObservableFunction::expectation("h", h.clone()).unwrap();
            let ft = ObservableFunction::expectation("t", t.clone()).unwrap();
            for _ in 0..5 {
                let p = random_state(n, &mut rng);
                let psi = p.representative();
                let comm = (&h * &t - &t * &h) * c(0.0, 1.0);
                let oracle = psi.dotc(&(comm * psi)).re;
                assert_abs_diff_eq!(chart_bracket(&fh, &ft, &p).unwrap(), oracle, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn chart_round_trip_and_reanchor() {
        let p = ProjectivePoint::from_components(&[c(0.3, 0.1), c(0.0, 0.9), c(0.2, -0.1)]).unwrap();
        let chart = RealChart::anchored_at(&p);
        assert_eq!(chart.fixed(), 1);
        assert!(!chart.needs_reanchor(&p));
        let back = chart.point(&chart.coordinates(&p).unwrap()).unwrap();
        assert!(back.distance(&p).unwrap() <= 1e-15);
        let far = RealChart::new(3, 2).unwrap();
        assert!(far.needs_reanchor(&p));
    }

    #[test]
    fn killing_residual_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = ObservableFunction::expectation("F", diag(&[0.0, 1.0])).unwrap();
        assert!(killing_residual(&f, &plus(), 50, 1e-4, &mut rng).unwrap() <= 1e-5);
        let zero = ObservableFunction::zero(2);
        assert_eq!(killing_residual(&zero, &plus(), 10, 1e-4, &mut rng).unwrap(), 0.0);
        let w = ObservableFunction::weinberg("F^2", WeinbergFunction::square(diag(&[0.0, 1.0])).unwrap());
        assert!(killing_residual(&w, &plus(), 50, 1e-4, &mut rng).unwrap() >= 0.1);
    }

    #[test]
    fn weinberg_lie_derivative_matches_closed_form() {
        // f = ⟨F⟩² with F = diag(0,1) at (1,1)/√2 and X = e^{iφ}(1,-1)/√2:
        // L g(X, X) = -sin 2φ.
        let w = ObservableFunction::weinberg("F^2", WeinbergFunction::square(diag(&[0.0, 1.0])).unwrap());
        let field = ProjectiveFlow::unfixed(w);
        let psi = plus().representative().clone();
        for phi in [0.3, 0.7, 1.2] {
            let x = CVector::from_vec(vec![c(FRAC_1_SQRT_2, 0.0), c(-FRAC_1_SQRT_2, 0.0)]) * Complex64::from_polar(1.0, phi);
            let delta = 1e-4;
            let moved = transported_metric(&field, &psi, &x, &x, delta, KILLING_FD_STEP).unwrap();
            let still = transported_metric(&field, &psi, &x, &x, 0.0, KILLING_FD_STEP).unwrap();
            assert_abs_diff_eq!((moved - still) / delta, -(2.0 * phi).sin(), epsilon = 1e-3);
        }
    }

    #[test]
    fn killing_norm_examples() {
        let f = ObservableFunction::expectation("F", diag(&[0.0, 1.0])).unwrap();
        let grid: Vec<f64> = (0..=40).map(|i| i as f64 * 4.0 * PI / 40.0).collect();
        assert!(killing_norm_constancy(&f, &plus(), &grid, &tight(), false).unwrap() <= 1e-8);
        let id = ObservableFunction::expectation("I", CMatrix::identity(2, 2)).unwrap();
        assert_eq!(killing_norm_constancy(&id, &plus(), &grid, &tight(), false).unwrap(), 0.0);
        let [sx, _, sz] = spin_matrices(2);
        let w = ObservableFunction::weinberg("<Sz><Sx>", WeinbergFunction::product(sz, sx).unwrap());
        let p = ProjectivePoint::from_components(&[c(0.8, 0.0), c(0.36, 0.48)]).unwrap();
        assert!(matches!(killing_norm_constancy(&w, &p, &grid, &tight(), false), Err(Error::KindMismatch(_))));
        assert!(killing_norm_constancy(&w, &p, &grid, &tight(), true).unwrap() > 1e-3);
    }

    #[test]
    fn least_common_periods() {
        assert_abs_diff_eq!(least_common_period(&[0.0, 1.0]).unwrap(), 2.0 * PI, epsilon = 1e-12);
        assert_abs_diff_eq!(least_common_period(&[0.0, 1.0, 3.0]).unwrap(), 2.0 * PI, epsilon = 1e-12);
        assert_abs_diff_eq!(least_common_period(&[0.0, 2.0, 3.0]).unwrap(), 2.0 * PI, epsilon = 1e-12);
        assert_abs_diff_eq!(least_common_period(&[0.0, 0.5, 1.5]).unwrap(), 4.0 * PI, epsilon = 1e-12);
        assert!(least_common_period(&[0.0, 1.0, 2f64.sqrt()]).is_none());
        assert!(least_common_period(&[1.0, 1.0]).is_none());
    }

    #[test]
    fn spin_matrices_commute_correctly() {
        for n in [2, 3, 4] {
            let [sx, sy, sz] = spin_matrices(n);
            let scale = if n == 2 { 2.0 } else { 1.0 };
            let lhs = &sx * &sy - &sy * &sx;
            let rhs = &sz * c(0.0, scale);
            assert!((lhs - rhs).camax() <= 1e-12);
        }
    }

    #[test]
    fn qubit_recurrence() {
        let sys = QuantumSystem::diagonal(&[0.0, 1.0]).unwrap();
        let r = projective_recurrence(&sys, &plus(), 10.0, 1e-6, &tight()).unwrap().unwrap();
        assert_abs_diff_eq!(r.period, 2.0 * PI, epsilon = 1e-5);
    }

    #[test]
    fn commuting_candidate_fails_immediately() {
        let sys = QuantumSystem::diagonal(&[0.0, 1.0]).unwrap();
        let t = ObservableFunction::expectation("H", diag(&[0.0, 1.0])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let settings = PauliDemoConfig { bracket_samples: 5, orbits: 1, ..Default::default() };
        let r = pauli_obstruction_demo(&sys, &[t], 1e-6, &settings, &tight(), &mut rng).unwrap();
        assert_abs_diff_eq!(r.candidates[0].bracket_deviation, 1.0, epsilon = 1e-10);
        assert!(r.passed);
        let w = ObservableFunction::weinberg("F^2", WeinbergFunction::square(diag(&[0.0, 1.0])).unwrap());
        assert!(matches!(
            pauli_obstruction_demo(&sys, &[w], 1e-6, &settings, &tight(), &mut rng),
            Err(Error::KindMismatch(_))
        ));
    }
}
