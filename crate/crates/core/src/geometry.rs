//! Phase spaces, scalar fields, constant symplectic forms, Hamiltonian vector
//! fields and Poisson brackets.
//!
//! Everything lives in a single global chart. A phase space is `ℝ^{2n}` cut
//! down by an open domain predicate (for instance `p > 0`).
//!
//! # Sign convention
//!
//! The Hamiltonian vector field of `f` is `F^a = Ω^{ba} d_b f`. With the
//! canonical form this gives Hamilton's equations in the usual orientation,
//! `dq/dt = ∂f/∂p`, `dp/dt = -∂f/∂q`, and the bracket is
//!
//! ```text
//! {f, g} = F^a d_a g = ∂f/∂p ∂g/∂q - ∂f/∂q ∂g/∂p
//! ```
//!
//! so that `{h, τ} = dτ/dt` along the flow of `h`. This is the negative of the
//! common textbook bracket `∂f/∂q ∂g/∂p - ∂f/∂p ∂g/∂q`: the free-particle clock
//! `τ = q/p` has `{h, τ} = +1` here and `-1` in the textbook convention.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};

/// Open-set membership test for a state.
pub type DomainPredicate = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;
/// Pointwise evaluator of a scalar field.
pub type Evaluator = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Closed-form covector `d_a f`.
pub type CovectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// `cbrt(ε)` for f64, the optimal central-difference scale.
fn fd_scale() -> f64 {
    f64::EPSILON.cbrt()
}

/// A `2n`-dimensional phase space in canonical coordinates.
#[derive(Clone)]
pub struct PhaseSpace {
    names: Vec<String>,
    domain: Option<DomainPredicate>,
}

impl PhaseSpace {
    /// `ℝ^{2n}` with coordinates `q1..qn, p1..pn`.
    pub fn canonical(dof: usize) -> Result<Self> {
        if dof == 0 {
            return Err(Error::InvalidSpace("need at least one degree of freedom".into()));
        }
        let names = (1..=dof)
            .map(|i| format!("q{i}"))
            .chain((1..=dof).map(|i| format!("p{i}")))
            .collect();
        Ok(Self { names, domain: None })
    }

    /// Phase space with explicit coordinate labels (positions first, then momenta).
    pub fn with_names<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() || names.len() % 2 != 0 {
            return Err(Error::InvalidSpace(format!(
                "dimension must be even and positive, got {}",
                names.len()
            )));
        }
        Ok(Self { names, domain: None })
    }

    /// Restricts the space to the open set where `pred` holds.
    pub fn with_domain(mut self, pred: impl Fn(&[f64]) -> bool + Send + Sync + 'static) -> Self {
        self.domain = Some(Arc::new(pred));
        self
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn dof(&self) -> usize {
        self.names.len() / 2
    }

    pub fn coordinate_names(&self) -> &[String] {
        &self.names
    }

    pub fn has_domain_predicate(&self) -> bool {
        self.domain.is_some()
    }

    /// True iff `x` has the right length, is finite and satisfies the domain predicate.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().all(|v| v.is_finite())
            && self.domain.as_ref().is_none_or(|d| d(x))
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        if !self.contains(x) {
            return Err(Error::Domain { state: x.to_vec() });
        }
        Ok(())
    }

    /// Samples `count` perturbations of size at most `radius` around `x` and
    /// reports whether all of them stay in the domain. A sampling check of
    /// the open-set property, not a proof.
    pub fn looks_open_at<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        radius: f64,
        count: usize,
        rng: &mut R,
    ) -> bool {
        if !self.contains(x) {
            return false;
        }
        (0..count).all(|_| {
            let y: Vec<f64> = x.iter().map(|xi| xi + radius * rng.random_range(-1.0..=1.0)).collect();
            self.contains(&y)
        })
    }
}

impl fmt::Debug for PhaseSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhaseSpace")
            .field("names", &self.names)
            .field("restricted", &self.domain.is_some())
            .finish()
    }
}

/// How a field's covector is obtained.
#[derive(Clone)]
pub enum GradientMode {
    ClosedForm(CovectorFn),
    FiniteDifference,
}

/// A real function on phase space.
#[derive(Clone)]
pub struct ScalarField {
    name: String,
    eval: Evaluator,
    gradient: GradientMode,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.gradient {
            GradientMode::ClosedForm(_) => "closed_form",
            GradientMode::FiniteDifference => "finite_difference",
        };
        f.debug_struct("ScalarField").field("name", &self.name).field("gradient", &mode).finish()
    }
}

impl ScalarField {
    /// Field with finite-difference gradient.
    pub fn new(name: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), eval: Arc::new(f), gradient: GradientMode::FiniteDifference }
    }

    /// Field with a closed-form gradient.
    pub fn with_gradient(
        name: impl Into<String>,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        df: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            eval: Arc::new(f),
            gradient: GradientMode::ClosedForm(Arc::new(df)),
        }
    }

    pub fn constant(value: f64) -> Self {
        Self::with_gradient(format!("{value}"), move |_| value, |x| vec![0.0; x.len()])
    }

    /// The `i`-th coordinate function.
    pub fn coordinate(name: impl Into<String>, i: usize) -> Self {
        Self::with_gradient(
            name,
            move |x| x[i],
            move |x| {
                let mut g = vec![0.0; x.len()];
                g[i] = 1.0;
                g
            },
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn mode(&self) -> &GradientMode {
        &self.gradient
    }

    pub fn has_closed_form(&self) -> bool {
        matches!(self.gradient, GradientMode::ClosedForm(_))
    }

    /// Drops the closed-form gradient, forcing finite differences.
    pub fn finite_difference_only(&self) -> Self {
        Self { name: self.name.clone(), eval: self.eval.clone(), gradient: GradientMode::FiniteDifference }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    /// `d_a f` at `x`, using the closed form when available.
    pub fn gradient(&self, space: &PhaseSpace, x: &[f64]) -> Result<Vec<f64>> {
        space.check(x)?;
        match &self.gradient {
            GradientMode::ClosedForm(df) => {
                let g = df(x);
                if g.len() != x.len() {
                    return Err(Error::DimensionMismatch { expected: x.len(), got: g.len() });
                }
                Ok(g)
            }
            GradientMode::FiniteDifference => self.fd_gradient(space, x),
        }
    }

    /// Central-difference gradient with step `cbrt(ε)·max(1, |x_i|)`.
    ///
    /// When the central stencil leaves the domain, a second-order one-sided
    /// stencil with half the step is used on whichever side fits; failing
    /// that the central step is halved until it fits.
    pub fn fd_gradient(&self, space: &PhaseSpace, x: &[f64]) -> Result<Vec<f64>> {
        space.check(x)?;
        let mut y = x.to_vec();
        let mut grad = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            let step = fd_scale() * x[i].abs().max(1.0);
            grad.push(self.partial(space, &mut y, i, step)?);
        }
        Ok(grad)
    }

    fn partial(&self, space: &PhaseSpace, y: &mut [f64], i: usize, step: f64) -> Result<f64> {
        let xi = y[i];
        let at = |y: &mut [f64], offset: f64| -> Option<f64> {
            y[i] = xi + offset;
            let v = if space.contains(y) { Some(self.value(y)) } else { None };
            y[i] = xi;
            v.filter(|v| v.is_finite())
        };

        if let (Some(fp), Some(fm)) = (at(y, step), at(y, -step)) {
            return Ok((fp - fm) / (2.0 * step));
        }
        let half = 0.5 * step;
        let f0 = at(y, 0.0).ok_or_else(|| Error::Domain { state: y.to_vec() })?;
        for sign in [1.0, -1.0] {
            if let (Some(f1), Some(f2)) = (at(y, sign * half), at(y, sign * step)) {
                return Ok(sign * (-3.0 * f0 + 4.0 * f1 - f2) / step);
            }
        }
        let mut h = step;
        for _ in 0..30 {
            h *= 0.5;
            if let (Some(fp), Some(fm)) = (at(y, h), at(y, -h)) {
                return Ok((fp - fm) / (2.0 * h));
            }
        }
        let mut bad = y.to_vec();
        bad[i] = xi + step;
        Err(Error::Domain { state: bad })
    }

    /// `a + b`.
    pub fn sum(a: &ScalarField, b: &ScalarField) -> ScalarField {
        Self::combine(a, b, format!("({}) + ({})", a.name, b.name), |u, v| u + v, |_, _, du, dv| du + dv)
    }

    /// `a - b`.
    pub fn difference(a: &ScalarField, b: &ScalarField) -> ScalarField {
        Self::combine(a, b, format!("({}) - ({})", a.name, b.name), |u, v| u - v, |_, _, du, dv| du - dv)
    }

    /// `a · b`.
    pub fn product(a: &ScalarField, b: &ScalarField) -> ScalarField {
        Self::combine(
            a,
            b,
            format!("({}) * ({})", a.name, b.name),
            |u, v| u * v,
            |u, v, du, dv| du * v + u * dv,
        )
    }

    fn combine(
        a: &ScalarField,
        b: &ScalarField,
        name: String,
        op: fn(f64, f64) -> f64,
        dop: fn(f64, f64, f64, f64) -> f64,
    ) -> ScalarField {
        let (ea, eb) = (a.eval.clone(), b.eval.clone());
        let eval: Evaluator = Arc::new(move |x| op(ea(x), eb(x)));
        let gradient = match (&a.gradient, &b.gradient) {
            (GradientMode::ClosedForm(da), GradientMode::ClosedForm(db)) => {
                let (ea, eb, da, db) = (a.eval.clone(), b.eval.clone(), da.clone(), db.clone());
                GradientMode::ClosedForm(Arc::new(move |x| {
                    let (u, v) = (ea(x), eb(x));
                    da(x).into_iter().zip(db(x)).map(|(du, dv)| dop(u, v, du, dv)).collect()
                }))
            }
            _ => GradientMode::FiniteDifference,
        };
        ScalarField { name, eval, gradient }
    }
}

/// A constant, antisymmetric, invertible matrix `Ω_ab`.
#[derive(Debug, Clone)]
pub struct SymplecticForm {
    matrix: DMatrix<f64>,
    /// `Ω^{ab}`, antisymmetrized after inversion.
    inverse: DMatrix<f64>,
}

impl SymplecticForm {
    /// The canonical form pairing `q_i` with `p_i`: `Ω(∂q_i, ∂p_i) = 1`.
    pub fn canonical(dof: usize) -> Self {
        Self::scaled_canonical(dof, 1.0)
    }

    /// `c` times the canonical form.
    pub fn scaled_canonical(dof: usize, c: f64) -> Self {
        let n = 2 * dof;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..dof {
            m[(i, dof + i)] = c;
            m[(dof + i, i)] = -c;
        }
        let mut inv = DMatrix::zeros(n, n);
        for i in 0..dof {
            inv[(i, dof + i)] = -1.0 / c;
            inv[(dof + i, i)] = 1.0 / c;
        }
        Self { matrix: m, inverse: inv }
    }

    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 || n != matrix.ncols() || n % 2 != 0 {
            return Err(Error::InvalidForm(format!(
                "need an even square matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if (&matrix + matrix.transpose()).iter().any(|v| *v != 0.0) {
            return Err(Error::InvalidForm("matrix is not antisymmetric".into()));
        }
        let inv = matrix
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidForm("matrix is singular".into()))?;
        let inverse = (&inv - inv.transpose()) * 0.5;
        let residual = (&matrix * &inverse - DMatrix::identity(n, n)).amax();
        if !residual.is_finite() || residual > 1e-12 {
            return Err(Error::InvalidForm(format!("inverse check failed, residual {residual:e}")));
        }
        Ok(Self { matrix, inverse })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// `Ω(u, v) = u^a Ω_ab v^b`.
    pub fn pair(&self, u: &[f64], v: &[f64]) -> f64 {
        let n = self.dim();
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                s += u[a] * self.matrix[(a, b)] * v[b];
            }
        }
        s
    }

    /// Raises a covector: `F^a = Ω^{ba} df_b`.
    pub fn raise(&self, df: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|a| (0..n).fold(0.0, |acc, b| acc + self.inverse[(b, a)] * df[b]))
            .collect()
    }
}

/// The triple of phase space, symplectic form and Hamiltonian.
#[derive(Debug, Clone)]
pub struct DynamicalSystem {
    space: PhaseSpace,
    form: SymplecticForm,
    hamiltonian: ScalarField,
}

impl DynamicalSystem {
    pub fn new(space: PhaseSpace, form: SymplecticForm, hamiltonian: ScalarField) -> Result<Self> {
        if space.dim() != form.dim() {
            return Err(Error::DimensionMismatch { expected: space.dim(), got: form.dim() });
        }
        Ok(Self { space, form, hamiltonian })
    }

    /// Canonical form on the given space.
    pub fn canonical(space: PhaseSpace, hamiltonian: ScalarField) -> Self {
        let form = SymplecticForm::canonical(space.dof());
        Self { space, form, hamiltonian }
    }

    pub fn space(&self) -> &PhaseSpace {
        &self.space
    }

    pub fn form(&self) -> &SymplecticForm {
        &self.form
    }

    pub fn hamiltonian(&self) -> &ScalarField {
        &self.hamiltonian
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn gradient(&self, field: &ScalarField, x: &[f64]) -> Result<Vec<f64>> {
        field.gradient(&self.space, x)
    }

    /// `F^a = Ω^{ba} d_b f` at `x`.
    pub fn hamiltonian_vector_field(&self, field: &ScalarField, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.form.raise(&self.gradient(field, x)?))
    }

    /// `{f, g}(x) = F^a d_a g`.
    pub fn poisson_bracket(&self, f: &ScalarField, g: &ScalarField, x: &[f64]) -> Result<f64> {
        let flow = self.hamiltonian_vector_field(f, x)?;
        let dg = self.gradient(g, x)?;
        Ok(flow.iter().zip(&dg).map(|(a, b)| a * b).sum())
    }

    /// Euclidean norm of the Hamiltonian's own field at `x`.
    pub fn field_norm(&self, x: &[f64]) -> Result<f64> {
        Ok(norm(&self.hamiltonian_vector_field(&self.hamiltonian, x)?))
    }

    pub fn is_stationary(&self, x: &[f64], tol: f64) -> Result<bool> {
        Ok(self.field_norm(x)? <= tol)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn free_particle() -> DynamicalSystem {
        let space = PhaseSpace::with_names(["q", "p"]).unwrap().with_domain(|x| x[1] > 0.0);
        let h = ScalarField::with_gradient("p^2/2", |x| 0.5 * x[1] * x[1], |x| vec![0.0, x[1]]);
        DynamicalSystem::canonical(space, h)
    }

    fn norton() -> DynamicalSystem {
        let space = PhaseSpace::with_names(["q", "p"]).unwrap();
        let h = ScalarField::with_gradient("exp(p)", |x| x[1].exp(), |x| vec![0.0, x[1].exp()]);
        DynamicalSystem::canonical(space, h)
    }

    fn norton_tau() -> ScalarField {
        ScalarField::with_gradient(
            "q/exp(p)",
            |x| x[0] * (-x[1]).exp(),
            |x| vec![(-x[1]).exp(), -x[0] * (-x[1]).exp()],
        )
    }

    #[test]
    fn odd_dimension_rejected() {
        assert!(PhaseSpace::with_names(["q", "p", "r"]).is_err());
        assert!(PhaseSpace::canonical(0).is_err());
        let s = PhaseSpace::canonical(2).unwrap();
        assert_eq!(s.coordinate_names(), ["q1", "q2", "p1", "p2"]);
    }

    #[test]
    fn gradient_examples() {
        let fp = free_particle();
        assert_eq!(fp.gradient(fp.hamiltonian(), &[1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
        let n = norton();
        assert_eq!(n.gradient(n.hamiltonian(), &[0.0, 0.0]).unwrap(), vec![0.0, 1.0]);

        let tau = norton_tau();
        let closed = n.gradient(&tau, &[3.0, 0.0]).unwrap();
        assert_eq!(closed, vec![1.0, -3.0]);
        let fd = tau.fd_gradient(n.space(), &[3.0, 0.0]).unwrap();
        for (a, b) in fd.iter().zip(&closed) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn gradient_outside_domain_is_error() {
        let fp = free_particle();
        let err = fp.gradient(fp.hamiltonian(), &[0.0, -1.0]).unwrap_err();
        assert!(matches!(err, Error::Domain { .. }));
    }

    #[test]
    fn fd_stencil_near_boundary_falls_back_one_sided() {
        let fp = free_particle();
        let h = fp.hamiltonian().finite_difference_only();
        // central step would be ~6e-6 and cross p = 0
        let x = [0.0, 4e-6];
        let g = h.fd_gradient(fp.space(), &x).unwrap();
        assert_abs_diff_eq!(g[1], 4e-6, epsilon = 1e-9);
    }

    #[test]
    fn hamiltonian_vector_field_examples() {
        let fp = free_particle();
        assert_eq!(fp.hamiltonian_vector_field(fp.hamiltonian(), &[0.0, 1.0]).unwrap(), vec![1.0, 0.0]);
        let n = norton();
        assert_eq!(n.hamiltonian_vector_field(n.hamiltonian(), &[0.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        let v = n.hamiltonian_vector_field(&norton_tau(), &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(v[0], 0.0);
        assert_abs_diff_eq!(v[1], -1.0);
    }

    #[test]
    fn bracket_examples() {
        let fp = free_particle();
        let tau = ScalarField::with_gradient("q/p", |x| x[0] / x[1], |x| vec![1.0 / x[1], -x[0] / (x[1] * x[1])]);
        assert_abs_diff_eq!(fp.poisson_bracket(fp.hamiltonian(), &tau, &[2.0, 3.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(fp.poisson_bracket(fp.hamiltonian(), fp.hamiltonian(), &[2.0, 3.0]).unwrap(), 0.0);

        let n = norton();
        assert_abs_diff_eq!(n.poisson_bracket(n.hamiltonian(), &norton_tau(), &[1.5, -0.7]).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn stationarity() {
        let sho = DynamicalSystem::canonical(
            PhaseSpace::with_names(["q", "p"]).unwrap(),
            ScalarField::with_gradient("osc", |x| 0.5 * (x[0] * x[0] + x[1] * x[1]), |x| x.to_vec()),
        );
        assert!(sho.is_stationary(&[0.0, 0.0], 1e-10).unwrap());
        assert!(!sho.is_stationary(&[1.0, 0.0], 1e-10).unwrap());
        assert!(!free_particle().is_stationary(&[0.0, 1.0], 1e-10).unwrap());
    }

    #[test]
    fn form_validation() {
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 1)] = 1.0;
        assert!(SymplecticForm::from_matrix(m.clone()).is_err());
        m[(1, 0)] = -1.0;
        let form = SymplecticForm::from_matrix(m).unwrap();
        assert_eq!(form.raise(&[0.0, 1.0]), vec![1.0, 0.0]);
        assert!(SymplecticForm::from_matrix(DMatrix::zeros(2, 2)).is_err());
        let scaled = SymplecticForm::scaled_canonical(1, 2.0);
        assert_eq!(scaled.raise(&[0.0, 1.0]), vec![0.5, 0.0]);
        assert_eq!(scaled.pair(&[1.0, 0.0], &[0.0, 1.0]), 2.0);
    }

    #[test]
    fn domain_sampling_detects_openness() {
        let fp = free_particle();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(fp.space().looks_open_at(&[0.0, 1.0], 0.5, 100, &mut rng));
        assert!(!fp.space().looks_open_at(&[0.0, 0.1], 0.5, 100, &mut rng));
    }

    #[test]
    fn combinators_keep_closed_form() {
        let fp = free_particle();
        let q = ScalarField::coordinate("q", 0);
        let f = ScalarField::product(&q, fp.hamiltonian());
        assert!(f.has_closed_form());
        let g = fp.gradient(&f, &[2.0, 3.0]).unwrap();
        assert_eq!(g, vec![4.5, 6.0]);
        let mixed = ScalarField::sum(&q, &ScalarField::new("p", |x| x[1]));
        assert!(!mixed.has_closed_form());
    }
}
