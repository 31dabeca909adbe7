//! Bivector fields on coordinate patches and the checks built on them:
//! Hamiltonian vector fields, the Jacobiator, gauge transformations by
//! 2-forms, twisted and conformal defects, Casimirs and an integrability
//! probe for the characteristic distribution.
//!
//! Conventions: `{f, g} = sum_ij pi_ij d_i f d_j g`, so `pi_ij = {x_i, x_j}`,
//! and the Hamiltonian vector field of `f` is `X_f = -pi grad f`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{check_dim, fd_exterior_derivative, fd_step, AntisymTensor, FormPatch};

/// Largest condition estimate of `E + B pi` accepted by [`gauge_transform`].
pub const GAUGE_CONDITION_LIMIT: f64 = 1e12;
/// Largest symmetric residue tolerated in a gauged structure matrix.
pub const GAUGE_SYMMETRY_TOLERANCE: f64 = 1e-10;
/// `|i_{X_H} B|` threshold for a dynamical gauge transformation.
pub const DYNAMICAL_GAUGE_TOLERANCE: f64 = 1e-9;
/// Threshold on `|chi(X_f)|` for the integrability probe.
pub const ANNIHILATION_TOLERANCE: f64 = 1e-8;

/// An antisymmetric structure matrix depending on a point of an
/// `n`-dimensional chart.
pub trait BivectorPatch: Sync {
    fn dim(&self) -> usize;

    fn name(&self) -> String {
        String::from("bivector")
    }

    fn structure(&self, state: &[f64]) -> Result<DMatrix<f64>>;

    /// `partials[l][(i, j)] = d pi_ij / d x_l`. `None` falls back to
    /// central differences.
    fn partials(&self, _state: &[f64]) -> Result<Option<Vec<DMatrix<f64>>>> {
        Ok(None)
    }
}

impl<T: BivectorPatch + ?Sized> BivectorPatch for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn name(&self) -> String {
        (**self).name()
    }
    fn structure(&self, state: &[f64]) -> Result<DMatrix<f64>> {
        (**self).structure(state)
    }
    fn partials(&self, state: &[f64]) -> Result<Option<Vec<DMatrix<f64>>>> {
        (**self).partials(state)
    }
}

impl<T: BivectorPatch + ?Sized> BivectorPatch for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn name(&self) -> String {
        (**self).name()
    }
    fn structure(&self, state: &[f64]) -> Result<DMatrix<f64>> {
        (**self).structure(state)
    }
    fn partials(&self, state: &[f64]) -> Result<Option<Vec<DMatrix<f64>>>> {
        (**self).partials(state)
    }
}

/// A smooth function on a chart, optionally with an analytic gradient.
pub trait ScalarField: Sync {
    fn dim(&self) -> usize;
    fn value(&self, state: &[f64]) -> Result<f64>;
    fn gradient(&self, _state: &[f64]) -> Result<Option<DVector<f64>>> {
        Ok(None)
    }
}

impl<T: ScalarField + ?Sized> ScalarField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, state: &[f64]) -> Result<f64> {
        (**self).value(state)
    }
    fn gradient(&self, state: &[f64]) -> Result<Option<DVector<f64>>> {
        (**self).gradient(state)
    }
}

/// The coordinate function `x_index`.
#[derive(Clone, Copy, Debug)]
pub struct Coordinate {
    pub dim: usize,
    pub index: usize,
}

impl ScalarField for Coordinate {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, state: &[f64]) -> Result<f64> {
        Ok(state[self.index])
    }
    fn gradient(&self, _state: &[f64]) -> Result<Option<DVector<f64>>> {
        let mut g = DVector::zeros(self.dim);
        g[self.index] = 1.0;
        Ok(Some(g))
    }
}

type ValueFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Box<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;

/// Closure-backed scalar field.
pub struct FnScalar {
    dim: usize,
    value: ValueFn,
    gradient: Option<GradFn>,
}

impl FnScalar {
    pub fn new(dim: usize, value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            dim,
            value: Box::new(value),
            gradient: None,
        }
    }

    pub fn with_gradient(
        mut self,
        gradient: impl Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.gradient = Some(Box::new(gradient));
        self
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::new(dim, move |_| c).with_gradient(move |_| DVector::zeros(dim))
    }
}

impl ScalarField for FnScalar {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, state: &[f64]) -> Result<f64> {
        Ok((self.value)(state))
    }
    fn gradient(&self, state: &[f64]) -> Result<Option<DVector<f64>>> {
        Ok(self.gradient.as_ref().map(|g| g(state)))
    }
}

/// Gradient of `f`, analytic when available.
pub fn scalar_gradient<F: ScalarField + ?Sized>(f: &F, state: &[f64]) -> Result<DVector<f64>> {
    check_dim(f.dim(), state.len())?;
    if let Some(g) = f.gradient(state)? {
        return Ok(g);
    }
    let mut work = state.to_vec();
    let mut grad = DVector::zeros(state.len());
    for l in 0..state.len() {
        let h = fd_step(state[l]);
        work[l] = state[l] + h;
        let plus = f.value(&work)?;
        work[l] = state[l] - h;
        let minus = f.value(&work)?;
        work[l] = state[l];
        grad[l] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Coordinate partials of the structure matrix, analytic when available.
pub fn structure_partials<P: BivectorPatch + ?Sized>(
    pi: &P,
    state: &[f64],
) -> Result<Vec<DMatrix<f64>>> {
    check_dim(pi.dim(), state.len())?;
    if let Some(p) = pi.partials(state)? {
        return Ok(p);
    }
    fd_structure_partials(pi, state)
}

pub(crate) fn fd_structure_partials<P: BivectorPatch + ?Sized>(
    pi: &P,
    state: &[f64],
) -> Result<Vec<DMatrix<f64>>> {
    let mut work = state.to_vec();
    (0..state.len())
        .map(|l| {
            let h = fd_step(state[l]);
            work[l] = state[l] + h;
            let plus = pi.structure(&work)?;
            work[l] = state[l] - h;
            let minus = pi.structure(&work)?;
            work[l] = state[l];
            Ok((plus - minus) / (2.0 * h))
        })
        .collect()
}

/// `{f, g}` at `state`.
pub fn bracket<P, F, G>(pi: &P, f: &F, g: &G, state: &[f64]) -> Result<f64>
where
    P: BivectorPatch + ?Sized,
    F: ScalarField + ?Sized,
    G: ScalarField + ?Sized,
{
    let m = pi.structure(state)?;
    let df = scalar_gradient(f, state)?;
    let dg = scalar_gradient(g, state)?;
    Ok(df.dot(&(&m * dg)))
}

/// Hamiltonian vector field `X_f = -pi grad f`.
pub fn ham_vf<P, F>(pi: &P, f: &F, state: &[f64]) -> Result<DVector<f64>>
where
    P: BivectorPatch + ?Sized,
    F: ScalarField + ?Sized,
{
    check_dim(pi.dim(), f.dim())?;
    let m = pi.structure(state)?;
    let df = scalar_gradient(f, state)?;
    Ok(-(m * df))
}

/// Hamiltonian vector field of the coordinate function `x_i`: `-pi e_i`.
pub(crate) fn coordinate_field(m: &DMatrix<f64>, i: usize) -> DVector<f64> {
    -m.column(i).into_owned()
}

/// Cyclic sum `sum_l pi_il d_l pi_jk + pi_jl d_l pi_ki + pi_kl d_l pi_ij`
/// from a precomputed structure matrix and its partials.
pub fn jacobiator_with(
    m: &DMatrix<f64>,
    partials: &[DMatrix<f64>],
    i: usize,
    j: usize,
    k: usize,
) -> f64 {
    if i == j || j == k || i == k {
        return 0.0;
    }
    partials
        .iter()
        .enumerate()
        .map(|(l, dp)| m[(i, l)] * dp[(j, k)] + m[(j, l)] * dp[(k, i)] + m[(k, l)] * dp[(i, j)])
        .sum()
}

/// `{x_i, {x_j, x_k}} + cyclic`, the failure of the Jacobi identity on
/// coordinate functions.
pub fn jacobiator<P: BivectorPatch + ?Sized>(
    pi: &P,
    i: usize,
    j: usize,
    k: usize,
    state: &[f64],
) -> Result<f64> {
    let n = pi.dim();
    check_dim(n, state.len())?;
    if i >= n || j >= n || k >= n {
        return Err(Error::invalid("index", format!("indices must be < {n}")));
    }
    if i == j || j == k || i == k {
        return Ok(0.0);
    }
    let m = pi.structure(state)?;
    let partials = structure_partials(pi, state)?;
    Ok(jacobiator_with(&m, &partials, i, j, k))
}

/// Every strictly increasing index triple in `0..n`.
pub fn index_triples(n: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).flat_map(move |j| (j + 1..n).map(move |k| (i, j, k))))
}

/// Largest `|J_ijk|` over all index triples.
pub fn max_jacobiator<P: BivectorPatch + ?Sized>(pi: &P, state: &[f64]) -> Result<f64> {
    let m = pi.structure(state)?;
    let partials = structure_partials(pi, state)?;
    Ok(index_triples(pi.dim())
        .map(|(i, j, k)| jacobiator_with(&m, &partials, i, j, k).abs())
        .fold(0.0, f64::max))
}

/// The bivector `pi^B` with `(pi^B)^sharp = pi^sharp (Id - B^flat pi^sharp)^-1`.
///
/// In component matrices (`pi^sharp(a) = -pi a`, `B^flat(X) = -i_X B = B X`)
/// this is `pi^B = pi (E + B pi)^-1`.
pub struct GaugedBivector<P, F> {
    pub base: P,
    pub form: F,
}

/// Gauge transformation of `pi` by the 2-form `form`.
pub fn gauge_transform<P: BivectorPatch, F: FormPatch>(pi: P, form: F) -> GaugedBivector<P, F> {
    GaugedBivector { base: pi, form }
}

/// `E + B pi` and its condition estimate (ratio of extreme singular values).
pub fn gauge_endomorphism(m: &DMatrix<f64>, b: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let n = m.nrows();
    let e = DMatrix::<f64>::identity(n, n) + b * m;
    let sv = e.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    (e, condition)
}

pub(crate) fn form_matrix(t: &AntisymTensor) -> DMatrix<f64> {
    let n = t.dim();
    DMatrix::from_fn(n, n, |i, j| t.get(&[i, j]))
}

impl<P: BivectorPatch, F: FormPatch> BivectorPatch for GaugedBivector<P, F> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn name(&self) -> String {
        format!("{} gauged", self.base.name())
    }

    fn structure(&self, state: &[f64]) -> Result<DMatrix<f64>> {
        check_dim(self.base.dim(), self.form.dim())?;
        if self.form.degree() != 2 {
            return Err(Error::invalid("form", "gauge form must have degree 2"));
        }
        let m = self.base.structure(state)?;
        let b = form_matrix(&self.form.eval(state)?);
        let (e, condition) = gauge_endomorphism(&m, &b);
        if condition.is_nan() || condition > GAUGE_CONDITION_LIMIT {
            return Err(Error::SingularGauge { condition });
        }
        // pi (E + B pi)^-1 = ((E + B pi)^-T pi^T)^T
        let lu = e.transpose().lu();
        let y = lu
            .solve(&m.transpose())
            .ok_or(Error::SingularGauge { condition })?;
        let raw = y.transpose();
        let residual = (&raw + raw.transpose()).abs().max();
        if residual > GAUGE_SYMMETRY_TOLERANCE {
            return Err(Error::GaugeAsymmetry { residual });
        }
        Ok((&raw - raw.transpose()) * 0.5)
    }
}

/// Per-state outcome of [`dynamical_gauge_check`].
#[derive(Clone, Debug)]
pub struct GaugeStateCheck {
    /// `max |i_{X_H} B|`.
    pub contraction_residual: f64,
    /// Condition estimate of `E + B pi`.
    pub condition: f64,
    pub contraction_ok: bool,
    pub invertible_ok: bool,
}

impl GaugeStateCheck {
    pub fn passed(&self) -> bool {
        self.contraction_ok && self.invertible_ok
    }
}

#[derive(Clone, Debug, Default)]
pub struct GaugeCheckReport {
    pub states: Vec<GaugeStateCheck>,
}

impl GaugeCheckReport {
    pub fn passed(&self) -> bool {
        self.states.iter().all(GaugeStateCheck::passed)
    }

    pub fn max_contraction_residual(&self) -> f64 {
        self.states
            .iter()
            .map(|s| s.contraction_residual)
            .fold(0.0, f64::max)
    }

    pub fn max_condition(&self) -> f64 {
        self.states.iter().map(|s| s.condition).fold(0.0, f64::max)
    }
}

/// Checks both conditions of a dynamical gauge transformation at each
/// state: `i_{X_H} B = 0` and invertibility of `Id - B^flat pi^sharp`.
/// Failures are reported, not returned as errors.
pub fn dynamical_gauge_check<P, F, H>(
    pi: &P,
    form: &F,
    hamiltonian: &H,
    states: &[Vec<f64>],
) -> Result<GaugeCheckReport>
where
    P: BivectorPatch + ?Sized,
    F: FormPatch + ?Sized,
    H: ScalarField + ?Sized,
{
    check_dim(pi.dim(), form.dim())?;
    check_dim(pi.dim(), hamiltonian.dim())?;
    let mut report = GaugeCheckReport::default();
    for state in states {
        let m = pi.structure(state)?;
        let b = form.eval(state)?;
        let x_h = ham_vf(pi, hamiltonian, state)?;
        let contraction_residual = b.interior(x_h.as_slice()).max_abs();
        let (_, condition) = gauge_endomorphism(&m, &form_matrix(&b));
        report.states.push(GaugeStateCheck {
            contraction_residual,
            condition,
            contraction_ok: contraction_residual <= DYNAMICAL_GAUGE_TOLERANCE,
            invertible_ok: condition <= GAUGE_CONDITION_LIMIT,
        });
    }
    Ok(report)
}

/// `J_ijk + phi(X_i, X_j, X_k)` with `X_i` the Hamiltonian field of `x_i`.
/// Zero on every triple iff `pi` is `phi`-twisted Poisson.
pub fn twisted_defect<P, F>(
    pi: &P,
    phi: &F,
    i: usize,
    j: usize,
    k: usize,
    state: &[f64],
) -> Result<f64>
where
    P: BivectorPatch + ?Sized,
    F: FormPatch + ?Sized,
{
    let m = pi.structure(state)?;
    let partials = structure_partials(pi, state)?;
    let phi_t = phi.eval(state)?;
    Ok(twisted_defect_with(&m, &partials, &phi_t, i, j, k))
}

pub(crate) fn twisted_defect_with(
    m: &DMatrix<f64>,
    partials: &[DMatrix<f64>],
    phi: &AntisymTensor,
    i: usize,
    j: usize,
    k: usize,
) -> f64 {
    let xi = coordinate_field(m, i);
    let xj = coordinate_field(m, j);
    let xk = coordinate_field(m, k);
    jacobiator_with(m, partials, i, j, k) + phi.eval(&[xi.as_slice(), xj.as_slice(), xk.as_slice()])
}

/// Largest twisted defect over all index triples.
pub fn max_twisted_defect<P, F>(pi: &P, phi: &F, state: &[f64]) -> Result<f64>
where
    P: BivectorPatch + ?Sized,
    F: FormPatch + ?Sized,
{
    check_dim(pi.dim(), phi.dim())?;
    let m = pi.structure(state)?;
    let partials = structure_partials(pi, state)?;
    let phi_t = phi.eval(state)?;
    Ok(index_triples(pi.dim())
        .map(|(i, j, k)| twisted_defect_with(&m, &partials, &phi_t, i, j, k).abs())
        .fold(0.0, f64::max))
}

/// The rescaled bivector `factor * pi`.
pub struct ScaledBivector<P, F> {
    pub base: P,
    pub factor: F,
}

impl<P: BivectorPatch, F: ScalarField> BivectorPatch for ScaledBivector<P, F> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn name(&self) -> String {
        format!("scaled {}", self.base.name())
    }

    fn structure(&self, state: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.base.structure(state)? * self.factor.value(state)?)
    }

    fn partials(&self, state: &[f64]) -> Result<Option<Vec<DMatrix<f64>>>> {
        let (Some(dp), Some(grad)) = (self.base.partials(state)?, self.factor.gradient(state)?)
        else {
            return Ok(None);
        };
        let m = self.base.structure(state)?;
        let phi = self.factor.value(state)?;
        Ok(Some(
            dp.into_iter()
                .enumerate()
                .map(|(l, d)| d * phi + &m * grad[l])
                .collect(),
        ))
    }
}

fn positive_factor<F: ScalarField + ?Sized>(factor: &F, state: &[f64]) -> Result<f64> {
    let value = factor.value(state)?;
    if value > 0.0 {
        Ok(value)
    } else {
        Err(Error::NonPositiveFactor { value })
    }
}

/// Jacobiator of `factor * pi`.
pub fn conformal_jacobiator<P, F>(
    pi: &P,
    factor: &F,
    i: usize,
    j: usize,
    k: usize,
    state: &[f64],
) -> Result<f64>
where
    P: BivectorPatch,
    F: ScalarField,
{
    positive_factor(factor, state)?;
    jacobiator(&ScaledBivector { base: pi, factor }, i, j, k, state)
}

/// Largest `|J|` of `factor * pi` over all index triples.
pub fn max_conformal_jacobiator<P, F>(pi: &P, factor: &F, state: &[f64]) -> Result<f64>
where
    P: BivectorPatch,
    F: ScalarField,
{
    positive_factor(factor, state)?;
    max_jacobiator(&ScaledBivector { base: pi, factor }, state)
}

/// `|pi^sharp(dC)|`, zero iff `C` is a Casimir at `state`.
pub fn casimir_defect<P, C>(pi: &P, casimir: &C, state: &[f64]) -> Result<f64>
where
    P: BivectorPatch + ?Sized,
    C: ScalarField + ?Sized,
{
    Ok(ham_vf(pi, casimir, state)?.norm())
}

/// `chi([X_f, X_g])`, computed as `-d chi(X_f, X_g)`. Valid when `chi`
/// annihilates the characteristic distribution, which is checked at the
/// state. A nonzero value shows the distribution is not integrable.
pub fn distribution_probe<P, X, F, G>(pi: &P, chi: &X, f: &F, g: &G, state: &[f64]) -> Result<f64>
where
    P: BivectorPatch + ?Sized,
    X: FormPatch + ?Sized,
    F: ScalarField + ?Sized,
    G: ScalarField + ?Sized,
{
    if chi.degree() != 1 {
        return Err(Error::invalid("chi", "probe form must have degree 1"));
    }
    check_dim(pi.dim(), chi.dim())?;
    let x_f = ham_vf(pi, f, state)?;
    let x_g = ham_vf(pi, g, state)?;
    let chi_t = chi.eval(state)?;
    let residual = chi_t
        .eval(&[x_f.as_slice()])
        .abs()
        .max(chi_t.eval(&[x_g.as_slice()]).abs());
    if residual > ANNIHILATION_TOLERANCE {
        return Err(Error::AnnihilationViolated { residual });
    }
    let d_chi = fd_exterior_derivative(chi, state)?;
    Ok(-d_chi.eval(&[x_f.as_slice(), x_g.as_slice()]))
}

/// Orthonormal basis of `range(m)`, with numerical rank cut at
/// `tol * sigma_max`.
pub fn range_basis(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    let cols: Vec<_> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > tol * smax.max(f64::MIN_POSITIVE))
        .map(|(c, _)| u.column(c).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(m.nrows(), 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Norm of the component of `v` orthogonal to `range(basis)`.
pub fn projection_residual(basis: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    if basis.ncols() == 0 {
        return v.norm();
    }
    let proj = basis * (basis.transpose() * v);
    (v - proj).norm()
}
