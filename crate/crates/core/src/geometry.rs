//! Three-vector algebra, the hat map, dense antisymmetric tensors and a
//! finite-difference exterior derivative on coordinate patches.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};

use crate::error::{Error, Result};
use crate::rolling::{FullState, ReducedState};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Largest `|M + M^T|` entry accepted by [`unhat`].
pub const UNHAT_TOLERANCE: f64 = 1e-8;

/// The hat map: `hat(v) * w == v.cross(&w)`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]. Reads `(M32, M13, M21)` of the antisymmetric part.
pub fn unhat(m: &Mat3) -> Result<Vec3> {
    let residual = (m + m.transpose()).abs().max();
    if residual > UNHAT_TOLERANCE {
        return Err(Error::SymmetricInput {
            residual,
            tolerance: UNHAT_TOLERANCE,
        });
    }
    Ok(antisymmetric_part_vector(m))
}

/// `unhat` of `(M - M^T)/2` without the symmetry check.
pub(crate) fn antisymmetric_part_vector(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Levi-Civita symbol on `{0, 1, 2}`.
#[inline]
pub fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// Central-difference step for a coordinate of magnitude `x`.
#[inline]
pub fn fd_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

/// Dense fully antisymmetric `k`-tensor with `n`-dimensional indices.
///
/// Components follow the determinant convention: a 2-form `a ^ b` has
/// components `a_i b_j - a_j b_i`, and evaluating the tensor on vectors
/// is plain contraction.
#[derive(Clone, Debug, PartialEq)]
pub struct AntisymTensor {
    dim: usize,
    degree: usize,
    data: Vec<f64>,
}

impl AntisymTensor {
    pub fn zeros(dim: usize, degree: usize) -> Self {
        Self {
            dim,
            degree,
            data: vec![0.0; dim.pow(degree as u32)],
        }
    }

    /// Builds a tensor from an arbitrary component function. The result is
    /// taken as given; callers are responsible for antisymmetry.
    pub fn from_fn(dim: usize, degree: usize, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(dim, degree);
        let mut idx = vec![0usize; degree];
        for flat in 0..t.data.len() {
            t.unflatten(flat, &mut idx);
            t.data[flat] = f(&idx);
        }
        t
    }

    /// 2-tensor from a square matrix given row by row.
    pub fn from_matrix(m: &nalgebra::DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols());
        Self::from_fn(m.nrows(), 2, |ix| m[(ix[0], ix[1])])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn flatten(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.degree);
        idx.iter().fold(0, |acc, &i| acc * self.dim + i)
    }

    fn unflatten(&self, mut flat: usize, idx: &mut [usize]) {
        for slot in idx.iter_mut().rev() {
            *slot = flat % self.dim;
            flat /= self.dim;
        }
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flatten(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let flat = self.flatten(idx);
        self.data[flat] = value;
    }

    /// Full contraction with `degree` vectors.
    pub fn eval(&self, vectors: &[&[f64]]) -> f64 {
        assert_eq!(vectors.len(), self.degree, "wrong number of arguments");
        let mut idx = vec![0usize; self.degree];
        let mut acc = 0.0;
        for (flat, &c) in self.data.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            self.unflatten(flat, &mut idx);
            let mut term = c;
            for (v, &i) in vectors.iter().zip(idx.iter()) {
                term *= v[i];
            }
            acc += term;
        }
        acc
    }

    /// Interior product `i_v T`, contracting the first slot.
    pub fn interior(&self, v: &[f64]) -> AntisymTensor {
        assert!(self.degree >= 1);
        let stride = self.dim.pow(self.degree as u32 - 1);
        let mut out = AntisymTensor::zeros(self.dim, self.degree - 1);
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            let block = &self.data[i * stride..(i + 1) * stride];
            for (o, &b) in out.data.iter_mut().zip(block) {
                *o += vi * b;
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.data.iter_mut().for_each(|x| *x *= factor);
        self
    }

    /// Largest deviation from antisymmetry over adjacent index swaps.
    pub fn antisymmetry_residual(&self) -> f64 {
        if self.degree < 2 {
            return 0.0;
        }
        let mut idx = vec![0usize; self.degree];
        let mut worst: f64 = 0.0;
        for flat in 0..self.data.len() {
            self.unflatten(flat, &mut idx);
            for p in 0..self.degree - 1 {
                let mut swapped = idx.clone();
                swapped.swap(p, p + 1);
                worst = worst.max((self.data[flat] + self.get(&swapped)).abs());
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &AntisymTensor) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// A differential `k`-form on an `n`-dimensional coordinate patch.
pub trait FormPatch: Sync {
    fn dim(&self) -> usize;
    fn degree(&self) -> usize;
    fn eval(&self, state: &[f64]) -> Result<AntisymTensor>;

    /// `partials[l]` is the coordinate derivative of the component tensor
    /// along coordinate `l`. `None` means "use finite differences".
    fn partials(&self, _state: &[f64]) -> Result<Option<Vec<AntisymTensor>>> {
        Ok(None)
    }
}

impl<T: FormPatch + ?Sized> FormPatch for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn degree(&self) -> usize {
        (**self).degree()
    }
    fn eval(&self, state: &[f64]) -> Result<AntisymTensor> {
        (**self).eval(state)
    }
    fn partials(&self, state: &[f64]) -> Result<Option<Vec<AntisymTensor>>> {
        (**self).partials(state)
    }
}

impl<T: FormPatch + ?Sized> FormPatch for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn degree(&self) -> usize {
        (**self).degree()
    }
    fn eval(&self, state: &[f64]) -> Result<AntisymTensor> {
        (**self).eval(state)
    }
    fn partials(&self, state: &[f64]) -> Result<Option<Vec<AntisymTensor>>> {
        (**self).partials(state)
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Coordinate partials of a form, analytic when the form provides them.
pub fn form_partials<F: FormPatch + ?Sized>(form: &F, state: &[f64]) -> Result<Vec<AntisymTensor>> {
    check_dim(form.dim(), state.len())?;
    if let Some(p) = form.partials(state)? {
        return Ok(p);
    }
    let mut work = state.to_vec();
    (0..state.len())
        .map(|l| {
            let h = fd_step(state[l]);
            work[l] = state[l] + h;
            let plus = form.eval(&work)?;
            work[l] = state[l] - h;
            let minus = form.eval(&work)?;
            work[l] = state[l];
            Ok(AntisymTensor {
                dim: plus.dim,
                degree: plus.degree,
                data: plus
                    .data
                    .iter()
                    .zip(&minus.data)
                    .map(|(a, b)| (a - b) / (2.0 * h))
                    .collect(),
            })
        })
        .collect()
}

/// Exterior derivative assembled from coordinate partials:
/// `(dw)_{i0..ik} = sum_j (-1)^j d_{i_j} w_{i0..^i_j..ik}`.
pub fn exterior_derivative_from_partials(partials: &[AntisymTensor]) -> AntisymTensor {
    let n = partials.len();
    let k = partials[0].degree;
    let mut idx_rest = vec![0usize; k];
    AntisymTensor::from_fn(n, k + 1, |idx| {
        // repeated indices vanish by antisymmetry
        for a in 0..idx.len() {
            for b in a + 1..idx.len() {
                if idx[a] == idx[b] {
                    return 0.0;
                }
            }
        }
        let mut acc = 0.0;
        for j in 0..=k {
            let mut p = 0;
            for (q, &i) in idx.iter().enumerate() {
                if q != j {
                    idx_rest[p] = i;
                    p += 1;
                }
            }
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * partials[idx[j]].get(&idx_rest);
        }
        acc
    })
}

/// `d omega` at `state`, by central differences unless analytic partials exist.
pub fn fd_exterior_derivative<F: FormPatch + ?Sized>(
    form: &F,
    state: &[f64],
) -> Result<AntisymTensor> {
    let partials = form_partials(form, state)?;
    Ok(exterior_derivative_from_partials(&partials))
}

/// The exterior derivative of a form, itself a form of one degree higher.
pub struct ExteriorDerivative<F>(pub F);

impl<F: FormPatch> FormPatch for ExteriorDerivative<F> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn degree(&self) -> usize {
        self.0.degree() + 1
    }
    fn eval(&self, state: &[f64]) -> Result<AntisymTensor> {
        fd_exterior_derivative(&self.0, state)
    }
}

/// `factor * form`.
pub struct ScaledForm<F> {
    pub form: F,
    pub factor: f64,
}

impl<F: FormPatch> FormPatch for ScaledForm<F> {
    fn dim(&self) -> usize {
        self.form.dim()
    }
    fn degree(&self) -> usize {
        self.form.degree()
    }
    fn eval(&self, state: &[f64]) -> Result<AntisymTensor> {
        Ok(self.form.eval(state)?.scaled(self.factor))
    }
    fn partials(&self, state: &[f64]) -> Result<Option<Vec<AntisymTensor>>> {
        Ok(self
            .form
            .partials(state)?
            .map(|p| p.into_iter().map(|t| t.scaled(self.factor)).collect()))
    }
}

/// A form with constant components.
pub struct ConstantForm(pub AntisymTensor);

impl FormPatch for ConstantForm {
    fn dim(&self) -> usize {
        self.0.dim
    }
    fn degree(&self) -> usize {
        self.0.degree
    }
    fn eval(&self, _state: &[f64]) -> Result<AntisymTensor> {
        Ok(self.0.clone())
    }
    fn partials(&self, _state: &[f64]) -> Result<Option<Vec<AntisymTensor>>> {
        Ok(Some(vec![
            AntisymTensor::zeros(self.0.dim, self.0.degree);
            self.0.dim
        ]))
    }
}

type TensorFn = Box<dyn Fn(&[f64]) -> AntisymTensor + Send + Sync>;
type PartialsFn = Box<dyn Fn(&[f64]) -> Vec<AntisymTensor> + Send + Sync>;

/// Closure-backed form, handy for user-supplied fields.
pub struct FnForm {
    dim: usize,
    degree: usize,
    eval: TensorFn,
    partials: Option<PartialsFn>,
}

impl FnForm {
    pub fn new(
        dim: usize,
        degree: usize,
        eval: impl Fn(&[f64]) -> AntisymTensor + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            degree,
            eval: Box::new(eval),
            partials: None,
        }
    }

    pub fn with_partials(
        mut self,
        partials: impl Fn(&[f64]) -> Vec<AntisymTensor> + Send + Sync + 'static,
    ) -> Self {
        self.partials = Some(Box::new(partials));
        self
    }
}

impl FormPatch for FnForm {
    fn dim(&self) -> usize {
        self.dim
    }
    fn degree(&self) -> usize {
        self.degree
    }
    fn eval(&self, state: &[f64]) -> Result<AntisymTensor> {
        Ok((self.eval)(state))
    }
    fn partials(&self, state: &[f64]) -> Result<Option<Vec<AntisymTensor>>> {
        Ok(self.partials.as_ref().map(|p| p(state)))
    }
}

/// Seeded source of random states. The generator is ChaCha8, so a seed
/// reproduces the same sequence on every platform.
pub struct StateSampler {
    rng: ChaCha8Rng,
}

impl StateSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn unit_vector(&mut self) -> Vec3 {
        let [x, y, z]: [f64; 3] = UnitSphere.sample(&mut self.rng);
        Vec3::new(x, y, z).normalize()
    }

    pub fn uniform_vector(&mut self, lo: f64, hi: f64) -> Vec3 {
        Vec3::from_fn(|_, _| self.rng.random_range(lo..hi))
    }

    pub fn normal_vector(&mut self) -> Vec3 {
        Vec3::from_fn(|_, _| StandardNormal.sample(&mut self.rng))
    }

    /// Haar-distributed rotation.
    pub fn rotation(&mut self) -> Mat3 {
        let q = Quaternion::new(
            StandardNormal.sample(&mut self.rng),
            StandardNormal.sample(&mut self.rng),
            StandardNormal.sample(&mut self.rng),
            StandardNormal.sample(&mut self.rng),
        );
        *UnitQuaternion::from_quaternion(q)
            .to_rotation_matrix()
            .matrix()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.random_range(lo..hi)
    }

    /// `gamma` uniform on the unit sphere, `K` uniform in `[-1, 1]^3`.
    pub fn reduced_state(&mut self) -> ReducedState {
        let gamma = self.unit_vector();
        let k = self.uniform_vector(-1.0, 1.0);
        ReducedState::new(gamma, k)
    }

    /// Random rotation, standard normal position, `K` uniform in `[-1, 1]^3`.
    pub fn full_state(&mut self) -> FullState {
        let g = self.rotation();
        let x = self.normal_vector();
        let k = self.uniform_vector(-1.0, 1.0);
        FullState::new(g, x, k)
    }
}

/// One reduced state drawn from a fresh sampler with the given seed.
pub fn sample_reduced_state(seed: u64) -> ReducedState {
    StateSampler::new(seed).reduced_state()
}
