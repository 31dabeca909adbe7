//! Rigid body subject to a generalized rolling constraint `x' = r A g Omega`.
//!
//! The reduced chart has coordinates `(gamma_1..3, K_1..3)`; the full chart
//! on the constraint manifold uses the redundant coordinates
//! `(g_11..g_33, x_1..x_3, K_1..K_3)` with `g` stored row-major.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    antisymmetric_part_vector, check_dim, hat, levi_civita, AntisymTensor, ExteriorDerivative,
    FormPatch, Mat3, ScaledForm, Vec3,
};
use crate::poisson::{range_basis, BivectorPatch, ScalarField};

/// Dimension of the reduced chart.
pub const REDUCED_DIM: usize = 6;
/// Dimension of the full chart.
pub const FULL_DIM: usize = 15;
/// Offset of `x` in the full chart.
pub const X_OFFSET: usize = 9;
/// Offset of `K` in the full chart.
pub const K_OFFSET: usize = 12;

const DENOMINATOR_TOLERANCE: f64 = 1e-12;

/// Rank of the constraint matrix `A`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ConstraintRank {
    Zero,
    One,
    Two,
    Three,
}

impl ConstraintRank {
    pub const ALL: [ConstraintRank; 4] = [Self::Zero, Self::One, Self::Two, Self::Three];

    pub fn as_u8(self) -> u8 {
        match self {
            Self::Zero => 0,
            Self::One => 1,
            Self::Two => 2,
            Self::Three => 3,
        }
    }
}

impl TryFrom<u8> for ConstraintRank {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        match value {
            0 => Ok(Self::Zero),
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            3 => Ok(Self::Three),
            _ => Err(Error::invalid(
                "rank",
                format!("must be 0, 1, 2 or 3, got {value}"),
            )),
        }
    }
}

impl From<ConstraintRank> for u8 {
    fn from(rank: ConstraintRank) -> u8 {
        rank.as_u8()
    }
}

impl std::fmt::Display for ConstraintRank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

/// Which of the two reduced brackets of a given rank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BracketVariant {
    Plain,
    Primed,
}

/// Nonholonomic bracket on the full chart, or its gauge by the 2-form `B`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NhVariant {
    Plain,
    Gauged,
}

impl NhVariant {
    /// The reduced bracket this one descends to.
    pub fn reduced(self) -> BracketVariant {
        match self {
            Self::Plain => BracketVariant::Plain,
            Self::Gauged => BracketVariant::Primed,
        }
    }
}

/// Physical parameters of the body and its constraint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BodyParams {
    inertia: Vec3,
    mass: f64,
    radius: f64,
    rank: ConstraintRank,
    so2_angle: f64,
}

impl BodyParams {
    pub fn new(inertia: Vec3, mass: f64, radius: f64, rank: ConstraintRank) -> Result<Self> {
        let params = Self {
            inertia,
            mass,
            radius,
            rank,
            so2_angle: -FRAC_PI_2,
        };
        params.validate()?;
        Ok(params)
    }

    /// Sphere with `I = diag(1, 2, 3)`, `m = r = 1` and a rank-2 constraint.
    pub fn chaplygin() -> Self {
        Self::new(Vec3::new(1.0, 2.0, 3.0), 1.0, 1.0, ConstraintRank::Two).expect("valid constants")
    }

    pub fn with_rank(mut self, rank: ConstraintRank) -> Self {
        self.rank = rank;
        self
    }

    pub fn with_so2_angle(mut self, angle: f64) -> Result<Self> {
        if !angle.is_finite() {
            return Err(Error::invalid("so2_angle", "must be finite"));
        }
        self.so2_angle = angle;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        for (i, v) in self.inertia.iter().enumerate() {
            if !(v.is_finite() && *v > 0.0) {
                return Err(Error::invalid(
                    format!("inertia[{i}]"),
                    format!("must be finite and positive, got {v}"),
                ));
            }
        }
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(Error::invalid("mass", "must be finite and positive"));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::invalid("radius", "must be finite and positive"));
        }
        Ok(())
    }

    pub fn inertia(&self) -> Vec3 {
        self.inertia
    }
    pub fn mass(&self) -> f64 {
        self.mass
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn rank(&self) -> ConstraintRank {
        self.rank
    }
    pub fn so2_angle(&self) -> f64 {
        self.so2_angle
    }

    /// `m r^2`.
    pub fn mr2(&self) -> f64 {
        self.mass * self.radius * self.radius
    }
}

/// Point of the reduced space: Poisson vector and kinetic momentum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReducedState {
    pub gamma: Vec3,
    pub k: Vec3,
}

impl ReducedState {
    pub fn new(gamma: Vec3, k: Vec3) -> Self {
        Self { gamma, k }
    }

    pub fn to_coords(&self) -> [f64; REDUCED_DIM] {
        [
            self.gamma.x,
            self.gamma.y,
            self.gamma.z,
            self.k.x,
            self.k.y,
            self.k.z,
        ]
    }

    pub fn from_coords(c: &[f64]) -> Result<Self> {
        check_dim(REDUCED_DIM, c.len())?;
        Ok(Self::new(
            Vec3::new(c[0], c[1], c[2]),
            Vec3::new(c[3], c[4], c[5]),
        ))
    }

    pub fn is_finite(&self) -> bool {
        self.gamma
            .iter()
            .chain(self.k.iter())
            .all(|v| v.is_finite())
    }
}

/// Point of the constraint manifold in redundant coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FullState {
    pub g: Mat3,
    pub x: Vec3,
    pub k: Vec3,
}

impl FullState {
    pub fn new(g: Mat3, x: Vec3, k: Vec3) -> Self {
        Self { g, x, k }
    }

    /// `g^T e_3`.
    pub fn gamma(&self) -> Vec3 {
        self.g.row(2).transpose()
    }

    /// `|g^T g - E|` (max entry).
    pub fn orthogonality_defect(&self) -> f64 {
        (self.g.transpose() * self.g - Mat3::identity()).abs().max()
    }

    pub fn to_coords(&self) -> [f64; FULL_DIM] {
        let mut c = [0.0; FULL_DIM];
        for a in 0..3 {
            for b in 0..3 {
                c[3 * a + b] = self.g[(a, b)];
            }
            c[X_OFFSET + a] = self.x[a];
            c[K_OFFSET + a] = self.k[a];
        }
        c
    }

    pub fn from_coords(c: &[f64]) -> Result<Self> {
        check_dim(FULL_DIM, c.len())?;
        Ok(Self::new(
            Mat3::from_row_slice(&c[..9]),
            Vec3::new(c[9], c[10], c[11]),
            Vec3::new(c[12], c[13], c[14]),
        ))
    }

    pub fn is_finite(&self) -> bool {
        self.g
            .iter()
            .chain(self.x.iter())
            .chain(self.k.iter())
            .all(|v| v.is_finite())
    }

    /// Linear momentum `m r A g Omega`.
    pub fn linear_momentum(&self, params: &BodyParams) -> Result<Vec3> {
        let omega = omega_from_k(params, &self.gamma(), &self.k)?;
        Ok(params.mass * params.radius * matrix_a(params) * self.g * omega)
    }
}

/// The constraint matrix `A` in canonical form.
pub fn matrix_a(params: &BodyParams) -> Mat3 {
    let (s, c) = params.so2_angle.sin_cos();
    let mut a = Mat3::zeros();
    if matches!(params.rank, ConstraintRank::Two | ConstraintRank::Three) {
        a[(0, 0)] = c;
        a[(0, 1)] = -s;
        a[(1, 0)] = s;
        a[(1, 1)] = c;
    }
    if matches!(params.rank, ConstraintRank::One | ConstraintRank::Three) {
        a[(2, 2)] = 1.0;
    }
    a
}

/// `S(gamma)` such that `K = (I + m r^2 S) Omega`. Off the unit sphere the
/// projector uses the direction of `gamma`.
pub fn s_matrix(rank: ConstraintRank, gamma: &Vec3) -> Mat3 {
    match rank {
        ConstraintRank::Zero => Mat3::zeros(),
        ConstraintRank::One => gamma * gamma.transpose() / gamma.norm_squared(),
        ConstraintRank::Two => Mat3::identity() - gamma * gamma.transpose() / gamma.norm_squared(),
        ConstraintRank::Three => Mat3::identity(),
    }
}

/// `I + m r^2 S(gamma)`.
pub fn kinetic_matrix(params: &BodyParams, gamma: &Vec3) -> Mat3 {
    Mat3::from_diagonal(&params.inertia) + params.mr2() * s_matrix(params.rank, gamma)
}

pub fn k_from_omega(params: &BodyParams, gamma: &Vec3, omega: &Vec3) -> Vec3 {
    kinetic_matrix(params, gamma) * omega
}

/// Closed-form inverse of [`k_from_omega`].
pub fn omega_from_k(params: &BodyParams, gamma: &Vec3, k: &Vec3) -> Result<Vec3> {
    let c = params.mr2();
    let i = params.inertia;
    let n2 = gamma.norm_squared();
    match params.rank {
        ConstraintRank::Zero => Ok(k.component_div(&i)),
        ConstraintRank::Three => Ok(k.component_div(&i.add_scalar(c))),
        ConstraintRank::Two => {
            let jg = gamma.component_div(&i.add_scalar(c));
            let denominator = n2 - c * gamma.dot(&jg);
            guard_denominator(denominator, n2)?;
            Ok(k.component_div(&i.add_scalar(c)) + jg * (c * k.dot(&jg) / denominator))
        }
        ConstraintRank::One => {
            let ig = gamma.component_div(&i);
            let denominator = n2 + c * gamma.dot(&ig);
            guard_denominator(denominator, n2)?;
            Ok(k.component_div(&i) - ig * (c * k.dot(&ig) / denominator))
        }
    }
}

fn guard_denominator(denominator: f64, n2: f64) -> Result<()> {
    if denominator > DENOMINATOR_TOLERANCE * n2 && n2 > 0.0 {
        Ok(())
    } else {
        Err(Error::DegenerateDenominator { denominator })
    }
}

/// Sign of the projector term in `S`: `+1` for rank 1, `-1` for rank 2.
fn projector_sign(rank: ConstraintRank) -> f64 {
    match rank {
        ConstraintRank::One => 1.0,
        ConstraintRank::Two => -1.0,
        _ => 0.0,
    }
}

/// `d(P Omega)/d gamma_l` with `P = gamma gamma^T / |gamma|^2`.
fn projector_derivative_times(gamma: &Vec3, omega: &Vec3, l: usize) -> Vec3 {
    let n2 = gamma.norm_squared();
    let go = gamma.dot(omega);
    let mut v = gamma * omega[l] / n2;
    v[l] += go / n2;
    v - gamma * (2.0 * gamma[l] * go / (n2 * n2))
}

/// Derivatives of `Omega(gamma, K)`: `(d Omega / d gamma_l, d Omega / d K_l)`.
pub fn omega_partials(
    params: &BodyParams,
    gamma: &Vec3,
    k: &Vec3,
) -> Result<([Vec3; 3], [Vec3; 3])> {
    let omega = omega_from_k(params, gamma, k)?;
    let dk = [
        omega_from_k(params, gamma, &Vec3::x())?,
        omega_from_k(params, gamma, &Vec3::y())?,
        omega_from_k(params, gamma, &Vec3::z())?,
    ];
    let s = projector_sign(params.rank);
    let mut dg = [Vec3::zeros(); 3];
    if s != 0.0 {
        for (l, d) in dg.iter_mut().enumerate() {
            let w = projector_derivative_times(gamma, &omega, l);
            *d = -params.mr2() * s * omega_from_k(params, gamma, &w)?;
        }
    }
    Ok((dg, dk))
}

/// Reduced Hamiltonian `H = K . Omega / 2`.
pub fn hamiltonian(params: &BodyParams, state: &ReducedState) -> Result<f64> {
    let omega = omega_from_k(params, &state.gamma, &state.k)?;
    Ok(0.5 * state.k.dot(&omega))
}

/// Reduced equations of motion: `(gamma', K') = (gamma x Omega, K x Omega)`.
pub fn reduced_vf(params: &BodyParams, state: &ReducedState) -> Result<(Vec3, Vec3)> {
    let omega = omega_from_k(params, &state.gamma, &state.k)?;
    Ok((state.gamma.cross(&omega), state.k.cross(&omega)))
}

/// `dH/dgamma` at fixed `K`.
fn hamiltonian_gamma_gradient(params: &BodyParams, gamma: &Vec3, omega: &Vec3) -> Vec3 {
    let s = projector_sign(params.rank);
    if s == 0.0 {
        return Vec3::zeros();
    }
    let n2 = gamma.norm_squared();
    let go = gamma.dot(omega);
    // -1/2 Omega^T (dM/dgamma_l) Omega
    let quad = omega * (2.0 * go / n2) - gamma * (2.0 * go * go / (n2 * n2));
    -0.5 * params.mr2() * s * quad
}

/// The reduced Hamiltonian as a scalar field on the 6-dimensional chart.
#[derive(Clone, Copy, Debug)]
pub struct ReducedHamiltonian(pub BodyParams);

impl ScalarField for ReducedHamiltonian {
    fn dim(&self) -> usize {
        REDUCED_DIM
    }
    fn value(&self, s: &[f64]) -> Result<f64> {
        hamiltonian(&self.0, &ReducedState::from_coords(s)?)
    }
    fn gradient(&self, s: &[f64]) -> Result<Option<DVector<f64>>> {
        let st = ReducedState::from_coords(s)?;
        let omega = omega_from_k(&self.0, &st.gamma, &st.k)?;
        let dg = hamiltonian_gamma_gradient(&self.0, &st.gamma, &omega);
        Ok(Some(DVector::from_iterator(
            REDUCED_DIM,
            dg.iter().chain(omega.iter()).copied(),
        )))
    }
}

/// `C1 = K . gamma` on the reduced chart.
#[derive(Clone, Copy, Debug, Default)]
pub struct MomentumCasimir;

impl ScalarField for MomentumCasimir {
    fn dim(&self) -> usize {
        REDUCED_DIM
    }
    fn value(&self, s: &[f64]) -> Result<f64> {
        check_dim(REDUCED_DIM, s.len())?;
        Ok(s[0] * s[3] + s[1] * s[4] + s[2] * s[5])
    }
    fn gradient(&self, s: &[f64]) -> Result<Option<DVector<f64>>> {
        check_dim(REDUCED_DIM, s.len())?;
        Ok(Some(DVector::from_column_slice(&[
            s[3], s[4], s[5], s[0], s[1], s[2],
        ])))
    }
}

/// `C2 = |gamma|^2` on the reduced chart.
#[derive(Clone, Copy, Debug, Default)]
pub struct SphereCasimir;

impl ScalarField for SphereCasimir {
    fn dim(&self) -> usize {
        REDUCED_DIM
    }
    fn value(&self, s: &[f64]) -> Result<f64> {
        check_dim(REDUCED_DIM, s.len())?;
        Ok(s[0] * s[0] + s[1] * s[1] + s[2] * s[2])
    }
    fn gradient(&self, s: &[f64]) -> Result<Option<DVector<f64>>> {
        check_dim(REDUCED_DIM, s.len())?;
        Ok(Some(DVector::from_column_slice(&[
            2.0 * s[0],
            2.0 * s[1],
            2.0 * s[2],
            0.0,
            0.0,
            0.0,
        ])))
    }
}

/// Whether `K . gamma` is a Casimir of the given reduced bracket
/// (exactly when `V - K` is parallel to `gamma`).
pub fn momentum_is_casimir(rank: ConstraintRank, variant: BracketVariant) -> bool {
    matches!(
        (rank, variant),
        (ConstraintRank::Zero, BracketVariant::Plain)
            | (ConstraintRank::One, BracketVariant::Plain)
            | (ConstraintRank::Two, BracketVariant::Primed)
            | (ConstraintRank::Three, BracketVariant::Primed)
    )
}

/// One of the eight reduced brackets. Blocks: `{gamma_i, gamma_j} = 0`,
/// `{gamma_i, K_j} = -eps_ijl gamma_l`, `{K_i, K_j} = -eps_ijl V_l`.
#[derive(Clone, Copy, Debug)]
pub struct ReducedBracket {
    pub params: BodyParams,
    pub variant: BracketVariant,
}

pub fn reduced_bracket(params: &BodyParams, variant: BracketVariant) -> ReducedBracket {
    ReducedBracket {
        params: *params,
        variant,
    }
}

impl ReducedBracket {
    /// Coefficients `(a, b)` in `V = K + a Omega + b (Omega . gamma) gamma`.
    pub fn coefficients(&self) -> (f64, f64) {
        use BracketVariant::*;
        use ConstraintRank::*;
        let c = self.params.mr2();
        match (self.params.rank, self.variant) {
            (Zero, Plain) => (0.0, 0.0),
            (Zero, Primed) => (-c, 0.0),
            (One, Plain) => (0.0, c),
            (One, Primed) => (-c, c),
            (Two, Plain) => (c, -c),
            (Two, Primed) => (0.0, -c),
            (Three, Plain) => (c, 0.0),
            (Three, Primed) => (0.0, 0.0),
        }
    }

    pub fn v_vector(&self, state: &ReducedState) -> Result<Vec3> {
        let (a, b) = self.coefficients();
        let omega = omega_from_k(&self.params, &state.gamma, &state.k)?;
        Ok(state.k + a * omega + b * omega.dot(&state.gamma) * state.gamma)
    }

    /// `dV / dx_l` for the six reduced coordinates.
    pub fn v_partials(&self, state: &ReducedState) -> Result<[Vec3; REDUCED_DIM]> {
        let (a, b) = self.coefficients();
        let gamma = state.gamma;
        let omega = omega_from_k(&self.params, &gamma, &state.k)?;
        let (dg, dk) = omega_partials(&self.params, &gamma, &state.k)?;
        let og = omega.dot(&gamma);
        let mut out = [Vec3::zeros(); REDUCED_DIM];
        for l in 0..3 {
            let mut e = Vec3::zeros();
            e[l] = 1.0;
            out[l] = a * dg[l] + b * ((dg[l].dot(&gamma) + omega[l]) * gamma + og * e);
            out[l + 3] = e + a * dk[l] + b * dk[l].dot(&gamma) * gamma;
        }
        Ok(out)
    }
}

fn block_structure(gamma: &Vec3, v: &Vec3) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(REDUCED_DIM, REDUCED_DIM);
    let g = hat(gamma);
    m.view_mut((0, 3), (3, 3)).copy_from(&g);
    m.view_mut((3, 0), (3, 3)).copy_from(&g);
    m.view_mut((3, 3), (3, 3)).copy_from(&hat(v));
    m
}

impl BivectorPatch for ReducedBracket {
    fn dim(&self) -> usize {
        REDUCED_DIM
    }

    fn name(&self) -> String {
        let tag = match self.variant {
            BracketVariant::Plain => "",
            BracketVariant::Primed => "'",
        };
        format!("rank-{}{} reduced bracket", self.params.rank, tag)
    }

    fn structure(&self, s: &[f64]) -> Result<DMatrix<f64>> {
        let st = ReducedState::from_coords(s)?;
        Ok(block_structure(&st.gamma, &self.v_vector(&st)?))
    }

    fn partials(&self, s: &[f64]) -> Result<Option<Vec<DMatrix<f64>>>> {
        let st = ReducedState::from_coords(s)?;
        let dv = self.v_partials(&st)?;
        Ok(Some(
            (0..REDUCED_DIM)
                .map(|l| {
                    let mut e = Vec3::zeros();
                    if l < 3 {
                        e[l] = 1.0;
                    }
                    block_structure(&e, &dv[l])
                })
                .collect(),
        ))
    }
}

/// Conformal factor of the rank-1 and rank-2 systems; constant 1 for
/// ranks 0 and 3.
#[derive(Clone, Copy, Debug)]
pub struct ConformalFactor(pub BodyParams);

pub fn conformal_factor(params: &BodyParams) -> ConformalFactor {
    ConformalFactor(*params)
}

impl ConformalFactor {
    /// `(phi^2, grad_gamma phi^2 / 2)`.
    fn square(&self, gamma: &Vec3) -> (f64, Vec3) {
        let c = self.0.mr2();
        let i = self.0.inertia;
        match self.0.rank {
            ConstraintRank::One => {
                let ig = gamma.component_div(&i);
                (gamma.norm_squared() + c * gamma.dot(&ig), gamma + c * ig)
            }
            ConstraintRank::Two => {
                let jg = gamma.component_div(&i.add_scalar(c));
                (gamma.norm_squared() - c * gamma.dot(&jg), gamma - c * jg)
            }
            _ => (1.0, Vec3::zeros()),
        }
    }

    pub fn at(&self, gamma: &Vec3) -> f64 {
        self.square(gamma).0.sqrt()
    }
}

impl ScalarField for ConformalFactor {
    fn dim(&self) -> usize {
        REDUCED_DIM
    }
    fn value(&self, s: &[f64]) -> Result<f64> {
        check_dim(REDUCED_DIM, s.len())?;
        Ok(self.at(&Vec3::new(s[0], s[1], s[2])))
    }
    fn gradient(&self, s: &[f64]) -> Result<Option<DVector<f64>>> {
        check_dim(REDUCED_DIM, s.len())?;
        let (sq, half) = self.square(&Vec3::new(s[0], s[1], s[2]));
        let g = half / sq.sqrt();
        Ok(Some(DVector::from_column_slice(&[
            g.x, g.y, g.z, 0.0, 0.0, 0.0,
        ])))
    }
}

fn require_twisting_rank(params: &BodyParams) -> Result<()> {
    match params.rank {
        ConstraintRank::One | ConstraintRank::Two => Ok(()),
        rank => Err(Error::UnsupportedRank { rank: rank.as_u8() }),
    }
}

/// The 2-form `m r^2 (Omega . gamma) gamma . (d gamma x d gamma) / 2` on the
/// reduced chart: components `m r^2 (Omega . gamma) eps_ijl gamma_l` in the
/// `gamma`-`gamma` block.
#[derive(Clone, Copy, Debug)]
pub struct TwistTwoForm(BodyParams);

pub fn twist_two_form(params: &BodyParams) -> Result<TwistTwoForm> {
    require_twisting_rank(params)?;
    Ok(TwistTwoForm(*params))
}

fn gamma_area_block(scale: f64, gamma: &Vec3) -> AntisymTensor {
    AntisymTensor::from_fn(REDUCED_DIM, 2, |ix| {
        let (i, j) = (ix[0], ix[1]);
        if i < 3 && j < 3 {
            scale * (0..3).map(|l| levi_civita(i, j, l) * gamma[l]).sum::<f64>()
        } else {
            0.0
        }
    })
}

fn add_tensors(mut a: AntisymTensor, b: &AntisymTensor) -> AntisymTensor {
    let n = a.dim();
    for i in 0..n {
        for j in 0..n {
            let v = a.get(&[i, j]) + b.get(&[i, j]);
            a.set(&[i, j], v);
        }
    }
    a
}

impl FormPatch for TwistTwoForm {
    fn dim(&self) -> usize {
        REDUCED_DIM
    }
    fn degree(&self) -> usize {
        2
    }
    fn eval(&self, s: &[f64]) -> Result<AntisymTensor> {
        let st = ReducedState::from_coords(s)?;
        let omega = omega_from_k(&self.0, &st.gamma, &st.k)?;
        Ok(gamma_area_block(
            self.0.mr2() * omega.dot(&st.gamma),
            &st.gamma,
        ))
    }
    fn partials(&self, s: &[f64]) -> Result<Option<Vec<AntisymTensor>>> {
        let st = ReducedState::from_coords(s)?;
        let c = self.0.mr2();
        let omega = omega_from_k(&self.0, &st.gamma, &st.k)?;
        let (dg, dk) = omega_partials(&self.0, &st.gamma, &st.k)?;
        let og = omega.dot(&st.gamma);
        Ok(Some(
            (0..REDUCED_DIM)
                .map(|l| {
                    if l < 3 {
                        let mut e = Vec3::zeros();
                        e[l] = 1.0;
                        let d_og = dg[l].dot(&st.gamma) + omega[l];
                        add_tensors(
                            gamma_area_block(c * d_og, &st.gamma),
                            &gamma_area_block(c * og, &e),
                        )
                    } else {
                        gamma_area_block(c * dk[l - 3].dot(&st.gamma), &st.gamma)
                    }
                })
                .collect(),
        ))
    }
}

/// Twisting 3-form: `-d B` for rank 2, `+d B` for rank 1.
pub type TwistThreeForm = ScaledForm<ExteriorDerivative<TwistTwoForm>>;

pub fn twist_three_form(params: &BodyParams) -> Result<TwistThreeForm> {
    let b = twist_two_form(params)?;
    let factor = match params.rank {
        ConstraintRank::Two => -1.0,
        _ => 1.0,
    };
    Ok(ScaledForm {
        form: ExteriorDerivative(b),
        factor,
    })
}

/// The 1-form `gamma . dK + V . d gamma`, which annihilates every
/// Hamiltonian vector field of the bracket with the given `V`.
#[derive(Clone, Copy, Debug)]
pub struct AnnihilatorForm(pub ReducedBracket);

pub fn annihilator_form(params: &BodyParams, variant: BracketVariant) -> AnnihilatorForm {
    AnnihilatorForm(reduced_bracket(params, variant))
}

impl FormPatch for AnnihilatorForm {
    fn dim(&self) -> usize {
        REDUCED_DIM
    }
    fn degree(&self) -> usize {
        1
    }
    fn eval(&self, s: &[f64]) -> Result<AntisymTensor> {
        let st = ReducedState::from_coords(s)?;
        let v = self.0.v_vector(&st)?;
        let comps = [v.x, v.y, v.z, s[0], s[1], s[2]];
        Ok(AntisymTensor::from_fn(REDUCED_DIM, 1, |ix| comps[ix[0]]))
    }
    fn partials(&self, s: &[f64]) -> Result<Option<Vec<AntisymTensor>>> {
        let st = ReducedState::from_coords(s)?;
        let dv = self.0.v_partials(&st)?;
        Ok(Some(
            (0..REDUCED_DIM)
                .map(|l| {
                    AntisymTensor::from_fn(REDUCED_DIM, 1, |ix| {
                        let i = ix[0];
                        if i < 3 {
                            dv[l][i]
                        } else if i - 3 == l {
                            1.0
                        } else {
                            0.0
                        }
                    })
                })
                .collect(),
        ))
    }
}

/// Closed-form value of `chi([X_gamma1, X_K1])` for the rank-3 plain bracket.
pub fn rank3_witness(params: &BodyParams, gamma: &Vec3) -> f64 {
    let c = params.mr2();
    let i = params.inertia;
    -c * (gamma.z * gamma.z / (i.y + c) + gamma.y * gamma.y / (i.z + c))
}

/// Leafwise comparison of the twisting 3-form `-dB` with
/// `(1/phi) dphi ^ Omega_leaf` for the rank-2 system, on an orthonormal
/// basis of the tangent space to the common level set of `C1` and `C2`.
/// Returns the largest discrepancy over all basis triples.
pub fn leafwise_twist_residual(params: &BodyParams, state: &ReducedState) -> Result<f64> {
    if params.rank != ConstraintRank::Two {
        return Err(Error::UnsupportedRank {
            rank: params.rank.as_u8(),
        });
    }
    let s = state.to_coords();
    let c = params.mr2();
    let (gamma, k) = (state.gamma, state.k);
    let omega = omega_from_k(params, &gamma, &k)?;
    let v = k - c * omega.dot(&gamma) * gamma;

    let normals = DMatrix::from_row_slice(
        2,
        REDUCED_DIM,
        &[
            gamma.x, gamma.y, gamma.z, 0.0, 0.0, 0.0, k.x, k.y, k.z, gamma.x, gamma.y, gamma.z,
        ],
    );
    let gram = &normals * normals.transpose();
    let gram_inv = gram
        .try_inverse()
        .ok_or_else(|| Error::invalid("state", "leaf normals are degenerate"))?;
    let projector = DMatrix::<f64>::identity(REDUCED_DIM, REDUCED_DIM)
        - normals.transpose() * gram_inv * &normals;
    let basis = range_basis(&projector, 1e-10);

    let split = |col: usize| {
        let u = basis.column(col);
        (Vec3::new(u[0], u[1], u[2]), Vec3::new(u[3], u[4], u[5]))
    };
    let leaf_form = |a: usize, b: usize| {
        let (ug, uk) = split(a);
        let (vg, vk) = split(b);
        v.dot(&ug.cross(&vg)) - gamma.dot(&(uk.cross(&vg) - vk.cross(&ug)))
    };

    let factor = conformal_factor(params);
    let phi = factor.value(&s)?;
    let dphi = factor.gradient(&s)?.expect("analytic") / phi;
    let alpha = |a: usize| dphi.dot(&basis.column(a));

    let twist = twist_three_form(params)?.eval(&s)?;
    let mut worst: f64 = 0.0;
    for a in 0..basis.ncols() {
        for b in a + 1..basis.ncols() {
            for cc in b + 1..basis.ncols() {
                let cols = [a, b, cc].map(|i| basis.column(i).into_owned());
                let lhs = twist.eval(&[cols[0].as_slice(), cols[1].as_slice(), cols[2].as_slice()]);
                let rhs = alpha(a) * leaf_form(b, cc) - alpha(b) * leaf_form(a, cc)
                    + alpha(cc) * leaf_form(a, b);
                worst = worst.max((lhs - rhs).abs());
            }
        }
    }
    Ok(worst)
}

/// Nonholonomic bracket on the 15-dimensional chart, plain or gauged.
#[derive(Clone, Copy, Debug)]
pub struct NhBracket {
    pub params: BodyParams,
    pub variant: NhVariant,
}

pub fn nh_bracket_full(params: &BodyParams, variant: NhVariant) -> NhBracket {
    NhBracket {
        params: *params,
        variant,
    }
}

impl NhBracket {
    /// `W` with `{K_i, K_j} = -eps_ijl W_l`.
    pub fn w_vector(&self, st: &FullState) -> Result<Vec3> {
        let omega = omega_from_k(&self.params, &st.gamma(), &st.k)?;
        Ok(st.k + self.params.mr2() * self.n_matrix(&st.g) * omega)
    }

    fn n_matrix(&self, g: &Mat3) -> Mat3 {
        let a = matrix_a(&self.params);
        let n = g.transpose() * a.transpose() * a * g;
        match self.variant {
            NhVariant::Plain => n,
            NhVariant::Gauged => n - Mat3::identity(),
        }
    }

    fn assemble(
        &self,
        ag: &Mat3,
        dg_k: &dyn Fn(usize, usize, usize) -> f64,
        w: &Vec3,
    ) -> DMatrix<f64> {
        let r = self.params.radius;
        let mut m = DMatrix::zeros(FULL_DIM, FULL_DIM);
        for l in 0..3 {
            for i in 0..3 {
                let v = r * ag[(i, l)];
                m[(X_OFFSET + i, K_OFFSET + l)] = v;
                m[(K_OFFSET + l, X_OFFSET + i)] = -v;
                for j in 0..3 {
                    let v = dg_k(i, j, l);
                    m[(3 * i + j, K_OFFSET + l)] = v;
                    m[(K_OFFSET + l, 3 * i + j)] = -v;
                }
            }
        }
        let hw = hat(w);
        for i in 0..3 {
            for j in 0..3 {
                m[(K_OFFSET + i, K_OFFSET + j)] = hw[(i, j)];
            }
        }
        m
    }
}

impl BivectorPatch for NhBracket {
    fn dim(&self) -> usize {
        FULL_DIM
    }

    fn name(&self) -> String {
        let tag = match self.variant {
            NhVariant::Plain => "nonholonomic",
            NhVariant::Gauged => "gauged nonholonomic",
        };
        format!("rank-{} {tag} bracket", self.params.rank)
    }

    fn structure(&self, s: &[f64]) -> Result<DMatrix<f64>> {
        let st = FullState::from_coords(s)?;
        let ag = matrix_a(&self.params) * st.g;
        let g = st.g;
        let gk = move |i: usize, j: usize, l: usize| {
            -(0..3)
                .map(|k| levi_civita(j, l, k) * g[(i, k)])
                .sum::<f64>()
        };
        Ok(self.assemble(&ag, &gk, &self.w_vector(&st)?))
    }

    fn partials(&self, s: &[f64]) -> Result<Option<Vec<DMatrix<f64>>>> {
        let st = FullState::from_coords(s)?;
        let params = &self.params;
        let c = params.mr2();
        let a = matrix_a(params);
        let q = a.transpose() * a;
        let gamma = st.gamma();
        let omega = omega_from_k(params, &gamma, &st.k)?;
        let (dg, dk) = omega_partials(params, &gamma, &st.k)?;
        let n = self.n_matrix(&st.g);

        let mut out = Vec::with_capacity(FULL_DIM);
        for p in 0..FULL_DIM {
            let mut e_ab = Mat3::zeros();
            let mut dw = Vec3::zeros();
            if p < 9 {
                let (ra, cb) = (p / 3, p % 3);
                e_ab[(ra, cb)] = 1.0;
                let dn = e_ab.transpose() * q * st.g + st.g.transpose() * q * e_ab;
                dw = c * dn * omega;
                if ra == 2 {
                    dw += c * n * dg[cb];
                }
            } else if p >= K_OFFSET {
                let l = p - K_OFFSET;
                dw[l] = 1.0;
                dw += c * n * dk[l];
            }
            let d_ag = a * e_ab;
            let gk = move |i: usize, j: usize, l: usize| {
                -(0..3)
                    .map(|k| levi_civita(j, l, k) * e_ab[(i, k)])
                    .sum::<f64>()
            };
            out.push(self.assemble(&d_ag, &gk, &dw));
        }
        Ok(Some(out))
    }
}

/// The semi-basic 2-form on the full chart:
/// `B(u, v) = m r^2 Omega . (u_check x v_check)` with
/// `u_check = unhat(antisym(g^T U))` from the `g`-components `U` of `u`.
#[derive(Clone, Copy, Debug)]
pub struct GaugeFormOnM(pub BodyParams);

pub fn gauge_form_on_m(params: &BodyParams) -> GaugeFormOnM {
    GaugeFormOnM(*params)
}

/// `unhat(antisym(g^T E_ab))` for each of the nine `g` coordinates.
fn body_vectors(g: &Mat3) -> [Vec3; 9] {
    let mut out = [Vec3::zeros(); 9];
    for (p, o) in out.iter_mut().enumerate() {
        let mut e = Mat3::zeros();
        e[(p / 3, p % 3)] = 1.0;
        *o = antisymmetric_part_vector(&(g.transpose() * e));
    }
    out
}

impl FormPatch for GaugeFormOnM {
    fn dim(&self) -> usize {
        FULL_DIM
    }
    fn degree(&self) -> usize {
        2
    }
    fn eval(&self, s: &[f64]) -> Result<AntisymTensor> {
        let st = FullState::from_coords(s)?;
        let omega = omega_from_k(&self.0, &st.gamma(), &st.k)?;
        let l = body_vectors(&st.g);
        let c = self.0.mr2();
        Ok(AntisymTensor::from_fn(FULL_DIM, 2, |ix| {
            let (p, q) = (ix[0], ix[1]);
            if p < 9 && q < 9 {
                c * omega.dot(&l[p].cross(&l[q]))
            } else {
                0.0
            }
        }))
    }
}

/// Hamiltonian on the full chart; depends on `g` only through `g^T e_3`.
#[derive(Clone, Copy, Debug)]
pub struct FullHamiltonian(pub BodyParams);

impl ScalarField for FullHamiltonian {
    fn dim(&self) -> usize {
        FULL_DIM
    }
    fn value(&self, s: &[f64]) -> Result<f64> {
        let st = FullState::from_coords(s)?;
        hamiltonian(&self.0, &project_rho(&st))
    }
    fn gradient(&self, s: &[f64]) -> Result<Option<DVector<f64>>> {
        let st = FullState::from_coords(s)?;
        let gamma = st.gamma();
        let omega = omega_from_k(&self.0, &gamma, &st.k)?;
        let dg = hamiltonian_gamma_gradient(&self.0, &gamma, &omega);
        let mut grad = DVector::zeros(FULL_DIM);
        for j in 0..3 {
            grad[6 + j] = dg[j];
            grad[K_OFFSET + j] = omega[j];
        }
        Ok(Some(grad))
    }
}

/// Nonholonomic vector field on the full chart:
/// `g' = g hat(Omega)`, `x' = r A g Omega`, `K' = K x Omega`.
pub fn x_nh_full(params: &BodyParams, st: &FullState) -> Result<DVector<f64>> {
    let omega = omega_from_k(params, &st.gamma(), &st.k)?;
    let gdot = st.g * hat(&omega);
    let xdot = params.radius * matrix_a(params) * st.g * omega;
    let kdot = st.k.cross(&omega);
    let mut out = DVector::zeros(FULL_DIM);
    for a in 0..3 {
        for b in 0..3 {
            out[3 * a + b] = gdot[(a, b)];
        }
        out[X_OFFSET + a] = xdot[a];
        out[K_OFFSET + a] = kdot[a];
    }
    Ok(out)
}

/// Orbit projection `(g, x, K) -> (g^T e_3, K)`.
pub fn project_rho(st: &FullState) -> ReducedState {
    ReducedState::new(st.gamma(), st.k)
}

/// Full-chart index of the reduced coordinate `idx` composed with the
/// projection: `gamma_j = g_3j`, `K_j = K_j`.
fn lifted_index(idx: usize) -> usize {
    if idx < 3 {
        6 + idx
    } else {
        K_OFFSET + idx - 3
    }
}

/// `|{f o rho, g o rho}_full - {f, g}_reduced o rho|` for two reduced
/// coordinate functions.
pub fn reduction_consistency(
    params: &BodyParams,
    variant: NhVariant,
    full: &FullState,
    f_idx: usize,
    g_idx: usize,
) -> Result<f64> {
    if f_idx >= REDUCED_DIM || g_idx >= REDUCED_DIM {
        return Err(Error::invalid(
            "index",
            "reduced coordinate index must be < 6",
        ));
    }
    let upstairs = nh_bracket_full(params, variant).structure(&full.to_coords())?;
    let downstairs =
        reduced_bracket(params, variant.reduced()).structure(&project_rho(full).to_coords())?;
    Ok((upstairs[(lifted_index(f_idx), lifted_index(g_idx))] - downstairs[(f_idx, g_idx)]).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{fd_exterior_derivative, form_partials, StateSampler};
    use crate::poisson::{
        bracket, casimir_defect, distribution_probe, fd_structure_partials, ham_vf,
        max_conformal_jacobiator, max_jacobiator, max_twisted_defect, scalar_gradient, Coordinate,
    };
    use approx::assert_abs_diff_eq;

    fn params(rank: ConstraintRank) -> BodyParams {
        BodyParams::chaplygin().with_rank(rank)
    }

    fn all_brackets() -> Vec<ReducedBracket> {
        ConstraintRank::ALL
            .iter()
            .flat_map(|&r| {
                [BracketVariant::Plain, BracketVariant::Primed]
                    .map(|v| reduced_bracket(&params(r), v))
            })
            .collect()
    }

    #[test]
    fn chaplygin_matrix_a() {
        let a = matrix_a(&BodyParams::chaplygin());
        let expected = Mat3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!((a - expected).abs().max() < 1e-15);
        assert_eq!(matrix_a(&params(ConstraintRank::Zero)), Mat3::zeros());
    }

    #[test]
    fn a_transpose_a_is_angle_independent() {
        let e3 = Vec3::z() * Vec3::z().transpose();
        let expected = [Mat3::zeros(), e3, Mat3::identity() - e3, Mat3::identity()];
        for (rank, want) in ConstraintRank::ALL.iter().zip(expected) {
            for angle in [-1.3, 0.0, 0.7, 2.9] {
                let p = params(*rank).with_so2_angle(angle).unwrap();
                let a = matrix_a(&p);
                assert!((a.transpose() * a - want).abs().max() < 1e-15);
            }
        }
    }

    #[test]
    fn rank_parsing() {
        assert_eq!(ConstraintRank::try_from(2).unwrap(), ConstraintRank::Two);
        match ConstraintRank::try_from(7) {
            Err(Error::InvalidParameter { field, .. }) => assert_eq!(field, "rank"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_params_are_rejected() {
        assert!(BodyParams::new(Vec3::new(1.0, -2.0, 3.0), 1.0, 1.0, ConstraintRank::Two).is_err());
        assert!(BodyParams::new(Vec3::new(1.0, 2.0, 3.0), 0.0, 1.0, ConstraintRank::Two).is_err());
        assert!(
            BodyParams::new(Vec3::new(1.0, 2.0, 3.0), 1.0, f64::NAN, ConstraintRank::Two).is_err()
        );
    }

    #[test]
    fn kinetic_momentum_special_cases() {
        let p2 = params(ConstraintRank::Two);
        let k = k_from_omega(&p2, &Vec3::z(), &Vec3::z());
        assert_abs_diff_eq!(k, Vec3::new(0.0, 0.0, 3.0), epsilon = 1e-15);
        let p3 = params(ConstraintRank::Three);
        assert_abs_diff_eq!(
            k_from_omega(&p3, &Vec3::z(), &Vec3::x()),
            Vec3::new(2.0, 0.0, 0.0)
        );
        assert_abs_diff_eq!(
            omega_from_k(&p3, &Vec3::z(), &Vec3::new(2.0, 0.0, 0.0)).unwrap(),
            Vec3::x()
        );
        let p1 = params(ConstraintRank::One);
        for c in [-2.0, 0.5, 3.0] {
            let w = omega_from_k(&p1, &Vec3::z(), &(Vec3::z() * 4.0 * c)).unwrap();
            assert_abs_diff_eq!(w, Vec3::z() * c, epsilon = 1e-14);
        }
    }

    #[test]
    fn rank2_kinetic_momentum_matches_contact_point_form() {
        let p = params(ConstraintRank::Two);
        let mut s = StateSampler::new(3);
        for _ in 0..50 {
            let g = s.unit_vector();
            let w = s.uniform_vector(-1.0, 1.0);
            let direct =
                Mat3::from_diagonal(&p.inertia()) * w + w * p.mr2() - g * (p.mr2() * w.dot(&g));
            assert_abs_diff_eq!(k_from_omega(&p, &g, &w), direct, epsilon = 1e-14);
        }
    }

    #[test]
    fn omega_from_k_inverts_linear_solve() {
        let mut s = StateSampler::new(5);
        for rank in ConstraintRank::ALL {
            let p = params(rank);
            for _ in 0..200 {
                let g = s.unit_vector() * s.uniform(0.5, 2.0);
                let w = s.uniform_vector(-1.0, 1.0);
                let k = k_from_omega(&p, &g, &w);
                let solved = kinetic_matrix(&p, &g).lu().solve(&k).unwrap();
                let closed = omega_from_k(&p, &g, &k).unwrap();
                assert!((closed - w).amax() <= 1e-12);
                assert!((closed - solved).amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_gamma_is_rejected() {
        for rank in [ConstraintRank::One, ConstraintRank::Two] {
            assert!(matches!(
                omega_from_k(&params(rank), &Vec3::zeros(), &Vec3::x()),
                Err(Error::DegenerateDenominator { .. })
            ));
        }
    }

    #[test]
    fn hamiltonian_values() {
        let p = params(ConstraintRank::Zero);
        let st = ReducedState::new(Vec3::z(), Vec3::new(1.0, 2.0, 3.0));
        assert_abs_diff_eq!(hamiltonian(&p, &st).unwrap(), 3.0, epsilon = 1e-15);
        let mut s = StateSampler::new(8);
        for rank in ConstraintRank::ALL {
            let p = params(rank);
            for _ in 0..1000 {
                let st = s.reduced_state();
                let h = hamiltonian(&p, &st).unwrap();
                let m = kinetic_matrix(&p, &st.gamma);
                let min_eig = m.symmetric_eigenvalues().min();
                assert!(min_eig > 0.0);
                assert!(h >= 0.5 * st.k.norm_squared() / m.symmetric_eigenvalues().max() - 1e-14);
                let w = omega_from_k(&p, &st.gamma, &st.k).unwrap();
                assert_abs_diff_eq!(h, 0.5 * w.dot(&(m * w)), epsilon = 1e-12);
            }
            let zero = ReducedState::new(Vec3::z(), Vec3::zeros());
            assert_eq!(hamiltonian(&p, &zero).unwrap(), 0.0);
        }
    }

    #[test]
    fn hamiltonian_gradient_matches_fd() {
        let mut s = StateSampler::new(10);
        for rank in ConstraintRank::ALL {
            let h = ReducedHamiltonian(params(rank));
            for _ in 0..20 {
                let st = s.reduced_state().to_coords();
                let analytic = h.gradient(&st).unwrap().unwrap();
                let fd = scalar_gradient(
                    &crate::poisson::FnScalar::new(6, move |x| h.value(x).unwrap()),
                    &st,
                )
                .unwrap();
                assert!((analytic - fd).amax() <= 1e-6);
            }
        }
    }

    #[test]
    fn reduced_vf_equilibrium_and_first_integral() {
        let mut s = StateSampler::new(11);
        for rank in ConstraintRank::ALL {
            let p = params(rank);
            let (dg, dk) = reduced_vf(&p, &ReducedState::new(Vec3::z(), Vec3::z() * 0.7)).unwrap();
            assert!(dg.norm() <= 1e-15 && dk.norm() <= 1e-15);
            for _ in 0..50 {
                let st = s.reduced_state();
                let (dg, dk) = reduced_vf(&p, &st).unwrap();
                assert!((dk.dot(&st.gamma) + st.k.dot(&dg)).abs() <= 1e-14);
                // directional derivatives of H, |gamma|^2, |K|^2
                let grad_h = ReducedHamiltonian(p)
                    .gradient(&st.to_coords())
                    .unwrap()
                    .unwrap();
                let x = DVector::from_iterator(6, dg.iter().chain(dk.iter()).copied());
                assert!(grad_h.dot(&x).abs() <= 1e-10);
                assert!(st.gamma.dot(&dg).abs() <= 1e-14);
                assert!(st.k.dot(&dk).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn both_brackets_generate_the_reduced_flow() {
        let mut s = StateSampler::new(12);
        for br in all_brackets() {
            let h = ReducedHamiltonian(br.params);
            for _ in 0..20 {
                let st = s.reduced_state();
                let x = -ham_vf(&br, &h, &st.to_coords()).unwrap();
                let (dg, dk) = reduced_vf(&br.params, &st).unwrap();
                let want = DVector::from_iterator(6, dg.iter().chain(dk.iter()).copied());
                assert!((x - want).amax() <= 1e-10, "{}", br.name());
            }
        }
    }

    #[test]
    fn rank0_hamiltonian_field_is_minus_reduced_vf() {
        let p = params(ConstraintRank::Zero);
        let st = ReducedState::new(Vec3::new(0.6, 0.0, 0.8), Vec3::new(0.3, -0.1, 0.4));
        let x = ham_vf(
            &reduced_bracket(&p, BracketVariant::Plain),
            &ReducedHamiltonian(p),
            &st.to_coords(),
        )
        .unwrap();
        let w = st.k.component_div(&p.inertia());
        let (dg, dk) = (st.gamma.cross(&w), st.k.cross(&w));
        for i in 0..3 {
            assert_abs_diff_eq!(x[i], -dg[i], epsilon = 1e-12);
            assert_abs_diff_eq!(x[3 + i], -dk[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn hamiltonian_field_of_k1_for_rank3() {
        // X_{K1} = -pi e_4: gamma-part -(gamma x e1), K-part -(V x e1).
        let p = params(ConstraintRank::Three);
        let br = reduced_bracket(&p, BracketVariant::Plain);
        let st = ReducedState::new(Vec3::y(), Vec3::new(0.3, -0.2, 0.5));
        let x = ham_vf(&br, &Coordinate { dim: 6, index: 3 }, &st.to_coords()).unwrap();
        let w = omega_from_k(&p, &st.gamma, &st.k).unwrap();
        let v = st.k + p.mr2() * w;
        let want_g = -st.gamma.cross(&Vec3::x());
        let want_k = -v.cross(&Vec3::x());
        for i in 0..3 {
            assert_abs_diff_eq!(x[i], want_g[i], epsilon = 1e-12);
            assert_abs_diff_eq!(x[3 + i], want_k[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn structure_entries() {
        let p = params(ConstraintRank::Two);
        let st = ReducedState::new(Vec3::z(), Vec3::new(0.1, 0.2, 0.3)).to_coords();
        for br in [
            reduced_bracket(&p, BracketVariant::Plain),
            reduced_bracket(&p, BracketVariant::Primed),
        ] {
            let m = br.structure(&st).unwrap();
            assert_eq!(m[(0, 4)], -1.0);
            assert_eq!((&m + m.transpose()).amax(), 0.0);
        }
        let a = reduced_bracket(&params(ConstraintRank::Zero), BracketVariant::Plain);
        let b = reduced_bracket(&params(ConstraintRank::Three), BracketVariant::Primed);
        let st = ReducedState::new(Vec3::new(0.6, 0.0, 0.8), Vec3::new(0.3, -0.1, 0.4)).to_coords();
        assert_eq!(a.structure(&st).unwrap(), b.structure(&st).unwrap());
    }

    #[test]
    fn bracket_matches_formula_on_coordinate_functions() {
        // {f, g} = -gamma . (grad_gamma f x grad_K g + grad_K f x grad_gamma g)
        //          - V . (grad_K f x grad_K g) for the block convention.
        let mut s = StateSampler::new(14);
        for br in all_brackets() {
            let st = s.reduced_state();
            let v = br.v_vector(&st).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    let unit = |k: usize| {
                        let mut e = [Vec3::zeros(), Vec3::zeros()];
                        e[k / 3][k % 3] = 1.0;
                        e
                    };
                    let (f, g) = (unit(i), unit(j));
                    let formula = -st.gamma.dot(&(f[0].cross(&g[1]) + f[1].cross(&g[0])))
                        - v.dot(&f[1].cross(&g[1]));
                    let computed = bracket(
                        &br,
                        &Coordinate { dim: 6, index: i },
                        &Coordinate { dim: 6, index: j },
                        &st.to_coords(),
                    )
                    .unwrap();
                    assert_abs_diff_eq!(computed, formula, epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn analytic_partials_match_fd() {
        let mut s = StateSampler::new(15);
        for br in all_brackets() {
            for _ in 0..5 {
                let st = s.reduced_state().to_coords();
                let a = br.partials(&st).unwrap().unwrap();
                let f = fd_structure_partials(&br, &st).unwrap();
                for (x, y) in a.iter().zip(&f) {
                    assert!((x - y).amax() <= 1e-6, "{}", br.name());
                }
            }
        }
        for rank in ConstraintRank::ALL {
            for variant in [NhVariant::Plain, NhVariant::Gauged] {
                let br = nh_bracket_full(&params(rank), variant);
                let st = s.full_state().to_coords();
                let a = br.partials(&st).unwrap().unwrap();
                let f = fd_structure_partials(&br, &st).unwrap();
                for (x, y) in a.iter().zip(&f) {
                    assert!((x - y).amax() <= 1e-6, "{}", br.name());
                }
            }
        }
    }

    #[test]
    fn lie_poisson_cases_satisfy_jacobi() {
        let mut s = StateSampler::new(16);
        for (rank, variant) in [
            (ConstraintRank::Zero, BracketVariant::Plain),
            (ConstraintRank::Three, BracketVariant::Primed),
        ] {
            let br = reduced_bracket(&params(rank), variant);
            for _ in 0..20 {
                assert!(max_jacobiator(&br, &s.reduced_state().to_coords()).unwrap() <= 1e-9);
            }
        }
    }

    #[test]
    fn rank3_plain_fails_jacobi() {
        let br = reduced_bracket(&params(ConstraintRank::Three), BracketVariant::Plain);
        let st = sample_state(21);
        assert!(max_jacobiator(&br, &st).unwrap() > 1e-3);
    }

    fn sample_state(seed: u64) -> [f64; 6] {
        crate::geometry::sample_reduced_state(seed).to_coords()
    }

    #[test]
    fn rank2_primed_jacobiator_matches_nested_brackets() {
        let br = reduced_bracket(&params(ConstraintRank::Two), BracketVariant::Primed);
        let st = sample_state(22);
        let nested = |a: usize, b: usize, c: usize| {
            let inner = crate::poisson::FnScalar::new(6, move |x| br.structure(x).unwrap()[(b, c)]);
            bracket(&br, &Coordinate { dim: 6, index: a }, &inner, &st).unwrap()
        };
        for (i, j, k) in crate::poisson::index_triples(6) {
            let oracle = nested(i, j, k) + nested(j, k, i) + nested(k, i, j);
            let j_ijk = crate::poisson::jacobiator(&br, i, j, k, &st).unwrap();
            assert!((j_ijk - oracle).abs() <= 1e-5);
        }
    }

    #[test]
    fn conformal_factor_values() {
        let p2 = params(ConstraintRank::Two);
        let e1 = ReducedState::new(Vec3::x(), Vec3::zeros()).to_coords();
        assert_abs_diff_eq!(
            conformal_factor(&p2).value(&e1).unwrap(),
            0.5f64.sqrt(),
            epsilon = 1e-15
        );
        let p1 = params(ConstraintRank::One);
        let e3 = ReducedState::new(Vec3::z(), Vec3::zeros()).to_coords();
        assert_abs_diff_eq!(
            conformal_factor(&p1).value(&e3).unwrap(),
            (1.0f64 + 1.0 / 3.0).sqrt(),
            epsilon = 1e-15
        );
        let p0 = params(ConstraintRank::Zero);
        assert_eq!(conformal_factor(&p0).value(&sample_state(3)).unwrap(), 1.0);
    }

    #[test]
    fn conformal_brackets_are_poisson() {
        for (rank, variant, seed) in [
            (ConstraintRank::Two, BracketVariant::Primed, 30),
            (ConstraintRank::One, BracketVariant::Plain, 31),
        ] {
            let p = params(rank);
            let br = reduced_bracket(&p, variant);
            for k in 0..10 {
                let st = sample_state(seed * 100 + k);
                assert!(max_conformal_jacobiator(&br, &conformal_factor(&p), &st).unwrap() <= 1e-7);
            }
        }
    }

    #[test]
    fn twist_two_form_properties() {
        let p = params(ConstraintRank::Two);
        let b = twist_two_form(&p).unwrap();
        let zero_k = ReducedState::new(Vec3::new(0.6, 0.0, 0.8), Vec3::zeros()).to_coords();
        assert_eq!(b.eval(&zero_k).unwrap().max_abs(), 0.0);
        let mut s = StateSampler::new(40);
        for _ in 0..20 {
            let st = s.reduced_state();
            let t = b.eval(&st.to_coords()).unwrap();
            assert_eq!(t.antisymmetry_residual(), 0.0);
            let w = omega_from_k(&p, &st.gamma, &st.k).unwrap();
            // tangent vectors to the sphere at gamma
            let u = st.gamma.cross(&s.normal_vector());
            let v = st.gamma.cross(&s.normal_vector());
            let lift = |a: Vec3| [a.x, a.y, a.z, 0.0, 0.0, 0.0];
            let area = st.gamma.dot(&u.cross(&v));
            assert_abs_diff_eq!(
                t.eval(&[&lift(u), &lift(v)]),
                p.mr2() * w.dot(&st.gamma) * area,
                epsilon = 1e-12
            );
        }
        assert!(matches!(
            twist_two_form(&params(ConstraintRank::Three)),
            Err(Error::UnsupportedRank { rank: 3 })
        ));
        assert!(matches!(
            twist_three_form(&params(ConstraintRank::Zero)),
            Err(Error::UnsupportedRank { rank: 0 })
        ));
    }

    #[test]
    fn twist_form_partials_match_fd() {
        for rank in [ConstraintRank::One, ConstraintRank::Two] {
            let b = twist_two_form(&params(rank)).unwrap();
            let st = sample_state(41);
            let analytic = b.partials(&st).unwrap().unwrap();
            let fd = form_partials(
                &crate::geometry::FnForm::new(6, 2, move |x| b.eval(x).unwrap()),
                &st,
            )
            .unwrap();
            for (a, f) in analytic.iter().zip(&fd) {
                assert!(a.max_abs_diff(f) <= 1e-7);
            }
        }
    }

    #[test]
    fn twisted_brackets() {
        for (rank, variant) in [
            (ConstraintRank::Two, BracketVariant::Primed),
            (ConstraintRank::One, BracketVariant::Plain),
        ] {
            let p = params(rank);
            let br = reduced_bracket(&p, variant);
            let phi = twist_three_form(&p).unwrap();
            for k in 0..10 {
                let st = sample_state(50 + k);
                assert!(max_twisted_defect(&br, &phi, &st).unwrap() <= 1e-6);
                assert!(fd_exterior_derivative(&phi, &st).unwrap().max_abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn casimirs() {
        let mut s = StateSampler::new(60);
        for br in all_brackets() {
            for _ in 0..10 {
                let st = s.reduced_state().to_coords();
                assert!(casimir_defect(&br, &SphereCasimir, &st).unwrap() <= 1e-10);
                let c1 = casimir_defect(&br, &MomentumCasimir, &st).unwrap();
                if momentum_is_casimir(br.params.rank(), br.variant) {
                    assert!(c1 <= 1e-10, "{}", br.name());
                }
            }
        }
        let lp = reduced_bracket(&params(ConstraintRank::Zero), BracketVariant::Plain);
        assert!(
            casimir_defect(&lp, &Coordinate { dim: 6, index: 3 }, &sample_state(1)).unwrap() > 0.0
        );
    }

    #[test]
    fn annihilator_partials_match_fd() {
        let st = sample_state(70);
        let chi = annihilator_form(&params(ConstraintRank::Three), BracketVariant::Plain);
        let analytic = crate::geometry::exterior_derivative_from_partials(
            &chi.partials(&st).unwrap().unwrap(),
        );
        let fd = fd_exterior_derivative(
            &crate::geometry::FnForm::new(6, 1, move |x| chi.eval(x).unwrap()),
            &st,
        )
        .unwrap();
        assert!(analytic.max_abs_diff(&fd) <= 1e-7);
    }

    #[test]
    fn rank3_witness_value() {
        let p = params(ConstraintRank::Three);
        let chi = annihilator_form(&p, BracketVariant::Plain);
        let br = reduced_bracket(&p, BracketVariant::Plain);
        let st = ReducedState::new(Vec3::y(), Vec3::new(0.3, -0.2, 0.5)).to_coords();
        let v = distribution_probe(
            &br,
            &chi,
            &Coordinate { dim: 6, index: 0 },
            &Coordinate { dim: 6, index: 3 },
            &st,
        )
        .unwrap();
        assert_abs_diff_eq!(v, -0.25, epsilon = 1e-8);
        assert_abs_diff_eq!(rank3_witness(&p, &Vec3::y()), -0.25, epsilon = 1e-15);
    }

    #[test]
    fn leafwise_relation_holds() {
        let p = params(ConstraintRank::Two);
        for seed in 0..5 {
            let st = crate::geometry::sample_reduced_state(80 + seed);
            assert!(leafwise_twist_residual(&p, &st).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn nh_bracket_entries() {
        let p = BodyParams::chaplygin();
        let st = FullState::new(Mat3::identity(), Vec3::zeros(), Vec3::new(0.1, 0.2, 0.3));
        let m = nh_bracket_full(&p, NhVariant::Plain)
            .structure(&st.to_coords())
            .unwrap();
        assert_abs_diff_eq!(m[(X_OFFSET, K_OFFSET + 1)], p.radius(), epsilon = 1e-15);
        for i in 0..12 {
            for j in 0..12 {
                assert_eq!(m[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn nh_field_and_gauge_form() {
        let mut s = StateSampler::new(90);
        for rank in ConstraintRank::ALL {
            let p = params(rank);
            let br = nh_bracket_full(&p, NhVariant::Plain);
            let b = gauge_form_on_m(&p);
            for _ in 0..10 {
                let st = s.full_state();
                let c = st.to_coords();
                let x = x_nh_full(&p, &st).unwrap();
                let xh = -ham_vf(&br, &FullHamiltonian(p), &c).unwrap();
                assert!((&x - xh).amax() <= 1e-10);
                let w = omega_from_k(&p, &st.gamma(), &st.k).unwrap();
                let xdot = Vec3::new(x[9], x[10], x[11]);
                assert!((xdot - p.radius() * matrix_a(&p) * st.g * w).amax() <= 1e-14);
                if rank == ConstraintRank::Zero {
                    assert_eq!(xdot.norm(), 0.0);
                }
                assert!(b.eval(&c).unwrap().interior(x.as_slice()).max_abs() <= 1e-10);
                // semi-basic: a vector with no g-component contracts to zero
                let mut u = [0.0; FULL_DIM];
                u[10] = 1.0;
                u[13] = -2.0;
                assert_eq!(b.eval(&c).unwrap().interior(&u).max_abs(), 0.0);
            }
        }
    }

    #[test]
    fn gauge_form_pulls_back_to_twist_form() {
        // Horizontal lift of (xi, eta) at g: U = g hat(a) with g^T e3 x a = xi.
        let mut s = StateSampler::new(91);
        for rank in [ConstraintRank::One, ConstraintRank::Two] {
            let p = params(rank);
            let b = gauge_form_on_m(&p);
            let bcal = twist_two_form(&p).unwrap();
            for _ in 0..10 {
                let st = s.full_state();
                let gamma = st.gamma();
                let lift = |a: Vec3, dk: Vec3| {
                    let u = st.g * hat(&a);
                    let mut v = [0.0; FULL_DIM];
                    for i in 0..9 {
                        v[i] = u[(i / 3, i % 3)];
                    }
                    for i in 0..3 {
                        v[K_OFFSET + i] = dk[i];
                    }
                    // reduced image: gamma' = -a x gamma
                    let dg = gamma.cross(&a);
                    (v, [dg.x, dg.y, dg.z, dk.x, dk.y, dk.z])
                };
                let a1 = gamma.cross(&s.normal_vector());
                let a2 = gamma.cross(&s.normal_vector());
                let (u, ur) = lift(a1, s.normal_vector());
                let (v, vr) = lift(a2, s.normal_vector());
                let up = b.eval(&st.to_coords()).unwrap().eval(&[&u, &v]);
                let down = bcal
                    .eval(&project_rho(&st).to_coords())
                    .unwrap()
                    .eval(&[&ur, &vr]);
                assert_abs_diff_eq!(up, down, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn projection_properties() {
        let st = FullState::new(Mat3::identity(), Vec3::zeros(), Vec3::x());
        assert_eq!(project_rho(&st).gamma, Vec3::z());
        let mut s = StateSampler::new(92);
        for _ in 0..20 {
            let st = s.full_state();
            assert!((project_rho(&st).gamma.norm() - 1.0).abs() <= 1e-12);
            let angle = s.uniform(-3.0, 3.0);
            let h = *nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), angle).matrix();
            let moved = FullState::new(h * st.g, h * st.x + s.normal_vector(), st.k);
            assert!((project_rho(&moved).gamma - project_rho(&st).gamma).amax() <= 1e-15);
        }
    }

    #[test]
    fn reduction_is_consistent() {
        let mut s = StateSampler::new(93);
        for rank in ConstraintRank::ALL {
            let p = params(rank);
            for variant in [NhVariant::Plain, NhVariant::Gauged] {
                for _ in 0..5 {
                    let st = s.full_state();
                    for i in 0..6 {
                        for j in i + 1..6 {
                            assert!(reduction_consistency(&p, variant, &st, i, j).unwrap() <= 1e-9);
                        }
                    }
                }
            }
        }
    }
}
