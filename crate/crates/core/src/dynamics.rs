//! Fixed-step RK4 integration of the reduced and full flows, the
//! reparametrized flow in the new time `tau` with `dtau = dt / phi`, and
//! conservation and measure diagnostics.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fd_step, Mat3, Vec3};
use crate::poisson::ScalarField;
use crate::rolling::{
    conformal_factor, hamiltonian, matrix_a, omega_from_k, project_rho, reduced_vf, x_nh_full,
    BodyParams, ConstraintRank, FullState, ReducedState, REDUCED_DIM,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Rk4,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    /// Final time. For reparametrized runs this is the final `tau`.
    pub horizon: f64,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub renormalize_gamma: bool,
    #[serde(default = "default_true")]
    pub renormalize_g: bool,
}

fn default_true() -> bool {
    true
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 10.0,
            method: Method::Rk4,
            renormalize_gamma: false,
            renormalize_g: true,
        }
    }
}

impl IntegratorConfig {
    pub fn new(dt: f64, horizon: f64) -> Result<Self> {
        let config = Self {
            dt,
            horizon,
            ..Self::default()
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid(
                "integrator.dt",
                "must be finite and positive",
            ));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::invalid(
                "integrator.T",
                "must be finite and positive",
            ));
        }
        if self.dt > self.horizon {
            return Err(Error::invalid(
                "integrator.dt",
                "must not exceed the horizon T",
            ));
        }
        Ok(())
    }

    /// Sample times `0, dt, 2 dt, ..., T`; the last step is shortened if
    /// `T` is not a multiple of `dt`.
    pub fn grid(&self) -> Vec<f64> {
        let steps = (self.horizon / self.dt - 1e-9).ceil().max(1.0) as usize;
        let mut times: Vec<f64> = (0..steps).map(|k| k as f64 * self.dt).collect();
        times.push(self.horizon);
        times
    }
}

/// Conserved-quantity monitors at one sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Monitors {
    /// Energy.
    pub h: f64,
    /// `K . gamma`.
    pub c1: f64,
    /// `|gamma|^2`.
    pub c2: f64,
    /// `|K|^2`.
    pub f: f64,
}

impl Monitors {
    pub fn at(params: &BodyParams, state: &ReducedState) -> Result<Self> {
        Ok(Self {
            h: hamiltonian(params, state)?,
            c1: state.k.dot(&state.gamma),
            c2: state.gamma.norm_squared(),
            f: state.k.norm_squared(),
        })
    }
}

/// States that can be advanced by the integrator.
pub trait FlowState: Copy {
    fn to_vector(&self) -> Vec<f64>;
    fn from_vector(v: &[f64]) -> Result<Self>;
    /// Velocity of the physical flow.
    fn velocity(&self, params: &BodyParams) -> Result<Vec<f64>>;
    /// Projection to the reduced space, used for monitors.
    fn reduced(&self) -> ReducedState;
    /// Post-step cleanup according to the configuration.
    fn renormalize(&mut self, config: &IntegratorConfig);
}

impl FlowState for ReducedState {
    fn to_vector(&self) -> Vec<f64> {
        self.to_coords().to_vec()
    }
    fn from_vector(v: &[f64]) -> Result<Self> {
        ReducedState::from_coords(v)
    }
    fn velocity(&self, params: &BodyParams) -> Result<Vec<f64>> {
        let (dg, dk) = reduced_vf(params, self)?;
        Ok(dg.iter().chain(dk.iter()).copied().collect())
    }
    fn reduced(&self) -> ReducedState {
        *self
    }
    fn renormalize(&mut self, config: &IntegratorConfig) {
        if config.renormalize_gamma {
            self.gamma.normalize_mut();
        }
    }
}

impl FlowState for FullState {
    fn to_vector(&self) -> Vec<f64> {
        self.to_coords().to_vec()
    }
    fn from_vector(v: &[f64]) -> Result<Self> {
        FullState::from_coords(v)
    }
    fn velocity(&self, params: &BodyParams) -> Result<Vec<f64>> {
        Ok(x_nh_full(params, self)?.as_slice().to_vec())
    }
    fn reduced(&self) -> ReducedState {
        project_rho(self)
    }
    fn renormalize(&mut self, config: &IntegratorConfig) {
        if config.renormalize_g {
            self.g = modified_gram_schmidt(&self.g);
        }
    }
}

/// Orthonormalizes the columns of `m` in order.
pub fn modified_gram_schmidt(m: &Mat3) -> Mat3 {
    let mut q = *m;
    for j in 0..3 {
        for i in 0..j {
            let qi = q.column(i).into_owned();
            let proj = qi.dot(&q.column(j));
            let mut cj = q.column_mut(j);
            cj -= qi * proj;
        }
        let norm = q.column(j).norm();
        q.column_mut(j).unscale_mut(norm);
    }
    q
}

/// Sampled solution with monitors. `recovered_time` is present for
/// reparametrized runs, where `times` holds `tau`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<S> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
    pub monitors: Vec<Monitors>,
    pub recovered_time: Option<Vec<f64>>,
}

impl<S> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn rk4_step(f: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>, y: &[f64], h: f64) -> Result<Vec<f64>> {
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(x, d)| x + s * d).collect()
    };
    let k1 = f(y)?;
    let k2 = f(&axpy(y, 0.5 * h, &k1))?;
    let k3 = f(&axpy(y, 0.5 * h, &k2))?;
    let k4 = f(&axpy(y, h, &k3))?;
    Ok((0..y.len())
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

fn ensure_finite(v: &[f64], time: f64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { time })
    }
}

/// Fixed-step RK4 on the reduced (`ReducedState`) or full (`FullState`)
/// chart, with monitors at every step.
pub fn integrate<S: FlowState>(
    params: &BodyParams,
    initial: &S,
    config: &IntegratorConfig,
) -> Result<Trajectory<S>> {
    config.validate()?;
    ensure_finite(&initial.to_vector(), 0.0)?;
    let times = config.grid();
    let mut states = Vec::with_capacity(times.len());
    let mut monitors = Vec::with_capacity(times.len());
    let mut state = *initial;
    states.push(state);
    monitors.push(Monitors::at(params, &state.reduced())?);
    let mut field = |y: &[f64]| S::from_vector(y)?.velocity(params);
    for w in times.windows(2) {
        let next = rk4_step(&mut field, &state.to_vector(), w[1] - w[0])
            .map_err(|e| non_finite_or(e, w[1]))?;
        ensure_finite(&next, w[1])?;
        state = S::from_vector(&next)?;
        state.renormalize(config);
        states.push(state);
        monitors.push(Monitors::at(params, &state.reduced()).map_err(|e| non_finite_or(e, w[1]))?);
    }
    Ok(Trajectory {
        times,
        states,
        monitors,
        recovered_time: None,
    })
}

fn non_finite_or(e: Error, time: f64) -> Error {
    match e {
        Error::DegenerateDenominator { .. } => Error::NonFiniteState { time },
        other => other,
    }
}

/// Integrates `phi X` in the new time `tau` together with `dt/dtau = phi`.
/// `config.horizon` is the final `tau`. For ranks 0 and 3 `phi = 1` and the
/// result coincides with [`integrate`] (with `recovered_time == times`).
pub fn reparametrized_integrate(
    params: &BodyParams,
    initial: &ReducedState,
    config: &IntegratorConfig,
) -> Result<Trajectory<ReducedState>> {
    config.validate()?;
    if matches!(params.rank(), ConstraintRank::Zero | ConstraintRank::Three) {
        let mut traj = integrate(params, initial, config)?;
        traj.recovered_time = Some(traj.times.clone());
        return Ok(traj);
    }
    ensure_finite(&initial.to_vector(), 0.0)?;
    let phi = conformal_factor(params);
    let taus = config.grid();
    let mut states = Vec::with_capacity(taus.len());
    let mut monitors = Vec::with_capacity(taus.len());
    let mut recovered = Vec::with_capacity(taus.len());
    let mut state = *initial;
    let mut t = 0.0;
    states.push(state);
    monitors.push(Monitors::at(params, &state)?);
    recovered.push(t);
    let mut field = |y: &[f64]| -> Result<Vec<f64>> {
        let st = ReducedState::from_coords(&y[..REDUCED_DIM])?;
        let scale = phi.at(&st.gamma);
        let mut v: Vec<f64> = st.velocity(params)?.iter().map(|x| scale * x).collect();
        v.push(scale);
        Ok(v)
    };
    for w in taus.windows(2) {
        let mut y = state.to_vector();
        y.push(t);
        let next = rk4_step(&mut field, &y, w[1] - w[0]).map_err(|e| non_finite_or(e, t))?;
        ensure_finite(&next, t)?;
        state = ReducedState::from_coords(&next[..REDUCED_DIM])?;
        state.renormalize(config);
        t = next[REDUCED_DIM];
        states.push(state);
        monitors.push(Monitors::at(params, &state).map_err(|e| non_finite_or(e, t))?);
        recovered.push(t);
    }
    Ok(Trajectory {
        times: taus,
        states,
        monitors,
        recovered_time: Some(recovered),
    })
}

/// Maximum relative deviation of each monitor from its initial value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(rename = "F")]
    pub f: f64,
}

impl Drift {
    pub fn max(&self) -> f64 {
        self.h.max(self.c1).max(self.c2).max(self.f)
    }
}

/// `max_k |m(t_k) - m(0)| / max(1, |m(0)|)` for each monitor.
pub fn invariant_drift<S>(traj: &Trajectory<S>) -> Result<Drift> {
    let first = traj
        .monitors
        .first()
        .ok_or_else(|| Error::invalid("trajectory", "must not be empty"))?;
    let rel = |pick: fn(&Monitors) -> f64| {
        let m0 = pick(first);
        traj.monitors
            .iter()
            .map(|m| (pick(m) - m0).abs() / m0.abs().max(1.0))
            .fold(0.0, f64::max)
    };
    Ok(Drift {
        h: rel(|m| m.h),
        c1: rel(|m| m.c1),
        c2: rel(|m| m.c2),
        f: rel(|m| m.f),
    })
}

/// Density of the invariant measure: `1`, `1/phi_1`, `1/phi_2`, `1` for
/// ranks 0 to 3.
#[derive(Clone, Copy, Debug)]
pub struct InvariantDensity(pub BodyParams);

impl ScalarField for InvariantDensity {
    fn dim(&self) -> usize {
        REDUCED_DIM
    }
    fn value(&self, s: &[f64]) -> Result<f64> {
        Ok(1.0 / conformal_factor(&self.0).value(s)?)
    }
}

/// Chart divergence of `mu X_H` at a reduced state, with `mu` the
/// invariant density of the rank.
pub fn divergence_defect(params: &BodyParams, state: &ReducedState) -> Result<f64> {
    divergence_defect_with(params, state, &InvariantDensity(*params))
}

/// Chart divergence of `density * X_H` by central differences.
pub fn divergence_defect_with<D: ScalarField + ?Sized>(
    params: &BodyParams,
    state: &ReducedState,
    density: &D,
) -> Result<f64> {
    let s = state.to_coords();
    let weighted = |x: &[f64], l: usize| -> Result<f64> {
        let st = ReducedState::from_coords(x)?;
        Ok(density.value(x)? * st.velocity(params)?[l])
    };
    let mut work = s;
    let mut div = 0.0;
    for l in 0..REDUCED_DIM {
        let h = fd_step(s[l]);
        work[l] = s[l] + h;
        let plus = weighted(&work, l)?;
        work[l] = s[l] - h;
        let minus = weighted(&work, l)?;
        work[l] = s[l];
        div += (plus - minus) / (2.0 * h);
    }
    Ok(div.abs())
}

/// Advances `state` by `span` with at most `max_step` per RK4 step.
pub fn advance<S: FlowState>(
    params: &BodyParams,
    state: &S,
    span: f64,
    max_step: f64,
) -> Result<S> {
    if span <= 0.0 {
        return Ok(*state);
    }
    let steps = (span / max_step).ceil().max(1.0) as usize;
    let h = span / steps as f64;
    let mut field = |y: &[f64]| S::from_vector(y)?.velocity(params);
    let mut y = state.to_vector();
    for _ in 0..steps {
        y = rk4_step(&mut field, &y, h)?;
    }
    S::from_vector(&y)
}

/// Endpoint error ratio `e(dt) / e(dt/2)` against a `dt/16` reference, on
/// the reduced flow over `[0, horizon]`. Close to 16 for a fourth-order
/// scheme in its asymptotic range.
pub fn convergence_ratio(
    params: &BodyParams,
    initial: &ReducedState,
    dt: f64,
    horizon: f64,
) -> Result<f64> {
    let end = |h: f64| -> Result<Vec<f64>> {
        let mut cfg = IntegratorConfig::new(h, horizon)?;
        cfg.renormalize_gamma = false;
        let traj = integrate(params, initial, &cfg)?;
        Ok(traj.states.last().expect("non-empty").to_vector())
    };
    let reference = end(dt / 16.0)?;
    let err = |v: Vec<f64>| {
        v.iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    Ok(err(end(dt)?) / err(end(dt / 2.0)?))
}

/// `max |x_n - x_0 - int_0^{t_n} r A g Omega dt|` over even sample
/// indices, with the integral by composite Simpson on the samples.
/// Requires a uniform grid.
pub fn constraint_residual(params: &BodyParams, traj: &Trajectory<FullState>) -> Result<f64> {
    let a = matrix_a(params);
    let rate = |st: &FullState| -> Result<Vec3> {
        let omega = omega_from_k(params, &st.gamma(), &st.k)?;
        Ok(params.radius() * a * st.g * omega)
    };
    let rates: Vec<Vec3> = traj.states.iter().map(rate).collect::<Result<_>>()?;
    let x0 = traj.states[0].x;
    let mut integral = Vec3::zeros();
    let mut worst: f64 = 0.0;
    let mut n = 2;
    while n < traj.len() {
        let h = traj.times[n] - traj.times[n - 1];
        if ((traj.times[n - 1] - traj.times[n - 2]) - h).abs() > 1e-12 * h.max(1.0) {
            break;
        }
        integral += (rates[n - 2] + 4.0 * rates[n - 1] + rates[n]) * (h / 3.0);
        worst = worst.max((traj.states[n].x - x0 - integral).amax());
        n += 2;
    }
    Ok(worst)
}

/// Largest deviation between the projected full trajectory and the
/// reduced trajectory started at the projected initial state.
pub fn two_path_discrepancy(
    params: &BodyParams,
    initial: &FullState,
    config: &IntegratorConfig,
) -> Result<f64> {
    let full = integrate(params, initial, config)?;
    let reduced = integrate(params, &project_rho(initial), config)?;
    Ok(full
        .states
        .iter()
        .zip(&reduced.states)
        .map(|(f, r)| {
            let p = project_rho(f);
            (p.gamma - r.gamma).amax().max((p.k - r.k).amax())
        })
        .fold(0.0, f64::max))
}

/// Largest deviation between a reparametrized trajectory and the physical
/// flow evaluated at the recovered times, on samples with recovered time
/// in `[0, t_max]`.
pub fn reparametrization_discrepancy(
    params: &BodyParams,
    traj: &Trajectory<ReducedState>,
    t_max: f64,
    max_step: f64,
) -> Result<f64> {
    let recovered = traj
        .recovered_time
        .as_ref()
        .ok_or_else(|| Error::invalid("trajectory", "has no recovered time"))?;
    let mut physical = traj.states[0];
    let mut t = 0.0;
    let mut worst: f64 = 0.0;
    for (st, &tk) in traj.states.iter().zip(recovered) {
        if tk > t_max {
            break;
        }
        physical = advance(params, &physical, tk - t, max_step)?;
        t = tk;
        let d = (st.gamma - physical.gamma)
            .amax()
            .max((st.k - physical.k).amax());
        worst = worst.max(d);
    }
    Ok(worst)
}

/// Copies the trajectory with `K` scaled by `factor` from sample `from`
/// on, recomputing monitors. Used to sanity-check drift detection.
pub fn corrupt_momentum(
    params: &BodyParams,
    traj: &Trajectory<ReducedState>,
    from: usize,
    factor: f64,
) -> Result<Trajectory<ReducedState>> {
    let mut out = traj.clone();
    for i in from..out.len() {
        out.states[i].k *= factor;
        out.monitors[i] = Monitors::at(params, &out.states[i])?;
    }
    Ok(out)
}

/// Reduced velocity as an `n`-vector (`gamma'` then `K'`).
pub fn reduced_velocity(params: &BodyParams, state: &ReducedState) -> Result<DVector<f64>> {
    Ok(DVector::from_vec(state.velocity(params)?))
}
