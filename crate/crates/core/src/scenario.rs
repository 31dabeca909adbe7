//! JSON scenarios, trajectory CSV and summary/report JSON.
//!
//! ```json
//! {
//!   "inertia": [1, 2, 3], "mass": 1, "radius": 1, "rank": 2,
//!   "initial": { "gamma": [0, 0.6, 0.8], "K": [0.3, -0.2, 0.5] },
//!   "integrator": { "dt": 0.001, "T": 10 },
//!   "seed": 7
//! }
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    constraint_residual, integrate, invariant_drift, reparametrized_integrate, Drift,
    IntegratorConfig, Trajectory,
};
use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};
use crate::rolling::{project_rho, BodyParams, ConstraintRank, FullState, ReducedState};
use crate::verify::VerificationReport;

const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    gamma: Option<[f64; 3]>,
    g: Option<[f64; 9]>,
    x: Option<[f64; 3]>,
    #[serde(rename = "K")]
    k: Option<[f64; 3]>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntegrator {
    dt: f64,
    #[serde(rename = "T")]
    horizon: f64,
    #[serde(default)]
    renormalize_gamma: bool,
    #[serde(default = "default_true")]
    renormalize_g: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    inertia: [f64; 3],
    mass: f64,
    radius: f64,
    rank: i64,
    so2_angle: Option<f64>,
    initial: RawInitial,
    integrator: Option<RawIntegrator>,
    #[serde(default)]
    seed: u64,
}

/// Initial condition, on the reduced space or on the full chart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialState {
    Reduced(ReducedState),
    Full(FullState),
}

/// A validated scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub params: BodyParams,
    pub initial: InitialState,
    pub integrator: IntegratorConfig,
    pub seed: u64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawScenario = serde_json::from_str(text)?;
        Self::from_raw(raw)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    fn from_raw(raw: RawScenario) -> Result<Self> {
        let rank = u8::try_from(raw.rank)
            .map_err(|_| Error::invalid("rank", format!("must be 0, 1, 2 or 3, got {}", raw.rank)))
            .and_then(ConstraintRank::try_from)?;
        let mut params = BodyParams::new(Vec3::from(raw.inertia), raw.mass, raw.radius, rank)?;
        if let Some(angle) = raw.so2_angle {
            params = params.with_so2_angle(angle)?;
        }

        let finite = |name: &str, v: &[f64]| {
            if v.iter().all(|x| x.is_finite()) {
                Ok(())
            } else {
                Err(Error::invalid(name, "entries must be finite"))
            }
        };
        let init = raw.initial;
        let k = init
            .k
            .ok_or_else(|| Error::invalid("initial.K", "missing"))?;
        finite("initial.K", &k)?;
        let initial = match (init.gamma, init.g) {
            (Some(_), Some(_)) => {
                return Err(Error::invalid(
                    "initial",
                    "give either `gamma` or `g`/`x`, not both",
                ))
            }
            (None, None) => {
                return Err(Error::invalid(
                    "initial",
                    "needs `gamma` (reduced) or `g` and `x` (full)",
                ))
            }
            (Some(gamma), None) => {
                if init.x.is_some() {
                    return Err(Error::invalid(
                        "initial.x",
                        "only allowed together with `g`",
                    ));
                }
                finite("initial.gamma", &gamma)?;
                let gamma = Vec3::from(gamma);
                if (gamma.norm() - 1.0).abs() > UNIT_TOLERANCE {
                    return Err(Error::invalid(
                        "initial.gamma",
                        format!("must have unit length, |gamma| = {}", gamma.norm()),
                    ));
                }
                InitialState::Reduced(ReducedState::new(gamma, Vec3::from(k)))
            }
            (None, Some(g)) => {
                let x = init
                    .x
                    .ok_or_else(|| Error::invalid("initial.x", "missing"))?;
                finite("initial.g", &g)?;
                finite("initial.x", &x)?;
                let g = Mat3::from_row_slice(&g);
                let st = FullState::new(g, Vec3::from(x), Vec3::from(k));
                if st.orthogonality_defect() > UNIT_TOLERANCE || g.determinant() <= 0.0 {
                    return Err(Error::invalid("initial.g", "must be a rotation matrix"));
                }
                InitialState::Full(st)
            }
        };

        let integrator = match raw.integrator {
            Some(r) => {
                let cfg = IntegratorConfig {
                    dt: r.dt,
                    horizon: r.horizon,
                    renormalize_gamma: r.renormalize_gamma,
                    renormalize_g: r.renormalize_g,
                    ..IntegratorConfig::default()
                };
                cfg.validate()?;
                cfg
            }
            None => IntegratorConfig::default(),
        };

        Ok(Self {
            params,
            initial,
            integrator,
            seed: raw.seed,
        })
    }

    pub fn reduced_initial(&self) -> ReducedState {
        match self.initial {
            InitialState::Reduced(s) => s,
            InitialState::Full(s) => project_rho(&s),
        }
    }

    /// Full initial state; a reduced initial condition is lifted with
    /// `x = 0` and a rotation whose third row is `gamma`.
    pub fn full_initial(&self) -> FullState {
        match self.initial {
            InitialState::Full(s) => s,
            InitialState::Reduced(s) => FullState::new(lift_gamma(&s.gamma), Vec3::zeros(), s.k),
        }
    }
}

/// A rotation `g` with `g^T e_3 = gamma` for unit `gamma`.
pub fn lift_gamma(gamma: &Vec3) -> Mat3 {
    let helper = if gamma.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::y()
    };
    let r1 = helper.cross(gamma).normalize();
    let r0 = r1.cross(gamma);
    Mat3::from_rows(&[r0.transpose(), r1.transpose(), gamma.transpose()])
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SimulateOptions {
    pub full: bool,
    pub reparametrize: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub rank: u8,
    pub chart: &'static str,
    pub time: &'static str,
    pub dt: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub samples: usize,
    pub drift: Drift,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_recovered_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraint_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_orthogonality_defect: Option<f64>,
}

fn num(out: &mut String, v: f64) {
    write!(out, ",{v:.16e}").expect("write to string");
}

/// CSV for a reduced trajectory: `t,gamma1..3,K1..3,H,C1,C2,F` plus
/// `t_recovered` for reparametrized runs.
pub fn reduced_csv(traj: &Trajectory<ReducedState>) -> String {
    let mut out = String::from("t,gamma1,gamma2,gamma3,K1,K2,K3,H,C1,C2,F");
    if traj.recovered_time.is_some() {
        out.push_str(",t_recovered");
    }
    out.push('\n');
    for (i, (st, m)) in traj.states.iter().zip(&traj.monitors).enumerate() {
        write!(out, "{:.16e}", traj.times[i]).expect("write to string");
        for v in st.gamma.iter().chain(st.k.iter()) {
            num(&mut out, *v);
        }
        for v in [m.h, m.c1, m.c2, m.f] {
            num(&mut out, v);
        }
        if let Some(rec) = &traj.recovered_time {
            num(&mut out, rec[i]);
        }
        out.push('\n');
    }
    out
}

/// CSV for a full trajectory: `t,g11..g33,x1..x3,K1..K3,H`.
pub fn full_csv(traj: &Trajectory<FullState>) -> String {
    let mut out = String::from("t,g11,g12,g13,g21,g22,g23,g31,g32,g33,x1,x2,x3,K1,K2,K3,H\n");
    for (i, (st, m)) in traj.states.iter().zip(&traj.monitors).enumerate() {
        write!(out, "{:.16e}", traj.times[i]).expect("write to string");
        for v in st.to_coords() {
            num(&mut out, v);
        }
        num(&mut out, m.h);
        out.push('\n');
    }
    out
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory followed by a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid("out", "output path has no file name"))?
        .to_string_lossy();
    let tmp: PathBuf = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Runs a simulation and writes `trajectory.csv` and `summary.json` into
/// `out_dir`.
pub fn run_simulate(
    scenario: &Scenario,
    opts: &SimulateOptions,
    out_dir: &Path,
) -> Result<SimulationSummary> {
    let params = &scenario.params;
    let cfg = &scenario.integrator;
    let (csv, summary) = if opts.full {
        if opts.reparametrize {
            return Err(Error::invalid(
                "reparametrize",
                "time reparametrization is defined on the reduced space only",
            ));
        }
        let traj = integrate(params, &scenario.full_initial(), cfg)?;
        let summary = SimulationSummary {
            rank: params.rank().as_u8(),
            chart: "full",
            time: "t",
            dt: cfg.dt,
            horizon: cfg.horizon,
            samples: traj.len(),
            drift: invariant_drift(&traj)?,
            final_recovered_time: None,
            constraint_residual: Some(constraint_residual(params, &traj)?),
            max_orthogonality_defect: Some(
                traj.states
                    .iter()
                    .map(FullState::orthogonality_defect)
                    .fold(0.0, f64::max),
            ),
        };
        (full_csv(&traj), summary)
    } else {
        let init = scenario.reduced_initial();
        let traj = if opts.reparametrize {
            reparametrized_integrate(params, &init, cfg)?
        } else {
            integrate(params, &init, cfg)?
        };
        let summary = SimulationSummary {
            rank: params.rank().as_u8(),
            chart: "reduced",
            time: if opts.reparametrize { "tau" } else { "t" },
            dt: cfg.dt,
            horizon: cfg.horizon,
            samples: traj.len(),
            drift: invariant_drift(&traj)?,
            final_recovered_time: traj.recovered_time.as_ref().and_then(|r| r.last().copied()),
            constraint_residual: None,
            max_orthogonality_defect: None,
        };
        (reduced_csv(&traj), summary)
    };
    write_atomic(&out_dir.join("trajectory.csv"), csv.as_bytes())?;
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Writes `report.json` into `out_dir`.
pub fn write_report(report: &VerificationReport, out_dir: &Path) -> Result<()> {
    write_json(&out_dir.join("report.json"), report)
}
