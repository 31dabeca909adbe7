//! Check suites over seeded random states. Each suite yields a
//! [`VerificationReport`] whose records carry the residual, the tolerance
//! and a short label of the identity being checked.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{divergence_defect, divergence_defect_with};
use crate::error::{Error, Result};
use crate::geometry::{fd_exterior_derivative, ConstantForm, ScaledForm, StateSampler, Vec3};
use crate::poisson::{
    casimir_defect, distribution_probe, dynamical_gauge_check, gauge_transform,
    max_conformal_jacobiator, max_jacobiator, max_twisted_defect, BivectorPatch, Coordinate,
    FnScalar,
};
use crate::rolling::{
    annihilator_form, conformal_factor, gauge_form_on_m, leafwise_twist_residual,
    momentum_is_casimir, nh_bracket_full, rank3_witness, reduced_bracket, reduction_consistency,
    twist_three_form, twist_two_form, BodyParams, BracketVariant, ConstraintRank, FullHamiltonian,
    FullState, MomentumCasimir, NhVariant, ReducedState, SphereCasimir, REDUCED_DIM,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Suite {
    Jacobi,
    Conformal,
    Twisted,
    Gauge,
    Reduction,
    Measure,
    Casimir,
    Probe,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 9] = [
        "jacobi",
        "conformal",
        "twisted",
        "gauge",
        "reduction",
        "measure",
        "casimir",
        "probe",
        "all",
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Jacobi => "jacobi",
            Self::Conformal => "conformal",
            Self::Twisted => "twisted",
            Self::Gauge => "gauge",
            Self::Reduction => "reduction",
            Self::Measure => "measure",
            Self::Casimir => "casimir",
            Self::Probe => "probe",
            Self::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "jacobi" => Self::Jacobi,
            "conformal" => Self::Conformal,
            "twisted" => Self::Twisted,
            "gauge" => Self::Gauge,
            "reduction" => Self::Reduction,
            "measure" => Self::Measure,
            "casimir" => Self::Casimir,
            "probe" => Self::Probe,
            "all" => Self::All,
            other => {
                return Err(Error::invalid(
                    "suite",
                    format!(
                        "unknown suite `{other}`, expected one of {}",
                        Self::NAMES.join(", ")
                    ),
                ))
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyOptions {
    pub trials: usize,
    pub seed: u64,
    pub tol_scale: f64,
    /// Forces the reduced bracket variant; otherwise each suite picks the
    /// variant its identity is about.
    pub variant: Option<BracketVariant>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 0,
            tol_scale: 1.0,
            variant: None,
        }
    }
}

impl VerifyOptions {
    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be at least 1"));
        }
        if !(self.tol_scale.is_finite() && self.tol_scale > 0.0) {
            return Err(Error::invalid("tol-scale", "must be finite and positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Comparison {
    /// Passes when the residual is at most the tolerance.
    #[serde(rename = "<=")]
    AtMost,
    /// Passes when the value exceeds the threshold.
    #[serde(rename = ">")]
    Above,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRecord {
    pub id: String,
    pub anchor: String,
    pub max_residual: f64,
    pub tolerance: f64,
    pub comparison: Comparison,
    pub pass: bool,
}

impl CheckRecord {
    fn at_most(id: impl Into<String>, anchor: &str, residual: f64, tolerance: f64) -> Self {
        Self {
            id: id.into(),
            anchor: anchor.to_string(),
            max_residual: residual,
            tolerance,
            comparison: Comparison::AtMost,
            pass: residual <= tolerance,
        }
    }

    fn above(id: impl Into<String>, anchor: &str, value: f64, threshold: f64) -> Self {
        Self {
            id: id.into(),
            anchor: anchor.to_string(),
            max_residual: value,
            tolerance: threshold,
            comparison: Comparison::Above,
            pass: value > threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub suite: String,
    pub rank: u8,
    pub trials: usize,
    pub seed: u64,
    pub tol_scale: f64,
    pub records: Vec<CheckRecord>,
    pub pass: bool,
}

impl VerificationReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckRecord> {
        self.records.iter().filter(|r| !r.pass)
    }
}

/// The variant that is (conformally) Poisson for each rank.
pub fn hamiltonizable_variant(rank: ConstraintRank) -> BracketVariant {
    match rank {
        ConstraintRank::Zero | ConstraintRank::One => BracketVariant::Plain,
        ConstraintRank::Two | ConstraintRank::Three => BracketVariant::Primed,
    }
}

fn other_variant(v: BracketVariant) -> BracketVariant {
    match v {
        BracketVariant::Plain => BracketVariant::Primed,
        BracketVariant::Primed => BracketVariant::Plain,
    }
}

fn variant_tag(v: BracketVariant) -> &'static str {
    match v {
        BracketVariant::Plain => "plain",
        BracketVariant::Primed => "primed",
    }
}

/// Largest value over items, computed in parallel. NaN counts as infinite
/// so it can never pass an upper-bound check.
fn par_max<T: Sync>(items: &[T], f: impl Fn(&T) -> Result<f64> + Sync + Send) -> Result<f64> {
    let values: Vec<f64> = items.par_iter().map(f).collect::<Result<_>>()?;
    Ok(values
        .into_iter()
        .map(|v| if v.is_nan() { f64::INFINITY } else { v })
        .fold(0.0, f64::max))
}

struct Context {
    params: BodyParams,
    opts: VerifyOptions,
    reduced: Vec<[f64; REDUCED_DIM]>,
    full: Vec<FullState>,
}

impl Context {
    fn new(params: &BodyParams, opts: &VerifyOptions) -> Self {
        let mut sampler = StateSampler::new(opts.seed);
        let reduced = (0..opts.trials)
            .map(|_| sampler.reduced_state().to_coords())
            .collect();
        let full = (0..opts.trials).map(|_| sampler.full_state()).collect();
        Self {
            params: *params,
            opts: *opts,
            reduced,
            full,
        }
    }

    fn tol(&self, t: f64) -> f64 {
        t * self.opts.tol_scale
    }

    fn variant(&self) -> BracketVariant {
        self.opts
            .variant
            .unwrap_or_else(|| hamiltonizable_variant(self.params.rank()))
    }

    fn tag(&self, v: BracketVariant) -> String {
        format!("rank{}.{}", self.params.rank(), variant_tag(v))
    }
}

/// Runs a suite for the body described by `params`.
pub fn run_suite(
    params: &BodyParams,
    suite: Suite,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    opts.validate()?;
    let ctx = Context::new(params, opts);
    let records = match suite {
        Suite::Jacobi => jacobi(&ctx)?,
        Suite::Conformal => conformal(&ctx)?,
        Suite::Twisted => twisted(&ctx)?,
        Suite::Gauge => gauge(&ctx)?,
        Suite::Reduction => reduction(&ctx)?,
        Suite::Measure => measure(&ctx)?,
        Suite::Casimir => casimir(&ctx)?,
        Suite::Probe => probe(&ctx)?,
        Suite::All => {
            let mut out = Vec::new();
            if opts.variant.is_some()
                || matches!(params.rank(), ConstraintRank::Zero | ConstraintRank::Three)
            {
                out.extend(jacobi(&ctx)?);
            }
            out.extend(conformal(&ctx)?);
            if matches!(params.rank(), ConstraintRank::One | ConstraintRank::Two) {
                out.extend(twisted(&ctx)?);
            }
            out.extend(gauge(&ctx)?);
            out.extend(reduction(&ctx)?);
            out.extend(measure(&ctx)?);
            out.extend(casimir(&ctx)?);
            out.extend(probe(&ctx)?);
            out
        }
    };
    let pass = records.iter().all(|r| r.pass);
    Ok(VerificationReport {
        suite: suite.name().to_string(),
        rank: params.rank().as_u8(),
        trials: opts.trials,
        seed: opts.seed,
        tol_scale: opts.tol_scale,
        records,
        pass,
    })
}

fn jacobi(ctx: &Context) -> Result<Vec<CheckRecord>> {
    let v = ctx.variant();
    let br = reduced_bracket(&ctx.params, v);
    let worst = par_max(&ctx.reduced, |s| max_jacobiator(&br, s))?;
    Ok(vec![CheckRecord::at_most(
        format!("jacobi.{}", ctx.tag(v)),
        "Jacobi identity of the reduced bracket",
        worst,
        ctx.tol(1e-9),
    )])
}

fn conformal(ctx: &Context) -> Result<Vec<CheckRecord>> {
    let v = ctx.variant();
    let br = reduced_bracket(&ctx.params, v);
    let phi = conformal_factor(&ctx.params);
    let worst = par_max(&ctx.reduced, |s| max_conformal_jacobiator(&br, &phi, s))?;
    Ok(vec![CheckRecord::at_most(
        format!("conformal.{}", ctx.tag(v)),
        "conformal factor times reduced bracket is Poisson",
        worst,
        ctx.tol(1e-7),
    )])
}

fn twisted(ctx: &Context) -> Result<Vec<CheckRecord>> {
    let v = ctx.variant();
    let br = reduced_bracket(&ctx.params, v);
    let phi = twist_three_form(&ctx.params)?;
    let sign = if ctx.params.rank() == ConstraintRank::Two {
        "-dB"
    } else {
        "+dB"
    };
    let defect = par_max(&ctx.reduced, |s| max_twisted_defect(&br, &phi, s))?;
    let closed = par_max(&ctx.reduced, |s| {
        Ok(fd_exterior_derivative(&phi, s)?.max_abs())
    })?;
    let mut out = vec![
        CheckRecord::at_most(
            format!("twisted.{}.defect", ctx.tag(v)),
            &format!("twisted Jacobi identity with phi = {sign}"),
            defect,
            ctx.tol(1e-6),
        ),
        CheckRecord::at_most(
            format!("twisted.rank{}.closed", ctx.params.rank()),
            "twisting 3-form is closed",
            closed,
            ctx.tol(1e-5),
        ),
    ];
    if ctx.params.rank() == ConstraintRank::Two {
        let leaf = par_max(&ctx.reduced, |s| {
            leafwise_twist_residual(&ctx.params, &ReducedState::from_coords(s)?)
        })?;
        out.push(CheckRecord::at_most(
            "twisted.rank2.leafwise",
            "phi = (1/phi2) dphi2 ^ Omega on symplectic leaves",
            leaf,
            ctx.tol(1e-8),
        ));
    }
    Ok(out)
}

fn gauge(ctx: &Context) -> Result<Vec<CheckRecord>> {
    let p = &ctx.params;
    let plain = nh_bracket_full(p, NhVariant::Plain);
    let gauged = nh_bracket_full(p, NhVariant::Gauged);
    let b = gauge_form_on_m(p);
    let coords: Vec<Vec<f64>> = ctx.full.iter().map(|s| s.to_coords().to_vec()).collect();

    let transformed = gauge_transform(plain, b);
    let matches = par_max(&coords, |s| {
        Ok((transformed.structure(s)? - gauged.structure(s)?).amax())
    })?;

    let report = dynamical_gauge_check(&plain, &b, &FullHamiltonian(*p), &coords)?;

    let zero = gauge_transform(
        plain,
        ConstantForm(crate::geometry::AntisymTensor::zeros(plain.dim(), 2)),
    );
    let identity = par_max(&coords, |s| {
        Ok((zero.structure(s)? - plain.structure(s)?).amax())
    })?;

    let back = gauge_transform(
        &transformed,
        ScaledForm {
            form: b,
            factor: -1.0,
        },
    );
    let round_trip = par_max(&coords, |s| {
        Ok((back.structure(s)? - plain.structure(s)?).amax())
    })?;

    let rank = p.rank();
    let mut out = vec![
        CheckRecord::at_most(
            format!("gauge.rank{rank}.full_matches_gauged"),
            "gauge of the nonholonomic bracket by B gives the gauged bracket",
            matches,
            ctx.tol(1e-9),
        ),
        CheckRecord::at_most(
            format!("gauge.rank{rank}.contraction"),
            "B vanishes on the nonholonomic vector field",
            report.max_contraction_residual(),
            ctx.tol(1e-9),
        ),
        CheckRecord::at_most(
            format!("gauge.rank{rank}.invertible"),
            "gauge endomorphism is invertible (condition estimate)",
            report.max_condition(),
            1e12,
        ),
        CheckRecord::at_most(
            format!("gauge.rank{rank}.zero_form"),
            "gauge by the zero form is the identity",
            identity,
            0.0,
        ),
        CheckRecord::at_most(
            format!("gauge.rank{rank}.round_trip"),
            "gauge by B then by -B recovers the bracket",
            round_trip,
            ctx.tol(1e-10),
        ),
    ];

    if matches!(rank, ConstraintRank::One | ConstraintRank::Two) {
        let v = hamiltonizable_variant(rank);
        let factor = if rank == ConstraintRank::Two {
            -1.0
        } else {
            1.0
        };
        let reduced_gauged = gauge_transform(
            reduced_bracket(p, v),
            ScaledForm {
                form: twist_two_form(p)?,
                factor,
            },
        );
        let lie_poisson =
            reduced_bracket(&p.with_rank(ConstraintRank::Zero), BracketVariant::Plain);
        let diff = par_max(&ctx.reduced, |s| {
            Ok((reduced_gauged.structure(s)? - lie_poisson.structure(s)?).amax())
        })?;
        out.push(CheckRecord::at_most(
            format!("gauge.{}.to_lie_poisson", ctx.tag(v)),
            "reduced bracket gauged by the twist 2-form is Lie-Poisson",
            diff,
            ctx.tol(1e-9),
        ));
    }
    Ok(out)
}

fn reduction(ctx: &Context) -> Result<Vec<CheckRecord>> {
    [NhVariant::Plain, NhVariant::Gauged]
        .into_iter()
        .map(|variant| {
            let worst = par_max(&ctx.full, |st| {
                let mut m: f64 = 0.0;
                for i in 0..REDUCED_DIM {
                    for j in i + 1..REDUCED_DIM {
                        m = m.max(reduction_consistency(&ctx.params, variant, st, i, j)?);
                    }
                }
                Ok(m)
            })?;
            let name = match variant {
                NhVariant::Plain => "plain",
                NhVariant::Gauged => "gauged",
            };
            Ok(CheckRecord::at_most(
                format!("reduction.rank{}.{name}", ctx.params.rank()),
                "full bracket of projected coordinates equals reduced bracket",
                worst,
                ctx.tol(1e-9),
            ))
        })
        .collect()
}

fn measure(ctx: &Context) -> Result<Vec<CheckRecord>> {
    let p = &ctx.params;
    let states: Vec<ReducedState> = ctx
        .reduced
        .iter()
        .map(|s| ReducedState::from_coords(s))
        .collect::<Result<_>>()?;
    let worst = par_max(&states, |s| divergence_defect(p, s))?;
    let mut out = vec![CheckRecord::at_most(
        format!("measure.rank{}.density", p.rank()),
        "invariant density makes the weighted field divergence free",
        worst,
        ctx.tol(1e-6),
    )];
    if matches!(p.rank(), ConstraintRank::One | ConstraintRank::Two) {
        let one = FnScalar::constant(REDUCED_DIM, 1.0);
        let control = par_max(&states, |s| divergence_defect_with(p, s, &one))?;
        out.push(CheckRecord::above(
            format!("measure.rank{}.unit_density_control", p.rank()),
            "unit density is not invariant",
            control,
            ctx.tol(1e-3),
        ));
    }
    Ok(out)
}

fn casimir(ctx: &Context) -> Result<Vec<CheckRecord>> {
    let mut out = Vec::new();
    for v in [BracketVariant::Plain, BracketVariant::Primed] {
        let br = reduced_bracket(&ctx.params, v);
        let c2 = par_max(&ctx.reduced, |s| casimir_defect(&br, &SphereCasimir, s))?;
        out.push(CheckRecord::at_most(
            format!("casimir.{}.C2", ctx.tag(v)),
            "|gamma|^2 is a Casimir",
            c2,
            ctx.tol(1e-10),
        ));
        if momentum_is_casimir(ctx.params.rank(), v) {
            let c1 = par_max(&ctx.reduced, |s| casimir_defect(&br, &MomentumCasimir, s))?;
            out.push(CheckRecord::at_most(
                format!("casimir.{}.C1", ctx.tag(v)),
                "K . gamma is a Casimir",
                c1,
                ctx.tol(1e-10),
            ));
        }
    }
    Ok(out)
}

/// Largest `|chi([X_i, X_j])|` over coordinate pairs.
fn probe_magnitude(params: &BodyParams, v: BracketVariant, s: &[f64]) -> Result<f64> {
    let br = reduced_bracket(params, v);
    let chi = annihilator_form(params, v);
    let mut worst: f64 = 0.0;
    for i in 0..REDUCED_DIM {
        for j in i + 1..REDUCED_DIM {
            let f = Coordinate {
                dim: REDUCED_DIM,
                index: i,
            };
            let g = Coordinate {
                dim: REDUCED_DIM,
                index: j,
            };
            worst = worst.max(distribution_probe(&br, &chi, &f, &g, s)?.abs());
        }
    }
    Ok(worst)
}

fn probe(ctx: &Context) -> Result<Vec<CheckRecord>> {
    let p = &ctx.params;
    let good = hamiltonizable_variant(p.rank());
    let bad = other_variant(good);
    let integrable = par_max(&ctx.reduced, |s| probe_magnitude(p, good, s))?;
    let witness = par_max(&ctx.reduced, |s| probe_magnitude(p, bad, s))?;
    let mut out = vec![
        CheckRecord::at_most(
            format!("probe.{}.integrable", ctx.tag(good)),
            "characteristic distribution is integrable",
            integrable,
            ctx.tol(1e-8),
        ),
        CheckRecord::above(
            format!("probe.{}.non_integrable", ctx.tag(bad)),
            "characteristic distribution is not integrable",
            witness,
            ctx.tol(1e-3),
        ),
    ];
    if p.rank() == ConstraintRank::Three {
        let br = reduced_bracket(p, BracketVariant::Plain);
        let chi = annihilator_form(p, BracketVariant::Plain);
        let f = Coordinate {
            dim: REDUCED_DIM,
            index: 0,
        };
        let g = Coordinate {
            dim: REDUCED_DIM,
            index: 3,
        };
        let mismatch = par_max(&ctx.reduced, |s| {
            let gamma = Vec3::new(s[0], s[1], s[2]);
            Ok((distribution_probe(&br, &chi, &f, &g, s)? - rank3_witness(p, &gamma)).abs())
        })?;
        out.push(CheckRecord::at_most(
            "probe.rank3.plain.closed_form",
            "commutator of X_gamma1 and X_K1 leaves the distribution",
            mismatch,
            ctx.tol(1e-8),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(trials: usize) -> VerifyOptions {
        VerifyOptions {
            trials,
            ..VerifyOptions::default()
        }
    }

    #[test]
    fn suite_names_round_trip() {
        for name in Suite::NAMES {
            assert_eq!(name.parse::<Suite>().unwrap().name(), name);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn every_rank_passes_all() {
        for rank in ConstraintRank::ALL {
            let p = BodyParams::chaplygin().with_rank(rank);
            let report = run_suite(&p, Suite::All, &opts(5)).unwrap();
            assert!(
                report.pass,
                "rank {rank}: {:?}",
                report.failures().collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn forced_rank3_plain_fails_jacobi() {
        let p = BodyParams::chaplygin().with_rank(ConstraintRank::Three);
        let o = VerifyOptions {
            variant: Some(BracketVariant::Plain),
            ..opts(5)
        };
        let report = run_suite(&p, Suite::Jacobi, &o).unwrap();
        assert!(!report.pass);
        assert!(report.records[0].max_residual > 0.0);
    }

    #[test]
    fn twisted_rejects_rank0() {
        let p = BodyParams::chaplygin().with_rank(ConstraintRank::Zero);
        assert!(matches!(
            run_suite(&p, Suite::Twisted, &opts(2)),
            Err(Error::UnsupportedRank { rank: 0 })
        ));
    }

    #[test]
    fn reports_are_deterministic() {
        let p = BodyParams::chaplygin();
        let a = run_suite(&p, Suite::Gauge, &opts(4)).unwrap();
        let b = run_suite(&p, Suite::Gauge, &opts(4)).unwrap();
        assert_eq!(a, b);
    }
}
