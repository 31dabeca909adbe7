//! Gauge transformation of the full 15-dimensional bracket by the
//! constraint 2-form, and a constant 2-form that is not a dynamical gauge.

use rolling_brackets::geometry::{AntisymTensor, ConstantForm, StateSampler};
use rolling_brackets::poisson::{dynamical_gauge_check, gauge_transform, BivectorPatch};
use rolling_brackets::rolling::{
    gauge_form_on_m, nh_bracket_full, FullHamiltonian, K_OFFSET, X_OFFSET,
};
use rolling_brackets::{BodyParams, ConstraintRank, NhVariant};

fn main() -> rolling_brackets::Result<()> {
    let mut sampler = StateSampler::new(5);
    let states: Vec<Vec<f64>> = (0..50)
        .map(|_| sampler.full_state().to_coords().to_vec())
        .collect();

    for rank in ConstraintRank::ALL {
        let p = BodyParams::chaplygin().with_rank(rank);
        let plain = nh_bracket_full(&p, NhVariant::Plain);
        let gauged = nh_bracket_full(&p, NhVariant::Gauged);
        let b = gauge_form_on_m(&p);
        let transformed = gauge_transform(plain, b);
        let mut mismatch = 0.0f64;
        for s in &states {
            mismatch = mismatch.max((transformed.structure(s)? - gauged.structure(s)?).amax());
        }
        let report = dynamical_gauge_check(&plain, &b, &FullHamiltonian(p), &states)?;
        println!(
            "rank {rank}: |pi^B - pi'| {mismatch:.2e}, dynamical gauge {} (max |i_X B| {:.2e})",
            report.passed(),
            report.max_contraction_residual()
        );
    }

    let mut wrong = AntisymTensor::zeros(15, 2);
    wrong.set(&[X_OFFSET, K_OFFSET], 1.0);
    wrong.set(&[K_OFFSET, X_OFFSET], -1.0);
    let p = BodyParams::chaplygin();
    let report = dynamical_gauge_check(
        &nh_bracket_full(&p, NhVariant::Plain),
        &ConstantForm(wrong),
        &FullHamiltonian(p),
        &states,
    )?;
    println!(
        "dx1^dK1: dynamical gauge {} (max |i_X B| {:.2e})",
        report.passed(),
        report.max_contraction_residual()
    );
    Ok(())
}
