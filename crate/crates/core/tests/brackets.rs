use proptest::prelude::*;

use rolling_brackets::geometry::{AntisymTensor, ConstantForm, StateSampler};
use rolling_brackets::poisson::{bracket, dynamical_gauge_check, ham_vf, Coordinate};
use rolling_brackets::rolling::{
    gauge_form_on_m, hamiltonian, nh_bracket_full, reduced_bracket, reduced_vf, x_nh_full,
    FullHamiltonian, ReducedHamiltonian, K_OFFSET, X_OFFSET,
};
use rolling_brackets::{BodyParams, BracketVariant, ConstraintRank, NhVariant, Vec3};

fn params(rank: ConstraintRank) -> BodyParams {
    BodyParams::new(Vec3::new(1.3, 2.1, 2.9), 1.7, 0.6, rank).unwrap()
}

fn full_coords(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut s = StateSampler::new(seed);
    (0..n)
        .map(|_| s.full_state().to_coords().to_vec())
        .collect()
}

#[test]
fn constraint_gauge_passes_the_dynamical_check() {
    let states = full_coords(30, 4);
    for rank in ConstraintRank::ALL {
        let p = params(rank);
        let pi = nh_bracket_full(&p, NhVariant::Plain);
        let report =
            dynamical_gauge_check(&pi, &gauge_form_on_m(&p), &FullHamiltonian(p), &states).unwrap();
        assert!(report.passed(), "rank {rank}");
    }
}

#[test]
fn arbitrary_constant_form_fails_the_dynamical_check() {
    // dx1 ^ dK1 does not annihilate the constrained flow
    let mut b = AntisymTensor::zeros(15, 2);
    b.set(&[X_OFFSET, K_OFFSET], 1.0);
    b.set(&[K_OFFSET, X_OFFSET], -1.0);
    let states = full_coords(30, 5);
    let p = params(ConstraintRank::Two);
    let pi = nh_bracket_full(&p, NhVariant::Plain);
    let report =
        dynamical_gauge_check(&pi, &ConstantForm(b), &FullHamiltonian(p), &states).unwrap();
    assert!(!report.passed());
    assert!(report.max_contraction_residual() > 1e-3);
}

#[test]
fn both_full_brackets_generate_the_constrained_flow() {
    for rank in ConstraintRank::ALL {
        let p = params(rank);
        let mut s = StateSampler::new(9);
        for _ in 0..10 {
            let st = s.full_state();
            let c = st.to_coords();
            let expected = x_nh_full(&p, &st).unwrap();
            for v in [NhVariant::Plain, NhVariant::Gauged] {
                let x = -ham_vf(&nh_bracket_full(&p, v), &FullHamiltonian(p), &c).unwrap();
                assert!((x - &expected).amax() < 1e-10, "rank {rank} {v:?}");
            }
        }
    }
}

fn rank_strategy() -> impl Strategy<Value = ConstraintRank> {
    (0u8..4).prop_map(|r| ConstraintRank::try_from(r).unwrap())
}

fn variant_strategy() -> impl Strategy<Value = BracketVariant> {
    prop_oneof![Just(BracketVariant::Plain), Just(BracketVariant::Primed)]
}

proptest! {
    #[test]
    fn reduced_brackets_are_antisymmetric(
        rank in rank_strategy(),
        v in variant_strategy(),
        seed in 0u64..1000,
        i in 0usize..6,
        j in 0usize..6,
    ) {
        let br = reduced_bracket(&params(rank), v);
        let s = StateSampler::new(seed).reduced_state().to_coords();
        let f = Coordinate { dim: 6, index: i };
        let g = Coordinate { dim: 6, index: j };
        let fg = bracket(&br, &f, &g, &s).unwrap();
        let gf = bracket(&br, &g, &f, &s).unwrap();
        prop_assert!((fg + gf).abs() < 1e-14);
    }

    #[test]
    fn hamiltonian_is_conserved_by_every_reduced_bracket(
        rank in rank_strategy(),
        v in variant_strategy(),
        seed in 0u64..1000,
    ) {
        let p = params(rank);
        let st = StateSampler::new(seed).reduced_state();
        let s = st.to_coords();
        let h = ReducedHamiltonian(p);
        prop_assert!(bracket(&reduced_bracket(&p, v), &h, &h, &s).unwrap().abs() < 1e-14);
        prop_assert!(hamiltonian(&p, &st).unwrap() > 0.0 || st.k.norm() == 0.0);
        let (dg, dk) = reduced_vf(&p, &st).unwrap();
        let x = -ham_vf(&reduced_bracket(&p, v), &h, &s).unwrap();
        for a in 0..3 {
            prop_assert!((x[a] - dg[a]).abs() < 1e-10);
            prop_assert!((x[3 + a] - dk[a]).abs() < 1e-10);
        }
    }
}
