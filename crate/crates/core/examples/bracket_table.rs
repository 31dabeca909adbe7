//! For every rank and both reduced brackets: does Jacobi hold, is K.gamma a
//! Casimir, and does the characteristic distribution integrate?

use rolling_brackets::geometry::StateSampler;
use rolling_brackets::poisson::{distribution_probe, max_jacobiator, Coordinate};
use rolling_brackets::rolling::{annihilator_form, momentum_is_casimir, reduced_bracket};
use rolling_brackets::{BodyParams, BracketVariant, ConstraintRank};

fn main() -> rolling_brackets::Result<()> {
    let mut sampler = StateSampler::new(1);
    let states: Vec<[f64; 6]> = (0..50)
        .map(|_| sampler.reduced_state().to_coords())
        .collect();

    println!(
        "{:<6} {:<8} {:>12} {:>10} {:>12}",
        "rank", "bracket", "max Jacobi", "C1 Casimir", "max probe"
    );
    for rank in ConstraintRank::ALL {
        let p = BodyParams::chaplygin().with_rank(rank);
        for v in [BracketVariant::Plain, BracketVariant::Primed] {
            let br = reduced_bracket(&p, v);
            let chi = annihilator_form(&p, v);
            let (mut jac, mut probe) = (0.0f64, 0.0f64);
            for s in &states {
                jac = jac.max(max_jacobiator(&br, s)?);
                for i in 0..6 {
                    for j in i + 1..6 {
                        let f = Coordinate { dim: 6, index: i };
                        let g = Coordinate { dim: 6, index: j };
                        probe = probe.max(distribution_probe(&br, &chi, &f, &g, s)?.abs());
                    }
                }
            }
            let tag = if v == BracketVariant::Primed {
                "primed"
            } else {
                "plain"
            };
            println!(
                "{:<6} {:<8} {:>12.2e} {:>10} {:>12.2e}",
                rank.as_u8(),
                tag,
                jac,
                momentum_is_casimir(rank, v),
                probe
            );
        }
    }
    Ok(())
}
