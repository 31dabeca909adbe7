//! Brackets of invariant functions on the full chart agree with the reduced
//! brackets, for both full-space brackets and every rank.

use rolling_brackets::geometry::StateSampler;
use rolling_brackets::rolling::reduction_consistency;
use rolling_brackets::{BodyParams, ConstraintRank, NhVariant};

fn main() -> rolling_brackets::Result<()> {
    let mut sampler = StateSampler::new(6);
    let states: Vec<_> = (0..20).map(|_| sampler.full_state()).collect();
    for rank in ConstraintRank::ALL {
        let p = BodyParams::chaplygin().with_rank(rank);
        for variant in [NhVariant::Plain, NhVariant::Gauged] {
            let mut worst = 0.0f64;
            for st in &states {
                for i in 0..6 {
                    for j in i + 1..6 {
                        worst = worst.max(reduction_consistency(&p, variant, st, i, j)?);
                    }
                }
            }
            println!("rank {rank} {variant:?}: max residual {worst:.2e}");
        }
    }
    Ok(())
}
