//! Marginals out of convex order admit no embedding: the LP returns a
//! Farkas certificate.

use skorokhod::lp::SimplexOptions;
use skorokhod::primal::{build_primal_lp, solve_lp};
use skorokhod::{Augment, Clock, DiscreteMeasure, Error, Instance, Lattice, PayoffSpec, PeacockVector};

fn main() -> skorokhod::Result<()> {
    let wide = DiscreteMeasure::new([(-1.0, 0.5), (1.0, 0.5)])?;
    let narrow = DiscreteMeasure::new([(-0.5, 0.5), (0.5, 0.5)])?;
    let mu = PeacockVector::unchecked(vec![wide, narrow])?;
    let lattice = Lattice::new(64, 0.25, Clock::Saturating, Augment::NONE)?;
    let inst = Instance::new(
        &lattice,
        &PayoffSpec::zero(2),
        vec![(-2, 2), (-2, 2)],
        vec![Some(vec![-2, 2]), Some(vec![-1, 1])],
    )?;
    let flow = build_primal_lp(&inst, &mu)?;
    match solve_lp(&inst, &flow, &SimplexOptions::default()) {
        Err(Error::Infeasible(cert)) => {
            println!(
                "infeasible: bᵀy = {}, max (Aᵀy)⁺ = {:.1e}, valid {}",
                cert.bty,
                cert.residual,
                cert.is_valid(1e-9)
            );
            for (name, y) in flow.lp.row_names.iter().zip(&cert.y).filter(|(_, y)| **y != 0.0) {
                println!("  {name}: {y}");
            }
        }
        other => println!("unexpected: {other:?}"),
    }
    Ok(())
}
