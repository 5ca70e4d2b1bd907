//! Optimal embedding by linear programming: a three-atom target and the
//! reward 1{θ = 0}, whose value is 1/3.

use skorokhod::lp::SimplexOptions;
use skorokhod::primal::solve_primal;
use skorokhod::{Augment, Clock, DiscreteMeasure, Instance, Lattice, PayoffSpec, PeacockVector, StopRule};

fn main() -> skorokhod::Result<()> {
    let t = 1.0 / 3.0;
    let mu = PeacockVector::new(vec![DiscreteMeasure::new([(-1.0, t), (0.0, t), (1.0, t)])?])?;
    let lattice = Lattice::new(1600, 1.0 / 400.0, Clock::Saturating, Augment::NONE)?;
    let inst = Instance::for_marginals(&lattice, &PayoffSpec::stop_indicator(), &mu, StopRule::Support)?;
    let ps = solve_primal(&inst, &mu, &SimplexOptions::default())?;

    println!("nodes {}, simplex iterations {}", inst.node_count(), ps.iterations);
    println!("value {:.12}", ps.value);
    println!("stopped law {:?}", ps.stopped_laws[0]);
    println!("λ at the atoms (LP duals) {:?}", ps.marginal_duals[0]);
    Ok(())
}
