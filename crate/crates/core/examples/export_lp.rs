//! The primal LP in CPLEX LP format, for cross-checking with an external
//! solver.

use skorokhod::primal::{build_primal_lp, export_lp};
use skorokhod::{Augment, Clock, DiscreteMeasure, Instance, Lattice, PayoffSpec, PeacockVector, StopRule};

fn main() -> skorokhod::Result<()> {
    let mu = PeacockVector::new(vec![DiscreteMeasure::new([(-0.5, 0.5), (0.5, 0.5)])?])?;
    let lattice = Lattice::new(8, 0.25, Clock::Saturating, Augment::NONE)?;
    let inst = Instance::for_marginals(&lattice, &PayoffSpec::lookback(1.0), &mu, StopRule::Support)?;
    let flow = build_primal_lp(&inst, &mu)?;
    export_lp(&flow, std::io::stdout().lock())?;
    Ok(())
}
