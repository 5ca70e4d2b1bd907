//! Pathwise superhedge from the dual: static positions λ_k in the
//! marginals plus a dynamic position H, checked on every path.

use skorokhod::multistop::Coverage;
use skorokhod::{
    extract_hedge, minimize_dual, multi_stopping_value, verify_superhedge, Augment, Clock, DiscreteMeasure, DualConfig,
    Instance, Lattice, PayoffSpec, PeacockVector, StopRule,
};

fn main() -> skorokhod::Result<()> {
    let mu = PeacockVector::new(vec![DiscreteMeasure::new([(-1.0, 0.25), (0.0, 0.5), (1.0, 0.25)])?])?;
    let lattice = Lattice::new(12, 0.25, Clock::Saturating, Augment::NONE)?;
    let inst = Instance::for_marginals(&lattice, &PayoffSpec::lookback(1.0), &mu, StopRule::Support)?;
    let dual = minimize_dual(&inst, &mu, &DualConfig::default())?;
    let sol = multi_stopping_value(&inst, &dual.best_lambda)?;
    let hedge = extract_hedge(&inst, &sol.grids)?;
    let report = verify_superhedge(
        &inst,
        &dual.best_lambda,
        &sol.grids,
        &hedge,
        Coverage::Exhaustive { max_steps: 12 },
    )?;

    println!("superhedge price {:.9}", dual.best_value);
    for (x, l) in dual.best_lambda.strikes[0].iter().zip(&dual.best_lambda.values[0]) {
        println!("  λ({x:+.2}) = {l:.6}");
    }
    println!(
        "{} stop tuples checked, max violation {:.2e}",
        report.tuples, report.max_violation
    );
    Ok(())
}
