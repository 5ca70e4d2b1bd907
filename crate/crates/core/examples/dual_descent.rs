//! Subgradient descent on the dual, compared with the primal LP value.

use skorokhod::dualopt::StepRule;
use skorokhod::lp::SimplexOptions;
use skorokhod::primal::{duality_gap_report, solve_primal};
use skorokhod::{
    minimize_dual, Augment, Clock, DiscreteMeasure, DualConfig, Instance, Lattice, PayoffSpec, PeacockVector, StopRule,
};

fn main() -> skorokhod::Result<()> {
    let mu = PeacockVector::new(vec![
        DiscreteMeasure::new([(-1.0, 0.25), (0.0, 0.5), (1.0, 0.25)])?,
        DiscreteMeasure::uniform(&[-2.0, -1.0, 0.0, 1.0, 2.0])?,
    ])?;
    let payoff: PayoffSpec = serde_json::from_str(
        r#"{"type": "separable", "arity": 2, "terms": [
            {"phase": 1, "kind": "lookback", "cap": 1.0},
            {"phase": 2, "weight": -0.5, "kind": "local_time", "cap": 1.5}]}"#,
    )?;
    let lattice = Lattice::new(60, 0.25, Clock::Saturating, Augment::NONE)?;
    let inst = Instance::for_marginals(&lattice, &payoff, &mu, StopRule::Support)?;
    let ps = solve_primal(&inst, &mu, &SimplexOptions::default())?;

    for step in [StepRule::InvSqrt { scale: 1.0 }, StepRule::Polyak { target: ps.value }] {
        let cfg = DualConfig {
            iterations: 2000,
            step,
            ..Default::default()
        };
        let res = minimize_dual(&inst, &mu, &cfg)?;
        let gap = duality_gap_report(&ps, res.best_value, 1e-2)?;
        println!(
            "{step:?}: primal {:.9}, best dual {:.9} after {} iterations, relative gap {:.2e}",
            ps.value,
            res.best_value,
            res.history.len(),
            gap.relative_gap
        );
    }
    Ok(())
}
