//! Reference values that bypass the solvers: exit-time expectations, the
//! Azéma–Yor law of the maximum, and a Monte Carlo embedding check.

use skorokhod::lp::SimplexOptions;
use skorokhod::oracles::{absorption_steps, azema_yor_law_of_max, hitting_time_value, mc_embedding_check};
use skorokhod::primal::solve_primal;
use skorokhod::{Augment, Clock, DiscreteMeasure, Instance, Lattice, PayoffSpec, PeacockVector, StopRule};

fn main() -> skorokhod::Result<()> {
    let k = 20;
    let dt = 1.0 / (k * k) as f64;
    let payoff = PayoffSpec::lookback(1.0);
    let oracle = hitting_time_value(&payoff, 1.0, 1.0, dt, absorption_steps(k, 1e-13))?;

    let mu = PeacockVector::new(vec![DiscreteMeasure::new([(-1.0, 0.5), (1.0, 0.5)])?])?;
    let lattice = Lattice::new(4 * (k * k) as usize, dt, Clock::Saturating, Augment::NONE)?;
    let inst = Instance::for_marginals(&lattice, &payoff, &mu, StopRule::Support)?;
    let ps = solve_primal(&inst, &mu, &SimplexOptions::default())?;
    println!(
        "E[min(max, 1)] at the exit of (-1, 1): LP {:.12}, oracle {oracle:.12}",
        ps.value
    );

    let mc = mc_embedding_check(&inst, &ps.policy(&inst), &mu, 20_000, 1)?;
    println!(
        "Monte Carlo: W1 {:.4} within band {:.4}: {}",
        mc.marginals[0].w1, mc.marginals[0].band, mc.marginals[0].within
    );

    let q: Vec<f64> = (0..200).map(|i| -1.0 + (2 * i + 1) as f64 / 200.0).collect();
    let law = azema_yor_law_of_max(&DiscreteMeasure::uniform(&q)?)?;
    println!(
        "Azéma–Yor, uniform target: E[max] = {:.6}, E[(max - 0.5)+] = {:.6}",
        law.mean(),
        law.call(0.5)
    );
    Ok(())
}
