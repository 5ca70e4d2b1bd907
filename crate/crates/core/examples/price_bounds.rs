//! Model-free price bounds of a path-dependent claim on a martingale with
//! given marginals at two maturities, through the time change to Brownian
//! motion.

use skorokhod::martransport::{price_bounds, timechange_payoff, TransportPayoff};
use skorokhod::solve::SolveSettings;
use skorokhod::{Augment, Clock, DiscreteMeasure, Lattice, PeacockVector};

fn main() -> skorokhod::Result<()> {
    let mu = PeacockVector::new(vec![
        DiscreteMeasure::new([(-1.0, 0.25), (0.0, 0.5), (1.0, 0.25)])?,
        DiscreteMeasure::uniform(&[-2.0, -1.0, 0.0, 1.0, 2.0])?,
    ])?;
    // capped lookback at the second maturity plus a digital up-and-in at the first
    let tp: TransportPayoff = serde_json::from_str(
        r#"{"maturities": [1.0, 2.0], "legs": [
            {"kind": "lookback", "maturity": 2, "cap": 1.0},
            {"kind": "barrier", "maturity": 1, "upper": 0.5, "payout": 0.5}]}"#,
    )?;
    println!(
        "time-changed payoff: {}",
        serde_json::to_string(&timechange_payoff(&tp)?)?
    );
    let lattice = Lattice::new(40, 0.25, Clock::Saturating, Augment::NONE)?;
    let b = price_bounds(&tp, &mu, &lattice, &SolveSettings::default())?;
    println!("price interval [{:.9}, {:.9}]", b.lower.bound, b.upper.bound);
    println!(
        "cap binding: upper {}, lower {}",
        b.upper.cap_binding, b.lower.cap_binding
    );
    Ok(())
}
