//! Convex-order validation of a marginal vector, and snapping of off-grid
//! marginals onto a lattice.

use skorokhod::{DiscreteMeasure, PeacockVector};

fn main() -> skorokhod::Result<()> {
    let narrow = DiscreteMeasure::new([(-0.5, 0.5), (0.5, 0.5)])?;
    let wide = DiscreteMeasure::new([(-1.0, 0.25), (0.0, 0.5), (1.0, 0.25)])?;

    let ok = PeacockVector::report(&[narrow.clone(), wide.clone()]);
    println!("narrow -> wide: valid {}, margin {:.4}", ok.valid, ok.pairs[0].margin);
    let bad = PeacockVector::report(&[wide.clone(), narrow.clone()]);
    println!(
        "wide -> narrow: valid {}, violation at {:?}",
        bad.valid, bad.pairs[0].witness
    );
    if let Err(e) = PeacockVector::new(vec![wide, narrow]) {
        println!("rejected: {e}");
    }

    let q: Vec<f64> = (0..10).map(|i| -0.9 + 0.2 * i as f64).collect();
    let uniform = PeacockVector::new(vec![DiscreteMeasure::uniform(&q)?])?;
    let (snapped, err) = uniform.snap_to_grid(0.25)?;
    println!(
        "snapped to spacing 0.25: {} atoms, W1 moved {:.4}",
        snapped.get(0).len(),
        err[0]
    );
    Ok(())
}
