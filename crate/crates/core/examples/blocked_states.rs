//! Irreducible components of a hyperplane with a fixed particle number.
//!
//! In one dimension the m = 2 hyperplane is irreducible above density 1/3;
//! below it splits into one mobile component and frozen configurations.
//!
//! ```text
//! cargo run --release --example blocked_states
//! ```

use kclg::ergodic::{components, is_blocked, ComponentClass};
use kclg::lattice::{Configuration, Geometry};
use kclg::rates::{Order, RateModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = RateModel::porous(Order::Two);
    let ring = Geometry::torus(1, 9)?;

    let spaced = Configuration::from_indices(ring, &[0, 3, 6])?;
    let close = Configuration::from_indices(ring, &[0, 2, 6])?;
    println!("{spaced} blocked: {}", is_blocked(&spaced, &model));
    println!("{close} blocked: {}", is_blocked(&close, &model));

    for k in [3, 4] {
        let report = components(ring, k, &model)?;
        println!("N = 9, k = {k}: {} states in {} components", report.total_states, report.components.len());
        for c in &report.components {
            println!("  {:>3} states  {:<17}  e.g. {}", c.size, format!("{:?}", c.class), c.representative);
        }
    }

    println!("\nside  k  components  blocked");
    for side in 6..=12 {
        let g = Geometry::torus(1, side)?;
        for k in 2..=side / 3 + 1 {
            let report = components(g, k, &model)?;
            let blocked = report.count(ComponentClass::BlockedSingleton);
            println!("{side:>4} {k:>2} {:>11} {blocked:>8}", report.components.len());
        }
    }

    // in two dimensions a mobile cluster is a filled 2x2 square
    let plane = Geometry::torus(2, 5)?;
    let report = components(plane, 4, &model)?;
    println!(
        "\n5x5 torus, 4 particles: {} components, {} mobile, {} blocked, {} other",
        report.components.len(),
        report.count(ComponentClass::Mobile),
        report.count(ComponentClass::BlockedSingleton),
        report.count(ComponentClass::Other)
    );
    Ok(())
}
