//! Replica-averaged empirical profiles of the lattice gas against the porous
//! medium equation, for a few system sizes.
//!
//! The full-size comparison (N up to 512, 30 replicas) lives in the acceptance
//! suite; this is a reduced version that runs in a few seconds.
//!
//! ```text
//! cargo run --release --example hydro_limit
//! ```

use kclg::experiment::{hydro_reference, hydro_side, HydroSpec};
use kclg::rates::{Order, RateModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = HydroSpec { sides: vec![64, 128, 256], replicas: 8, ..HydroSpec::default() };
    let reference = hydro_reference(&spec, 2)?;
    println!("{:>5} {:>4} {:>10} {:>12}", "N", "l", "L1", "events");
    for &side in &spec.sides {
        for model in [RateModel::porous(Order::Two), RateModel::perturbed(Order::Two, 1.0, side)?] {
            let r = hydro_side(&model, side, &spec, 0, 0, &reference)?;
            let name = if matches!(model, RateModel::Perturbed { .. }) { "theta=1" } else { "porous" };
            println!("{:>5} {:>4} {:>10.5} {:>12}  {name}", r.side, r.block_radius, r.l1_error, r.events);
        }
    }
    Ok(())
}
