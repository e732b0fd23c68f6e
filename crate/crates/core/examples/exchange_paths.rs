//! Explicit sequences of allowed jumps: shifting a mobile cluster, and
//! exchanging a distant particle and hole with the help of a couple.
//!
//! ```text
//! cargo run --example exchange_paths
//! ```

use kclg::ergodic::{cluster_shift_path, exchange_path, Couple, Direction, MovePath};
use kclg::lattice::{Configuration, Geometry};
use kclg::rates::{Order, RateModel};

fn show(path: &MovePath) {
    let mut eta = path.start.clone();
    println!("  {eta}");
    for s in &path.steps {
        eta.swap_in_place(s.a, s.b);
        println!("  {eta}  ({}, {}) c = {}", s.a, s.b, s.constraint);
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = RateModel::porous(Order::Two);
    let line = Geometry::frozen_box(12)?;

    let pair = Configuration::from_indices(line, &[2, 3])?;
    println!("shift an adjacent pair right:");
    show(&cluster_shift_path(&pair, &model, 2, Direction::Right)?);

    let gapped = Configuration::from_indices(line, &[2, 4])?;
    println!("shift a pair at distance two left:");
    show(&cluster_shift_path(&gapped, &model, 2, Direction::Left)?);

    // couple at (0, 1), particle at x = 4, hole at y = 7: n = 3, m = 3
    let eta = Configuration::from_indices(line, &[0, 1, 4])?;
    let path = exchange_path(&eta, &model, 4, 7, Couple { z: 0, distance: 1 })?;
    path.verify(&model)?;
    let (n, m) = (3, 3);
    println!(
        "exchange 4 <-> 7: {} configurations visited, 5(m-1) + 4(n-1) + 2 = {}",
        path.configuration_count(),
        5 * (m - 1) + 4 * (n - 1) + 2
    );
    show(&path);

    // with the perturbation, distant particles of a couple are gathered first
    let perturbed = RateModel::perturbed(Order::Two, 1.0, 12)?;
    let eta = Configuration::from_indices(line, &[0, 4, 7])?;
    let path = exchange_path(&eta, &perturbed, 7, 10, Couple { z: 0, distance: 4 })?;
    path.verify(&perturbed)?;
    println!("perturbed exchange 7 <-> 10 with couple (0, 4): {} moves", path.moves());
    Ok(())
}
