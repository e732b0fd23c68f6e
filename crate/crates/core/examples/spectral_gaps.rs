//! Spectral gaps of the constrained generators on small hyperplanes, and the
//! comparison with the long-range exclusion process.
//!
//! ```text
//! cargo run --release --example spectral_gaps
//! ```

use kclg::lattice::Geometry;
use kclg::rates::{Order, RateModel};
use kclg::spectral::{build_generator, comparison_constant, spectral_gap, Dynamics};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let porous = Dynamics::Local(RateModel::porous(Order::Two));

    println!("box, k = ceil(N/2)");
    println!("{:>3} {:>3} {:>7} {:>12} {:>22}  method", "N", "k", "states", "gap", "gap N^2 rho/(rho-1/3)");
    for side in [6usize, 8, 10, 12] {
        let k = side.div_ceil(2);
        let rho = k as f64 / side as f64;
        let gen = build_generator(Geometry::frozen_box(side)?, k, porous)?;
        let gap = spectral_gap(&gen)?;
        let scaled = gap.value * (side * side) as f64 * rho / (rho - 1.0 / 3.0);
        println!("{side:>3} {k:>3} {:>7} {:>12.6} {scaled:>22.4}  {:?}", gen.dim(), gap.value, gap.method);
    }

    println!("\nbox, theta = 1, k = N/4");
    for side in [8usize, 12] {
        let k = side / 4;
        let rho = k as f64 / side as f64;
        let model = RateModel::perturbed(Order::Two, 1.0, side)?;
        let gap = spectral_gap(&build_generator(Geometry::frozen_box(side)?, k, Dynamics::Local(model))?)?;
        println!("N = {side:>2}: gap {:.6}, gap N^2/rho^2 = {:.3}", gap.value, gap.value * (side * side) as f64 / (rho * rho));
    }

    println!("\nlong-range exclusion");
    for side in [4usize, 6, 8] {
        let gap = spectral_gap(&build_generator(Geometry::torus(1, side)?, side / 2, Dynamics::LongRange)?)?;
        println!("N = {side}: gap {:.12}", gap.value);
    }

    // a reducible hyperplane: gap zero, one zero eigenvalue per component
    let gap = spectral_gap(&build_generator(Geometry::torus(1, 9)?, 3, porous)?)?;
    println!("\nring N = 9, k = 3: gap {}, {} zero eigenvalues ({:?})", gap.value, gap.zero_multiplicity, gap.method);

    println!("\nsup of D_long-range / D_porous on the ring");
    for side in [6usize, 8, 10] {
        let g = Geometry::torus(1, side)?;
        let k = side / 2;
        let c = comparison_constant(&build_generator(g, k, Dynamics::LongRange)?, &build_generator(g, k, porous)?)?;
        println!("N = {side:>2}, k = {k}: {:.4}", c.value);
    }
    Ok(())
}
