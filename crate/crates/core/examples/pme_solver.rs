//! The finite-difference porous medium solver: a cosine profile, a compactly
//! supported bump, and the weak-form residual of the computed solution.
//!
//! ```text
//! cargo run --release --example pme_solver
//! ```

use std::f64::consts::PI;

use kclg::pme::{l1_distance, max_distance, solve_pme, solve_pme_snapshots, weak_residual, DensityField, TestFunction};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cosine = |side| DensityField::from_fn(1, side, |u| 0.5 + 0.25 * (2.0 * PI * u[0]).cos());

    for m in [2, 3] {
        let start = cosine(512)?;
        let end = solve_pme(&start, m, 0.05, 0.4)?;
        println!(
            "m = {m}: amplitude {:.4} -> {:.4}, L1 change {:.4}, mass {:.15} -> {:.15}",
            start.values()[0] - 0.5,
            end.values()[0] - 0.5,
            l1_distance(&start, &end)?,
            start.mass(),
            end.mass()
        );
    }

    // second order in space: each doubling shrinks the difference about fourfold
    let runs = [128, 256, 512].map(|s| solve_pme(&cosine(s).unwrap(), 2, 0.05, 0.4).unwrap());
    let (d1, d2) = (max_distance(&runs[0], &runs[1])?, max_distance(&runs[1], &runs[2])?);
    println!("grid differences {d1:.2e}, {d2:.2e} (ratio {:.2})", d1 / d2);

    let bump = DensityField::from_fn(1, 512, |u| if (0.4..=0.6).contains(&u[0]) { 0.5 } else { 0.0 })?;
    let spread = solve_pme(&bump, 2, 1e-3, 0.4)?;
    let support: Vec<f64> = (0..512).filter(|&i| spread.values()[i] > 0.0).map(|i| spread.position(i)[0]).collect();
    println!(
        "bump support after t = 1e-3: [{:.4}, {:.4}]",
        support.first().copied().unwrap_or(f64::NAN),
        support.last().copied().unwrap_or(f64::NAN)
    );

    let times: Vec<f64> = (0..=64).map(|i| 0.05 * i as f64 / 64.0).collect();
    let fields = solve_pme_snapshots(&cosine(256)?, 2, &times, 0.4)?;
    let snaps: Vec<(f64, DensityField)> = times.into_iter().zip(fields).collect();
    println!("weak residual against cos(2 pi u): {:.2e}", weak_residual(&snaps, &TestFunction::cosine(1), 2)?);
    Ok(())
}
