//! Simulate the m = 2 porous-medium lattice gas on a ring and watch a density
//! bump flatten out.
//!
//! ```text
//! cargo run --release --example kmc_simulation
//! ```

use kclg::kmc::{empirical_profile, initial_stream, sample_initial, simulate, stream_rng, InitialProfile, SimConfig};
use kclg::lattice::Geometry;
use kclg::rates::{Order, RateModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let geometry = Geometry::torus(1, 256)?;
    let profile = InitialProfile::cosine(0.5, 0.25);
    let (seed, replica) = (7, 0);
    let mut rng = stream_rng(seed, initial_stream(replica));
    let initial = sample_initial(&profile, geometry, &mut rng)?;

    let cfg = SimConfig {
        model: RateModel::porous(Order::Two),
        geometry,
        horizon: 0.05,
        snapshot_times: vec![0.0, 0.01, 0.05],
        seed,
        replica,
    };
    let traj = simulate(&initial, &cfg)?;
    println!("{} events, froze: {}", traj.events, traj.froze);

    for &(t, _) in &traj.snapshots {
        let field = empirical_profile(&traj, t, 8)?;
        let v = field.values();
        let (lo, hi) = v.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        println!("t = {t:.3}: block density in [{lo:.3}, {hi:.3}], mass {:.4}", field.mass());
    }
    Ok(())
}
