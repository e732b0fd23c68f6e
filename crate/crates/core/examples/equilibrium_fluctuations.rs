//! Equilibrium density fluctuation fields: exact variance and Dirichlet-form
//! identities, and a short stationary run compared with the limiting
//! Ornstein-Uhlenbeck covariance.
//!
//! ```text
//! cargo run --release --example equilibrium_fluctuations
//! ```

use kclg::fluct::{estimate_time_covariance, field_identities, ou_covariance, stationary_series, FieldSeries, FourierMode};
use kclg::rates::{Order, RateModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = RateModel::porous(Order::Two);
    let mode = FourierMode::one_dimensional(1);

    for side in [64, 256] {
        let ids = field_identities(&model, side, &mode, 0.5)?;
        println!(
            "N = {side}: Var Y(h) = {:.6} (limit {:.6}), N^2 D(Y(h)) = {:.6} (limit {:.6})",
            ids.variance,
            ids.variance_limit,
            ids.dirichlet * (side * side) as f64,
            ids.dirichlet_limit * (side * side) as f64
        );
    }

    let (side, rho, spacing) = (128, 0.5, 0.01);
    let modes = [FourierMode::one_dimensional(1), FourierMode::one_dimensional(-1)];
    let mut runs = Vec::new();
    for replica in 0..4 {
        let run = stationary_series(&model, side, rho, &modes, spacing, 200, 3, replica)?;
        runs.push(run.fields.into_iter().map(|f| FieldSeries { h: f.clone(), g: f }).collect::<Vec<_>>());
    }
    println!("\nN = {side}, rho = {rho}, 4 replicas of 2 time units");
    for lag_steps in [1, 5, 10] {
        let lag = lag_steps as f64 * spacing;
        let est = estimate_time_covariance(&runs, lag_steps, 5)?;
        let predicted = ou_covariance(&mode, &mode, lag, rho)?;
        println!(
            "lag {lag:.2}: {:.4e} +- {:.1e}, predicted {predicted:.4e} ({:+.1} se)",
            est.estimate,
            est.stderr,
            est.z_score(predicted)
        );
    }
    Ok(())
}
