//! Explicit finite-difference solver for `d_t rho = Laplacian(rho^m)` on the
//! periodic unit torus, a weak-form residual and the L1 profile distance.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PmeError {
    #[error("field value {value} at grid index {index} outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("field has {got} values, expected {expected}")]
    WrongLength { got: usize, expected: usize },
    #[error("dimension {0} not supported (1 or 2)")]
    Dimension(usize),
    #[error("fields live on different dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("CFL safety factor {0} outside (0, 1)")]
    Safety(f64),
    #[error("exponent m = {0} not supported (2 or 3)")]
    Exponent(u32),
    #[error("requested times must be finite, nonnegative and increasing")]
    Times,
    #[error("solution left [0, 1] at step {step}, time {time}: value {value} at index {index}")]
    Diverged { step: u64, time: f64, index: usize, value: f64 },
    #[error("weak residual needs at least {min} snapshots, got {got}")]
    TooFewSnapshots { min: usize, got: usize },
    #[error("malformed CSV line {0}")]
    Csv(usize),
}

/// Density values at the nodes `i / M` of a periodic grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    dim: usize,
    side: usize,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(dim: usize, side: usize, values: Vec<f64>) -> Result<Self, PmeError> {
        if !(1..=2).contains(&dim) {
            return Err(PmeError::Dimension(dim));
        }
        let expected = side.pow(dim as u32);
        if values.len() != expected {
            return Err(PmeError::WrongLength { got: values.len(), expected });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(PmeError::OutOfRange { index, value });
        }
        Ok(DensityField { dim, side, values })
    }

    pub fn from_fn(dim: usize, side: usize, f: impl Fn(&[f64]) -> f64) -> Result<Self, PmeError> {
        let values = (0..side.pow(dim as u32)).map(|i| f(&node(dim, side, i))).collect();
        Self::new(dim, side, values)
    }

    pub fn constant(dim: usize, side: usize, c: f64) -> Result<Self, PmeError> {
        Self::new(dim, side, vec![c; side.pow(dim as u32)])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell_volume(&self) -> f64 {
        (self.side as f64).powi(-(self.dim as i32))
    }

    /// Macroscopic position of grid node `index`.
    pub fn position(&self, index: usize) -> Vec<f64> {
        node(self.dim, self.side, index)
    }

    /// `sum values * du^d`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    /// Value at the grid node nearest to `u` (periodic).
    pub fn nearest(&self, u: &[f64]) -> f64 {
        let m = self.side as f64;
        let idx = u.iter().fold(0usize, |acc, &c| {
            let k = ((c * m).round() as i64).rem_euclid(self.side as i64) as usize;
            acc * self.side + k
        });
        self.values[idx]
    }

    /// Entry-wise average of fields on the same grid.
    pub fn mean(fields: &[DensityField]) -> Result<DensityField, PmeError> {
        let first = fields.first().ok_or(PmeError::WrongLength { got: 0, expected: 1 })?;
        let mut acc = vec![0.0; first.values.len()];
        for f in fields {
            if f.dim != first.dim || f.side != first.side {
                return Err(PmeError::WrongLength { got: f.values.len(), expected: acc.len() });
            }
            for (a, v) in acc.iter_mut().zip(&f.values) {
                *a += v;
            }
        }
        let n = fields.len() as f64;
        DensityField::new(first.dim, first.side, acc.into_iter().map(|a| (a / n).clamp(0.0, 1.0)).collect())
    }

    /// CSV body `u_1[,u_2],value`, one grid node per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (i, v) in self.values.iter().enumerate() {
            for c in self.position(i) {
                let _ = write!(out, "{c},");
            }
            let _ = writeln!(out, "{v}");
        }
        out
    }

    /// Parse a CSV body written by [`DensityField::to_csv`]; `#` lines are skipped.
    pub fn from_csv(dim: usize, text: &str) -> Result<Self, PmeError> {
        let mut values = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with('u') {
                continue;
            }
            let last = line.rsplit(',').next().ok_or(PmeError::Csv(n + 1))?;
            values.push(last.trim().parse::<f64>().map_err(|_| PmeError::Csv(n + 1))?);
        }
        let side = (values.len() as f64).powf(1.0 / dim as f64).round() as usize;
        Self::new(dim, side, values)
    }
}

fn node(dim: usize, side: usize, mut index: usize) -> Vec<f64> {
    let mut u = vec![0.0; dim];
    for c in u.iter_mut().rev() {
        *c = (index % side) as f64 / side as f64;
        index /= side;
    }
    u
}

fn check_exponent(m: u32) -> Result<(), PmeError> {
    if m == 2 || m == 3 {
        Ok(())
    } else {
        Err(PmeError::Exponent(m))
    }
}

/// Integrate from `rho0` and return the fields at each requested time.
///
/// Each step is `rho += dt / du^2 * (discrete Laplacian of rho^m)` with
/// `dt = safety * du^2 / (2 d m max(rho^(m-1), 1e-12))`, the last step of each
/// interval shortened to land on the requested time.
pub fn solve_pme_snapshots(
    rho0: &DensityField,
    m: u32,
    times: &[f64],
    safety: f64,
) -> Result<Vec<DensityField>, PmeError> {
    check_exponent(m)?;
    if !(safety > 0.0 && safety < 1.0) {
        return Err(PmeError::Safety(safety));
    }
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(PmeError::Times);
    }
    let (dim, side) = (rho0.dim, rho0.side);
    let du = 1.0 / side as f64;
    let strides: Vec<usize> = (0..dim).map(|a| side.pow((dim - 1 - a) as u32)).collect();
    let mut rho = rho0.values.clone();
    let mut p = vec![0.0; rho.len()];
    let mut t = 0.0;
    let mut step = 0u64;
    let mut out = Vec::with_capacity(times.len());

    for &target in times {
        while t < target {
            let max_rho = rho.iter().cloned().fold(0.0, f64::max);
            let stiff = max_rho.powi(m as i32 - 1).max(1e-12);
            let mut dt = safety * du * du / (2.0 * dim as f64 * m as f64 * stiff);
            if t + dt >= target {
                dt = target - t;
            }
            let lambda = dt / (du * du);
            for (q, r) in p.iter_mut().zip(&rho) {
                *q = r.powi(m as i32);
            }
            for (i, r) in rho.iter_mut().enumerate() {
                let mut lap = 0.0;
                for &s in &strides {
                    let c = (i / s) % side;
                    let up = if c + 1 == side { i + s - side * s } else { i + s };
                    let down = if c == 0 { i + side * s - s } else { i - s };
                    lap += p[up] + p[down] - 2.0 * p[i];
                }
                *r += lambda * lap;
            }
            step += 1;
            t = if t + dt >= target { target } else { t + dt };
            if let Some((index, &value)) = rho.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
                return Err(PmeError::Diverged { step, time: t, index, value });
            }
        }
        out.push(DensityField { dim, side, values: rho.clone() });
    }
    Ok(out)
}

/// The field at time `t`.
pub fn solve_pme(rho0: &DensityField, m: u32, t: f64, safety: f64) -> Result<DensityField, PmeError> {
    Ok(solve_pme_snapshots(rho0, m, &[t], safety)?.pop().expect("one snapshot requested"))
}

type SpaceTime = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// A smooth test function `H(t, u)` with its time derivative and Laplacian.
#[derive(Clone)]
pub struct TestFunction {
    pub value: SpaceTime,
    pub time_derivative: SpaceTime,
    pub laplacian: SpaceTime,
}

impl TestFunction {
    pub fn constant(c: f64) -> Self {
        TestFunction {
            value: Arc::new(move |_, _| c),
            time_derivative: Arc::new(|_, _| 0.0),
            laplacian: Arc::new(|_, _| 0.0),
        }
    }

    /// `cos(2 pi k u_1)`, constant in time.
    pub fn cosine(k: u32) -> Self {
        let w = 2.0 * PI * k as f64;
        TestFunction {
            value: Arc::new(move |_, u| (w * u[0]).cos()),
            time_derivative: Arc::new(|_, _| 0.0),
            laplacian: Arc::new(move |_, u| -w * w * (w * u[0]).cos()),
        }
    }

    /// `exp(-a t) cos(2 pi k u_1)`.
    pub fn decaying_cosine(k: u32, a: f64) -> Self {
        let w = 2.0 * PI * k as f64;
        TestFunction {
            value: Arc::new(move |t, u| (-a * t).exp() * (w * u[0]).cos()),
            time_derivative: Arc::new(move |t, u| -a * (-a * t).exp() * (w * u[0]).cos()),
            laplacian: Arc::new(move |t, u| -w * w * (-a * t).exp() * (w * u[0]).cos()),
        }
    }
}

/// Minimum number of snapshots accepted by [`weak_residual`].
pub const MIN_RESIDUAL_SNAPSHOTS: usize = 64;

/// `| int_0^T int (rho d_t H + rho^m Lap H) + int rho_0 H(0) - int rho_T H(T) |`,
/// trapezoidal in time and a periodic Riemann sum in space.
pub fn weak_residual(snapshots: &[(f64, DensityField)], h: &TestFunction, m: u32) -> Result<f64, PmeError> {
    check_exponent(m)?;
    if snapshots.len() < MIN_RESIDUAL_SNAPSHOTS {
        return Err(PmeError::TooFewSnapshots { min: MIN_RESIDUAL_SNAPSHOTS, got: snapshots.len() });
    }
    if snapshots.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(PmeError::Times);
    }
    let spatial = |t: f64, f: &DensityField, g: &dyn Fn(f64, f64, &[f64]) -> f64| -> f64 {
        let sum: f64 = (0..f.values.len()).map(|i| g(t, f.values[i], &f.position(i))).sum();
        sum * f.cell_volume()
    };
    let bulk = |t: f64, r: f64, u: &[f64]| r * (h.time_derivative)(t, u) + r.powi(m as i32) * (h.laplacian)(t, u);
    let pairing = |t: f64, r: f64, u: &[f64]| r * (h.value)(t, u);

    let integrand: Vec<f64> = snapshots.iter().map(|(t, f)| spatial(*t, f, &bulk)).collect();
    let mut total = 0.0;
    for i in 1..snapshots.len() {
        total += 0.5 * (snapshots[i].0 - snapshots[i - 1].0) * (integrand[i] + integrand[i - 1]);
    }
    let (t0, f0) = &snapshots[0];
    let (t1, f1) = &snapshots[snapshots.len() - 1];
    total += spatial(*t0, f0, &pairing) - spatial(*t1, f1, &pairing);
    Ok(total.abs())
}

/// `sum |a - b| du^d` over the grid of `a`, reading `b` at the nearest node.
pub fn l1_distance(a: &DensityField, b: &DensityField) -> Result<f64, PmeError> {
    if a.dim != b.dim {
        return Err(PmeError::DimensionMismatch(a.dim, b.dim));
    }
    let sum: f64 = if a.side == b.side {
        a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum()
    } else {
        (0..a.values.len()).map(|i| (a.values[i] - b.nearest(&a.position(i))).abs()).sum()
    };
    Ok(sum * a.cell_volume())
}

/// Largest absolute difference at the nodes of `coarse`, reading `fine` at the
/// nearest node.
pub fn max_distance(coarse: &DensityField, fine: &DensityField) -> Result<f64, PmeError> {
    if coarse.dim != fine.dim {
        return Err(PmeError::DimensionMismatch(coarse.dim, fine.dim));
    }
    Ok((0..coarse.values.len())
        .map(|i| (coarse.values[i] - fine.nearest(&coarse.position(i))).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cosine_field(side: usize) -> DensityField {
        DensityField::from_fn(1, side, |u| 0.5 + 0.25 * (2.0 * PI * u[0]).cos()).unwrap()
    }

    #[test]
    fn constants_are_fixed_points() {
        for m in [2, 3] {
            for c in [0.0, 0.3, 1.0] {
                let f = DensityField::constant(1, 64, c).unwrap();
                assert_eq!(solve_pme(&f, m, 0.1, 0.9).unwrap(), f);
            }
        }
        let f = DensityField::constant(2, 16, 0.4).unwrap();
        assert_eq!(solve_pme(&f, 2, 0.05, 0.9).unwrap(), f);
    }

    #[test]
    fn mass_is_conserved() {
        for m in [2, 3] {
            let f = cosine_field(256);
            let t = 0.05;
            let out = solve_pme(&f, m, t, 0.9).unwrap();
            let rel = (out.mass() - f.mass()).abs() / f.mass();
            assert!(rel <= 1e-12 * t, "m={m}: {rel}");
        }
    }

    #[test]
    fn agrees_with_refined_reference() {
        let coarse = solve_pme(&cosine_field(512), 2, 0.05, 0.9).unwrap();
        let fine = solve_pme(&cosine_field(2048), 2, 0.05, 0.9).unwrap();
        assert!(max_distance(&coarse, &fine).unwrap() < 1e-3);
    }

    #[test]
    fn mode_decays_at_the_linearised_rate() {
        // small perturbation of a constant: amplitude decays like exp(-4 pi^2 m rho^(m-1) t)
        let eps = 1e-4;
        let f = DensityField::from_fn(1, 256, |u| 0.5 + eps * (2.0 * PI * u[0]).cos()).unwrap();
        let t = 0.01;
        let out = solve_pme(&f, 2, t, 0.9).unwrap();
        let amp = out.values()[0] - 0.5;
        let expected = eps * (-4.0 * PI * PI * 2.0 * 0.5 * t).exp();
        assert!((amp - expected).abs() < 1e-3 * eps, "{amp} vs {expected}");
    }

    #[test]
    fn snapshots_match_single_solves() {
        let f = cosine_field(64);
        let snaps = solve_pme_snapshots(&f, 2, &[0.0, 0.01, 0.02], 0.9).unwrap();
        assert_eq!(snaps[0], f);
        assert_eq!(snaps.len(), 3);
        let direct = solve_pme(&f, 2, 0.02, 0.9).unwrap();
        assert!(max_distance(&snaps[2], &direct).unwrap() < 1e-6);
    }

    #[test]
    fn compact_support_spreads_slowly() {
        let f = DensityField::from_fn(1, 1024, |u| if (0.4..=0.6).contains(&u[0]) { 0.5 } else { 0.0 }).unwrap();
        let out = solve_pme(&f, 2, 1e-3, 0.9).unwrap();
        for i in 0..=102 {
            assert!(out.values()[i] < 1e-8);
        }
    }

    #[test]
    fn parameter_validation() {
        let f = cosine_field(16);
        assert_eq!(solve_pme(&f, 2, 0.1, 1.0), Err(PmeError::Safety(1.0)));
        assert_eq!(solve_pme(&f, 4, 0.1, 0.5), Err(PmeError::Exponent(4)));
        assert!(DensityField::new(1, 4, vec![0.0, 0.5, 1.2, 0.0]).is_err());
        assert!(DensityField::new(1, 4, vec![0.0, 0.5, f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn weak_residual_examples() {
        let times: Vec<f64> = (0..=64).map(|i| i as f64 * 0.05 / 64.0).collect();
        let c = DensityField::constant(1, 32, 0.4).unwrap();
        let flat: Vec<(f64, DensityField)> = times.iter().map(|&t| (t, c.clone())).collect();
        assert_eq!(weak_residual(&flat, &TestFunction::constant(1.0), 2).unwrap(), 0.0);

        let fields = solve_pme_snapshots(&cosine_field(256), 2, &times, 0.9).unwrap();
        let mut snaps: Vec<(f64, DensityField)> = times.iter().cloned().zip(fields).collect();
        assert!(weak_residual(&snaps, &TestFunction::cosine(1), 2).unwrap() < 1e-3);
        assert!(weak_residual(&snaps, &TestFunction::decaying_cosine(1, 10.0), 2).unwrap() < 1e-3);

        let last = snaps.last_mut().unwrap();
        let scaled: Vec<f64> = last.1.values().iter().map(|v| v * 1.1).collect();
        last.1 = DensityField::new(1, 256, scaled).unwrap();
        assert!(weak_residual(&snaps, &TestFunction::constant(1.0), 2).unwrap() > 1e-2);
        assert!(weak_residual(&snaps[..10], &TestFunction::constant(1.0), 2).is_err());
    }

    #[test]
    fn l1_examples() {
        let a = DensityField::constant(1, 16, 0.3).unwrap();
        let b = DensityField::constant(1, 64, 0.5).unwrap();
        assert_eq!(l1_distance(&a, &a).unwrap(), 0.0);
        assert!((l1_distance(&a, &b).unwrap() - 0.2).abs() < 1e-15);
        let c = DensityField::constant(2, 4, 0.3).unwrap();
        assert_eq!(l1_distance(&a, &c), Err(PmeError::DimensionMismatch(1, 2)));
    }

    #[test]
    fn csv_round_trip() {
        let f = DensityField::from_fn(2, 5, |u| u[0] * 0.5 + u[1] * 0.25).unwrap();
        let back = DensityField::from_csv(2, &format!("# header\n{}", f.to_csv())).unwrap();
        assert_eq!(back, f);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn solution_stays_in_unit_interval(values in proptest::collection::vec(0.0f64..=1.0, 32), m in 2u32..=3) {
            let f = DensityField::new(1, 32, values).unwrap();
            let out = solve_pme(&f, m, 0.01, 0.9).unwrap();
            prop_assert!(out.values().iter().all(|v| (0.0..=1.0).contains(v)));
            let rel = (out.mass() - f.mass()).abs() / f.mass().max(1e-300);
            prop_assert!(rel < 1e-13);
            let max_in = f.values().iter().cloned().fold(0.0, f64::max);
            prop_assert!(out.values().iter().all(|&v| v <= max_in + 1e-15));
        }
    }
}
