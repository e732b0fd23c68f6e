//! Equilibrium density fluctuation fields: static identities under product
//! measures, the Ornstein-Uhlenbeck covariance and its estimation from
//! stationary runs.

use std::f64::consts::PI;

use serde::Serialize;
use thiserror::Error;

use crate::kmc::{dynamics_stream, initial_stream, sample_initial, stream_rng, InitialProfile, KmcError, Simulator};
use crate::lattice::{Configuration, Geometry};
use crate::rates::{Order, RateModel};

/// Fewest batches [`batch_means`] accepts.
pub const MIN_BATCHES: usize = 10;

/// Fewest periodic images kept on each side when wrapping the heat kernel.
const MIN_KERNEL_IMAGES: i64 = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FluctError {
    #[error(transparent)]
    Kmc(#[from] KmcError),
    #[error("lag must be positive, got {0}")]
    NonPositiveLag(f64),
    #[error("fluctuation fields are defined on the torus")]
    NotTorus,
    #[error("the covariance kernel is implemented in one dimension only")]
    DimensionUnsupported,
    #[error("mode has {found} components on a {expected}-dimensional lattice")]
    ModeDimension { expected: usize, found: usize },
    #[error("density {0} outside [0, 1]")]
    Density(f64),
    #[error("identities need porous-medium rates")]
    NotPorous,
    #[error("only {found} batches, at least {min} required")]
    TooFewBatches { found: usize, min: usize },
    #[error("series of lengths {0} and {1} cannot be paired")]
    LengthMismatch(usize, usize),
    #[error("spacing and sample count must be positive")]
    Sampling,
}

/// `h_z(u) = sqrt(2) cos(2 pi z.u)` if `z` is lexicographically positive,
/// `sqrt(2) sin(2 pi z.u)` if negative, and `1` for `z = 0`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct FourierMode {
    pub z: Vec<i64>,
}

impl FourierMode {
    pub fn new(z: impl Into<Vec<i64>>) -> Self {
        FourierMode { z: z.into() }
    }

    pub fn one_dimensional(z: i64) -> Self {
        Self::new(vec![z])
    }

    /// Sign of the first non-zero component.
    pub fn sign(&self) -> i64 {
        self.z.iter().find(|&&c| c != 0).map_or(0, |c| c.signum())
    }

    pub fn value(&self, u: &[f64]) -> f64 {
        let phase = 2.0 * PI * self.z.iter().zip(u).map(|(&z, &x)| z as f64 * x).sum::<f64>();
        match self.sign() {
            0 => 1.0,
            s if s > 0 => 2f64.sqrt() * phase.cos(),
            _ => 2f64.sqrt() * phase.sin(),
        }
    }

    pub fn norm_squared(&self) -> f64 {
        1.0
    }

    /// `||grad h_z||^2 = 4 pi^2 |z|^2`.
    pub fn gradient_norm_squared(&self) -> f64 {
        4.0 * PI * PI * self.z.iter().map(|&c| (c * c) as f64).sum::<f64>()
    }

    /// Eigenvalue of `1 - Laplacian` on `h_z`.
    pub fn omega_eigenvalue(&self) -> f64 {
        1.0 + self.gradient_norm_squared()
    }

    fn check(&self, g: &Geometry) -> Result<(), FluctError> {
        if self.z.len() != g.dim() {
            return Err(FluctError::ModeDimension { expected: g.dim(), found: self.z.len() });
        }
        Ok(())
    }

    /// Weights `N^{-d/2} h(x/N)` of every site.
    pub fn site_weights(&self, g: &Geometry) -> Result<Vec<f64>, FluctError> {
        self.check(g)?;
        let scale = (g.volume() as f64).sqrt().recip();
        Ok((0..g.volume()).map(|x| scale * self.value(&g.macroscopic(x))).collect())
    }
}

fn check_density(rho: f64) -> Result<(), FluctError> {
    if (0.0..=1.0).contains(&rho) {
        Ok(())
    } else {
        Err(FluctError::Density(rho))
    }
}

/// `Y(H) = N^{-d/2} sum_x H(x/N) (eta(x) - rho)`.
pub fn field_value(eta: &Configuration, h: impl Fn(&[f64]) -> f64, rho: f64) -> Result<f64, FluctError> {
    let g = eta.geometry();
    if !g.is_torus() {
        return Err(FluctError::NotTorus);
    }
    let sum: f64 = (0..g.volume()).map(|x| h(&g.macroscopic(x)) * (eta.occupancy(x) as f64 - rho)).sum();
    Ok(sum / (g.volume() as f64).sqrt())
}

/// Static variance and Dirichlet form of `Y(h_z)` under the product measure
/// with density `rho`, evaluated by exact summation, next to their limits.
#[derive(Debug, Clone, Serialize)]
pub struct FieldIdentities {
    pub side: usize,
    pub rho: f64,
    /// `E[Y(H)^2]` summed over all pairs of sites.
    pub variance: f64,
    /// `rho (1 - rho) ||H||^2`.
    pub variance_limit: f64,
    /// `-E[Y L Y]` with the bond expectations enumerated over constraint windows.
    pub dirichlet: f64,
    /// `rho^2 (1 - rho) ||H'||^2 / N^2`, the constant quoted for the m = 2 rates.
    pub dirichlet_quoted: Option<f64>,
    /// `E[c (eta(0) - eta(1))^2] ||H'||^2 / (2 N^2)`.
    pub dirichlet_limit: f64,
}

impl FieldIdentities {
    pub fn variance_relative_error(&self) -> f64 {
        (self.variance - self.variance_limit).abs() / self.variance_limit
    }

    pub fn quoted_relative_error(&self) -> Option<f64> {
        self.dirichlet_quoted.map(|q| (self.dirichlet - q).abs() / q)
    }

    pub fn limit_relative_error(&self) -> f64 {
        (self.dirichlet - self.dirichlet_limit).abs() / self.dirichlet_limit
    }
}

/// Expectation of `c(0, 1) (eta(0) - eta(1))^2` under Bernoulli(`rho`) product
/// measure, enumerating every window occupation.
pub fn bond_activity(model: &RateModel, g: &Geometry, rho: f64) -> f64 {
    let (lo, hi) = model.window();
    let width = (hi - lo + 1) as usize;
    let mut total = 0.0;
    for pattern in 0..1usize << width {
        let occ = |o: isize| ((pattern >> (o - lo) as usize) & 1) as u8;
        if occ(0) == occ(1) {
            continue;
        }
        let ones = pattern.count_ones() as i32;
        let weight = rho.powi(ones) * (1.0 - rho).powi(width as i32 - ones);
        total += weight * model.constraint(g, occ);
    }
    total
}

/// Exact static identities of the fluctuation field on the one-dimensional
/// torus of `side` sites.
pub fn field_identities(model: &RateModel, side: usize, mode: &FourierMode, rho: f64) -> Result<FieldIdentities, FluctError> {
    check_density(rho)?;
    if !matches!(model, RateModel::PorousMedium { .. } | RateModel::Perturbed { .. }) {
        return Err(FluctError::NotPorous);
    }
    let g = Geometry::torus(1, side).map_err(KmcError::from)?;
    let w = mode.site_weights(&g)?;
    let n = side;
    // E[(eta_x - rho)(eta_y - rho)] vanishes off the diagonal
    let mut variance = 0.0;
    for x in 0..n {
        for y in 0..n {
            let cov = if x == y { rho * (1.0 - rho) } else { 0.0 };
            variance += w[x] * w[y] * cov;
        }
    }
    let activity = bond_activity(model, &g, rho);
    let dirichlet = 0.5 * activity * (0..n).map(|x| (w[(x + 1) % n] - w[x]).powi(2)).sum::<f64>();
    let nf = n as f64;
    let grad = mode.gradient_norm_squared();
    let dirichlet_quoted = matches!(model, RateModel::PorousMedium { m: Order::Two })
        .then(|| rho * rho * (1.0 - rho) * grad / (nf * nf));
    Ok(FieldIdentities {
        side,
        rho,
        variance,
        variance_limit: rho * (1.0 - rho) * mode.norm_squared(),
        dirichlet,
        dirichlet_quoted,
        dirichlet_limit: 0.5 * activity * grad / (nf * nf),
    })
}

/// Limiting covariance `rho (1 - rho) <H, S_lag G>` of two Fourier modes,
/// where `S` is the heat semigroup whose kernel has variance `4 rho lag`.
pub fn ou_covariance(h: &FourierMode, g: &FourierMode, lag: f64, rho: f64) -> Result<f64, FluctError> {
    if !(lag > 0.0) {
        return Err(FluctError::NonPositiveLag(lag));
    }
    check_density(rho)?;
    if h.z.len() != 1 || g.z.len() != 1 {
        return Err(FluctError::DimensionUnsupported);
    }
    if h != g {
        return Ok(0.0);
    }
    // a Gaussian of variance s^2 multiplies cos(2 pi z u) by exp(-2 pi^2 z^2 s^2)
    let variance = 4.0 * rho * lag;
    let z2 = (h.z[0] * h.z[0]) as f64;
    Ok(rho * (1.0 - rho) * (-2.0 * PI * PI * z2 * variance).exp())
}

/// The same covariance for arbitrary periodic test functions, by quadrature of
/// the periodised Gaussian kernel on `grid` points.
pub fn ou_covariance_quadrature(
    h: impl Fn(f64) -> f64,
    g: impl Fn(f64) -> f64,
    lag: f64,
    rho: f64,
    grid: usize,
) -> Result<f64, FluctError> {
    if !(lag > 0.0) {
        return Err(FluctError::NonPositiveLag(lag));
    }
    check_density(rho)?;
    let variance = 4.0 * rho * lag;
    let du = 1.0 / grid as f64;
    // images beyond this distance carry weight below exp(-40)
    let images = MIN_KERNEL_IMAGES.max((variance * 80.0).sqrt().ceil() as i64 + 1);
    let kernel: Vec<f64> = (0..grid)
        .map(|i| {
            let d = i as f64 * du;
            (-images..=images)
                .map(|j| (-(d + j as f64).powi(2) / (2.0 * variance)).exp())
                .sum::<f64>()
                / (2.0 * PI * variance).sqrt()
        })
        .collect();
    let hv: Vec<f64> = (0..grid).map(|i| h(i as f64 * du)).collect();
    let gv: Vec<f64> = (0..grid).map(|i| g(i as f64 * du)).collect();
    let mut total = 0.0;
    for i in 0..grid {
        for j in 0..grid {
            total += hv[i] * gv[j] * kernel[(i + grid - j) % grid];
        }
    }
    Ok(rho * (1.0 - rho) * total * du * du)
}

/// Field values of one run at equally spaced times.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSeries {
    pub h: Vec<f64>,
    pub g: Vec<f64>,
}

/// `Y_t(H) Y_{t+lag}(G)` for every admissible `t`, averaged over equivalent
/// series of the same run.
pub fn lagged_products(equivalent: &[FieldSeries], lag_steps: usize) -> Result<Vec<f64>, FluctError> {
    let len = equivalent.first().map_or(0, |s| s.h.len());
    for s in equivalent {
        if s.h.len() != len || s.g.len() != len {
            return Err(FluctError::LengthMismatch(s.h.len(), s.g.len()));
        }
    }
    if len <= lag_steps {
        return Ok(Vec::new());
    }
    let k = equivalent.len() as f64;
    Ok((0..len - lag_steps)
        .map(|t| equivalent.iter().map(|s| s.h[t] * s.g[t + lag_steps]).sum::<f64>() / k)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovarianceEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub batches: usize,
    pub pairs: usize,
}

impl CovarianceEstimate {
    /// Distance to `target` in standard errors.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.estimate - target) / self.stderr
    }
}

/// Mean of per-run product sequences with a batch-means standard error; each
/// run is cut into `batches_per_run` contiguous batches.
pub fn batch_means(runs: &[Vec<f64>], batches_per_run: usize) -> Result<CovarianceEstimate, FluctError> {
    let mut means = Vec::new();
    let mut weights = Vec::new();
    for run in runs {
        let size = run.len() / batches_per_run.max(1);
        if size == 0 {
            continue;
        }
        for b in 0..batches_per_run {
            let chunk = &run[b * size..(b + 1) * size];
            means.push(chunk.iter().sum::<f64>() / size as f64);
            weights.push(size as f64);
        }
    }
    let batches = means.len();
    if batches < MIN_BATCHES {
        return Err(FluctError::TooFewBatches { found: batches, min: MIN_BATCHES });
    }
    let total: f64 = weights.iter().sum();
    let estimate = means.iter().zip(&weights).map(|(m, w)| m * w).sum::<f64>() / total;
    let spread = means.iter().map(|m| (m - estimate).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok(CovarianceEstimate { estimate, stderr: (spread / batches as f64).sqrt(), batches, pairs: total as usize })
}

/// Empirical `E[Y_t(H) Y_{t+lag}(G)]` over runs; each run may hold several
/// equivalent series whose products are averaged before batching.
pub fn estimate_time_covariance(
    runs: &[Vec<FieldSeries>],
    lag_steps: usize,
    batches_per_run: usize,
) -> Result<CovarianceEstimate, FluctError> {
    let products = runs.iter().map(|r| lagged_products(r, lag_steps)).collect::<Result<Vec<_>, _>>()?;
    batch_means(&products, batches_per_run)
}

/// One stationary run on the one-dimensional torus started from the product
/// measure; returns the field of every mode at times `0, spacing, ...`.
pub fn stationary_series(
    model: &RateModel,
    side: usize,
    rho: f64,
    modes: &[FourierMode],
    spacing: f64,
    samples: usize,
    seed: u64,
    replica: u64,
) -> Result<StationaryRun, FluctError> {
    check_density(rho)?;
    if !(spacing > 0.0) || samples == 0 {
        return Err(FluctError::Sampling);
    }
    let g = Geometry::torus(1, side).map_err(KmcError::from)?;
    let weights = modes.iter().map(|m| m.site_weights(&g)).collect::<Result<Vec<_>, _>>()?;
    let eta = sample_initial(&InitialProfile::constant(rho), g, &mut stream_rng(seed, initial_stream(replica)))?;
    let mut sim = Simulator::new(*model, &eta, stream_rng(seed, dynamics_stream(replica)))?;
    let mut fields = vec![Vec::with_capacity(samples + 1); modes.len()];
    for step in 0..=samples {
        if step > 0 {
            sim.advance_to(step as f64 * spacing)?;
        }
        let occ = sim.occupancy();
        for (series, w) in fields.iter_mut().zip(&weights) {
            series.push(w.iter().zip(occ).map(|(w, &o)| w * (o as f64 - rho)).sum());
        }
    }
    Ok(StationaryRun { fields, events: sim.events(), froze: sim.froze() })
}

#[derive(Debug, Clone)]
pub struct StationaryRun {
    /// One time series per requested mode.
    pub fields: Vec<Vec<f64>>,
    pub events: u64,
    pub froze: bool,
}
