//! Batch experiments driven by TOML spec files, writing CSV tables and a JSON
//! run summary.
//!
//! A spec names the experiment kind and carries one section per kind; every
//! field has a default, so an empty file is a valid spec:
//!
//! ```toml
//! kind = "hydro"
//! seed = 7
//!
//! [model]
//! family = "porous_medium"   # or "ssep", "perturbed", "long_range"
//! m = 2
//! theta = 1.0                # perturbed only
//!
//! [geometry]
//! kind = "torus"             # or "box"
//! dim = 1
//!
//! [hydro]
//! sides = [128, 256, 512]
//! replicas = 30
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ergodic::{check_path, components_within, couple_bounds_mask, exchange_path, ComponentClass, Couple, ErgodicError};
use crate::fluct::{estimate_time_covariance, ou_covariance, stationary_series, FieldSeries, FluctError, FourierMode};
use crate::kmc::{empirical_profile, initial_stream, sample_initial, simulate, stream_rng, InitialProfile, KmcError, SimConfig};
use crate::lattice::{Configuration, Geometry, GeometryKind, LatticeError};
use crate::pme::{l1_distance, solve_pme, DensityField, PmeError};
use crate::rates::{find_gradient_decomposition, local_h, window_current, Order, RateError, RateModel};
use crate::spectral::{build_generator, spectral_gap, Dynamics, GapMethod, SpectralError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("cannot read or write {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    Kmc(#[from] KmcError),
    #[error(transparent)]
    Pme(#[from] PmeError),
    #[error(transparent)]
    Ergodic(#[from] ErgodicError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Fluct(#[from] FluctError),
    #[error("cannot build the worker pool: {0}")]
    Pool(String),
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Io { path: path.to_path_buf(), message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Hydro,
    Gap,
    Ergodic,
    Fluct,
    Check,
}

impl std::fmt::Display for Kind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Kind::Hydro => "hydro",
            Kind::Gap => "gap",
            Kind::Ergodic => "ergodic",
            Kind::Fluct => "fluct",
            Kind::Check => "check",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    PorousMedium,
    Ssep,
    Perturbed,
    LongRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub family: Family,
    pub m: u32,
    pub theta: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec { family: Family::PorousMedium, m: 2, theta: 1.0 }
    }
}

impl ModelSpec {
    fn order(&self) -> Result<Order, ExperimentError> {
        Order::from_value(self.m).ok_or_else(|| ExperimentError::Spec(format!("m must be 2 or 3, got {}", self.m)))
    }

    /// Rate model on a lattice of the given side.
    pub fn rate_model(&self, side: usize) -> Result<RateModel, ExperimentError> {
        Ok(match self.family {
            Family::PorousMedium => RateModel::porous(self.order()?),
            Family::Ssep => RateModel::Ssep,
            Family::Perturbed => RateModel::perturbed(self.order()?, self.theta, side)?,
            Family::LongRange => return Err(ExperimentError::Spec("long_range only applies to gap runs".into())),
        })
    }

    pub fn dynamics(&self, side: usize) -> Result<Dynamics, ExperimentError> {
        match self.family {
            Family::LongRange => Ok(Dynamics::LongRange),
            _ => Ok(Dynamics::Local(self.rate_model(side)?)),
        }
    }

    fn label(&self) -> String {
        match self.family {
            Family::PorousMedium => format!("porous_medium(m={})", self.m),
            Family::Ssep => "ssep".into(),
            Family::Perturbed => format!("perturbed(m={},theta={})", self.m, self.theta),
            Family::LongRange => "long_range".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySpec {
    pub kind: GeometryKind,
    pub dim: usize,
}

impl Default for GeometrySpec {
    fn default() -> Self {
        GeometrySpec { kind: GeometryKind::Torus, dim: 1 }
    }
}

impl GeometrySpec {
    pub fn build(&self, side: usize) -> Result<Geometry, ExperimentError> {
        Ok(Geometry::new(self.kind, self.dim, side)?)
    }
}

/// Particle numbers of a sweep: a rule applied to each side, or explicit values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Particles {
    Rule(ParticleRule),
    List(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticleRule {
    /// Every `k` from 0 to the volume.
    All,
    /// `ceil(volume / 2)`.
    Half,
    /// `floor(volume / 4)`.
    Quarter,
}

impl Particles {
    pub fn for_volume(&self, volume: usize) -> Vec<usize> {
        match self {
            Particles::Rule(ParticleRule::All) => (0..=volume).collect(),
            Particles::Rule(ParticleRule::Half) => vec![volume.div_ceil(2)],
            Particles::Rule(ParticleRule::Quarter) => vec![volume / 4],
            Particles::List(ks) => ks.iter().copied().filter(|&k| k <= volume).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HydroSpec {
    pub sides: Vec<usize>,
    pub replicas: usize,
    /// Initial profile `mean + amplitude cos(2 pi u)`.
    pub mean: f64,
    pub amplitude: f64,
    pub time: f64,
    /// Block radius is `side / block_divisor`.
    pub block_divisor: usize,
    pub pde_grid: usize,
    pub safety: f64,
    /// Largest acceptable L1 error at the largest side.
    pub tolerance: f64,
}

impl Default for HydroSpec {
    fn default() -> Self {
        HydroSpec {
            sides: vec![128, 256, 512],
            replicas: 30,
            mean: 0.5,
            amplitude: 0.25,
            time: 0.05,
            block_divisor: 32,
            pde_grid: 1024,
            safety: 0.4,
            tolerance: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub sides: Vec<usize>,
    pub particles: Particles,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec { sides: (4..=10).collect(), particles: Particles::Rule(ParticleRule::All) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluctSpec {
    pub side: usize,
    pub rho: f64,
    /// Positive Fourier frequencies; the cosine and sine modes of each are averaged.
    pub modes: Vec<i64>,
    pub lags: Vec<f64>,
    pub spacing: f64,
    /// Macroscopic length of each replica.
    pub duration: f64,
    pub replicas: usize,
    pub batches_per_replica: usize,
}

impl Default for FluctSpec {
    fn default() -> Self {
        FluctSpec {
            side: 512,
            rho: 0.5,
            modes: vec![1],
            lags: vec![0.0, 0.05, 0.1],
            spacing: 0.01,
            duration: 5.0,
            replicas: 10,
            batches_per_replica: 10,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub kind: Option<Kind>,
    pub seed: u64,
    pub model: ModelSpec,
    pub geometry: GeometrySpec,
    pub hydro: HydroSpec,
    pub gap: SweepSpec,
    pub ergodic: SweepSpec,
    pub fluct: FluctSpec,
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Spec(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Self::parse(&text)
    }

    /// Hex SHA-256 of the canonical serialisation.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("spec serialises");
        Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Check every precondition the requested kind depends on.
    pub fn validate(&self, kind: Kind) -> Result<(), ExperimentError> {
        if let Some(k) = self.kind {
            if k != kind {
                return Err(ExperimentError::Spec(format!("spec is for `{k}` but `{kind}` was requested")));
            }
        }
        let spec_err = |m: &str| Err(ExperimentError::Spec(m.to_string()));
        match kind {
            Kind::Hydro => {
                let h = &self.hydro;
                if h.sides.is_empty() || h.replicas == 0 || h.block_divisor == 0 || h.pde_grid < 2 {
                    return spec_err("hydro needs sides, replicas, a block divisor and a PDE grid");
                }
                if self.geometry.kind != GeometryKind::Torus || self.geometry.dim != 1 {
                    return spec_err("hydro runs on the one-dimensional torus");
                }
                if !matches!(self.model.family, Family::PorousMedium | Family::Perturbed) {
                    return spec_err("hydro compares constrained dynamics with the porous medium equation");
                }
                if !(h.time > 0.0) || !(h.safety > 0.0 && h.safety <= 1.0) {
                    return spec_err("hydro time must be positive and safety in (0, 1]");
                }
                let profile = InitialProfile::cosine(h.mean, h.amplitude);
                for &n in &h.sides {
                    let g = self.geometry.build(n)?;
                    self.model.rate_model(n)?.validate(&g)?;
                    sample_initial(&profile, g, &mut stream_rng(0, 0))?;
                    if n / h.block_divisor == 0 {
                        return spec_err("block radius side / block_divisor must be positive");
                    }
                }
            }
            Kind::Gap | Kind::Ergodic => {
                let s = if kind == Kind::Gap { &self.gap } else { &self.ergodic };
                if s.sides.is_empty() {
                    return spec_err("sweep needs at least one side");
                }
                for &n in &s.sides {
                    let g = self.geometry.build(n)?;
                    if kind == Kind::Ergodic {
                        self.model.rate_model(n)?.validate(&g)?;
                    } else if let Dynamics::Local(model) = self.model.dynamics(n)? {
                        model.validate(&g)?;
                    }
                }
            }
            Kind::Fluct => {
                let f = &self.fluct;
                let g = self.geometry.build(f.side)?;
                self.model.rate_model(f.side)?.validate(&g)?;
                if self.geometry.kind != GeometryKind::Torus || self.geometry.dim != 1 {
                    return spec_err("fluctuation runs use the one-dimensional torus");
                }
                if !(0.0..=1.0).contains(&f.rho) || !(f.spacing > 0.0) || !(f.duration > f.spacing) || f.replicas == 0 {
                    return spec_err("fluct needs rho in [0, 1], positive spacing, duration and replicas");
                }
                if f.modes.iter().any(|&z| z <= 0) || f.lags.iter().any(|&l| l < 0.0) {
                    return spec_err("modes must be positive and lags non-negative");
                }
            }
            Kind::Check => {}
        }
        Ok(())
    }
}

/// Options supplied on the command line.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Overrides the spec seed.
    pub seed: Option<u64>,
    /// Worker threads; the machine's parallelism when absent.
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub kind: Kind,
    pub spec_hash: String,
    pub seed: u64,
    pub jobs: usize,
    pub wall_seconds: f64,
    pub passed: bool,
    /// Artifacts missing because a stage failed.
    pub incomplete: bool,
    pub files: Vec<String>,
    pub events: u64,
    pub froze: bool,
    pub warnings: Vec<String>,
    pub details: serde_json::Value,
}

struct Output {
    dir: PathBuf,
    hash: String,
    files: Vec<String>,
}

impl Output {
    /// Write a CSV whose first line names the units and the spec hash.
    fn csv(&mut self, name: &str, units: &str, header: &str, rows: &[String]) -> Result<(), ExperimentError> {
        let mut text = format!("# units: {units}; spec-sha256: {}\n{header}\n", self.hash);
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        self.write(name, &text)
    }

    fn write(&mut self, name: &str, text: &str) -> Result<(), ExperimentError> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| io_error(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }
}

/// Run an experiment and write its artifacts into `options.out`.
pub fn run(kind: Kind, spec: &ExperimentSpec, options: &RunOptions) -> Result<RunSummary, ExperimentError> {
    let mut spec = spec.clone();
    if let Some(seed) = options.seed {
        spec.seed = seed;
    }
    spec.validate(kind)?;
    spec.kind = Some(kind);
    fs::create_dir_all(&options.out).map_err(|e| io_error(&options.out, e))?;
    let jobs = options.jobs.unwrap_or_else(rayon::current_num_threads).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let mut out = Output { dir: options.out.clone(), hash: spec.hash(), files: Vec::new() };
    let start = Instant::now();
    let result = pool.install(|| match kind {
        Kind::Hydro => run_hydro(&spec, &mut out),
        Kind::Gap => run_gap(&spec, &mut out),
        Kind::Ergodic => run_ergodic(&spec, &mut out),
        Kind::Fluct => run_fluct(&spec, &mut out),
        Kind::Check => run_check(&spec, &mut out),
    });
    let (stage, incomplete) = match result {
        Ok(stage) => (stage, false),
        Err(e) => (Stage { passed: false, details: serde_json::json!({ "error": e.to_string() }), ..Stage::default() }, true),
    };
    let summary = RunSummary {
        kind,
        spec_hash: out.hash.clone(),
        seed: spec.seed,
        jobs,
        wall_seconds: start.elapsed().as_secs_f64(),
        passed: stage.passed && !incomplete,
        incomplete,
        files: out.files.clone(),
        events: stage.events,
        froze: stage.froze,
        warnings: stage.warnings,
        details: stage.details,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serialises");
    out.write("run_summary.json", &json)?;
    Ok(summary)
}

#[derive(Debug, Default)]
struct Stage {
    passed: bool,
    events: u64,
    froze: bool,
    warnings: Vec<String>,
    details: serde_json::Value,
}

fn float(x: f64) -> String {
    format!("{x:.12e}")
}

/// Replica-averaged empirical profile at the final time and its L1 distance to
/// the PDE solution, for one lattice side.
#[derive(Debug, Clone, Serialize)]
pub struct HydroResult {
    pub side: usize,
    pub block_radius: usize,
    pub l1_error: f64,
    pub events: u64,
    pub froze: bool,
    #[serde(skip)]
    pub empirical: DensityField,
}

/// Simulate every replica of one side and compare with `reference`.
pub fn hydro_side(
    model: &RateModel,
    side: usize,
    spec: &HydroSpec,
    seed: u64,
    first_replica: u64,
    reference: &DensityField,
) -> Result<HydroResult, ExperimentError> {
    let g = Geometry::torus(1, side)?;
    let profile = InitialProfile::cosine(spec.mean, spec.amplitude);
    let l = side / spec.block_divisor;
    let runs: Vec<Result<(DensityField, u64, bool), ExperimentError>> = (0..spec.replicas as u64)
        .into_par_iter()
        .map(|r| {
            let replica = first_replica + r;
            let eta = sample_initial(&profile, g, &mut stream_rng(seed, initial_stream(replica)))?;
            let cfg = SimConfig {
                model: *model,
                geometry: g,
                horizon: spec.time,
                snapshot_times: vec![spec.time],
                seed,
                replica,
            };
            let traj = simulate(&eta, &cfg)?;
            Ok((empirical_profile(&traj, spec.time, l)?, traj.events, traj.froze))
        })
        .collect();
    let mut fields = Vec::with_capacity(runs.len());
    let (mut events, mut froze) = (0, false);
    for r in runs {
        let (f, e, z) = r?;
        fields.push(f);
        events += e;
        froze |= z;
    }
    let empirical = DensityField::mean(&fields)?;
    let l1_error = l1_distance(&empirical, reference)?;
    Ok(HydroResult { side, block_radius: l, l1_error, events, froze, empirical })
}

/// PDE reference for the hydro profile.
pub fn hydro_reference(spec: &HydroSpec, m: u32) -> Result<DensityField, ExperimentError> {
    let rho0 = DensityField::from_fn(1, spec.pde_grid, |u| {
        spec.mean + spec.amplitude * (2.0 * std::f64::consts::PI * u[0]).cos()
    })?;
    Ok(solve_pme(&rho0, m, spec.time, spec.safety)?)
}

fn run_hydro(spec: &ExperimentSpec, out: &mut Output) -> Result<Stage, ExperimentError> {
    let h = &spec.hydro;
    let m = spec.model.order()?.value();
    let reference = hydro_reference(h, m)?;
    out.csv(
        "hydro_pde.csv",
        "u macroscopic position, density particles per site",
        "u,density",
        &(0..reference.side()).map(|i| format!("{},{}", float(reference.position(i)[0]), float(reference.values()[i]))).collect::<Vec<_>>(),
    )?;
    let mut results = Vec::new();
    for (i, &n) in h.sides.iter().enumerate() {
        let model = spec.model.rate_model(n)?;
        let res = hydro_side(&model, n, h, spec.seed, (i * h.replicas) as u64, &reference)?;
        let rows: Vec<String> = (0..n)
            .map(|x| {
                let u = res.empirical.position(x)[0];
                format!("{},{},{}", float(u), float(res.empirical.values()[x]), float(reference.nearest(&[u])))
            })
            .collect();
        out.csv(
            &format!("hydro_profile_N{n}.csv"),
            &format!("u macroscopic position, densities particles per site at t={}", h.time),
            "u,empirical,pde",
            &rows,
        )?;
        results.push(res);
    }
    let monotone = results.windows(2).all(|w| w[1].l1_error < w[0].l1_error);
    let last = results.last().map_or(f64::INFINITY, |r| r.l1_error);
    let passed = monotone && last < h.tolerance;
    out.csv(
        "hydro_l1.csv",
        "l1 error dimensionless",
        "side,block_radius,l1_error,tolerance",
        &results.iter().map(|r| format!("{},{},{},{}", r.side, r.block_radius, float(r.l1_error), h.tolerance)).collect::<Vec<_>>(),
    )?;
    Ok(Stage {
        passed,
        events: results.iter().map(|r| r.events).sum(),
        froze: results.iter().any(|r| r.froze),
        warnings: Vec::new(),
        details: serde_json::json!({ "monotone": monotone, "results": results }),
    })
}

fn sweep_cells(spec: &ExperimentSpec, sweep: &SweepSpec) -> Result<Vec<(usize, usize)>, ExperimentError> {
    let mut cells = Vec::new();
    for &n in &sweep.sides {
        let g = spec.geometry.build(n)?;
        for k in sweep.particles.for_volume(g.volume()) {
            cells.push((n, k));
        }
    }
    Ok(cells)
}

fn run_gap(spec: &ExperimentSpec, out: &mut Output) -> Result<Stage, ExperimentError> {
    let cells = sweep_cells(spec, &spec.gap)?;
    let results: Vec<Result<(usize, usize, f64, usize, GapMethod, f64), ExperimentError>> = cells
        .par_iter()
        .map(|&(n, k)| {
            let start = Instant::now();
            let g = spec.geometry.build(n)?;
            let gen = build_generator(g, k, spec.model.dynamics(n)?)?;
            let gap = spectral_gap(&gen)?;
            Ok((n, k, gap.value, gap.zero_multiplicity, gap.method, start.elapsed().as_secs_f64()))
        })
        .collect();
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    let mut timings = Vec::new();
    for r in results {
        let (n, k, gap, zeros, method, secs) = r?;
        if method == GapMethod::Degenerate {
            warnings.push(format!("N={n} k={k}: degenerate hyperplane with a single state"));
        }
        let method = serde_json::to_value(method).expect("method serialises");
        rows.push(format!(
            "{},{},{},{},{},{},{}",
            spec.model.label().replace(',', ";"),
            spec.geometry.kind,
            n,
            k,
            float(gap),
            zeros,
            method.as_str().unwrap_or("")
        ));
        timings.push(serde_json::json!({ "N": n, "k": k, "wall_seconds": secs }));
    }
    out.csv(
        "gap.csv",
        "gap per unit time of the generator without diffusive speed-up",
        "model,geometry,N,k,gap,zero_multiplicity,method",
        &rows,
    )?;
    Ok(Stage { passed: true, warnings, details: serde_json::json!({ "timings": timings }), ..Stage::default() })
}

fn run_ergodic(spec: &ExperimentSpec, out: &mut Output) -> Result<Stage, ExperimentError> {
    let cells = sweep_cells(spec, &spec.ergodic)?;
    let reports: Vec<Result<_, ExperimentError>> = cells
        .par_iter()
        .map(|&(n, k)| {
            let g = spec.geometry.build(n)?;
            Ok(components_within(g, k, &spec.model.rate_model(n)?, crate::ergodic::DEFAULT_BUDGET)?)
        })
        .collect();
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for r in reports {
        let r = r?;
        rows.push(format!(
            "{},{},{},{},{},{},{},{}",
            r.side,
            r.k,
            r.total_states,
            r.components.len(),
            r.count(ComponentClass::Mobile),
            r.count(ComponentClass::BlockedSingleton),
            r.count(ComponentClass::Full),
            r.count(ComponentClass::Other)
        ));
        all.push(r);
    }
    out.csv(
        "ergodic.csv",
        "counts of configurations and components",
        "N,k,states,components,mobile,blocked_singleton,full,other",
        &rows,
    )?;
    out.write("components.json", &serde_json::to_string_pretty(&all).expect("reports serialise"))?;
    Ok(Stage { passed: true, ..Stage::default() })
}

fn run_fluct(spec: &ExperimentSpec, out: &mut Output) -> Result<Stage, ExperimentError> {
    let f = &spec.fluct;
    let model = spec.model.rate_model(f.side)?;
    let samples = (f.duration / f.spacing).round() as usize;
    let modes: Vec<FourierMode> = f.modes.iter().flat_map(|&z| [FourierMode::one_dimensional(z), FourierMode::one_dimensional(-z)]).collect();
    let runs: Vec<Result<_, FluctError>> = (0..f.replicas as u64)
        .into_par_iter()
        .map(|r| stationary_series(&model, f.side, f.rho, &modes, f.spacing, samples, spec.seed, r))
        .collect();
    let mut series = Vec::new();
    let (mut events, mut froze) = (0, false);
    for r in runs {
        let r = r?;
        events += r.events;
        froze |= r.froze;
        series.push(r.fields);
    }
    let mut rows = Vec::new();
    let mut passed = true;
    let mut details = Vec::new();
    for (i, &z) in f.modes.iter().enumerate() {
        let per_run: Vec<Vec<FieldSeries>> = series
            .iter()
            .map(|fields| {
                [2 * i, 2 * i + 1].iter().map(|&j| FieldSeries { h: fields[j].clone(), g: fields[j].clone() }).collect()
            })
            .collect();
        for &lag in &f.lags {
            let lag_steps = (lag / f.spacing).round() as usize;
            let predicted = if lag_steps == 0 {
                f.rho * (1.0 - f.rho)
            } else {
                ou_covariance(&modes[2 * i], &modes[2 * i], lag_steps as f64 * f.spacing, f.rho)?
            };
            let est = estimate_time_covariance(&per_run, lag_steps, f.batches_per_replica)?;
            let z_score = est.z_score(predicted);
            passed &= z_score.abs() <= 4.0;
            rows.push(format!(
                "{},{},{},{},{},{}",
                z,
                float(lag_steps as f64 * f.spacing),
                float(predicted),
                float(est.estimate),
                float(est.stderr),
                est.batches
            ));
            details.push(serde_json::json!({ "mode": z, "lag": lag, "z_score": z_score }));
        }
    }
    out.csv(
        "covariance.csv",
        "lag macroscopic time, covariances of fluctuation fields",
        "mode,lag,predicted,estimated,stderr,batches",
        &rows,
    )?;
    Ok(Stage { passed, events, froze, warnings: Vec::new(), details: serde_json::json!(details) })
}

/// One property of the shipped invariant suite.
#[derive(Debug, Clone, Serialize)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Fast exact properties: gradient identity, reversibility, irreducibility
/// threshold, couple bounds and the path checker.
pub fn property_suite(seed: u64) -> Vec<PropertyResult> {
    let mut results = Vec::new();
    let mut push = |name, outcome: Result<String, String>| {
        let (passed, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        results.push(PropertyResult { name, passed, detail });
    };

    push("gradient identity m=2", {
        let bad = (0..16usize)
            .filter(|w| {
                let eta = |o: isize| ((w >> (o + 1)) & 1) as u8;
                window_current(Order::Two, eta) != local_h(eta) - local_h(|o| eta(o + 1))
            })
            .count();
        if bad == 0 { Ok("16 windows".into()) } else { Err(format!("{bad} windows differ")) }
    });
    push("gradient decomposition m=3", match find_gradient_decomposition(&RateModel::porous(Order::Three)) {
        Ok(d) => Ok(format!("h reads {} sites", d.len)),
        Err(e) => Err(e.to_string()),
    });
    push("generator symmetry", {
        let mut bad = Vec::new();
        for n in 2..=6 {
            for k in 0..=n {
                for d in [Dynamics::Local(RateModel::porous(Order::Two)), Dynamics::LongRange] {
                    if matches!(d, Dynamics::Local(model) if n < model.min_side()) {
                        continue;
                    }
                    let ok = Geometry::torus(1, n)
                        .ok()
                        .and_then(|g| build_generator(g, k, d).ok())
                        .is_some_and(|g| g.is_symmetric() && g.max_row_sum() == 0.0 && g.max_column_sum() < 1e-12);
                    if !ok {
                        bad.push(format!("N={n} k={k}"));
                    }
                }
            }
        }
        if bad.is_empty() { Ok("N <= 6, all k".into()) } else { Err(bad.join(" ")) }
    });
    push("irreducibility threshold", {
        let mut bad = Vec::new();
        for n in 4..=10 {
            for k in 0..=n {
                let report = Geometry::torus(1, n)
                    .map_err(ErgodicError::from)
                    .and_then(|g| components_within(g, k, &RateModel::porous(Order::Two), 1 << 20));
                let ok = report.is_ok_and(|r| {
                    if 3 * k > n {
                        r.components.len() == 1
                    } else {
                        r.count(ComponentClass::Other) == 0 && r.count(ComponentClass::Mobile) <= 1
                    }
                });
                if !ok {
                    bad.push(format!("N={n} k={k}"));
                }
            }
        }
        if bad.is_empty() { Ok("N <= 10".into()) } else { Err(bad.join(" ")) }
    });
    push("couple bounds", {
        let side = 14;
        let bad = (0u64..1 << side)
            .filter(|&mask| {
                let r = couple_bounds_mask(mask, side, side - 1);
                (3 * r.k > side && !r.close_bound_holds) || r.within.iter().any(|w| !w.holds)
            })
            .count();
        if bad == 0 { Ok(format!("all configurations of the box of {side} sites")) } else { Err(format!("{bad} violations")) }
    });
    push("exchange paths", {
        use rand::Rng;
        let mut rng = stream_rng(seed, u64::MAX);
        let g = Geometry::frozen_box(30).expect("valid box");
        let model = RateModel::porous(Order::Two);
        let mut failures = 0;
        let mut built = 0;
        while built < 200 {
            let z = rng.gen_range(0..10);
            let x = rng.gen_range(z + 2..29);
            let y = rng.gen_range(x + 1..30);
            let mut occ: Vec<u8> = (0..30).map(|_| rng.gen_range(0..2)).collect();
            occ[z] = 1;
            occ[z + 1] = 1;
            occ[x] = 1;
            occ[y] = 0;
            let eta = Configuration::from_occupancy(g, &occ).expect("0/1 occupancy");
            let ok = exchange_path(&eta, &model, x, y, Couple { z, distance: 1 }).is_ok_and(|p| {
                let bonds: Vec<(usize, usize)> = p.steps.iter().map(|s| (s.a, s.b)).collect();
                let target = eta.swapped(x, y).expect("distinct sites");
                check_path(&model, &eta, &bonds, &target).is_ok()
                    && p.configuration_count() == 5 * (y - x - 1) + 4 * (x - z - 2) + 2
            });
            failures += usize::from(!ok);
            built += 1;
        }
        if failures == 0 { Ok(format!("{built} paths")) } else { Err(format!("{failures} of {built} paths failed")) }
    });
    results
}

fn run_check(spec: &ExperimentSpec, out: &mut Output) -> Result<Stage, ExperimentError> {
    let results = property_suite(spec.seed);
    let rows: Vec<String> = results.iter().map(|r| format!("{},{},{}", r.name, r.passed, r.detail.replace(',', ";"))).collect();
    out.csv("check.csv", "pass/fail per property", "property,passed,detail", &rows)?;
    let passed = results.iter().all(|r| r.passed);
    Ok(Stage { passed, details: serde_json::to_value(&results).expect("results serialise"), ..Stage::default() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_spec_uses_defaults() {
        let spec = ExperimentSpec::parse("").unwrap();
        assert_eq!(spec, ExperimentSpec::default());
        assert_eq!(spec.hydro.sides, vec![128, 256, 512]);
        assert_eq!(spec.hash(), ExperimentSpec::default().hash());
    }

    #[test]
    fn parses_sections() {
        let spec = ExperimentSpec::parse(
            r#"
            kind = "gap"
            seed = 3
            [model]
            family = "perturbed"
            theta = 1.5
            [geometry]
            kind = "box"
            [gap]
            sides = [6, 8]
            particles = "half"
            "#,
        )
        .unwrap();
        assert_eq!(spec.kind, Some(Kind::Gap));
        assert_eq!(spec.model.family, Family::Perturbed);
        assert_eq!(spec.gap.particles.for_volume(7), vec![4]);
        assert!(spec.validate(Kind::Gap).is_ok());
        assert!(spec.validate(Kind::Hydro).is_err());
        let list = ExperimentSpec::parse("[ergodic]\nparticles = [1, 2, 99]").unwrap();
        assert_eq!(list.ergodic.particles.for_volume(5), vec![1, 2]);
        assert!(ExperimentSpec::parse("bogus = 1").is_err());
        assert!(ExperimentSpec::parse("[model]\nm = 4").unwrap().validate(Kind::Ergodic).is_err());
    }

    #[test]
    fn gap_run_writes_csv_and_flags_degenerate_rows() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ExperimentSpec::parse("[gap]\nsides = [5]\nparticles = [0, 2]").unwrap();
        let opts = RunOptions { out: dir.path().to_path_buf(), seed: None, jobs: Some(1) };
        let summary = run(Kind::Gap, &spec, &opts).unwrap();
        assert!(summary.passed);
        assert_eq!(summary.warnings.len(), 1);
        let csv = fs::read_to_string(dir.path().join("gap.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with("# units:") && lines[0].contains(&summary.spec_hash));
        assert_eq!(lines.len(), 4);
        assert!(lines[2].ends_with("degenerate"));
        assert!(dir.path().join("run_summary.json").exists());
    }

    #[test]
    fn reruns_are_byte_identical() {
        let spec = ExperimentSpec::parse("[hydro]\nsides = [32, 64]\nreplicas = 2\ntime = 0.01\npde_grid = 128\ntolerance = 1.0").unwrap();
        let mut bodies = Vec::new();
        for jobs in [1, 2] {
            let dir = tempfile::tempdir().unwrap();
            let opts = RunOptions { out: dir.path().to_path_buf(), seed: Some(5), jobs: Some(jobs) };
            let summary = run(Kind::Hydro, &spec, &opts).unwrap();
            assert!(!summary.incomplete);
            bodies.push(fs::read_to_string(dir.path().join("hydro_profile_N64.csv")).unwrap());
        }
        assert_eq!(bodies[0], bodies[1]);
    }

    #[test]
    fn ergodic_run_reports_components() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ExperimentSpec::parse("[ergodic]\nsides = [9]\nparticles = [3]").unwrap();
        let opts = RunOptions { out: dir.path().to_path_buf(), seed: None, jobs: Some(1) };
        run(Kind::Ergodic, &spec, &opts).unwrap();
        let csv = fs::read_to_string(dir.path().join("ergodic.csv")).unwrap();
        assert_eq!(csv.lines().nth(2).unwrap(), "9,3,84,4,1,3,0,0");
    }

    #[test]
    fn property_suite_passes() {
        for r in property_suite(0) {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
