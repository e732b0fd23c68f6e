//! Rejection-free kinetic Monte Carlo for the diffusively rescaled dynamics.
//!
//! Every bond carries its exchange rate in a sum tree; an event picks a bond
//! proportionally to its rate, swaps its two sites and refreshes only the bonds
//! whose constraint windows contain one of them. Time is kept in macroscopic
//! units, so a holding time is `Exp(1) / (N^2 * total rate)`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{cyclic_box_sum, Configuration, Geometry, LatticeError};
use crate::pme::DensityField;
use crate::rates::{expected_local, LocalFunction, Order, RateError, RateModel, RateTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KmcError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error("initial density {value} at {position:?} outside [0, 1]")]
    ProfileOutOfRange { value: f64, position: Vec<f64> },
    #[error("initial density {value} at {position:?} violates the margin {margin}")]
    ProfileOutsideMargin { value: f64, position: Vec<f64>, margin: f64 },
    #[error("horizon must be finite and positive, got {0}")]
    InvalidHorizon(f64),
    #[error("snapshot times must increase strictly and lie in [0, horizon]")]
    InvalidSnapshots,
    #[error("cannot run backwards from {now} to {target}")]
    Backwards { now: f64, target: f64 },
    #[error("no snapshot recorded at time {0}")]
    UnrecordedTime(f64),
    #[error("initial configuration lives on a different geometry than the run")]
    GeometryMismatch,
}

/// Generator for one random stream of a seeded experiment.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream used to sample the initial state of a replica.
pub fn initial_stream(replica: u64) -> u64 {
    2 * replica
}

/// Stream driving the dynamics of a replica.
pub fn dynamics_stream(replica: u64) -> u64 {
    2 * replica + 1
}

/// A density profile on the continuum torus.
#[derive(Clone)]
pub struct InitialProfile {
    density: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    margin: Option<f64>,
}

impl fmt::Debug for InitialProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InitialProfile").field("margin", &self.margin).finish_non_exhaustive()
    }
}

impl InitialProfile {
    pub fn new(density: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        InitialProfile { density: Arc::new(density), margin: None }
    }

    pub fn constant(rho: f64) -> Self {
        Self::new(move |_| rho)
    }

    /// `mean + amplitude * cos(2 pi u_1)`.
    pub fn cosine(mean: f64, amplitude: f64) -> Self {
        Self::new(move |u| mean + amplitude * (2.0 * std::f64::consts::PI * u[0]).cos())
    }

    /// Declare `margin <= rho0 <= 1 - margin`, checked at every sampled point.
    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = Some(margin);
        self
    }

    pub fn margin(&self) -> Option<f64> {
        self.margin
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        (self.density)(u)
    }

    fn checked(&self, u: Vec<f64>) -> Result<f64, KmcError> {
        let value = self.eval(&u);
        if !(0.0..=1.0).contains(&value) {
            return Err(KmcError::ProfileOutOfRange { value, position: u });
        }
        if let Some(margin) = self.margin {
            if value < margin || value > 1.0 - margin {
                return Err(KmcError::ProfileOutsideMargin { value, position: u, margin });
            }
        }
        Ok(value)
    }
}

/// Independent Bernoulli(`rho0(x/N)`) occupancies.
pub fn sample_initial<R: Rng + ?Sized>(
    profile: &InitialProfile,
    geometry: Geometry,
    rng: &mut R,
) -> Result<Configuration, KmcError> {
    let mut eta = Configuration::empty(geometry);
    for x in 0..geometry.volume() {
        let p = profile.checked(geometry.macroscopic(x))?;
        if rng.gen::<f64>() < p {
            eta.set(x, true);
        }
    }
    Ok(eta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: RateModel,
    pub geometry: Geometry,
    /// Macroscopic horizon.
    pub horizon: f64,
    pub snapshot_times: Vec<f64>,
    pub seed: u64,
    pub replica: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), KmcError> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(KmcError::InvalidHorizon(self.horizon));
        }
        let in_range = self.snapshot_times.iter().all(|&t| (0.0..=self.horizon).contains(&t));
        let increasing = self.snapshot_times.windows(2).all(|w| w[0] < w[1]);
        if !in_range || !increasing {
            return Err(KmcError::InvalidSnapshots);
        }
        self.model.validate(&self.geometry)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub geometry: Geometry,
    pub model: RateModel,
    pub seed: u64,
    pub replica: u64,
    pub snapshots: Vec<(f64, Configuration)>,
    pub events: u64,
    /// The run reached a configuration with no allowed move before the horizon.
    pub froze: bool,
}

impl Trajectory {
    pub fn snapshot(&self, t: f64) -> Result<&Configuration, KmcError> {
        self.snapshots
            .iter()
            .find(|(s, _)| (s - t).abs() <= 1e-12 * t.abs().max(1.0))
            .map(|(_, eta)| eta)
            .ok_or(KmcError::UnrecordedTime(t))
    }
}

/// Complete binary tree of partial sums over the leaves.
#[derive(Debug, Clone)]
struct SumTree {
    size: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn new(leaves: usize) -> Self {
        let size = leaves.next_power_of_two().max(1);
        SumTree { size, nodes: vec![0.0; 2 * size] }
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    #[inline]
    fn set(&mut self, leaf: usize, value: f64) {
        let mut i = self.size + leaf;
        if self.nodes[i] == value {
            return;
        }
        self.nodes[i] = value;
        while i > 1 {
            i >>= 1;
            // recomputed from the children, so no rounding drift accumulates
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    /// Leaf whose cumulative interval contains `u`, for `0 <= u < total`.
    /// Rounding can land on an empty leaf; callers check the rate.
    #[inline]
    fn find(&self, mut u: f64) -> usize {
        let mut i = 1;
        while i < self.size {
            let left = self.nodes[2 * i];
            let right = (u >= left) as usize;
            u -= left * right as f64;
            i = 2 * i + right;
        }
        i - self.size
    }

    #[inline]
    fn leaf(&self, leaf: usize) -> f64 {
        self.nodes[self.size + leaf]
    }

    #[inline]
    fn put(&mut self, leaf: usize, value: f64) {
        self.nodes[self.size + leaf] = value;
    }

    /// Recompute the ancestors of the leaves `first..=last`.
    #[inline]
    fn fix(&mut self, first: usize, last: usize) {
        let (mut lo, mut hi) = (self.size + first, self.size + last);
        while lo > 1 {
            lo >>= 1;
            hi >>= 1;
            for i in lo..=hi {
                self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
            }
        }
    }
}

/// Constraint windows of a one-dimensional lattice read from a padded copy
/// of the occupancies: the window of bond `b` is `pad[b..b + width]`.
#[derive(Debug, Clone)]
struct Line {
    lo: isize,
    width: usize,
    side: usize,
    torus: bool,
    pad: Vec<u8>,
}

impl Line {
    fn new(lo: isize, width: usize, geometry: &Geometry, occupancy: &[u8]) -> Self {
        let side = geometry.side();
        let torus = geometry.is_torus();
        // eight spare bytes so every window can be read as one u64
        let pad = (0..side + width - 1 + 8)
            .map(|j| {
                let s = j as isize + lo;
                if torus {
                    occupancy[s.rem_euclid(side as isize) as usize]
                } else if (0..side as isize).contains(&s) && j < side + width - 1 {
                    occupancy[s as usize]
                } else {
                    0
                }
            })
            .collect();
        Line { lo, width, side, torus, pad }
    }

    #[inline]
    fn write(&mut self, site: usize, value: u8) {
        let j = site as isize - self.lo;
        if self.torus {
            let j = j.rem_euclid(self.side as isize) as usize;
            self.pad[j] = value;
            if j + self.side < self.side + self.width - 1 {
                self.pad[j + self.side] = value;
            }
        } else {
            self.pad[j as usize] = value;
        }
    }

    /// Gather the 0/1 bytes of the window into the bits of an integer.
    #[inline]
    fn packed(&self, bond: usize) -> usize {
        let bytes: [u8; 8] = self.pad[bond..bond + 8].try_into().expect("padded");
        let mask = u64::MAX >> (64 - 8 * self.width);
        let word = u64::from_le_bytes(bytes) & mask;
        (word.wrapping_mul(0x0102_0408_1020_4080) >> 56) as usize
    }
}

const OUTSIDE: u32 = u32::MAX;

/// A running simulation that can be advanced to any later macroscopic time.
#[derive(Debug, Clone)]
pub struct Simulator {
    model: RateModel,
    geometry: Geometry,
    table: RateTable,
    occupancy: Vec<u8>,
    /// Bond endpoints `(x, y)`.
    ends: Vec<(u32, u32)>,
    /// Sites of each bond's constraint window, `OUTSIDE` for the frozen boundary.
    windows: Vec<u32>,
    /// CSR lists of bonds whose windows contain each site.
    touch_start: Vec<u32>,
    touch: Vec<u32>,
    tree: SumTree,
    line: Option<Line>,
    speed: f64,
    time: f64,
    events: u64,
    froze: bool,
    rng: ChaCha8Rng,
}

impl Simulator {
    pub fn new(model: RateModel, initial: &Configuration, rng: ChaCha8Rng) -> Result<Self, KmcError> {
        let geometry = *initial.geometry();
        model.validate(&geometry)?;
        let table = RateTable::new(&model, &geometry);
        let width = table.width();
        let bonds = geometry.bonds();
        let mut ends = Vec::with_capacity(bonds.len());
        let mut windows = Vec::with_capacity(bonds.len() * width);
        let mut counts = vec![0u32; geometry.volume() + 1];
        for &(x, axis, y) in &bonds {
            ends.push((x as u32, y as u32));
            for i in 0..width {
                let site = geometry.neighbor(x, axis, table.lo() + i as isize);
                let s = site.map_or(OUTSIDE, |s| s as u32);
                windows.push(s);
                if s != OUTSIDE {
                    counts[s as usize + 1] += 1;
                }
            }
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let mut fill = counts.clone();
        let mut touch = vec![0u32; counts[geometry.volume()] as usize];
        for b in 0..bonds.len() {
            for &s in &windows[b * width..(b + 1) * width] {
                if s != OUTSIDE {
                    touch[fill[s as usize] as usize] = b as u32;
                    fill[s as usize] += 1;
                }
            }
        }
        let n = geometry.side() as f64;
        let mut sim = Simulator {
            model,
            geometry,
            table,
            occupancy: initial.to_occupancy(),
            ends,
            windows,
            touch_start: counts,
            touch,
            tree: SumTree::new(bonds.len()),
            line: None,
            speed: n * n,
            time: 0.0,
            events: 0,
            froze: false,
            rng,
        };
        for b in 0..sim.ends.len() {
            let r = sim.bond_rate(b);
            sim.tree.set(b, r);
        }
        if geometry.dim() == 1 {
            sim.line = Some(Line::new(sim.table.lo(), width, &geometry, &sim.occupancy));
        }
        Ok(sim)
    }

    pub fn model(&self) -> &RateModel {
        &self.model
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn froze(&self) -> bool {
        self.froze
    }

    /// Sum of the (unaccelerated) bond exchange rates of the current state.
    pub fn total_rate(&self) -> f64 {
        self.tree.total()
    }

    pub fn occupancy(&self) -> &[u8] {
        &self.occupancy
    }

    pub fn configuration(&self) -> Configuration {
        Configuration::from_occupancy(self.geometry, &self.occupancy).expect("occupancy is 0/1")
    }

    #[inline]
    fn bond_rate(&self, b: usize) -> f64 {
        let width = self.table.width();
        let mut packed = 0usize;
        for (i, &s) in self.windows[b * width..(b + 1) * width].iter().enumerate() {
            if s != OUTSIDE {
                packed |= (self.occupancy[s as usize] as usize) << i;
            }
        }
        self.table.rate(packed)
    }

    #[inline]
    fn refresh_around(&mut self, site: usize) {
        let (lo, hi) = (self.touch_start[site] as usize, self.touch_start[site + 1] as usize);
        for k in lo..hi {
            let b = self.touch[k] as usize;
            let r = self.bond_rate(b);
            self.tree.set(b, r);
        }
    }

    /// Refresh the bonds around the exchanged bond `b` of a one-dimensional
    /// lattice. Its own rate is unchanged since constraints skip both ends.
    #[inline]
    fn refresh_line(&mut self, b: usize, x: usize, y: usize) {
        let line = self.line.as_mut().expect("one-dimensional lattice");
        line.write(x, self.occupancy[x]);
        line.write(y, self.occupancy[y]);
        let n = self.ends.len() as isize;
        let (hi, lo) = (line.width as isize - 1 + line.lo, line.lo);
        // bonds whose windows contain b or b + 1
        let first = b as isize - hi;
        let last = b as isize + 1 - lo;
        let line = &*line;
        let mut update = |from: isize, to: isize| {
            let (from, to) = (from.max(0) as usize, to.min(n - 1) as usize);
            if from > to {
                return;
            }
            for c in from..=to {
                if c != b {
                    self.tree.put(c, self.table.rate(line.packed(c)));
                }
            }
            self.tree.fix(from, to);
        };
        if line.torus && first < 0 {
            update(first + n, n - 1);
            update(0, last);
        } else if line.torus && last >= n {
            update(first, n - 1);
            update(0, last - n);
        } else {
            update(first, last);
        }
    }

    /// Run until macroscopic time `target`. Holding times are memoryless, so
    /// stopping at `target` and resuming later samples the same process.
    pub fn advance_to(&mut self, target: f64) -> Result<(), KmcError> {
        if target < self.time {
            return Err(KmcError::Backwards { now: self.time, target });
        }
        loop {
            let total = self.tree.total();
            if total <= 0.0 {
                if target > self.time {
                    self.froze = true;
                }
                self.time = target;
                return Ok(());
            }
            let e = -(1.0 - self.rng.gen::<f64>()).ln();
            let dt = e / (self.speed * total);
            if self.time + dt > target {
                self.time = target;
                return Ok(());
            }
            self.time += dt;
            let b = loop {
                let b = self.tree.find(self.rng.gen::<f64>() * total);
                if self.tree.leaf(b) > 0.0 {
                    break b;
                }
            };
            let (x, y) = self.ends[b];
            let (x, y) = (x as usize, y as usize);
            self.occupancy.swap(x, y);
            if self.line.is_some() {
                self.refresh_line(b, x, y);
            } else {
                self.refresh_around(x);
                self.refresh_around(y);
            }
            self.events += 1;
        }
    }
}

/// Run one trajectory and record the requested snapshots.
pub fn simulate(initial: &Configuration, cfg: &SimConfig) -> Result<Trajectory, KmcError> {
    cfg.validate()?;
    if initial.geometry() != &cfg.geometry {
        return Err(KmcError::GeometryMismatch);
    }
    let rng = stream_rng(cfg.seed, dynamics_stream(cfg.replica));
    let mut sim = Simulator::new(cfg.model, initial, rng)?;
    let mut snapshots = Vec::with_capacity(cfg.snapshot_times.len());
    for &t in &cfg.snapshot_times {
        sim.advance_to(t)?;
        snapshots.push((t, sim.configuration()));
    }
    sim.advance_to(cfg.horizon)?;
    Ok(Trajectory {
        geometry: cfg.geometry,
        model: cfg.model,
        seed: cfg.seed,
        replica: cfg.replica,
        snapshots,
        events: sim.events(),
        froze: sim.froze(),
    })
}

/// Block-averaged density `eta^l(x)` on the grid `x / N`.
pub fn configuration_profile(eta: &Configuration, l: usize) -> Result<DensityField, KmcError> {
    let g = eta.geometry();
    let values = eta.block_average_field(l)?;
    Ok(DensityField::new(g.dim(), g.side(), values).expect("block averages lie in [0, 1]"))
}

/// Empirical profile of a recorded snapshot.
pub fn empirical_profile(traj: &Trajectory, t: f64, l: usize) -> Result<DensityField, KmcError> {
    configuration_profile(traj.snapshot(t)?, l)
}

/// Mean over sites of `|avg_{|y| <= l} psi(tau_{x+y} eta) - psi~(eta^l(x))|`,
/// with `psi` read along `axis`.
pub fn replacement_average(
    eta: &Configuration,
    l: usize,
    psi: LocalFunction,
    axis: usize,
) -> Result<f64, KmcError> {
    let g = *eta.geometry();
    if !g.is_torus() {
        return Err(LatticeError::NotTorus.into());
    }
    if 2 * l + 1 > g.side() {
        return Err(LatticeError::BlockTooLarge { radius: l, side: g.side() }.into());
    }
    let local: Vec<f64> = (0..g.volume())
        .map(|x| {
            let window = |o: isize| eta.occupancy_or_empty(g.neighbor(x, axis, o));
            psi.eval(window) as f64
        })
        .collect();
    let cube = ((2 * l + 1) as f64).powi(g.dim() as i32);
    let psi_avg = cyclic_box_sum(&g, &local, l);
    let density = eta.block_average_field(l)?;
    let mut total = 0.0;
    for (s, rho) in psi_avg.iter().zip(&density) {
        total += (s / cube - expected_local(psi, *rho, Order::Two)?).abs();
    }
    Ok(total / g.volume() as f64)
}

/// The one-block quantity of a recorded snapshot (m = 2 rates only).
pub fn replacement_diagnostic(
    traj: &Trajectory,
    t: f64,
    l: usize,
    psi: LocalFunction,
    axis: usize,
) -> Result<f64, KmcError> {
    if traj.model.order() != Some(Order::Two) {
        return Err(RateError::RequiresOrderTwo.into());
    }
    replacement_average(traj.snapshot(t)?, l, psi, axis)
}
