//! Exact analysis of the state space: hyperplane enumeration, blocked states,
//! irreducible components, explicit sequences of allowed exchanges and the
//! lower bounds on the number of close particle pairs.

use serde::Serialize;
use thiserror::Error;

use crate::lattice::{Configuration, Geometry, GeometryKind, LatticeError};
use crate::rates::{bond_exchange_rate, kinetic_constraint_between, Order, RateError, RateModel, RateTable};

/// Default cap on the number of states of an enumerated hyperplane.
pub const DEFAULT_BUDGET: u64 = 5_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ErgodicError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error("hyperplane with {states} states exceeds the budget of {budget}")]
    BudgetExceeded { states: u128, budget: u64 },
    #[error("lattice with {0} sites is too large for exhaustive enumeration (max 64)")]
    TooManySites(usize),
    #[error("{k} particles do not fit on {sites} sites")]
    TooManyParticles { k: usize, sites: usize },
    #[error("paths are built on one-dimensional lattices only")]
    NotOneDimensional,
    #[error("paths need the m = 2 constraint (pure or perturbed)")]
    UnsupportedModel,
    #[error("sites {0} and {1} do not hold a couple at distance one or two")]
    NoCouple(usize, usize),
    #[error("the couple overlaps the exchanged sites")]
    Overlap,
    #[error("the couple lies between the exchanged sites")]
    CoupleBetween,
    #[error("the construction leaves the box")]
    OutOfRange,
    #[error("step {step} exchanges sites {a} and {b} at zero constraint")]
    ZeroRate { step: usize, a: usize, b: usize },
    #[error("step {step} exchanges sites {a} and {b}, which are not nearest neighbours")]
    NotNeighbours { step: usize, a: usize, b: usize },
    #[error("step {step} is annotated with {annotated} but the constraint is {actual}")]
    AnnotationMismatch { step: usize, annotated: f64, actual: f64 },
    #[error("the path does not end at the declared configuration")]
    WrongEnd,
}

pub(crate) fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// The configurations with exactly `k` particles, ranked in lexicographic
/// order of their row-major bit strings.
#[derive(Debug, Clone)]
pub struct StateSpace {
    geometry: Geometry,
    k: usize,
    sites: usize,
    len: u64,
    /// `choose[p][j] = C(p, j)`.
    choose: Vec<Vec<u64>>,
}

impl StateSpace {
    pub fn new(geometry: Geometry, k: usize, budget: u64) -> Result<Self, ErgodicError> {
        let sites = geometry.volume();
        if sites > 64 {
            return Err(ErgodicError::TooManySites(sites));
        }
        if k > sites {
            return Err(ErgodicError::TooManyParticles { k, sites });
        }
        let states = binomial(sites, k);
        if states > budget as u128 {
            return Err(ErgodicError::BudgetExceeded { states, budget });
        }
        let choose = (0..=sites)
            .map(|p| (0..=k + 1).map(|j| binomial(p, j).min(u64::MAX as u128) as u64).collect())
            .collect();
        Ok(StateSpace { geometry, k, sites, len: states as u64, choose })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn particles(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Site masks (bit `i` = site `i`) in rank order.
    pub fn masks(&self) -> impl Iterator<Item = u64> + '_ {
        let n = self.sites;
        let k = self.k;
        let mut next = if k == 0 { Some(0u64) } else { Some(low_bits(k)) };
        let mut remaining = self.len;
        std::iter::from_fn(move || {
            if remaining == 0 {
                return None;
            }
            remaining -= 1;
            let lex = next?;
            next = if remaining > 0 { Some(gosper(lex)) } else { None };
            Some(reverse_low(lex, n))
        })
    }

    /// Position of a site mask in the enumeration order.
    pub fn rank(&self, mask: u64) -> usize {
        // site i sits at lexicographic bit n-1-i; colex rank over those bits
        let mut rank = 0u64;
        let mut j = 0;
        let mut rest = mask;
        while rest != 0 {
            let i = 63 - rest.leading_zeros() as usize;
            rest &= !(1u64 << i);
            j += 1;
            rank += self.choose[self.sites - 1 - i][j];
        }
        rank as usize
    }

    pub fn configuration(&self, mask: u64) -> Configuration {
        Configuration::from_mask(self.geometry, mask)
    }

    /// Positive-rate exchanges out of `mask`, as `(target mask, rate)`.
    pub fn moves<'a>(&'a self, moves: &'a MoveTable, mask: u64) -> impl Iterator<Item = (u64, f64)> + 'a {
        moves.bonds.iter().filter_map(move |bond| {
            let (x, y) = (bond.x, bond.y);
            if ((mask >> x) ^ (mask >> y)) & 1 == 0 {
                return None;
            }
            let mut packed = 0usize;
            for (i, s) in bond.window.iter().enumerate() {
                if let Some(s) = s {
                    packed |= (((mask >> s) & 1) as usize) << i;
                }
            }
            let rate = moves.table.rate(packed);
            (rate > 0.0).then_some((mask ^ (1u64 << x) ^ (1u64 << y), rate))
        })
    }
}

fn low_bits(k: usize) -> u64 {
    if k >= 64 {
        u64::MAX
    } else {
        (1u64 << k) - 1
    }
}

/// Next integer with the same number of set bits.
fn gosper(v: u64) -> u64 {
    let c = v & v.wrapping_neg();
    let r = v.wrapping_add(c);
    (((r ^ v) >> 2) / c) | r
}

fn reverse_low(v: u64, n: usize) -> u64 {
    if n == 0 {
        0
    } else {
        v.reverse_bits() >> (64 - n)
    }
}

#[derive(Debug, Clone)]
struct BondWindow {
    x: usize,
    y: usize,
    window: Vec<Option<usize>>,
}

/// Bond windows and the rate lookup of one model on one geometry.
#[derive(Debug, Clone)]
pub struct MoveTable {
    table: RateTable,
    bonds: Vec<BondWindow>,
}

impl MoveTable {
    pub fn new(model: &RateModel, geometry: &Geometry) -> Self {
        let table = RateTable::new(model, geometry);
        let bonds = geometry
            .bonds()
            .into_iter()
            .map(|(x, axis, y)| BondWindow {
                x,
                y,
                window: (0..table.width()).map(|i| geometry.neighbor(x, axis, table.lo() + i as isize)).collect(),
            })
            .collect();
        MoveTable { table, bonds }
    }
}

/// Iterator over the hyperplane with `k` particles in lexicographic order.
pub fn enumerate_hyperplane(
    geometry: Geometry,
    k: usize,
) -> Result<impl Iterator<Item = Configuration>, ErgodicError> {
    enumerate_hyperplane_within(geometry, k, DEFAULT_BUDGET)
}

pub fn enumerate_hyperplane_within(
    geometry: Geometry,
    k: usize,
    budget: u64,
) -> Result<impl Iterator<Item = Configuration>, ErgodicError> {
    let space = StateSpace::new(geometry, k, budget)?;
    let masks: Vec<u64> = space.masks().collect();
    Ok(masks.into_iter().map(move |m| Configuration::from_mask(geometry, m)))
}

/// No exchange has a positive rate.
pub fn is_blocked(eta: &Configuration, model: &RateModel) -> bool {
    let g = eta.geometry();
    g.bonds().into_iter().all(|(x, axis, _)| bond_exchange_rate(model, eta, x, axis) == 0.0)
}

/// Every two consecutive particles of a one-dimensional configuration are at
/// distance at least three.
pub fn gaps_exceed_two(eta: &Configuration) -> bool {
    let g = eta.geometry();
    eta.occupied().all(|x| (1..=2).all(|d| eta.occupancy_or_empty(g.neighbor(x, 0, d)) == 0))
}

/// Two particles at distance at most two (d = 1) or a filled cube of side two.
pub fn has_mobile_cluster(eta: &Configuration) -> bool {
    let g = *eta.geometry();
    if g.dim() == 1 {
        return eta.occupied().any(|x| (1..=2).any(|d| eta.occupancy_or_empty(g.neighbor(x, 0, d)) == 1));
    }
    eta.occupied().any(|x| {
        (0..1usize << g.dim()).all(|corner| {
            let mut site = Some(x);
            for axis in 0..g.dim() {
                if (corner >> axis) & 1 == 1 {
                    site = site.and_then(|s| g.neighbor(s, axis, 1));
                }
            }
            eta.occupancy_or_empty(site) == 1
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentClass {
    Mobile,
    BlockedSingleton,
    /// The completely filled configuration.
    Full,
    Other,
}

#[derive(Debug, Clone, Serialize)]
pub struct Component {
    pub size: u64,
    pub class: ComponentClass,
    /// Lexicographically smallest member, in the text form of [`Configuration`].
    pub representative: String,
    #[serde(skip)]
    pub representative_mask: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentReport {
    #[serde(rename = "N")]
    pub side: usize,
    pub dim: usize,
    pub k: usize,
    pub kind: GeometryKind,
    pub model: RateModel,
    pub total_states: u64,
    pub components: Vec<Component>,
}

impl ComponentReport {
    pub fn count(&self, class: ComponentClass) -> usize {
        self.components.iter().filter(|c| c.class == class).count()
    }
}

struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n as u32).collect(), size: vec![1; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] as usize != x {
            let p = self.parent[x] as usize;
            self.parent[x] = self.parent[p];
            x = p;
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a as u32;
        self.size[a] += self.size[b];
    }
}

/// Component label (in order of first appearance) of every ranked state.
pub fn component_labels(space: &StateSpace, model: &RateModel) -> (Vec<u32>, usize) {
    let moves = MoveTable::new(model, space.geometry());
    let mut uf = UnionFind::new(space.len());
    for (r, mask) in space.masks().enumerate() {
        for (target, _) in space.moves(&moves, mask) {
            let t = space.rank(target);
            if t > r {
                uf.union(r, t);
            }
        }
    }
    let mut label_of_root = vec![u32::MAX; space.len()];
    let mut labels = vec![0u32; space.len()];
    let mut count = 0u32;
    for (r, label) in labels.iter_mut().enumerate() {
        let root = uf.find(r);
        if label_of_root[root] == u32::MAX {
            label_of_root[root] = count;
            count += 1;
        }
        *label = label_of_root[root];
    }
    (labels, count as usize)
}

/// Irreducible components of the hyperplane with `k` particles.
pub fn components(geometry: Geometry, k: usize, model: &RateModel) -> Result<ComponentReport, ErgodicError> {
    components_within(geometry, k, model, DEFAULT_BUDGET)
}

pub fn components_within(
    geometry: Geometry,
    k: usize,
    model: &RateModel,
    budget: u64,
) -> Result<ComponentReport, ErgodicError> {
    model.validate(&geometry)?;
    let space = StateSpace::new(geometry, k, budget)?;
    let (labels, count) = component_labels(&space, model);
    let mut sizes = vec![0u64; count];
    let mut reps = vec![None; count];
    let mut mobile = vec![false; count];
    for (mask, &label) in space.masks().zip(&labels) {
        let l = label as usize;
        sizes[l] += 1;
        if reps[l].is_none() {
            reps[l] = Some(mask);
        }
        if !mobile[l] && has_mobile_cluster(&space.configuration(mask)) {
            mobile[l] = true;
        }
    }
    let full = k == geometry.volume();
    let components = (0..count)
        .map(|l| {
            let mask = reps[l].expect("every label has a member");
            let eta = space.configuration(mask);
            let class = if full {
                ComponentClass::Full
            } else if sizes[l] == 1 && is_blocked(&eta, model) {
                ComponentClass::BlockedSingleton
            } else if mobile[l] {
                ComponentClass::Mobile
            } else {
                ComponentClass::Other
            };
            Component { size: sizes[l], class, representative: eta.to_string(), representative_mask: mask }
        })
        .collect();
    Ok(ComponentReport {
        side: geometry.side(),
        dim: geometry.dim(),
        k,
        kind: geometry.kind(),
        model: *model,
        total_states: space.len() as u64,
        components,
    })
}

/// One exchange of a path, annotated with the constraint of the bond in the
/// configuration it is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathStep {
    pub a: usize,
    pub b: usize,
    pub constraint: f64,
}

/// A sequence of nearest-neighbour exchanges between two configurations.
#[derive(Debug, Clone)]
pub struct MovePath {
    pub start: Configuration,
    pub end: Configuration,
    pub steps: Vec<PathStep>,
}

impl MovePath {
    /// Number of exchanges.
    pub fn moves(&self) -> usize {
        self.steps.len()
    }

    /// Number of configurations visited, both endpoints included.
    pub fn configuration_count(&self) -> usize {
        self.steps.len() + 1
    }

    /// Re-execute the path and confirm every constraint is positive and the
    /// declared end is reached.
    pub fn verify(&self, model: &RateModel) -> Result<(), ErgodicError> {
        let bonds: Vec<(usize, usize)> = self.steps.iter().map(|s| (s.a, s.b)).collect();
        check_path(model, &self.start, &bonds, &self.end)?;
        let mut eta = self.start.clone();
        for (step, s) in self.steps.iter().enumerate() {
            let actual = kinetic_constraint_between(model, &eta, s.a, s.b).unwrap_or(0.0);
            if actual != s.constraint {
                return Err(ErgodicError::AnnotationMismatch { step, annotated: s.constraint, actual });
            }
            eta.swap_in_place(s.a, s.b);
        }
        Ok(())
    }
}

/// Execute exchanges from `start`, checking that each bond joins nearest
/// neighbours with a positive constraint, and compare the result with `end`.
pub fn check_path(
    model: &RateModel,
    start: &Configuration,
    bonds: &[(usize, usize)],
    end: &Configuration,
) -> Result<(), ErgodicError> {
    let g = *start.geometry();
    let mut eta = start.clone();
    for (step, &(a, b)) in bonds.iter().enumerate() {
        let left = if g.neighbor(a, 0, 1) == Some(b) {
            a
        } else if g.neighbor(b, 0, 1) == Some(a) {
            b
        } else {
            return Err(ErgodicError::NotNeighbours { step, a, b });
        };
        // constraint read directly from the window around the left endpoint
        let read = |o: isize| eta.occupancy_or_empty(g.neighbor(left, 0, o));
        let c = model.constraint(&g, read);
        if c <= 0.0 {
            return Err(ErgodicError::ZeroRate { step, a, b });
        }
        eta.swap_in_place(a, b);
    }
    if &eta == end {
        Ok(())
    } else {
        Err(ErgodicError::WrongEnd)
    }
}

fn annotate(model: &RateModel, start: &Configuration, bonds: &[(usize, usize)]) -> Result<MovePath, ErgodicError> {
    let mut eta = start.clone();
    let mut steps = Vec::with_capacity(bonds.len());
    for (step, &(a, b)) in bonds.iter().enumerate() {
        let constraint = kinetic_constraint_between(model, &eta, a, b).ok_or(ErgodicError::NotNeighbours { step, a, b })?;
        if constraint <= 0.0 {
            return Err(ErgodicError::ZeroRate { step, a, b });
        }
        steps.push(PathStep { a, b, constraint });
        eta.swap_in_place(a, b);
    }
    Ok(MovePath { start: start.clone(), end: eta, steps })
}

fn check_path_model(model: &RateModel, g: &Geometry) -> Result<(), ErgodicError> {
    if g.dim() != 1 {
        return Err(ErgodicError::NotOneDimensional);
    }
    if model.order() != Some(Order::Two) {
        return Err(ErgodicError::UnsupportedModel);
    }
    Ok(())
}

/// Relative coordinates along a line: `site(r) = origin + sign * r`, wrapped
/// on the torus.
#[derive(Debug, Clone, Copy)]
struct Frame {
    origin: isize,
    sign: isize,
    side: isize,
    torus: bool,
}

impl Frame {
    fn site(&self, r: isize) -> Result<usize, ErgodicError> {
        let s = self.origin + self.sign * r;
        if self.torus {
            Ok(s.rem_euclid(self.side) as usize)
        } else if (0..self.side).contains(&s) {
            Ok(s as usize)
        } else {
            Err(ErgodicError::OutOfRange)
        }
    }

    fn rel(&self, site: usize) -> isize {
        let d = self.sign * (site as isize - self.origin);
        if self.torus {
            d.rem_euclid(self.side)
        } else {
            d
        }
    }
}

/// Records exchanges in frame coordinates while applying them to a copy.
struct Builder<'a> {
    frame: Frame,
    eta: &'a mut Configuration,
    bonds: Vec<(usize, usize)>,
}

impl Builder<'_> {
    fn swap(&mut self, r: isize) -> Result<(), ErgodicError> {
        let (a, b) = (self.frame.site(r)?, self.frame.site(r + 1)?);
        self.eta.swap_in_place(a, b);
        self.bonds.push((a, b));
        Ok(())
    }

    fn occ(&self, r: isize) -> Result<u8, ErgodicError> {
        Ok(self.eta.occupancy(self.frame.site(r)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
}

/// Shift the mobile cluster whose leftmost particle sits at `x` by one site.
///
/// An adjacent pair `(x, x+1)` moving right uses the exchanges `(x+1, x+2)`
/// then `(x, x+1)`; a pair at distance two first closes its gap, shifts, and
/// reopens it. Leftward shifts are the mirror images.
pub fn cluster_shift_path(
    eta: &Configuration,
    model: &RateModel,
    x: usize,
    direction: Direction,
) -> Result<MovePath, ErgodicError> {
    let g = *eta.geometry();
    check_path_model(model, &g)?;
    let right_of = |s: usize, d: isize| g.neighbor(s, 0, d);
    let gap = match (eta.get(x), right_of(x, 1).map(|s| eta.get(s)), right_of(x, 2).map(|s| eta.get(s))) {
        (true, Some(true), _) => 1,
        (true, Some(false), Some(true)) => 2,
        _ => return Err(ErgodicError::NoCouple(x, x + 1)),
    };
    let frame = match direction {
        Direction::Right => Frame { origin: x as isize, sign: 1, side: g.side() as isize, torus: g.is_torus() },
        Direction::Left => Frame { origin: (x + gap) as isize, sign: -1, side: g.side() as isize, torus: g.is_torus() },
    };
    let mut work = eta.clone();
    let mut b = Builder { frame, eta: &mut work, bonds: Vec::new() };
    if gap == 1 {
        b.swap(1)?;
        b.swap(0)?;
    } else {
        b.swap(0)?;
        b.swap(2)?;
        b.swap(1)?;
        b.swap(1)?;
    }
    let bonds = b.bonds;
    annotate(model, eta, &bonds).map_err(|e| match e {
        ErgodicError::ZeroRate { .. } => ErgodicError::OutOfRange,
        other => other,
    })
}

/// A couple of particles at sites `z` and `z + distance` (wrapped on the torus).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Couple {
    pub z: usize,
    pub distance: usize,
}

/// A path of allowed exchanges realising `eta -> eta^{x,y}` with the help of
/// a couple of particles.
///
/// With an adjacent couple at `(z, z+1)`, `n = x - (z+1)` and `m = y - x`
/// (particle at `x`, hole at `y`, couple to the left), the path visits exactly
/// `5(m-1) + 4(n-1) + 2` configurations: the couple walks to `(x-2, x-1)`, the
/// three particles walk to `(y-3, y-2, y-1)`, the last one drops into `y`,
/// and everything walks back. Other placements are mirror images or reversed
/// paths of that construction.
///
/// For the perturbed dynamics the two particles of a couple at any distance
/// are first brought within distance two by exclusion moves; when no such
/// construction applies a plain sequence of `2|y - x| - 1` exclusion moves is
/// used.
pub fn exchange_path(
    eta: &Configuration,
    model: &RateModel,
    x: usize,
    y: usize,
    couple: Couple,
) -> Result<MovePath, ErgodicError> {
    let g = *eta.geometry();
    check_path_model(model, &g)?;
    if x == y {
        return Err(LatticeError::SameSite.into());
    }
    if eta.get(x) == eta.get(y) {
        return Ok(MovePath { start: eta.clone(), end: eta.clone(), steps: Vec::new() });
    }
    let bonds = match model {
        RateModel::PorousMedium { .. } => constrained_exchange(eta, x, y, couple)?,
        _ => perturbed_exchange(eta, x, y, couple)?,
    };
    let path = annotate(model, eta, &bonds)?;
    let target = eta.swapped(x, y)?;
    if path.end != target {
        return Err(ErgodicError::WrongEnd);
    }
    Ok(path)
}

fn couple_sites(g: &Geometry, eta: &Configuration, couple: Couple) -> Result<(usize, usize), ErgodicError> {
    let other = g.neighbor(couple.z, 0, couple.distance as isize);
    match other {
        Some(o) if couple.distance >= 1 && eta.get(couple.z) && eta.get(o) => Ok((couple.z, o)),
        _ => Err(ErgodicError::NoCouple(couple.z, couple.z + couple.distance)),
    }
}

fn constrained_exchange(
    eta: &Configuration,
    x: usize,
    y: usize,
    couple: Couple,
) -> Result<Vec<(usize, usize)>, ErgodicError> {
    if couple.distance > 2 {
        return Err(ErgodicError::NoCouple(couple.z, couple.z + couple.distance));
    }
    let g = *eta.geometry();
    let (za, zb) = couple_sites(&g, eta, couple)?;
    let span: Vec<usize> = (0..=couple.distance).map(|d| g.neighbor(za, 0, d as isize).expect("checked")).collect();
    if span.contains(&x) || span.contains(&y) {
        return Err(ErgodicError::Overlap);
    }
    let side = g.side() as isize;
    let frame = if g.is_torus() {
        Frame { origin: za as isize, sign: 1, side, torus: true }
    } else if zb < x.min(y) {
        Frame { origin: za as isize, sign: 1, side, torus: false }
    } else if za > x.max(y) {
        Frame { origin: zb as isize, sign: -1, side, torus: false }
    } else {
        return Err(ErgodicError::CoupleBetween);
    };
    let (p, h) = if eta.get(x) { (x, y) } else { (y, x) };
    let gapped = couple.distance == 2 && eta.occupancy(span[1]) == 0;
    if frame.rel(p) < frame.rel(h) {
        couple_walk(eta, frame, frame.rel(p), frame.rel(h), gapped)
    } else {
        // build the path from the exchanged configuration and run it backwards
        let swapped = eta.swapped(x, y)?;
        let mut bonds = couple_walk(&swapped, frame, frame.rel(h), frame.rel(p), gapped)?;
        bonds.reverse();
        Ok(bonds)
    }
}

/// The couple sits at relative sites `0, 1` (or `0, 2` when `gapped`), the
/// particle at `px` and the hole at `hy`, with the couple before `px < hy`.
fn couple_walk(
    eta: &Configuration,
    frame: Frame,
    px: isize,
    hy: isize,
    gapped: bool,
) -> Result<Vec<(usize, usize)>, ErgodicError> {
    let mut work = eta.clone();
    let mut b = Builder { frame, eta: &mut work, bonds: Vec::new() };
    if gapped {
        b.swap(1)?;
    }
    let n = px - 1;
    let m = hy - px;
    for a in 0..n - 1 {
        b.swap(a + 1)?;
        b.swap(a)?;
    }
    for t in px..hy - 1 {
        b.swap(t)?;
        b.swap(t - 1)?;
        b.swap(t - 2)?;
    }
    b.swap(hy - 1)?;
    // walk two particles and the vacancy back, restoring the sites they crossed
    let mut a = hy - 3;
    for _ in 0..m - 1 {
        let crossed = b.occ(a - 1)?;
        b.swap(a - 1)?;
        if crossed == 0 {
            b.swap(a)?;
        } else {
            b.swap(a + 1)?;
        }
        a -= 1;
    }
    for a in (1..=px - 2).rev() {
        b.swap(a - 1)?;
        b.swap(a)?;
    }
    if gapped {
        b.swap(1)?;
    }
    Ok(b.bonds)
}

fn perturbed_exchange(
    eta: &Configuration,
    x: usize,
    y: usize,
    couple: Couple,
) -> Result<Vec<(usize, usize)>, ErgodicError> {
    let g = *eta.geometry();
    let (za, _) = couple_sites(&g, eta, couple)?;
    // slide the right particle of the couple leftwards over empty sites
    let mut work = eta.clone();
    let mut gather = Vec::new();
    let mut q = couple.distance;
    let site = |r: usize| g.neighbor(za, 0, r as isize).expect("inside the couple span");
    while q > 2 && work.occupancy(site(q - 1)) == 0 {
        let (a, b) = (site(q - 1), site(q));
        if [a, b].contains(&x) || [a, b].contains(&y) {
            break;
        }
        work.swap_in_place(a, b);
        gather.push((a, b));
        q -= 1;
    }
    let close = if q <= 2 {
        Some(Couple { z: za, distance: q })
    } else if work.occupancy(site(q - 1)) == 1 {
        Some(Couple { z: site(q - 1), distance: 1 })
    } else {
        None
    };
    if let Some(c) = close {
        if let Ok(middle) = constrained_exchange(&work, x, y, c) {
            let mut bonds = gather.clone();
            bonds.extend(middle);
            bonds.extend(gather.iter().rev());
            return Ok(bonds);
        }
    }
    bubble_exchange(&g, x, y)
}

/// `2|y - x| - 1` adjacent transpositions composing to the transposition of
/// `x` and `y` (the shorter way round on a torus).
fn bubble_exchange(g: &Geometry, x: usize, y: usize) -> Result<Vec<(usize, usize)>, ErgodicError> {
    let n = g.side() as isize;
    let (from, steps) = if g.is_torus() {
        let fwd = (y as isize - x as isize).rem_euclid(n);
        if fwd <= n - fwd {
            (x, fwd)
        } else {
            (y, n - fwd)
        }
    } else {
        (x.min(y), (x as isize - y as isize).abs())
    };
    let site = |r: isize| g.neighbor(from, 0, r).ok_or(ErgodicError::OutOfRange);
    let mut bonds = Vec::new();
    for r in 0..steps {
        bonds.push((site(r)?, site(r + 1)?));
    }
    for r in (0..steps - 1).rev() {
        bonds.push((site(r)?, site(r + 1)?));
    }
    Ok(bonds)
}

/// Pair counts of a configuration of the box and the lower bounds they obey.
#[derive(Debug, Clone, Serialize)]
pub struct CoupleReport {
    pub side: usize,
    pub k: usize,
    /// Pairs of particles at distance one or two.
    pub close_pairs: u32,
    /// Particles with another particle within distance two.
    pub close_particles: u32,
    /// `3/4 (k - N/3 - 2/3)`.
    pub close_bound: f64,
    pub close_bound_holds: bool,
    /// One entry per `j >= 2`.
    pub within: Vec<WithinReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WithinReport {
    pub j: usize,
    /// Pairs of particles at distance at most `j`.
    pub pairs: u32,
    /// Particles with another particle within distance `j`.
    pub particles: u32,
    /// `(j+1)/(2j) (k - N/(j+1) - j/(j+1))`.
    pub bound: f64,
    pub holds: bool,
}

/// Pairs of particles at distance exactly `l` in a box mask of `side` sites.
pub fn pairs_at(mask: u64, l: usize) -> u32 {
    if l >= 64 {
        0
    } else {
        (mask & (mask >> l)).count_ones()
    }
}

fn particles_within(mask: u64, side: usize, j: usize) -> u32 {
    let full = if side >= 64 { u64::MAX } else { (1u64 << side) - 1 };
    let mut near = 0u64;
    for l in 1..=j.min(63) {
        near |= (mask >> l) | (mask << l);
    }
    (mask & near & full).count_ones()
}

/// Couple counts and bounds for distances up to `j_max`.
pub fn couple_bounds(eta: &Configuration, j_max: usize) -> Result<CoupleReport, ErgodicError> {
    let g = eta.geometry();
    if g.dim() != 1 || g.is_torus() {
        return Err(ErgodicError::NotOneDimensional);
    }
    if g.volume() > 64 {
        return Err(ErgodicError::TooManySites(g.volume()));
    }
    Ok(couple_bounds_mask(eta.mask(), g.side(), j_max))
}

pub fn couple_bounds_mask(mask: u64, side: usize, j_max: usize) -> CoupleReport {
    let k = mask.count_ones() as usize;
    let (n, kf) = (side as f64, k as f64);
    let close_pairs = pairs_at(mask, 1) + pairs_at(mask, 2);
    let close_bound = (3.0 * kf - n - 2.0) / 4.0;
    let within = (2..=j_max)
        .map(|j| {
            let jf = j as f64;
            let pairs = (1..=j).map(|l| pairs_at(mask, l)).sum();
            let bound = ((jf + 1.0) * kf - n - jf) / (2.0 * jf);
            let holds = 2 * j as i64 * pairs as i64 >= (j as i64 + 1) * k as i64 - side as i64 - j as i64;
            WithinReport { j, pairs, particles: particles_within(mask, side, j), bound, holds }
        })
        .collect();
    CoupleReport {
        side,
        k,
        close_pairs,
        close_particles: particles_within(mask, side, 2),
        close_bound,
        close_bound_holds: 4 * close_pairs as i64 >= 3 * k as i64 - side as i64 - 2,
        within,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::collections::{HashMap, VecDeque};

    fn m2() -> RateModel {
        RateModel::porous(Order::Two)
    }

    fn torus(n: usize) -> Geometry {
        Geometry::torus(1, n).unwrap()
    }

    /// Breadth-first components over configurations stored in a hash map.
    fn bfs_components(g: Geometry, k: usize, model: &RateModel) -> Vec<Vec<Configuration>> {
        let states: Vec<Configuration> = enumerate_hyperplane(g, k).unwrap().collect();
        let mut seen: HashMap<Configuration, bool> = states.iter().map(|s| (s.clone(), false)).collect();
        let mut out = Vec::new();
        for s in &states {
            if seen[s] {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([s.clone()]);
            seen.insert(s.clone(), true);
            while let Some(cur) = queue.pop_front() {
                for (x, axis, y) in g.bonds() {
                    if bond_exchange_rate(model, &cur, x, axis) > 0.0 {
                        let next = cur.swapped(x, y).unwrap();
                        if !seen[&next] {
                            seen.insert(next.clone(), true);
                            queue.push_back(next);
                        }
                    }
                }
                comp.push(cur);
            }
            out.push(comp);
        }
        out
    }

    #[test]
    fn enumeration_examples() {
        let all: Vec<String> = enumerate_hyperplane(torus(4), 2).unwrap().map(|c| c.to_string()).collect();
        assert_eq!(
            all,
            ["1 4 torus:0011", "1 4 torus:0101", "1 4 torus:0110", "1 4 torus:1001", "1 4 torus:1010", "1 4 torus:1100"]
        );
        let empty: Vec<Configuration> = enumerate_hyperplane(torus(6), 0).unwrap().collect();
        assert_eq!(empty, vec![Configuration::empty(torus(6))]);
        assert_eq!(enumerate_hyperplane(torus(9), 3).unwrap().count(), 84);
        assert!(matches!(
            enumerate_hyperplane_within(torus(30), 15, 1000),
            Err(ErgodicError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn ranks_follow_enumeration_order() {
        for (g, k) in [(torus(10), 4), (Geometry::torus(2, 4).unwrap(), 5), (torus(7), 7), (torus(5), 0)] {
            let space = StateSpace::new(g, k, DEFAULT_BUDGET).unwrap();
            for (r, mask) in space.masks().enumerate() {
                assert_eq!(space.rank(mask), r);
                assert_eq!(mask.count_ones() as usize, k);
            }
        }
    }

    #[test]
    fn blocked_examples() {
        let g = torus(9);
        let spaced = Configuration::from_indices(g, &[0, 3, 6]).unwrap();
        assert!(is_blocked(&spaced, &m2()));
        assert!(gaps_exceed_two(&spaced));
        let close = Configuration::from_indices(g, &[0, 2, 6]).unwrap();
        assert!(!is_blocked(&close, &m2()));
        assert!(is_blocked(&Configuration::full(g), &m2()));
    }

    #[test]
    fn blocked_matches_gap_criterion() {
        for n in 4..=12 {
            let g = torus(n);
            for k in 0..n {
                for eta in enumerate_hyperplane(g, k).unwrap() {
                    assert_eq!(is_blocked(&eta, &m2()), gaps_exceed_two(&eta), "{eta}");
                }
            }
        }
    }

    #[test]
    fn component_examples() {
        let r = components(torus(9), 4, &m2()).unwrap();
        assert_eq!(r.components.len(), 1);
        assert_eq!(r.components[0].class, ComponentClass::Mobile);

        let r = components(torus(9), 3, &m2()).unwrap();
        assert_eq!(r.components.len(), 4);
        assert_eq!(r.count(ComponentClass::BlockedSingleton), 3);
        let mobile: Vec<&Component> = r.components.iter().filter(|c| c.class == ComponentClass::Mobile).collect();
        assert_eq!(mobile.len(), 1);
        assert_eq!(mobile[0].size, 81);

        let r = components(torus(7), 7, &m2()).unwrap();
        assert_eq!(r.components.len(), 1);
        assert_eq!(r.components[0].class, ComponentClass::Full);
        assert_eq!(r.components[0].size, 1);

        let json = serde_json::to_value(components(torus(9), 3, &m2()).unwrap()).unwrap();
        assert_eq!(json["N"], 9);
        assert_eq!(json["components"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn union_find_agrees_with_breadth_first_search() {
        for (g, k) in [(torus(8), 2), (torus(9), 3), (torus(10), 3), (Geometry::frozen_box(8).unwrap(), 3), (torus(8), 4)] {
            let bfs = bfs_components(g, k, &m2());
            let report = components(g, k, &m2()).unwrap();
            let mut a: Vec<u64> = bfs.iter().map(|c| c.len() as u64).collect();
            let mut b: Vec<u64> = report.components.iter().map(|c| c.size).collect();
            a.sort();
            b.sort();
            assert_eq!(a, b, "{g:?} k={k}");
        }
    }

    #[test]
    fn threshold_decomposition_small_tori() {
        for n in 4..=10 {
            for k in 0..=n {
                let r = components(torus(n), k, &m2()).unwrap();
                assert_eq!(r.components.iter().map(|c| c.size).sum::<u64>() as u128, binomial(n, k));
                if 3 * k > n {
                    assert_eq!(r.components.len(), 1, "N={n} k={k}");
                } else {
                    assert_eq!(r.count(ComponentClass::Other), 0);
                    assert!(r.count(ComponentClass::Mobile) <= 1);
                }
            }
        }
    }

    #[test]
    fn two_dimensional_line_component_is_separate() {
        let g = Geometry::torus(2, 5).unwrap();
        let report = components(g, 4, &m2()).unwrap();
        let space = StateSpace::new(g, 4, DEFAULT_BUDGET).unwrap();
        let (labels, _) = component_labels(&space, &m2());
        let square = Configuration::from_indices(g, &[0, 1, 5, 6]).unwrap();
        let row = Configuration::from_indices(g, &[0, 1, 2, 3]).unwrap();
        let ls = labels[space.rank(square.mask())];
        let lr = labels[space.rank(row.mask())];
        assert_ne!(ls, lr);
        assert_eq!(report.components[ls as usize].class, ComponentClass::Mobile);
        assert_eq!(report.components[lr as usize].class, ComponentClass::Other);
        assert_eq!(report.components[lr as usize].size, 5);
    }

    #[test]
    fn cluster_shift_examples() {
        let g = torus(12);
        let eta = Configuration::from_indices(g, &[3, 4, 9]).unwrap();
        let path = cluster_shift_path(&eta, &m2(), 3, Direction::Right).unwrap();
        assert_eq!(path.steps.iter().map(|s| (s.a, s.b)).collect::<Vec<_>>(), vec![(4, 5), (3, 4)]);
        assert!(path.steps.iter().all(|s| s.constraint >= 1.0));
        assert_eq!(path.end, Configuration::from_indices(g, &[4, 5, 9]).unwrap());
        path.verify(&m2()).unwrap();

        let left = cluster_shift_path(&eta, &m2(), 3, Direction::Left).unwrap();
        assert_eq!(left.end, Configuration::from_indices(g, &[2, 3, 9]).unwrap());
        left.verify(&m2()).unwrap();

        let gapped = Configuration::from_indices(g, &[3, 5]).unwrap();
        let path = cluster_shift_path(&gapped, &m2(), 3, Direction::Right).unwrap();
        assert_eq!(path.steps[0].a.min(path.steps[0].b), 3);
        assert_eq!(path.end, Configuration::from_indices(g, &[4, 6]).unwrap());
        let back = cluster_shift_path(&gapped, &m2(), 3, Direction::Left).unwrap();
        assert_eq!(back.end, Configuration::from_indices(g, &[2, 4]).unwrap());

        let lonely = Configuration::from_indices(g, &[3]).unwrap();
        assert!(cluster_shift_path(&lonely, &m2(), 3, Direction::Right).is_err());
        let edge = Configuration::from_indices(Geometry::frozen_box(6).unwrap(), &[4, 5]).unwrap();
        assert!(cluster_shift_path(&edge, &m2(), 4, Direction::Right).is_err());
    }

    fn gamma(n: usize, m: usize) -> usize {
        5 * (m - 1) + 4 * (n - 1) + 2
    }

    #[test]
    fn exchange_path_step_counts() {
        let g = Geometry::frozen_box(12).unwrap();
        // couple at (0, 1), particle at x = 2 (n = 1), hole at y = 3 (m = 1)
        let eta = Configuration::from_indices(g, &[0, 1, 2]).unwrap();
        let path = exchange_path(&eta, &m2(), 2, 3, Couple { z: 0, distance: 1 }).unwrap();
        assert_eq!(path.configuration_count(), gamma(1, 1));
        assert_eq!(path.configuration_count(), 2);

        let eta = Configuration::from_indices(g, &[0, 1, 2, 4]).unwrap();
        let path = exchange_path(&eta, &m2(), 2, 5, Couple { z: 0, distance: 1 }).unwrap();
        assert_eq!(path.configuration_count(), 12);
        assert_eq!(path.end, eta.swapped(2, 5).unwrap());
        path.verify(&m2()).unwrap();
        assert!(path.steps.iter().all(|s| s.constraint > 0.0));
    }

    #[test]
    fn exchange_path_errors() {
        let g = Geometry::frozen_box(12).unwrap();
        let eta = Configuration::from_indices(g, &[4, 5, 2]).unwrap();
        assert_eq!(exchange_path(&eta, &m2(), 2, 9, Couple { z: 4, distance: 1 }).unwrap_err(), ErgodicError::CoupleBetween);
        assert_eq!(exchange_path(&eta, &m2(), 5, 9, Couple { z: 4, distance: 1 }).unwrap_err(), ErgodicError::Overlap);
        assert!(matches!(exchange_path(&eta, &m2(), 2, 9, Couple { z: 7, distance: 1 }), Err(ErgodicError::NoCouple(..))));
        let same = exchange_path(&eta, &m2(), 2, 4, Couple { z: 7, distance: 1 }).unwrap();
        assert_eq!(same.moves(), 0);
        assert_eq!(exchange_path(&eta, &RateModel::Ssep, 2, 9, Couple { z: 4, distance: 1 }).unwrap_err(), ErgodicError::UnsupportedModel);
    }

    /// Random admissible instance on a line of `n` sites.
    fn random_instance(rng: &mut impl Rng, g: Geometry) -> Option<(Configuration, usize, usize, Couple)> {
        let n = g.side();
        let mut occ: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let distance = rng.gen_range(1..=2);
        let z = rng.gen_range(0..n);
        let zb = if g.is_torus() { (z + distance) % n } else { z + distance };
        if zb >= n {
            return None;
        }
        occ[z] = 1;
        occ[zb] = 1;
        let x = rng.gen_range(0..n);
        let y = rng.gen_range(0..n);
        let span: Vec<usize> = (0..=distance).map(|d| (z + d) % n).collect();
        if x == y || span.contains(&x) || span.contains(&y) {
            return None;
        }
        occ[x] = 1;
        occ[y] = 0;
        if !g.is_torus() && x.min(y) < zb && zb < x.max(y) {
            return None;
        }
        Some((Configuration::from_occupancy(g, &occ).unwrap(), x, y, Couple { z, distance }))
    }

    #[test]
    fn randomized_exchange_paths() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for g in [Geometry::frozen_box(30).unwrap(), torus(30)] {
            for model in [m2(), RateModel::perturbed(Order::Two, 1.0, 30).unwrap()] {
                let mut done = 0;
                while done < 300 {
                    let Some((eta, x, y, couple)) = random_instance(&mut rng, g) else { continue };
                    let path = exchange_path(&eta, &model, x, y, couple).unwrap();
                    assert_eq!(path.end, eta.swapped(x, y).unwrap());
                    path.verify(&model).unwrap();
                    done += 1;
                }
            }
        }
    }

    #[test]
    fn adjacent_couple_counts_match_formula() {
        let g = Geometry::frozen_box(30).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let z = rng.gen_range(0..10);
            let x = rng.gen_range(z + 2..20);
            let y = rng.gen_range(x + 1..30);
            let mut occ: Vec<u8> = (0..30).map(|_| rng.gen_range(0..2)).collect();
            occ[z] = 1;
            occ[z + 1] = 1;
            occ[x] = 1;
            occ[y] = 0;
            let eta = Configuration::from_occupancy(g, &occ).unwrap();
            let path = exchange_path(&eta, &m2(), x, y, Couple { z, distance: 1 }).unwrap();
            assert_eq!(path.configuration_count(), gamma(x - (z + 1), y - x));
        }
    }

    #[test]
    fn perturbed_paths_use_far_couples() {
        let g = Geometry::frozen_box(20).unwrap();
        let model = RateModel::perturbed(Order::Two, 1.0, 20).unwrap();
        let eta = Configuration::from_indices(g, &[0, 5, 9]).unwrap();
        let path = exchange_path(&eta, &model, 9, 15, Couple { z: 0, distance: 5 }).unwrap();
        path.verify(&model).unwrap();
        // with no couple the pure constrained dynamics cannot do it
        assert!(exchange_path(&eta, &m2(), 9, 15, Couple { z: 0, distance: 5 }).is_err());
    }

    #[test]
    fn checker_rejects_bad_paths() {
        let g = torus(10);
        let eta = Configuration::from_indices(g, &[0, 5]).unwrap();
        let end = eta.swapped(5, 6).unwrap();
        assert!(matches!(check_path(&m2(), &eta, &[(5, 6)], &end), Err(ErgodicError::ZeroRate { .. })));
        assert!(matches!(check_path(&m2(), &eta, &[(5, 7)], &end), Err(ErgodicError::NotNeighbours { .. })));
        let ssep = RateModel::Ssep;
        assert!(check_path(&ssep, &eta, &[(5, 6)], &end).is_ok());
        assert_eq!(check_path(&ssep, &eta, &[(5, 6)], &eta), Err(ErgodicError::WrongEnd));
    }

    #[test]
    fn couple_bound_examples() {
        let g = Geometry::frozen_box(18).unwrap();
        let block = Configuration::from_indices(g, &[3, 4, 5, 6, 7]).unwrap();
        let r = couple_bounds(&block, 4).unwrap();
        assert_eq!(r.close_pairs, 2 * 5 - 3);
        for k in [0usize, 1] {
            let idx: Vec<usize> = (0..k).collect();
            let r = couple_bounds(&Configuration::from_indices(g, &idx).unwrap(), 5).unwrap();
            assert_eq!(r.close_pairs, 0);
            assert!(r.close_bound <= 0.0 && r.close_bound_holds);
            assert!(r.within.iter().all(|w| w.pairs == 0 && w.holds));
        }
        let b9 = Geometry::frozen_box(9).unwrap();
        let min = enumerate_hyperplane(b9, 4)
            .unwrap()
            .map(|eta| couple_bounds(&eta, 2).unwrap().close_pairs)
            .min()
            .unwrap();
        assert!(min >= 1);
        assert!(couple_bounds(&Configuration::empty(torus(9)), 2).is_err());
    }

    proptest! {
        #[test]
        fn couple_bounds_hold(side in 1usize..=40, bits in any::<u64>()) {
            let mask = if side == 64 { bits } else { bits & ((1u64 << side) - 1) };
            let r = couple_bounds_mask(mask, side, side.saturating_sub(1).max(2));
            prop_assert!(r.close_pairs as f64 >= r.close_particles as f64 / 2.0);
            if 3 * r.k > side {
                prop_assert!(r.close_bound_holds);
            }
            for w in &r.within {
                prop_assert!(w.pairs as f64 >= w.particles as f64 / 2.0);
                prop_assert!(w.holds);
            }
        }
    }
}
