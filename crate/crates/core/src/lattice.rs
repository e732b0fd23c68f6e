//! Discrete torus and frozen-empty box geometries, packed occupancy
//! configurations, translations, exchanges and block averages.
//!
//! Sites are addressed either by coordinates ([`Site`]) or by their linear
//! row-major index (last coordinate fastest). Box sites carry coordinates
//! `1..=N`; everything outside the box reads as empty.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("site {0:?} lies outside the geometry")]
    SiteOutOfRange(Vec<i64>),
    #[error("exchange of a site with itself")]
    SameSite,
    #[error("block of radius {radius} does not fit in a torus of side {side}")]
    BlockTooLarge { radius: usize, side: usize },
    #[error("operation requires torus geometry")]
    NotTorus,
    #[error("expected {expected} occupancy values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("configurations live on different geometries")]
    GeometryMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    Torus,
    /// One-dimensional box `1..=N` whose exterior is frozen empty.
    Box,
}

impl fmt::Display for GeometryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryKind::Torus => f.write_str("torus"),
            GeometryKind::Box => f.write_str("box"),
        }
    }
}

impl FromStr for GeometryKind {
    type Err = LatticeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "torus" => Ok(GeometryKind::Torus),
            "box" => Ok(GeometryKind::Box),
            other => Err(LatticeError::Parse(format!("unknown geometry kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Geometry {
    kind: GeometryKind,
    dim: usize,
    side: usize,
}

/// A lattice site given by its coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Site(pub Vec<i64>);

impl Site {
    pub fn new(coords: impl Into<Vec<i64>>) -> Self {
        Site(coords.into())
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }
}

impl From<i64> for Site {
    fn from(x: i64) -> Self {
        Site(vec![x])
    }
}

/// Result of shifting a site: either a site of the geometry or a cell of the
/// frozen boundary of a box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Shifted {
    Inside(Site),
    Boundary,
}

impl Geometry {
    pub fn new(kind: GeometryKind, dim: usize, side: usize) -> Result<Self, LatticeError> {
        if dim == 0 {
            return Err(LatticeError::InvalidGeometry("dimension must be positive".into()));
        }
        if side == 0 {
            return Err(LatticeError::InvalidGeometry("side must be positive".into()));
        }
        if kind == GeometryKind::Box && dim != 1 {
            return Err(LatticeError::InvalidGeometry(
                "the frozen-empty box is one-dimensional".into(),
            ));
        }
        let volume = side
            .checked_pow(dim as u32)
            .ok_or_else(|| LatticeError::InvalidGeometry("volume overflows".into()))?;
        if volume > u32::MAX as usize {
            return Err(LatticeError::InvalidGeometry("volume too large".into()));
        }
        Ok(Geometry { kind, dim, side })
    }

    pub fn torus(dim: usize, side: usize) -> Result<Self, LatticeError> {
        Self::new(GeometryKind::Torus, dim, side)
    }

    /// The box `{1, ..., side}` with frozen-empty exterior.
    pub fn frozen_box(side: usize) -> Result<Self, LatticeError> {
        Self::new(GeometryKind::Box, 1, side)
    }

    pub fn kind(&self) -> GeometryKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn is_torus(&self) -> bool {
        self.kind == GeometryKind::Torus
    }

    /// Number of sites, `N^d`.
    pub fn volume(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    /// Stride of `axis` in the row-major linear index.
    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.side.pow((self.dim - 1 - axis) as u32)
    }

    pub fn index(&self, site: &Site) -> Result<usize, LatticeError> {
        if site.0.len() != self.dim {
            return Err(LatticeError::SiteOutOfRange(site.0.clone()));
        }
        let offset = match self.kind {
            GeometryKind::Torus => 0,
            GeometryKind::Box => 1,
        };
        let mut idx = 0usize;
        for &c in &site.0 {
            let c0 = c - offset;
            if c0 < 0 || c0 >= self.side as i64 {
                return Err(LatticeError::SiteOutOfRange(site.0.clone()));
            }
            idx = idx * self.side + c0 as usize;
        }
        Ok(idx)
    }

    pub fn site(&self, mut index: usize) -> Site {
        let offset = match self.kind {
            GeometryKind::Torus => 0,
            GeometryKind::Box => 1,
        };
        let mut coords = vec![0i64; self.dim];
        for c in coords.iter_mut().rev() {
            *c = (index % self.side) as i64 + offset;
            index /= self.side;
        }
        Site(coords)
    }

    /// Coordinate of `index` along `axis`, zero-based in both geometries.
    #[inline]
    pub fn coordinate(&self, index: usize, axis: usize) -> usize {
        (index / self.stride(axis)) % self.side
    }

    /// Linear index of the site `steps` lattice units from `index` along
    /// `axis`, or `None` when that lands in the frozen boundary of a box.
    #[inline]
    pub fn neighbor(&self, index: usize, axis: usize, steps: isize) -> Option<usize> {
        let stride = self.stride(axis);
        let c = ((index / stride) % self.side) as isize;
        let n = self.side as isize;
        let target = c + steps;
        let wrapped = match self.kind {
            GeometryKind::Torus => target.rem_euclid(n),
            GeometryKind::Box => {
                if target < 0 || target >= n {
                    return None;
                }
                target
            }
        };
        Some((index as isize + (wrapped - c) * stride as isize) as usize)
    }

    /// Shift a site along `axis` (zero-based) by `steps`.
    pub fn shift(&self, site: &Site, axis: usize, steps: i64) -> Result<Shifted, LatticeError> {
        if axis >= self.dim {
            return Err(LatticeError::InvalidGeometry(format!(
                "axis {axis} out of range for dimension {}",
                self.dim
            )));
        }
        let idx = self.index(site)?;
        Ok(match self.neighbor(idx, axis, steps as isize) {
            Some(j) => Shifted::Inside(self.site(j)),
            None => Shifted::Boundary,
        })
    }

    /// All bonds `(x, x + e_axis)` with both endpoints inside the geometry,
    /// as `(x, axis, x + e_axis)` triples.
    pub fn bonds(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.volume() * self.dim);
        for x in 0..self.volume() {
            for axis in 0..self.dim {
                if let Some(y) = self.neighbor(x, axis, 1) {
                    // a torus of side 2 or less would double count or self-loop
                    if y != x {
                        out.push((x, axis, y));
                    }
                }
            }
        }
        out
    }

    /// Translate a site by a displacement vector (torus only).
    pub fn translate_index(&self, index: usize, by: &[i64]) -> usize {
        let mut idx = index;
        for (axis, &s) in by.iter().enumerate() {
            idx = self
                .neighbor(idx, axis, s as isize)
                .expect("translation is defined on the torus");
        }
        idx
    }

    /// Macroscopic position `x / N` of a site.
    pub fn macroscopic(&self, index: usize) -> Vec<f64> {
        self.site(index)
            .0
            .iter()
            .map(|&c| c as f64 / self.side as f64)
            .collect()
    }
}

/// An occupancy configuration packed one bit per site in row-major order.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    geometry: Geometry,
    words: Vec<u64>,
    count: usize,
}

impl fmt::Debug for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Configuration({self})")
    }
}

impl Configuration {
    pub fn empty(geometry: Geometry) -> Self {
        let words = vec![0u64; geometry.volume().div_ceil(64)];
        Configuration { geometry, words, count: 0 }
    }

    pub fn full(geometry: Geometry) -> Self {
        let mut c = Self::empty(geometry);
        for i in 0..geometry.volume() {
            c.set(i, true);
        }
        c
    }

    pub fn from_occupancy(geometry: Geometry, bits: &[u8]) -> Result<Self, LatticeError> {
        if bits.len() != geometry.volume() {
            return Err(LatticeError::LengthMismatch { expected: geometry.volume(), got: bits.len() });
        }
        let mut c = Self::empty(geometry);
        for (i, &b) in bits.iter().enumerate() {
            match b {
                0 => {}
                1 => c.set(i, true),
                other => {
                    return Err(LatticeError::Parse(format!("occupancy value {other} is not 0 or 1")))
                }
            }
        }
        Ok(c)
    }

    pub fn from_indices(geometry: Geometry, occupied: &[usize]) -> Result<Self, LatticeError> {
        let mut c = Self::empty(geometry);
        for &i in occupied {
            if i >= geometry.volume() {
                return Err(LatticeError::SiteOutOfRange(vec![i as i64]));
            }
            c.set(i, true);
        }
        Ok(c)
    }

    /// Build from a bit mask where bit `i` is the occupancy of site index `i`.
    pub fn from_mask(geometry: Geometry, mask: u64) -> Self {
        debug_assert!(geometry.volume() <= 64);
        let mut c = Self::empty(geometry);
        if geometry.volume() > 0 {
            let keep = if geometry.volume() == 64 { u64::MAX } else { (1u64 << geometry.volume()) - 1 };
            c.words[0] = mask & keep;
            c.count = c.words[0].count_ones() as usize;
        }
        c
    }

    /// Bit mask of the occupancy (site index `i` at bit `i`); needs at most 64 sites.
    pub fn mask(&self) -> u64 {
        debug_assert!(self.geometry.volume() <= 64);
        self.words.first().copied().unwrap_or(0)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    /// Number of particles.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Particle density `k / N^d`.
    pub fn density(&self) -> f64 {
        self.count as f64 / self.geometry.volume() as f64
    }

    #[inline]
    pub fn get(&self, index: usize) -> bool {
        (self.words[index >> 6] >> (index & 63)) & 1 == 1
    }

    #[inline]
    pub fn occupancy(&self, index: usize) -> u8 {
        self.get(index) as u8
    }

    /// Occupancy of an optional index, with the frozen boundary reading empty.
    #[inline]
    pub fn occupancy_or_empty(&self, index: Option<usize>) -> u8 {
        index.map_or(0, |i| self.occupancy(i))
    }

    pub fn occupancy_at(&self, site: &Site) -> Result<u8, LatticeError> {
        Ok(self.occupancy(self.geometry.index(site)?))
    }

    pub fn occupancy_of(&self, shifted: &Shifted) -> Result<u8, LatticeError> {
        match shifted {
            Shifted::Inside(s) => self.occupancy_at(s),
            Shifted::Boundary => Ok(0),
        }
    }

    pub fn set(&mut self, index: usize, value: bool) {
        let word = &mut self.words[index >> 6];
        let bit = 1u64 << (index & 63);
        let old = *word & bit != 0;
        if old != value {
            *word ^= bit;
            if value {
                self.count += 1;
            } else {
                self.count -= 1;
            }
        }
    }

    pub fn to_occupancy(&self) -> Vec<u8> {
        (0..self.geometry.volume()).map(|i| self.occupancy(i)).collect()
    }

    pub fn occupied(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.geometry.volume()).filter(move |&i| self.get(i))
    }

    /// Exchange the occupancies of two sites in place.
    #[inline]
    pub fn swap_in_place(&mut self, x: usize, y: usize) {
        let (a, b) = (self.get(x), self.get(y));
        if a != b {
            self.set(x, b);
            self.set(y, a);
        }
    }

    /// The configuration with the occupancies of `x` and `y` exchanged.
    pub fn swapped(&self, x: usize, y: usize) -> Result<Self, LatticeError> {
        if x == y {
            return Err(LatticeError::SameSite);
        }
        let n = self.geometry.volume();
        if x >= n || y >= n {
            return Err(LatticeError::SiteOutOfRange(vec![x.max(y) as i64]));
        }
        let mut out = self.clone();
        out.swap_in_place(x, y);
        Ok(out)
    }

    pub fn swap(&self, x: &Site, y: &Site) -> Result<Self, LatticeError> {
        let xi = self.geometry.index(x)?;
        let yi = self.geometry.index(y)?;
        self.swapped(xi, yi)
    }

    /// Translate the configuration: `(tau_z eta)(x) = eta(x + z)` (torus only).
    pub fn translated(&self, by: &[i64]) -> Result<Self, LatticeError> {
        if !self.geometry.is_torus() {
            return Err(LatticeError::NotTorus);
        }
        let mut out = Self::empty(self.geometry);
        for x in 0..self.geometry.volume() {
            if self.get(self.geometry.translate_index(x, by)) {
                out.set(x, true);
            }
        }
        Ok(out)
    }

    /// Density in the cube of radius `l` around `x`, with periodic wrap.
    pub fn block_average(&self, x: &Site, l: usize) -> Result<f64, LatticeError> {
        let g = self.geometry;
        if !g.is_torus() {
            return Err(LatticeError::NotTorus);
        }
        if 2 * l + 1 > g.side() {
            return Err(LatticeError::BlockTooLarge { radius: l, side: g.side() });
        }
        let center = g.index(x)?;
        let width = 2 * l as i64 + 1;
        let cube = width.pow(g.dim() as u32);
        let mut total = 0u64;
        let mut offset = vec![-(l as i64); g.dim()];
        for _ in 0..cube {
            total += self.occupancy(g.translate_index(center, &offset)) as u64;
            for c in offset.iter_mut().rev() {
                *c += 1;
                if *c > l as i64 {
                    *c = -(l as i64);
                } else {
                    break;
                }
            }
        }
        Ok(total as f64 / cube as f64)
    }

    /// Block averages around every site, indexed like the sites.
    pub fn block_average_field(&self, l: usize) -> Result<Vec<f64>, LatticeError> {
        let g = self.geometry;
        if !g.is_torus() {
            return Err(LatticeError::NotTorus);
        }
        if 2 * l + 1 > g.side() {
            return Err(LatticeError::BlockTooLarge { radius: l, side: g.side() });
        }
        let values: Vec<f64> = (0..g.volume()).map(|i| self.occupancy(i) as f64).collect();
        let sums = cyclic_box_sum(&g, &values, l);
        let cube = ((2 * l + 1) as f64).powi(g.dim() as i32);
        Ok(sums.into_iter().map(|s| s / cube).collect())
    }
}

/// Sum of `values` over the cube of radius `l` around each site of a torus,
/// computed one axis at a time with running sums.
pub fn cyclic_box_sum(g: &Geometry, values: &[f64], l: usize) -> Vec<f64> {
    let mut cur = values.to_vec();
    let n = g.side();
    for axis in 0..g.dim() {
        let stride = g.stride(axis);
        let mut next = vec![0.0; cur.len()];
        for start in 0..g.volume() {
            if g.coordinate(start, axis) != 0 {
                continue;
            }
            let at = |c: usize| start + (c % n) * stride;
            let mut s: f64 = (0..=2 * l).map(|o| cur[at(n - l + o)]).sum();
            next[at(0)] = s;
            for c in 1..n {
                s += cur[at(c + l)] - cur[at(c + n - l - 1)];
                next[at(c)] = s;
            }
        }
        cur = next;
    }
    cur
}

impl fmt::Display for Configuration {
    /// Compact text form `"d N kind:bits"`, bits in row-major order.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}:", self.geometry.dim, self.geometry.side, self.geometry.kind)?;
        for i in 0..self.geometry.volume() {
            f.write_str(if self.get(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for Configuration {
    type Err = LatticeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split_whitespace();
        let mut next = |what: &str| {
            parts.next().ok_or_else(|| LatticeError::Parse(format!("missing {what}")))
        };
        let dim: usize = next("dimension")?
            .parse()
            .map_err(|e| LatticeError::Parse(format!("dimension: {e}")))?;
        let side: usize =
            next("side")?.parse().map_err(|e| LatticeError::Parse(format!("side: {e}")))?;
        let tail = next("occupancy")?;
        let (kind, bits) = tail
            .split_once(':')
            .ok_or_else(|| LatticeError::Parse("expected kind:bits".into()))?;
        let geometry = Geometry::new(kind.parse()?, dim, side)?;
        let occ = bits
            .chars()
            .map(|c| match c {
                '0' => Ok(0u8),
                '1' => Ok(1u8),
                other => Err(LatticeError::Parse(format!("bad occupancy character `{other}`"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if parts.next().is_some() {
            return Err(LatticeError::Parse("trailing input".into()));
        }
        Configuration::from_occupancy(geometry, &occ)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn torus_shift_wraps() {
        let g = Geometry::torus(1, 5).unwrap();
        assert_eq!(g.shift(&Site::from(4), 0, 1).unwrap(), Shifted::Inside(Site::from(0)));
        let g2 = Geometry::torus(2, 4).unwrap();
        assert_eq!(
            g2.shift(&Site::new([3, 2]), 1, 2).unwrap(),
            Shifted::Inside(Site::new([3, 0]))
        );
    }

    #[test]
    fn box_shift_reaches_frozen_boundary() {
        let g = Geometry::frozen_box(6).unwrap();
        let out = g.shift(&Site::from(1), 0, -1).unwrap();
        assert_eq!(out, Shifted::Boundary);
        let eta = Configuration::full(g);
        assert_eq!(eta.occupancy_of(&out).unwrap(), 0);
        assert_eq!(g.shift(&Site::from(6), 0, 1).unwrap(), Shifted::Boundary);
        assert_eq!(g.shift(&Site::from(5), 0, 1).unwrap(), Shifted::Inside(Site::from(6)));
    }

    #[test]
    fn box_must_be_one_dimensional() {
        assert!(Geometry::new(GeometryKind::Box, 2, 4).is_err());
        assert!(Geometry::torus(0, 4).is_err());
    }

    #[test]
    fn swap_examples() {
        let g = Geometry::torus(1, 3).unwrap();
        let eta = Configuration::from_occupancy(g, &[1, 0, 0]).unwrap();
        let out = eta.swap(&Site::from(0), &Site::from(1)).unwrap();
        assert_eq!(out.to_occupancy(), vec![0, 1, 0]);

        let eta = Configuration::from_occupancy(g, &[1, 0, 1]).unwrap();
        assert_eq!(eta.swap(&Site::from(0), &Site::from(2)).unwrap(), eta);

        assert_eq!(eta.swap(&Site::from(1), &Site::from(1)), Err(LatticeError::SameSite));

        let g2 = Geometry::torus(2, 3).unwrap();
        let single = Configuration::from_indices(g2, &[g2.index(&Site::new([0, 0])).unwrap()]).unwrap();
        let moved = single.swap(&Site::new([0, 0]), &Site::new([1, 1])).unwrap();
        assert_eq!(moved.count(), 1);
        assert_eq!(moved.occupancy_at(&Site::new([1, 1])).unwrap(), 1);
    }

    #[test]
    fn block_average_examples() {
        let g = Geometry::torus(1, 5).unwrap();
        let eta = Configuration::from_occupancy(g, &[1, 0, 1, 0, 0]).unwrap();
        assert!((eta.block_average(&Site::from(0), 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);

        let full = Configuration::full(g);
        for l in 0..=2 {
            assert_eq!(full.block_average(&Site::from(3), l).unwrap(), 1.0);
        }

        let g2 = Geometry::torus(2, 4).unwrap();
        let single = Configuration::from_indices(g2, &[0]).unwrap();
        assert!((single.block_average(&Site::new([0, 0]), 1).unwrap() - 1.0 / 9.0).abs() < 1e-15);

        assert_eq!(
            eta.block_average(&Site::from(0), 3),
            Err(LatticeError::BlockTooLarge { radius: 3, side: 5 })
        );
    }

    #[test]
    fn text_form_round_trip() {
        let eta: Configuration = "1 5 torus:10100".parse().unwrap();
        assert_eq!(eta.count(), 2);
        assert_eq!(eta.to_string(), "1 5 torus:10100");
        let b: Configuration = "1 6 box:011000".parse().unwrap();
        assert_eq!(b.geometry().kind(), GeometryKind::Box);
        assert!("1 5 torus:1010".parse::<Configuration>().is_err());
        assert!("1 5 torus:10102".parse::<Configuration>().is_err());
    }

    fn torus_config() -> impl Strategy<Value = Configuration> {
        (1usize..=2, 3usize..=7).prop_flat_map(|(d, n)| {
            let g = Geometry::torus(d, n).unwrap();
            proptest::collection::vec(0u8..=1, g.volume())
                .prop_map(move |bits| Configuration::from_occupancy(g, &bits).unwrap())
        })
    }

    proptest! {
        #[test]
        fn swap_is_an_involution(eta in torus_config(), a in 0usize..1000, b in 0usize..1000) {
            let n = eta.geometry().volume();
            let (x, y) = (a % n, b % n);
            prop_assume!(x != y);
            let once = eta.swapped(x, y).unwrap();
            prop_assert_eq!(once.count(), eta.count());
            prop_assert_eq!(once.swapped(x, y).unwrap(), eta);
        }

        #[test]
        fn block_average_commutes_with_translation(eta in torus_config(), z in 0i64..10, x in 0usize..1000, l in 0usize..3) {
            let g = *eta.geometry();
            prop_assume!(2 * l + 1 <= g.side());
            let shift = vec![z; g.dim()];
            let x = x % g.volume();
            let moved = eta.translated(&shift).unwrap();
            let lhs = moved.block_average(&g.site(x), l).unwrap();
            let rhs = eta.block_average(&g.site(g.translate_index(x, &shift)), l).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&lhs));
        }

        #[test]
        fn global_block_is_density(eta in torus_config(), x in 0usize..1000) {
            let g = *eta.geometry();
            prop_assume!(g.side() % 2 == 1);
            let l = (g.side() - 1) / 2;
            let v = eta.block_average(&g.site(x % g.volume()), l).unwrap();
            prop_assert!((v - eta.density()).abs() < 1e-15);
        }

        #[test]
        fn field_matches_pointwise(eta in torus_config(), l in 0usize..3) {
            let g = *eta.geometry();
            prop_assume!(2 * l + 1 <= g.side());
            let field = eta.block_average_field(l).unwrap();
            for (i, v) in field.iter().enumerate() {
                let direct = eta.block_average(&g.site(i), l).unwrap();
                prop_assert!((v - direct).abs() < 1e-12);
            }
        }
    }
}
