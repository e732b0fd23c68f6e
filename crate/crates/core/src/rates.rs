//! Exchange rates of the constrained lattice gases, the instantaneous
//! current, the gradient local functions and their equilibrium expectations.
//!
//! Window closures `eta(o)` return the occupancy at offset `o` along the bond
//! axis, measured from the left endpoint of the bond `(x, x + e_j)`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{Configuration, Geometry, GeometryKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("operation needs a porous-medium rate model")]
    RequiresPorousMedium,
    #[error("operation needs the m = 2 rates")]
    RequiresOrderTwo,
    #[error("density {0} outside [0, 1]")]
    DensityOutOfRange(f64),
    #[error("perturbation exponent theta = {0} outside (0, 2)")]
    ThetaOutOfRange(f64),
    #[error("side {side} too small for this model (needs at least {min})")]
    SideTooSmall { side: usize, min: usize },
    #[error("perturbed model built for side {model} used on side {geometry}")]
    SideMismatch { model: usize, geometry: usize },
    #[error("current is not a gradient of any local function on the window")]
    NotGradient,
}

/// Exponent `m` of the porous medium equation reproduced by the rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Order {
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "3")]
    Three,
}

impl Order {
    pub fn value(self) -> u32 {
        match self {
            Order::Two => 2,
            Order::Three => 3,
        }
    }

    pub fn from_value(m: u32) -> Option<Self> {
        match m {
            2 => Some(Order::Two),
            3 => Some(Order::Three),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum RateModel {
    /// Pure kinetically constrained dynamics.
    PorousMedium { m: Order },
    /// Symmetric simple exclusion.
    Ssep,
    /// Constrained dynamics plus exclusion slowed down by `side^(theta - 2)`.
    Perturbed { m: Order, theta: f64, side: usize },
}

impl RateModel {
    pub fn porous(m: Order) -> Self {
        RateModel::PorousMedium { m }
    }

    pub fn perturbed(m: Order, theta: f64, side: usize) -> Result<Self, RateError> {
        if !(theta > 0.0 && theta < 2.0) {
            return Err(RateError::ThetaOutOfRange(theta));
        }
        Ok(RateModel::Perturbed { m, theta, side })
    }

    /// Order of the constrained part, if any.
    pub fn order(&self) -> Option<Order> {
        match *self {
            RateModel::PorousMedium { m } | RateModel::Perturbed { m, .. } => Some(m),
            RateModel::Ssep => None,
        }
    }

    /// Prefactor `N^(theta - 2)` of the exclusion part (0 without one, 1 for SSEP).
    pub fn exclusion_weight(&self) -> f64 {
        match *self {
            RateModel::PorousMedium { .. } => 0.0,
            RateModel::Ssep => 1.0,
            RateModel::Perturbed { theta, side, .. } => (side as f64).powf(theta - 2.0),
        }
    }

    /// Offsets `(lo, hi)` of the sites the rate of bond `(0, 1)` reads.
    pub fn window(&self) -> (isize, isize) {
        match self.order() {
            Some(m) => (-(m.value() as isize - 1), m.value() as isize),
            None => (0, 1),
        }
    }

    pub fn min_side(&self) -> usize {
        match self.order() {
            Some(Order::Two) => 4,
            Some(Order::Three) => 6,
            None => 3,
        }
    }

    pub fn validate(&self, geometry: &Geometry) -> Result<(), RateError> {
        if geometry.side() < self.min_side() {
            return Err(RateError::SideTooSmall { side: geometry.side(), min: self.min_side() });
        }
        if let RateModel::Perturbed { theta, side, .. } = *self {
            if !(theta > 0.0 && theta < 2.0) {
                return Err(RateError::ThetaOutOfRange(theta));
            }
            if side != geometry.side() {
                return Err(RateError::SideMismatch { model: side, geometry: geometry.side() });
            }
        }
        Ok(())
    }

    /// Constraint `c(x, x + e_j, eta)` read from a window closure.
    pub fn constraint(&self, geometry: &Geometry, eta: impl Fn(isize) -> u8) -> f64 {
        let s = ssep_rate(geometry);
        match *self {
            RateModel::PorousMedium { m } => porous_constraint(m, eta) as f64,
            RateModel::Ssep => s,
            RateModel::Perturbed { m, .. } => {
                porous_constraint(m, eta) as f64 + self.exclusion_weight() * s
            }
        }
    }
}

/// Per-bond exclusion rate: `1/(2d)` on the torus and `1` in the box.
pub fn ssep_rate(geometry: &Geometry) -> f64 {
    match geometry.kind() {
        GeometryKind::Torus => 1.0 / (2.0 * geometry.dim() as f64),
        GeometryKind::Box => 1.0,
    }
}

/// Integer constraint of the porous-medium rates.
///
/// m = 2: `eta(-1) + eta(2)`;
/// m = 3: `eta(-1) eta(2) + eta(-2) eta(-1) + eta(2) eta(3)`.
#[inline]
pub fn porous_constraint(m: Order, eta: impl Fn(isize) -> u8) -> u32 {
    match m {
        Order::Two => eta(-1) as u32 + eta(2) as u32,
        Order::Three => {
            let (a, b, c, d) = (eta(-2) as u32, eta(-1) as u32, eta(2) as u32, eta(3) as u32);
            b * c + a * b + c * d
        }
    }
}

/// Window closure for the bond `(x, x + e_axis)` of a configuration.
pub fn bond_window(eta: &Configuration, x: usize, axis: usize) -> impl Fn(isize) -> u8 + '_ {
    let g = *eta.geometry();
    move |o| eta.occupancy_or_empty(g.neighbor(x, axis, o))
}

/// `c(x, x + e_axis, eta)`; never reads `eta(x)` or `eta(x + e_axis)`.
pub fn kinetic_constraint(model: &RateModel, eta: &Configuration, x: usize, axis: usize) -> f64 {
    model.constraint(eta.geometry(), bond_window(eta, x, axis))
}

/// Constraint of the bond between nearest neighbours `x` and `y`, queried from
/// either endpoint.
pub fn kinetic_constraint_between(
    model: &RateModel,
    eta: &Configuration,
    x: usize,
    y: usize,
) -> Option<f64> {
    let g = eta.geometry();
    (0..g.dim()).find_map(|axis| {
        if g.neighbor(x, axis, 1) == Some(y) {
            Some(kinetic_constraint(model, eta, x, axis))
        } else if g.neighbor(y, axis, 1) == Some(x) {
            Some(kinetic_constraint(model, eta, y, axis))
        } else {
            None
        }
    })
}

/// Total rate at which the occupancies of `x` and `x + e_axis` are exchanged.
pub fn bond_exchange_rate(model: &RateModel, eta: &Configuration, x: usize, axis: usize) -> f64 {
    let g = eta.geometry();
    let Some(y) = g.neighbor(x, axis, 1) else {
        return 0.0;
    };
    if eta.get(x) == eta.get(y) {
        0.0
    } else {
        kinetic_constraint(model, eta, x, axis)
    }
}

/// Instantaneous current `c(x, x+e_j, eta) (eta(x) - eta(x+e_j))`.
pub fn current(model: &RateModel, eta: &Configuration, x: usize, axis: usize) -> Result<f64, RateError> {
    let RateModel::PorousMedium { m } = *model else {
        return Err(RateError::RequiresPorousMedium);
    };
    Ok(window_current(m, bond_window(eta, x, axis)) as f64)
}

/// Integer current across bond `(0, 1)` of a window.
#[inline]
pub fn window_current(m: Order, eta: impl Fn(isize) -> u8) -> i32 {
    let c = porous_constraint(m, &eta) as i32;
    c * (eta(0) as i32 - eta(1) as i32)
}

/// `h(eta) = eta(0)eta(1) + eta(0)eta(-1) - eta(-1)eta(1)` (m = 2).
#[inline]
pub fn local_h(eta: impl Fn(isize) -> u8) -> i32 {
    let (l, o, r) = (eta(-1) as i32, eta(0) as i32, eta(1) as i32);
    o * r + o * l - l * r
}

/// `g(eta) = c(0, 1, eta) (eta(0) - eta(1))^2` (m = 2).
#[inline]
pub fn local_g(eta: impl Fn(isize) -> u8) -> i32 {
    let c = porous_constraint(Order::Two, &eta) as i32;
    let d = eta(0) as i32 - eta(1) as i32;
    c * d * d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocalFunction {
    H,
    G,
}

impl LocalFunction {
    /// Evaluate the m = 2 local function on a window.
    pub fn eval(self, eta: impl Fn(isize) -> u8) -> i32 {
        match self {
            LocalFunction::H => local_h(eta),
            LocalFunction::G => local_g(eta),
        }
    }
}

/// Expectation under the Bernoulli product measure of density `rho`:
/// `h~ = rho^m`, `g~ = E[c] 2 rho (1 - rho)`.
pub fn expected_local(f: LocalFunction, rho: f64, m: Order) -> Result<f64, RateError> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(RateError::DensityOutOfRange(rho));
    }
    Ok(match (f, m) {
        (LocalFunction::H, m) => rho.powi(m.value() as i32),
        (LocalFunction::G, Order::Two) => 4.0 * rho * rho * (1.0 - rho),
        (LocalFunction::G, Order::Three) => 6.0 * rho.powi(3) * (1.0 - rho),
    })
}

/// Lookup table of bond exchange rates keyed by the packed constraint window
/// (bit `i` holds the occupancy at offset `lo + i`).
#[derive(Debug, Clone)]
pub struct RateTable {
    lo: isize,
    width: usize,
    rates: Vec<f64>,
}

impl RateTable {
    pub fn new(model: &RateModel, geometry: &Geometry) -> Self {
        let (lo, hi) = model.window();
        let width = (hi - lo + 1) as usize;
        let rates = (0..1usize << width)
            .map(|w| {
                let eta = |o: isize| ((w >> (o - lo)) & 1) as u8;
                if eta(0) == eta(1) {
                    0.0
                } else {
                    model.constraint(geometry, eta)
                }
            })
            .collect();
        RateTable { lo, width, rates }
    }

    pub fn lo(&self) -> isize {
        self.lo
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn rate(&self, packed: usize) -> f64 {
        self.rates[packed]
    }

    pub fn max_rate(&self) -> f64 {
        self.rates.iter().cloned().fold(0.0, f64::max)
    }
}

/// A local function `h` on a window of the line with `W_{0,1} = h - tau_1 h`.
#[derive(Debug, Clone)]
pub struct GradientDecomposition {
    /// Offset of the leftmost site `h` reads.
    pub lo: isize,
    /// Number of sites `h` reads.
    pub len: usize,
    /// Value of `h` for each packed window (bit `i` = offset `lo + i`).
    pub table: Vec<BigRational>,
}

impl GradientDecomposition {
    pub fn value(&self, eta: impl Fn(isize) -> u8) -> &BigRational {
        let packed = (0..self.len).fold(0usize, |acc, i| acc | ((eta(self.lo + i as isize) as usize) << i));
        &self.table[packed]
    }

    pub fn value_f64(&self, eta: impl Fn(isize) -> u8) -> f64 {
        rational_to_f64(self.value(eta))
    }

    /// The same decomposition shifted by a constant so that `h(empty) = 0`.
    pub fn normalized(&self) -> Self {
        let base = self.table[0].clone();
        GradientDecomposition {
            lo: self.lo,
            len: self.len,
            table: self.table.iter().map(|v| v - &base).collect(),
        }
    }
}

pub(crate) fn rational_to_f64(r: &BigRational) -> f64 {
    // numerators and denominators here are tiny
    let n: f64 = r.numer().to_string().parse().unwrap_or(f64::NAN);
    let d: f64 = r.denom().to_string().parse().unwrap_or(f64::NAN);
    n / d
}

fn exact_constraint(model: &RateModel, eta: impl Fn(isize) -> u8) -> Result<BigRational, RateError> {
    match *model {
        RateModel::PorousMedium { m } => Ok(BigRational::from_integer(BigInt::from(porous_constraint(m, eta)))),
        // one-dimensional torus rate 1/(2d) = 1/2
        RateModel::Ssep => Ok(BigRational::new(BigInt::one(), BigInt::from(2))),
        RateModel::Perturbed { .. } => Err(RateError::RequiresPorousMedium),
    }
}

/// Solve `W_{0,1}(eta) = h(eta) - h(tau_1 eta)` exactly over every window
/// configuration. The solution of least Euclidean norm is returned; any other
/// solution differs from it by a constant.
pub fn find_gradient_decomposition(model: &RateModel) -> Result<GradientDecomposition, RateError> {
    let (lo, hi) = model.window();
    let width = (hi - lo + 1) as usize;
    let unknowns = 1usize << (width - 1);
    let rows = 1usize << width;

    let mut a: Vec<Vec<BigRational>> = Vec::with_capacity(rows);
    let mut b: Vec<BigRational> = Vec::with_capacity(rows);
    let mut currents = Vec::with_capacity(rows);
    for w in 0..rows {
        let eta = |o: isize| ((w >> (o - lo)) & 1) as u8;
        let c = exact_constraint(model, eta)?;
        let diff = BigRational::from_integer(BigInt::from(eta(0) as i32 - eta(1) as i32));
        let current = c * diff;
        let mut row = vec![BigRational::zero(); unknowns];
        let here = w & (unknowns - 1);
        let shifted = w >> 1;
        row[here] += BigRational::one();
        row[shifted] -= BigRational::one();
        a.push(row);
        b.push(current.clone());
        currents.push(current);
    }

    let solution = least_norm_solution(a, b).ok_or(RateError::NotGradient)?;
    let dec = GradientDecomposition { lo, len: width - 1, table: solution };

    for (w, expected) in currents.iter().enumerate() {
        let lhs = &dec.table[w & (unknowns - 1)] - &dec.table[w >> 1];
        if &lhs != expected {
            return Err(RateError::NotGradient);
        }
    }
    Ok(dec)
}

/// Least-norm solution of a consistent rational system, `None` if inconsistent.
fn least_norm_solution(mut a: Vec<Vec<BigRational>>, mut b: Vec<BigRational>) -> Option<Vec<BigRational>> {
    let rows = a.len();
    let cols = a.first().map_or(0, |r| r.len());
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        let Some(p) = (r..rows).find(|&i| !a[i][c].is_zero()) else {
            continue;
        };
        a.swap(r, p);
        b.swap(r, p);
        let inv = a[r][c].recip();
        for v in a[r].iter_mut() {
            *v *= &inv;
        }
        b[r] *= &inv;
        for i in 0..rows {
            if i != r && !a[i][c].is_zero() {
                let f = a[i][c].clone();
                for j in 0..cols {
                    let t = &f * &a[r][j];
                    a[i][j] -= t;
                }
                let t = &f * &b[r];
                b[i] -= t;
            }
        }
        pivots.push(c);
        r += 1;
        if r == rows {
            break;
        }
    }
    if b[r..].iter().any(|v| !v.is_zero()) {
        return None;
    }

    let free: Vec<usize> = (0..cols).filter(|c| !pivots.contains(c)).collect();
    let mut x = vec![BigRational::zero(); cols];
    for (i, &pc) in pivots.iter().enumerate() {
        x[pc] = b[i].clone();
    }
    // null space basis: one vector per free column
    let mut basis: Vec<Vec<BigRational>> = free
        .iter()
        .map(|&f| {
            let mut v = vec![BigRational::zero(); cols];
            v[f] = BigRational::one();
            for (i, &pc) in pivots.iter().enumerate() {
                v[pc] = -a[i][f].clone();
            }
            v
        })
        .collect();

    // Gram-Schmidt, then remove the null-space component of x
    let dot = |u: &[BigRational], v: &[BigRational]| -> BigRational {
        u.iter().zip(v).fold(BigRational::zero(), |acc, (p, q)| acc + p * q)
    };
    for i in 0..basis.len() {
        for j in 0..i {
            let coef = dot(&basis[i], &basis[j]) / dot(&basis[j], &basis[j]);
            let bj = basis[j].clone();
            for (v, w) in basis[i].iter_mut().zip(&bj) {
                *v -= &coef * w;
            }
        }
    }
    for q in &basis {
        let coef = dot(&x, q) / dot(q, q);
        for (v, w) in x.iter_mut().zip(q) {
            *v -= &coef * w;
        }
    }
    Some(x)
}
