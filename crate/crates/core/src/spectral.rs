//! Exact generators on hyperplanes, spectral gaps, Dirichlet forms and
//! comparison constants between two dynamics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ergodic::{ErgodicError, MoveTable, StateSpace};
use crate::lattice::Geometry;
use crate::rates::RateModel;

/// Largest hyperplane a generator is built for.
pub const GENERATOR_BUDGET: u64 = 100_000;

/// Above this many states the gap is computed by Lanczos iteration instead of
/// a dense eigendecomposition.
pub const DENSE_LIMIT: usize = 2_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error(transparent)]
    StateSpace(#[from] ErgodicError),
    #[error("vector of length {found} does not match {expected} states")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("generators act on different hyperplanes")]
    HyperplaneMismatch,
    #[error("the hyperplane has a single state")]
    Degenerate,
    #[error("eigensolver did not converge after {0} iterations")]
    NotConverged(usize),
    #[error("cholesky factorisation of the denominator form failed")]
    NotPositiveDefinite,
}

/// The dynamics a generator is built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dynamics", rename_all = "kebab-case")]
pub enum Dynamics {
    /// Nearest-neighbour exchanges at the rates of a [`RateModel`].
    Local(RateModel),
    /// Exchanges between any occupied and any empty site, each ordered pair at
    /// rate `1/|sites|`.
    LongRange,
}

/// Generator of a hyperplane in compressed sparse row form.
#[derive(Debug, Clone)]
pub struct SparseGenerator {
    space: StateSpace,
    dynamics: Dynamics,
    masks: Vec<u64>,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    diag: Vec<f64>,
}

pub fn build_generator(geometry: Geometry, k: usize, dynamics: Dynamics) -> Result<SparseGenerator, SpectralError> {
    if let Dynamics::Local(model) = &dynamics {
        model.validate(&geometry).map_err(ErgodicError::from)?;
    }
    let space = StateSpace::new(geometry, k, GENERATOR_BUDGET)?;
    let masks: Vec<u64> = space.masks().collect();
    let mut row_ptr = Vec::with_capacity(masks.len() + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut diag = Vec::with_capacity(masks.len());
    row_ptr.push(0);
    let table = match dynamics {
        Dynamics::Local(model) => Some(MoveTable::new(&model, &geometry)),
        Dynamics::LongRange => None,
    };
    let n_sites = geometry.volume();
    let mut row: Vec<(u32, f64)> = Vec::new();
    for &mask in &masks {
        row.clear();
        match &table {
            Some(t) => row.extend(space.moves(t, mask).map(|(m, r)| (space.rank(m) as u32, r))),
            None => {
                let rate = 1.0 / n_sites as f64;
                for x in (0..n_sites).filter(|&x| (mask >> x) & 1 == 1) {
                    for y in (0..n_sites).filter(|&y| (mask >> y) & 1 == 0) {
                        row.push((space.rank(mask ^ (1 << x) ^ (1 << y)) as u32, rate));
                    }
                }
            }
        }
        // different bonds may produce the same target (e.g. a ring of two sites)
        row.sort_by_key(|e| e.0);
        let mut total = 0.0;
        let mut last = u32::MAX;
        for &(c, r) in row.iter() {
            total += r;
            if c == last {
                *vals.last_mut().expect("entry pushed") += r;
            } else {
                cols.push(c);
                vals.push(r);
                last = c;
            }
        }
        diag.push(-total);
        row_ptr.push(cols.len());
    }
    Ok(SparseGenerator { space, dynamics, masks, row_ptr, cols, vals, diag })
}

impl SparseGenerator {
    pub fn dim(&self) -> usize {
        self.masks.len()
    }

    pub fn geometry(&self) -> &Geometry {
        self.space.geometry()
    }

    pub fn particles(&self) -> usize {
        self.space.particles()
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    /// Site masks of the states, in index order.
    pub fn masks(&self) -> &[u64] {
        &self.masks
    }

    /// Single-state hyperplane (`k = 0` or all sites filled).
    pub fn is_degenerate(&self) -> bool {
        self.dim() == 1
    }

    pub fn nonzeros(&self) -> usize {
        self.cols.len() + self.dim()
    }

    /// Off-diagonal entries of row `i` as `(column, rate)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().zip(&self.vals[r]).map(|(&c, &v)| (c as usize, v))
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        self.diag[i]
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    /// Every off-diagonal entry equals its transpose bit for bit.
    pub fn is_symmetric(&self) -> bool {
        (0..self.dim()).all(|i| self.row(i).all(|(j, v)| self.entry(j, i) == v))
    }

    /// Largest absolute row sum.
    pub fn max_row_sum(&self) -> f64 {
        (0..self.dim())
            .map(|i| (self.diag[i] + self.row(i).map(|(_, v)| v).sum::<f64>()).abs())
            .fold(0.0, f64::max)
    }

    /// Largest absolute column sum.
    pub fn max_column_sum(&self) -> f64 {
        let mut sums = self.diag.clone();
        for i in 0..self.dim() {
            for (j, v) in self.row(i) {
                sums[j] += v;
            }
        }
        sums.into_iter().map(f64::abs).fold(0.0, f64::max)
    }

    /// `L f`.
    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>, SpectralError> {
        self.check_len(f)?;
        Ok((0..self.dim())
            .map(|i| self.diag[i] * f[i] + self.row(i).map(|(j, v)| v * f[j]).sum::<f64>())
            .collect())
    }

    fn apply_negated(&self, f: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = -(self.diag[i] * f[i] + self.row(i).map(|(j, v)| v * f[j]).sum::<f64>());
        }
    }

    fn check_len(&self, f: &[f64]) -> Result<(), SpectralError> {
        if f.len() != self.dim() {
            Err(SpectralError::DimensionMismatch { expected: self.dim(), found: f.len() })
        } else {
            Ok(())
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// Connected components of the transition graph.
    pub fn component_count(&self) -> usize {
        let n = self.dim();
        let mut label = vec![usize::MAX; n];
        let mut count = 0;
        let mut stack = Vec::new();
        for s in 0..n {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = count;
            stack.push(s);
            while let Some(i) = stack.pop() {
                for (j, _) in self.row(i) {
                    if label[j] == usize::MAX {
                        label[j] = count;
                        stack.push(j);
                    }
                }
            }
            count += 1;
        }
        count
    }

    /// Test vector `f(eta) = g(mask of eta)` over the hyperplane.
    pub fn vector(&self, g: impl Fn(u64) -> f64) -> Vec<f64> {
        self.masks.iter().map(|&m| g(m)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GapMethod {
    Dense,
    Lanczos,
    Reducible,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gap {
    pub value: f64,
    /// Multiplicity of the eigenvalue zero, i.e. the number of components.
    pub zero_multiplicity: usize,
    pub method: GapMethod,
}

/// Second smallest eigenvalue of `-L`; zero when the chain is reducible.
pub fn spectral_gap(generator: &SparseGenerator) -> Result<Gap, SpectralError> {
    if generator.is_degenerate() {
        return Ok(Gap { value: 0.0, zero_multiplicity: 1, method: GapMethod::Degenerate });
    }
    let components = generator.component_count();
    if components > 1 {
        return Ok(Gap { value: 0.0, zero_multiplicity: components, method: GapMethod::Reducible });
    }
    if generator.dim() <= DENSE_LIMIT {
        let eig = SymmetricEigen::new(-generator.to_dense());
        let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        values.sort_by(f64::total_cmp);
        Ok(Gap { value: values[1], zero_multiplicity: 1, method: GapMethod::Dense })
    } else {
        let value = lanczos_gap(generator, 1e-11)?;
        Ok(Gap { value, zero_multiplicity: 1, method: GapMethod::Lanczos })
    }
}

/// Smallest eigenvalue of `-L` on the complement of constants, by Lanczos with
/// full reorthogonalisation.
fn lanczos_gap(g: &SparseGenerator, tol: f64) -> Result<f64, SpectralError> {
    let n = g.dim();
    let max_iter = (n - 1).min(1_500);
    let norm_bound = 2.0 * g.diag.iter().fold(0.0f64, |a, d| a.max(d.abs()));
    let remove_constant = |v: &mut [f64]| {
        let mean = v.iter().sum::<f64>() / n as f64;
        v.iter_mut().for_each(|x| *x -= mean);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut q: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    remove_constant(&mut q);
    normalize(&mut q);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    let mut previous = f64::INFINITY;
    for it in 0..max_iter {
        g.apply_negated(&basis[it], &mut w);
        let a = dot(&w, &basis[it]);
        alpha.push(a);
        // two passes of Gram-Schmidt against the constant and the whole basis
        for _ in 0..2 {
            remove_constant(&mut w);
            for b in &basis {
                let c = dot(&w, b);
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let b = dot(&w, &w).sqrt();
        let check = it + 1 == max_iter || b <= tol * norm_bound || (it + 1) % 10 == 0;
        if check {
            let (theta, last) = smallest_ritz(&alpha, &beta);
            let residual = b * last.abs();
            let settled = (theta - previous).abs() <= tol * norm_bound.max(1.0);
            if residual <= tol * norm_bound || b <= tol * norm_bound || (settled && residual <= 1e3 * tol * norm_bound) {
                return Ok(theta);
            }
            previous = theta;
        }
        if it + 1 == max_iter {
            break;
        }
        beta.push(b);
        basis.push(w.iter().map(|x| x / b).collect());
    }
    Err(SpectralError::NotConverged(max_iter))
}

/// Smallest eigenvalue of the Lanczos tridiagonal matrix and the last
/// component of its eigenvector.
fn smallest_ritz(alpha: &[f64], beta: &[f64]) -> (f64, f64) {
    let m = alpha.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let (idx, &theta) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty tridiagonal");
    (theta, eig.eigenvectors[(m - 1, idx)])
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// `-<f, L f>` under the uniform measure.
pub fn dirichlet_form(generator: &SparseGenerator, f: &[f64]) -> Result<f64, SpectralError> {
    let lf = generator.apply(f)?;
    Ok(-dot(f, &lf) / f.len() as f64)
}

/// Variance under the uniform measure.
pub fn variance(f: &[f64]) -> f64 {
    let n = f.len() as f64;
    let mean = f.iter().sum::<f64>() / n;
    f.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// `D(f) / Var(f)`, an upper bound on the gap for every non-constant `f`.
pub fn rayleigh_quotient(generator: &SparseGenerator, f: &[f64]) -> Result<f64, SpectralError> {
    Ok(dirichlet_form(generator, f)? / variance(f))
}

/// `(1/N) sum_{x,y} E[(f(eta^{x,y}) - f(eta))^2]` over all ordered pairs of
/// sites, under the uniform measure on the hyperplane of `space`.
///
/// Each unordered pair with different occupations appears twice, so this is
/// four times the form `-<f, L f>` of the long-range generator.
pub fn long_range_pair_sum(space: &StateSpace, f: &[f64]) -> Result<f64, SpectralError> {
    if f.len() != space.len() {
        return Err(SpectralError::DimensionMismatch { expected: space.len(), found: f.len() });
    }
    let n = space.geometry().volume();
    let mut total = 0.0;
    for (i, mask) in space.masks().enumerate() {
        for x in 0..n {
            for y in 0..n {
                if ((mask >> x) ^ (mask >> y)) & 1 == 1 {
                    let j = space.rank(mask ^ (1 << x) ^ (1 << y));
                    total += (f[j] - f[i]).powi(2);
                }
            }
        }
    }
    Ok(total / n as f64 / space.len() as f64)
}

/// Smallest constant `c` with `D_numerator(f) <= c D_denominator(f)` for all `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    /// `f64::INFINITY` when the denominator dynamics is reducible.
    pub value: f64,
    pub denominator_components: usize,
}

impl Comparison {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

/// Largest generalised eigenvalue of the pencil `(-L_num, -L_den)` on the
/// complement of the constants.
pub fn comparison_constant(numerator: &SparseGenerator, denominator: &SparseGenerator) -> Result<Comparison, SpectralError> {
    if numerator.masks != denominator.masks || numerator.geometry() != denominator.geometry() {
        return Err(SpectralError::HyperplaneMismatch);
    }
    if numerator.is_degenerate() {
        return Err(SpectralError::Degenerate);
    }
    let components = denominator.component_count();
    if components > 1 {
        return Ok(Comparison { value: f64::INFINITY, denominator_components: components });
    }
    let n = numerator.dim();
    let a = -numerator.to_dense();
    // both forms vanish on constants; lifting them in the denominator makes it definite
    let b = -denominator.to_dense() + DMatrix::from_element(n, n, 1.0 / n as f64);
    let chol = b.cholesky().ok_or(SpectralError::NotPositiveDefinite)?;
    let l = chol.l();
    let linv = l.clone().try_inverse().ok_or(SpectralError::NotPositiveDefinite)?;
    let c = &linv * a * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let value = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Comparison { value, denominator_components: 1 })
}

/// Gap of the symmetric exclusion process in a box of `side` sites with a single
/// particle: `2 (1 - cos(pi / side))`.
pub fn single_particle_box_gap(side: usize) -> f64 {
    2.0 * (1.0 - (std::f64::consts::PI / side as f64).cos())
}

/// `f(eta) = sum_x H(x/N) eta(x)` on the states of a generator.
pub fn linear_statistic(generator: &SparseGenerator, h: impl Fn(f64) -> f64) -> Vec<f64> {
    let g = generator.geometry();
    let weights: Vec<f64> = (0..g.volume()).map(|x| h(g.macroscopic(x)[0])).collect();
    generator.vector(|mask| (0..weights.len()).filter(|&x| (mask >> x) & 1 == 1).map(|x| weights[x]).sum())
}

/// Dense vector helper for callers working with nalgebra.
pub fn as_dvector(f: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ergodic::components;
    use crate::lattice::Configuration;
    use crate::rates::{bond_exchange_rate, Order};
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

    fn pm() -> Dynamics {
        Dynamics::Local(RateModel::porous(Order::Two))
    }

    fn torus(n: usize) -> Geometry {
        Geometry::torus(1, n).unwrap()
    }

    fn boxed(n: usize) -> Geometry {
        Geometry::frozen_box(n).unwrap()
    }

    /// Cyclic Jacobi eigenvalue iteration for small symmetric matrices.
    fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
        let n = a.len();
        for _ in 0..100 {
            let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
            if off < 1e-26 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut d: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        d.sort_by(f64::total_cmp);
        d
    }

    fn negated_rows(g: &SparseGenerator) -> Vec<Vec<f64>> {
        (0..g.dim()).map(|i| (0..g.dim()).map(|j| -g.entry(i, j)).collect()).collect()
    }

    #[test]
    fn box_generator_matches_hand_enumeration() {
        let g = boxed(4);
        let model = RateModel::porous(Order::Two);
        let gen = build_generator(g, 2, Dynamics::Local(model)).unwrap();
        assert_eq!(gen.dim(), 6);
        let states: Vec<Configuration> = gen.masks().iter().map(|&m| Configuration::from_mask(g, m)).collect();
        for (i, eta) in states.iter().enumerate() {
            for (j, xi) in states.iter().enumerate() {
                if i == j {
                    continue;
                }
                let mut expected = 0.0;
                for x in 0..3 {
                    if eta.swapped(x, x + 1).unwrap() == *xi {
                        expected += bond_exchange_rate(&model, eta, x, 0);
                    }
                }
                assert_eq!(gen.entry(i, j), expected);
            }
        }
        // 1100 -> 1010 needs eta(-1) + eta(2): only the particle at 0 helps
        let a = states.iter().position(|s| s.to_string().ends_with("1100")).unwrap();
        let b = states.iter().position(|s| s.to_string().ends_with("1010")).unwrap();
        assert_eq!(gen.entry(a, b), 1.0);
        assert!(gen.max_row_sum() < 1e-15);
    }

    #[test]
    fn generators_are_symmetric_with_zero_sums() {
        for n in 2..=7 {
            for k in 0..=n {
                for dyn_ in [pm(), Dynamics::Local(RateModel::Ssep), Dynamics::LongRange, Dynamics::Local(RateModel::porous(Order::Three))] {
                    if matches!(dyn_, Dynamics::Local(model) if n < model.min_side()) {
                        assert!(build_generator(torus(n), k, dyn_).is_err());
                        continue;
                    }
                    let gen = build_generator(torus(n), k, dyn_).unwrap();
                    assert!(gen.is_symmetric());
                    assert!(gen.max_row_sum() < 1e-12);
                    assert!(gen.max_column_sum() < 1e-12);
                    assert!((0..gen.dim()).all(|i| gen.row(i).all(|(_, v)| v > 0.0)));
                }
            }
        }
    }

    #[test]
    fn degenerate_hyperplanes() {
        for k in [0, 5] {
            let gen = build_generator(torus(5), k, pm()).unwrap();
            assert!(gen.is_degenerate());
            assert_eq!(gen.entry(0, 0), 0.0);
            assert_eq!(spectral_gap(&gen).unwrap().method, GapMethod::Degenerate);
        }
    }

    #[test]
    fn long_range_complete_graph() {
        let gen = build_generator(torus(5), 1, Dynamics::LongRange).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert_eq!(gen.entry(i, j), 0.2);
                }
            }
        }
        assert!((spectral_gap(&gen).unwrap().value - 1.0).abs() < 1e-12);
        for n in 2..=8 {
            for k in 1..n {
                let gap = spectral_gap(&build_generator(torus(n), k, Dynamics::LongRange).unwrap()).unwrap();
                assert!((gap.value - 1.0).abs() < 1e-10, "N={n} k={k} gap={}", gap.value);
            }
        }
    }

    #[test]
    fn reducible_gap_reports_components() {
        let gap = spectral_gap(&build_generator(torus(9), 3, pm()).unwrap()).unwrap();
        assert_eq!(gap.value, 0.0);
        assert_eq!(gap.zero_multiplicity, 4);
        assert_eq!(gap.method, GapMethod::Reducible);
    }

    #[test]
    fn zero_multiplicity_matches_components() {
        for n in 4..=8 {
            for k in 0..=n {
                let report = components(torus(n), k, &RateModel::porous(Order::Two)).unwrap();
                let gen = build_generator(torus(n), k, pm()).unwrap();
                assert_eq!(gen.component_count(), report.components.len());
                let eig = SymmetricEigen::new(-gen.to_dense());
                let zeros = eig.eigenvalues.iter().filter(|v| v.abs() < 1e-9).count();
                assert_eq!(zeros, report.components.len(), "N={n} k={k}");
            }
        }
    }

    #[test]
    fn ssep_box_gap_against_oracles() {
        for n in 3..=8 {
            let gen = build_generator(boxed(n), 1, Dynamics::Local(RateModel::Ssep)).unwrap();
            assert!((spectral_gap(&gen).unwrap().value - single_particle_box_gap(n)).abs() < 1e-12);
        }
        let gen = build_generator(boxed(6), 3, Dynamics::Local(RateModel::Ssep)).unwrap();
        let oracle = jacobi_eigenvalues(negated_rows(&gen));
        assert!(oracle[0].abs() < 1e-10);
        assert!((spectral_gap(&gen).unwrap().value - oracle[1]).abs() < 1e-10);
        // for exclusion the gap does not depend on the particle number
        assert!((oracle[1] - single_particle_box_gap(6)).abs() < 1e-10);
    }

    #[test]
    fn lanczos_matches_dense() {
        for (g, k, d) in [
            (boxed(12), 6, pm()),
            (boxed(11), 3, Dynamics::Local(RateModel::perturbed(Order::Two, 1.0, 11).unwrap())),
            (torus(10), 5, Dynamics::Local(RateModel::Ssep)),
        ] {
            let gen = build_generator(g, k, d).unwrap();
            let dense = spectral_gap(&gen).unwrap();
            assert_eq!(dense.method, GapMethod::Dense);
            let lanczos = lanczos_gap(&gen, 1e-11).unwrap();
            assert!((dense.value - lanczos).abs() < 1e-8 * dense.value.max(1.0), "{} vs {}", dense.value, lanczos);
        }
    }

    #[test]
    fn dirichlet_form_examples() {
        let gen = build_generator(boxed(5), 2, pm()).unwrap();
        let constant = vec![3.0; gen.dim()];
        assert!(dirichlet_form(&gen, &constant).unwrap().abs() < 1e-12);
        assert!(variance(&constant).abs() < 1e-12);
        let mut indicator = vec![0.0f64; gen.dim()];
        indicator[4] = 1.0;
        let mut edge_sum = 0.0;
        for i in 0..gen.dim() {
            for (j, r) in gen.row(i) {
                edge_sum += r * (indicator[j] - indicator[i]).powi(2);
            }
        }
        let hand = 0.5 * edge_sum / gen.dim() as f64;
        assert!((dirichlet_form(&gen, &indicator).unwrap() - hand).abs() < 1e-14);
        assert!(matches!(dirichlet_form(&gen, &[1.0]), Err(SpectralError::DimensionMismatch { .. })));
    }

    #[test]
    fn pair_sum_is_four_generator_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gen = build_generator(torus(6), 3, Dynamics::LongRange).unwrap();
        let f: Vec<f64> = (0..gen.dim()).map(|_| rng.gen()).collect();
        let pair = long_range_pair_sum(gen.space(), &f).unwrap();
        assert!((pair - 4.0 * dirichlet_form(&gen, &f).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn comparison_constant_examples() {
        let lr = build_generator(boxed(6), 3, Dynamics::LongRange).unwrap();
        let p = build_generator(boxed(6), 3, pm()).unwrap();
        let c = comparison_constant(&lr, &p).unwrap();
        assert!(c.is_finite() && c.value > 0.0);
        // the constant really bounds the ratio of the forms
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let f: Vec<f64> = (0..lr.dim()).map(|_| rng.gen::<f64>()).collect();
            let (a, b) = (dirichlet_form(&lr, &f).unwrap(), dirichlet_form(&p, &f).unwrap());
            assert!(a <= c.value * b * (1.0 + 1e-9));
        }
        let reducible = build_generator(boxed(9), 3, pm()).unwrap();
        let lr9 = build_generator(boxed(9), 3, Dynamics::LongRange).unwrap();
        assert!(!comparison_constant(&lr9, &reducible).unwrap().is_finite());
        let ssep = build_generator(boxed(6), 2, Dynamics::Local(RateModel::Ssep)).unwrap();
        assert_eq!(comparison_constant(&lr, &ssep).unwrap_err(), SpectralError::HyperplaneMismatch);
        // a generator compared with itself gives one
        assert!((comparison_constant(&p, &p).unwrap().value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn perturbation_raises_the_gap() {
        for n in 6..=10 {
            for k in (n / 3 + 1)..n {
                let p = spectral_gap(&build_generator(boxed(n), k, pm()).unwrap()).unwrap().value;
                let model = RateModel::perturbed(Order::Two, 1.0, n).unwrap();
                let t = spectral_gap(&build_generator(boxed(n), k, Dynamics::Local(model)).unwrap()).unwrap().value;
                assert!(t >= p - 1e-12);
            }
        }
    }

    #[test]
    fn linear_statistic_bounds_the_gap() {
        let gen = build_generator(boxed(10), 5, pm()).unwrap();
        let f = linear_statistic(&gen, |u| (2.0 * std::f64::consts::PI * u).cos());
        let gap = spectral_gap(&gen).unwrap().value;
        assert!(rayleigh_quotient(&gen, &f).unwrap() >= gap);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn quastel_inequality(n in 2usize..=7, kk in 1usize..7, seed in any::<u64>()) {
            let k = 1 + kk % (n - 1);
            let gen = build_generator(torus(n), k, Dynamics::LongRange).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f: Vec<f64> = (0..gen.dim()).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            prop_assert!(variance(&f) <= dirichlet_form(&gen, &f).unwrap() * (1.0 + 1e-10));
            prop_assert!(variance(&f) <= long_range_pair_sum(gen.space(), &f).unwrap());
        }
    }
}
