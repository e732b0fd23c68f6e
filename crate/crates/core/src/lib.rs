//! Kinetically constrained lattice gases whose hydrodynamic limit is the
//! porous medium equation: lattice state, rates, kinetic Monte Carlo, a finite
//! volume PDE solver, ergodicity and path constructions, spectral gaps and
//! equilibrium fluctuations.

pub mod lattice;
pub mod rates;
pub mod kmc;
pub mod pme;
pub mod ergodic;
pub mod spectral;
pub mod fluct;
pub mod experiment;
