//! Thermodynamic state variables from the spectra of one- and two-particle
//! quantum billiards.
//!
//! Units: the reference length is 1 and hbar = m = 1, so the one-particle
//! Hamiltonian is `-Δ/2` and energies carry units of inverse length squared.

pub mod eigensolve;
pub mod fem;
pub mod fit;
pub mod geometry;
pub mod pressure;
pub mod quadrature;
pub mod spectral;
pub mod thermo;
pub mod twoparticle;
