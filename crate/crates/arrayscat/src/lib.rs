//! Acoustic scattering by finite truncations of semi-infinite point-
//! scatterer arrays, solved through a discrete Wiener-Hopf technique.

pub mod cli;
pub mod field;
pub mod geometry;
pub mod kernel;
pub mod reference;
pub mod solver;
pub mod specfun;
