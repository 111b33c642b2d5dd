//! Excitation transport through dipole-coupled networks with a sink,
//! vibrational dressing, and Bayesian optimisation of the geometry.

pub mod dynamics;
pub mod expm;
pub mod geometry;
pub mod hamiltonian;
pub mod hilbert;
pub mod bayesopt;
pub mod gp;
pub mod optim;
pub mod classical;
pub mod experiments;
