//! Machine-learned volume-of-fluid advection on periodic Cartesian meshes.
//!
//! The pipeline has three stages: a purely geometric training set of stencil
//! configurations ([`synthconfig`], [`dataset`]), a small symmetrized ReLU
//! network fitted to the exact fluxes ([`network`]), and a directionally split
//! finite-volume solver that evaluates the network near interfaces
//! ([`solver`]). [`harness`] reproduces the benchmark advection tests.

pub mod geometry;
pub mod symmetry;
pub mod synthconfig;
pub mod dataset;
pub mod network;
pub mod solver;
pub mod harness;
