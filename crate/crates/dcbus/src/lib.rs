//! Simulation and verification toolkit for a single-bus DC power network.
//!
//! The system modeled here is a set of `n_s` controllable voltage sources
//! (DGUs), each feeding one shared capacitive bus through an RL line, with a
//! constant-current plus constant-admittance (ZI) load on the bus. On top of
//! the physics sit three controllers:
//!
//! * an adaptive distributed controller that regulates the bus voltage,
//!   shares current proportionally between sources over a communication
//!   graph, and estimates the line resistances online ([`controllers`] "C1");
//! * a decentralized droop baseline ("C2");
//! * a consensus baseline that needs the line resistances up front ("C3").
//!
//! The [`analysis`] module carries the provable structure — closed-loop
//! assembly in shifted coordinates, the equilibrium family, a Lyapunov
//! function with its dissipation identity, and the port-Hamiltonian form of
//! the closed loop — so that every analytic claim can be checked numerically.
//! [`simkernel`] integrates the monolithic closed-loop ODE deterministically
//! with optional zero-order-hold communication delays, [`scenario`] defines
//! load profiles and comparison metrics, and [`cli`] is the user surface.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod controllers;
pub mod error;
pub mod plant;
pub mod scenario;
pub mod simkernel;
