//! Numerical laboratory for aggregation energies `E[rho] = 1/2 int int W(x - y) drho drho`
//! with Newtonian or fractional repulsion: particle gradient flows, radial
//! obstacle problems, optimal-transport distances, and numerical checks of
//! mean-value and regularity properties of minimisers.

pub mod config;
pub mod energy;
pub mod error;
pub mod flow;
pub mod kernels;
pub mod measures;
pub mod obstacle;
pub mod quadrature;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
