//! Monitored collective-spin dynamics of the boundary time crystal model.
//!
//! * [`collective`]: Dicke-basis states, collective spin operators, magnetization and purity.
//! * [`lindblad`]: RK4 integration of the unconditional master equation and steady states.
//! * [`trajectory`]: quantum-jump, shifted-jump (general μ) and quantum-state-diffusion
//!   unravelings with seeded, worker-count independent ensembles.
//! * [`stabilizer`]: stabilizer 2-Rényi entropy of permutationally invariant states in
//!   O(N⁴) through Pauli-class enumeration, with brute-force oracles.
//! * [`entanglement`]: half-cut entanglement entropy in the symmetric sector.
//! * [`meanfield`]: Bloch-vector flow, fixed points, closed-form magic, orbit averages
//!   and the saturation fit.

pub mod collective;
mod combinatorics;
pub mod entanglement;
pub mod error;
pub mod lindblad;
pub mod meanfield;
pub mod parallel;
pub mod stabilizer;
pub mod trajectory;

pub use collective::{
    build_collective_ops, fully_polarized, magnetization, pure_to_density, purity, trace_distance,
    BlochVector, CollectiveOps, CollectiveState, DenseState, DickeVector, Direction, ModelParams,
};
pub use error::*;

pub use num_complex::Complex64 as C64;
