//! Thermodynamic formalism for complex rational maps.
//!
//! The crate computes topological pressure, conformal measures and equilibrium
//! states of a rational map `T` acting on its Julia set, by several independent
//! routes (preimage trees, periodic points, Birkhoff averages of an equilibrium
//! state, separated sets), and checks the level-1 and level-2 large deviation
//! statements for the associated empirical measures. An exactly solvable
//! subshift-of-finite-type model provides ground truth, and the circle map
//! `z ↦ z²` is tied to the full 2-shift through its binary itinerary.
//!
//! Module map:
//!
//! * [`map`]: rational maps on the Riemann sphere, preimages, Julia samples.
//! * [`potentials`]: potentials / test observables and Birkhoff sums.
//! * [`orbits`]: preimage trees, periodic points, separated sets, shrinking diagnostic.
//! * [`transfer`]: transfer operator, conformal and equilibrium atoms.
//! * [`pressure`]: pressure estimators and pressure curves.
//! * [`ldp`]: empirical ensembles, tails, rate functions, local pressure.
//! * [`sft`]: weighted subshifts of finite type and the circle bridge.
//! * [`cli`]: config-driven experiment runner behind the `thermo` binary.
// `!(a < b)` is how NaN inputs get rejected together with bad ranges.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod ldp;
pub mod map;
pub mod numeric;
pub mod orbits;
pub mod potentials;
pub mod pressure;
pub mod roots;
pub mod sft;
pub mod transfer;

pub use error::{Error, Result};
pub use map::{RationalMap, SpherePoint};
pub use num_complex::Complex64;
pub use numeric::Extended;
pub use potentials::Observable;
