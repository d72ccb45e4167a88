//! Positive-P simulation of driven-dissipative Bose-Hubbard models on Lieb
//! lattices, with a closed-form optimum for the three-site chain and an exact
//! Lindblad solver for small systems.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analytic;
pub mod exact;
pub mod integrator;
pub mod lattice;
pub mod model;
pub mod observables;
pub mod oracle;
pub mod scenario;
