//! Behavioral model of a cryogenic temperature sensor built on a hysteretic
//! superconducting film, a segmented current DAC and a JTAG register port,
//! with the procedures and post-processing used to operate it.

// Negated float comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analog;
pub mod analysis;
pub mod chip;
pub mod cli;
pub mod controller;
pub mod interp;
pub mod physics;
pub mod rng;
