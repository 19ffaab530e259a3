//! Exact simulation of a d-level QKD protocol that reuses one shared Bell
//! pair for every key dit, together with two eavesdropping strategies: a
//! naive intercept-resend attack and an ancilla-entangling attack that stays
//! undetected while reading every other dit up to a global offset.

pub mod adversary;
pub mod analysis;
pub mod cli;
pub mod closed_form;
pub mod error;
pub mod protocol;
pub mod register;
pub mod ring;

pub use error::{Error, Result};
