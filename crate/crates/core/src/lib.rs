//! Lifting linearization of lumped-parameter networks with causal observables.
//!
//! The pipeline: parse a network model ([`netmodel`]), assign causality and
//! find anticausal observables ([`causality`]), simulate ground truth
//! ([`simulate`]), lift trajectories into snapshot datasets ([`lifting`]),
//! fit linear models ([`sysid`]), and score experiments ([`eval`]).

pub mod causality;
pub mod eval;
pub mod expr;
pub mod lifting;
pub mod linalg;
pub mod netmodel;
pub mod par;
pub mod simulate;
pub mod sysid;
