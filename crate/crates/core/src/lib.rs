//! Energy- and performance-aware task scheduling for simulated cloud data
//! centers.
//!
//! The crate bundles a regression power model with local residual
//! correction, per-task energy accounting under processor sharing, a
//! weighted-sum objective over execution time and energy, worst-fit and
//! evolutionary schedulers, and a discrete-event simulator that meters
//! ground-truth energy.

pub mod catalog;
pub mod domain;
pub mod energy;
pub mod experiment;
pub mod objective;
pub mod par;
pub mod power;
pub mod schedulers;
pub mod sim;
pub mod workload;
