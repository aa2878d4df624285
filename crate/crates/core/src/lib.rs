//! Small-noise analysis toolkit for stochastic differential equations
//! `dX = b(X) dt + √ε σ(X) dW`.
//!
//! The crate is organised bottom-up: [`models`] supplies drifts and diffusions,
//! [`flow`] the deterministic skeleton, [`sde`] simulation and occupation
//! measures, [`action`] the rate functional and its minimisers, [`wgraph`] the
//! graph combinatorics on recurrent classes, and [`verify`] numerical checks
//! of the structural hypotheses on a model.

pub mod action;
pub mod flow;
pub mod models;
pub mod optim;
pub mod sde;
pub mod verify;
pub mod wgraph;
