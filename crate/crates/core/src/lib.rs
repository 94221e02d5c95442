//! Plug-and-play distributed tube MPC with consensus-based distributed fault
//! detection for networks of matched-nonlinear subsystems.

pub mod cli;
pub mod engine;
pub mod fdx;
pub mod geometry;
pub mod io;
pub mod lp;
pub mod lqr;
pub mod mpcx;
pub mod netmodel;
pub mod pnp;
pub mod qp;
pub mod scenarios;
pub mod setsynth;
