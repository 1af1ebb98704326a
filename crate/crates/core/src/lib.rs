//! Bayesian estimation of single-molecule diffusion coefficients from
//! molecular-dynamics trajectories recorded under periodic boundary conditions.
//!
//! The crate is organised around a two-stage pipeline:
//!
//! * [`trajio`] ingests trajectories, unwraps periodic images under a
//!   fluctuating box, removes net drift, downsamples and segments.
//! * [`gp_local`] fits a latent-Brownian-motion Gaussian-process model to the
//!   pooled segments of one species in one box and returns a MAP diffusion
//!   coefficient with a Laplace variance.
//! * [`hier_model`] pools those local estimates across box sizes and species
//!   and samples the bulk diffusion coefficients and the shared `1/L` slope
//!   with a Hamiltonian Monte Carlo kernel.
//!
//! Around the pipeline sit the analytical finite-size correction
//! ([`size_correction`]), the force-field calibration helpers
//! ([`calibration`]), the log-log temperature/pressure surface
//! ([`surface_fit`]) and the synthetic ground-truth generators ([`synth`]).
//! [`pipeline`] chains the stages and [`cli`] exposes them as the
//! `difftrace` command.

pub mod calibration;
pub mod cli;
pub mod error;
pub mod gp_local;
pub mod hier_model;
pub mod json;
pub mod pipeline;
pub mod rng;
pub mod size_correction;
pub mod surface_fit;
pub mod synth;
pub mod trajio;

pub use error::{Error, Result};
