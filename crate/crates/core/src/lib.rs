//! Controllable and constrained sampling for deterministic diffusion
//! samplers, worked end to end over analytic Gaussian-mixture data.
//!
//! The crate is organised bottom up:
//!
//! * [`schedule`] holds the variance-preserving noise ladder and the
//!   per-step DDIM coefficients.
//! * [`scoremodel`] supplies exact scores and Hessians of the noised data
//!   distribution, including classifier-free guidance.
//! * [`sampler`] runs DDIM generation and inversion, the probability-flow
//!   ODE and forward Jacobian propagation.
//! * [`geometry`] covers spherical interpolation of initial noise and the
//!   concentration facts that make it norm preserving.
//! * [`ccs`] builds the perturbation mechanisms and the bisection
//!   controller on top of these.
//! * [`metrics`], [`experiments`], [`verify`], [`config`] and [`report`]
//!   drive the command-line laboratory.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ccs;
pub mod config;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod metrics;
pub mod report;
pub mod rng;
pub mod schedule;
pub mod sampler;
pub mod scoremodel;
pub mod verify;

pub use error::{LabError, Result};
pub use schedule::{BetaSpec, DdimCoeffs, NoiseSchedule};
pub use scoremodel::{CfgSpec, Covariance, GaussianMixture, Guided, ScoreField, State};
