//! Data-driven model predictive control for energy-efficient longitudinal
//! driving through signalized corridors with a noisy position estimate.
//!
//! Module map:
//! - [`geometry`]: 2-D polygon algebra (hulls, segment Minkowski/Pontryagin ops).
//! - [`solver`]: sparse primal-dual interior point method for convex QPs/LPs.
//! - [`plant`]: double-integrator truth model, measurement and observer.
//! - [`energy`]: quadratic energy model, PSD regression, accounting.
//! - [`traffic`]: lights, routes, deadlines, lead-vehicle model.
//! - [`learning`]: dataset, learned terminal cost, robust controllable sets.
//! - [`controller`]: unified and shrinking-horizon MPC, baselines.
//! - [`harness`]: scenarios, episodes, learning loop, comparisons, audits, CLI.

pub mod geometry;
pub mod controller;
pub mod energy;
pub mod harness;
pub mod learning;
pub mod plant;
pub mod solver;
pub mod traffic;
