//! Joint identification of an incentive-based demand-response agent and its
//! baseline demand from net-demand measurements.
//!
//! The net-demand forecast is the sum of two modules: an MLP baseline
//! forecaster ([`mlp`]) and a differentiable QP layer modelling the agent's
//! response to prices ([`qp`] forward, [`kkt`] backward). [`trainer`] fits
//! both jointly; [`datagen`] produces ground-truth-labelled synthetic data and
//! [`experiments`] runs the multi-run protocols on top of it.
//!
//! Per-scenario work runs on rayon when the `parallel` feature is enabled
//! (the default); see [`par::Execution`]. Results are reduced in input order
//! so both paths give identical output.

// `!(x > y)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod io;
pub mod kkt;
pub mod metrics;
pub mod mlp;
pub mod par;
pub mod qp;
pub mod scenario;
pub mod trainer;

pub use error::{Error, Result};
