//! Deterministic laboratory for uncertainty-aware online index tuning.
//!
//! A synthetic catalog and workload generator drive a simulated what-if
//! planner and a ground-truth executor. Per-operator cost-adjustment
//! multiplier (CAM) classifiers learn the executor's systematic deviations
//! from execution telemetry, and an uncertainty-weighted sampler picks the
//! index configuration deployed each round.
//!
//! Module map:
//!
//! - [`catalog`]: tables, column statistics, index sizing, selectivity.
//! - [`workload`]: query templates and drifting mini-workload schedules.
//! - [`plan`]: plan trees, node paths, operator featurization.
//! - [`simdb`]: what-if planner and ground-truth executor.
//! - [`cam`]: CAM classifiers, training, entropy / MC-dropout uncertainty.
//! - [`correction`]: cost propagation, uncertainty-gated correction, labeling.
//! - [`selection`]: candidate generation, index valuation, enumeration.
//! - [`tuner`]: the per-round online loop, metrics and baselines.
//! - [`harness`]: experiment configs, replication runs, manifests, plot data.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cam;
pub mod catalog;
pub mod correction;
pub mod error;
pub mod harness;
pub mod par;
pub mod plan;
pub mod seed;
pub mod selection;
pub mod simdb;
pub mod tuner;
pub mod workload;

pub use error::{Error, Result};
