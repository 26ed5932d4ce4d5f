//! Procedurally generated part-based bird dataset with semantic interventions,
//! plus an automatic scoring harness for post-hoc explanation methods.
//!
//! The pipeline is: [`scenegen`] samples symbolic scenes, [`render`] turns
//! them into pixels and entity label maps, [`dataset`] persists splits,
//! [`model`] provides the classifier under test, [`explain`] produces
//! attribution maps, [`interfaces`] reduces explanations to part-level
//! quantities and [`protocols`] scores them against intervention-derived
//! ground truth. [`eval`] and [`report`] orchestrate whole runs.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod explain;
pub mod interfaces;
pub mod model;
pub mod protocols;
pub mod render;
pub mod report;
pub mod scenegen;
pub mod seed;

pub use error::{Error, Result};
