//! Port-reduced component model order reduction for moving-load
//! elastodynamics of a multi-span bridge, and crack classification from
//! sensor correlation features.

pub mod artifact;
pub mod assembly;
pub mod bridge;
pub mod classify;
pub mod config;
pub mod dataset;
pub mod eim;
pub mod error;
pub mod features;
pub mod fem;
pub mod library;
pub mod mesh;
pub mod newmark;
pub mod offline;
pub mod online;
pub mod params;
pub mod pod;
pub mod sparse;
pub mod truth;

pub use error::{Error, Result};
