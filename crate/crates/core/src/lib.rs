//! Finite-time hyperbolicity certificates for singular flows.
//!
//! The crate integrates vector fields together with their tangent cocycle,
//! estimates invariant splittings along orbits, and evaluates partial,
//! singular, sectional, asymptotically sectional, multisingular and
//! nonuniform sectional expansion conditions as finite-time verdicts. It also
//! ships the Lyapunov-spectrum and Birkhoff-average machinery used to check
//! the statistical (physical measure) side of those conditions.
//!
//! Module map:
//!
//! - [`models`]: vector fields, interval maps, skew products and suspensions.
//! - [`flowcalc`]: orbit integration, tangent and wedge cocycles.
//! - [`lpf`]: linear Poincaré flow and return maps.
//! - [`splitting`]: `E^s ⊕ E^cu` estimation and rate fits.
//! - [`hyperbolicity`]: condition functionals, classifiers and reports.
//! - [`measures`]: Lyapunov spectra, Birkhoff averages, histograms, basins.
//! - [`config`] and [`io`]: run configuration and file formats.

pub mod config;
pub mod error;
pub mod flowcalc;
pub mod hyperbolicity;
pub mod io;
pub mod linalg;
pub mod lpf;
pub mod measures;
pub mod models;
pub mod splitting;

pub use error::{Error, Result};

/// Version string embedded in every emitted artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
