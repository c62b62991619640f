//! Desk-scale simulator and analysis toolkit for focused-ion-beam creation
//! and optical characterization of single-defect arrays.
//!
//! The crate covers the full quantitative chain of such an experiment:
//!
//! * [`implantation`] — array/stripe layout generation, beam + straggle
//!   sampling of ion stopping positions, and dose-dependent conversion of
//!   ions into defects.
//! * [`emitter`] — three-level photophysics: saturation law, analytic
//!   biexponential g²(τ), and kinetic Monte Carlo synthesis of photon
//!   timestamp streams.
//! * [`correlator`] — HBT analysis: beamsplitter stream splitting,
//!   coincidence histogramming, normalization to C_N(τ), and background
//!   correction to g²(τ).
//! * [`odmr`] — amplitude-modulated ODMR sweeps and the Lorentzian line
//!   model.
//! * [`scanner`] — synthetic confocal scan rendering and per-spot
//!   statistics extraction.
//! * [`fitting`] — weighted Levenberg-Marquardt engine plus the
//!   model-specific fitters (Lorentzian, saturation, g², Poisson counts).
//!
//! All randomness flows from a single root seed through named substreams
//! (see [`rng`]); every operation is deterministic given its seed.

pub mod correlator;
pub mod emitter;
pub mod error;
pub mod fitting;
pub mod implantation;
pub mod io;
pub mod odmr;
pub mod rng;
pub mod scanner;

pub use error::{Error, Result};
