//! Simulation and analysis toolkit for the coupled electron–nuclear spin
//! system of ¹⁷¹Yb³⁺:YVO₄.
//!
//! - [`spinham`]: effective spin Hamiltonian, diagonalization, zero- and
//!   high-field reference solutions.
//! - [`spectra`]: optical-hyperfine transition catalogs and synthetic
//!   absorption spectra.
//! - [`photophysics`]: oscillator strengths, radiative rates, branching ratio.
//! - [`fit`]: exponential, Mims and Lorentzian fits.
//! - [`hamfit`]: excited-state spin-Hamiltonian parameters from line positions.
//! - [`lsq`]: the bounded Levenberg–Marquardt solver behind all fits.
//! - [`zefoz`]: field gradients of transition frequencies and ZEFOZ search.

pub mod constants;
pub mod error;
pub mod fit;
pub mod hamfit;
pub mod lsq;
pub mod photophysics;
pub mod spectra;
pub mod spinham;
pub mod zefoz;

pub use constants::PhysicalConstants;
pub use error::{Error, Result};
