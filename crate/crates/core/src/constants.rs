//! Physical constants (CODATA 2018).
//!
//! Spin-Hamiltonian matrix elements are expressed as frequencies (E/h) in GHz,
//! so the magnetons and Boltzmann's constant are carried divided by Planck's
//! constant. SI values for the photophysics formulas live in [`si`].

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// mu_B / h in GHz/T.
    pub bohr_magneton_over_h: f64,
    /// mu_N / h in GHz/T.
    pub nuclear_magneton_over_h: f64,
    /// k_B / h in GHz/K.
    pub boltzmann_over_h: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            bohr_magneton_over_h: 13.996_244_936,
            nuclear_magneton_over_h: 7.622_593_229e-3,
            boltzmann_over_h: 20.836_619_12,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.bohr_magneton_over_h,
            self.nuclear_magneton_over_h,
            self.boltzmann_over_h,
        ];
        if all.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidParameter(
                "physical constants must be finite and strictly positive".into(),
            ));
        }
        let ratio = self.bohr_magneton_over_h / self.nuclear_magneton_over_h;
        if (ratio / 1_836.152_673 - 1.0).abs() > 1e-3 {
            return Err(Error::InvalidParameter(format!(
                "mu_B/mu_N = {ratio:.3} is not the proton/electron mass ratio"
            )));
        }
        Ok(())
    }
}

/// SI constants used by the oscillator-strength and radiative-rate formulas.
pub mod si {
    pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
    pub const ELECTRON_MASS: f64 = 9.109_383_701_5e-31;
    pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
    pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

    /// GHz/cm to SI (1/(m s)).
    pub const GHZ_PER_CM: f64 = 1e9 * 1e2;
    /// cm^-3 to m^-3.
    pub const PER_CUBIC_CM: f64 = 1e6;
}
