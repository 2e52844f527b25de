//! Integrated absorption → oscillator strength → radiative rate → branching ratio.
//!
//! Oscillator strength of a polarized line in a uniaxial crystal:
//!
//! ```text
//! f = (4 π ε₀ m_e c / π e²) (1/N) Σ_axes 9n/(n²+2)² ∫α dν
//! ```
//!
//! The three orthogonal polarizations are (c, a, a). A π line is measured
//! once with n∥; a σ line appears along both perpendicular axes, so its
//! measured ∫α counts twice with n⊥.
//!
//! Radiative rate of the emission oscillator strength:
//!
//! ```text
//! 1/τ = (2π e² / ε₀ m_e c) ((n²+2)²/9n) (n²/λ₀²) f_em / 3
//! ```

use std::collections::BTreeMap;

use crate::constants::si;
use crate::error::{Error, Result};
use crate::spectra::{AdjacencyEntry, Polarization};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalMedium {
    pub n_parallel: f64,
    pub n_perpendicular: f64,
    /// Vacuum wavelength in m.
    pub wavelength0: f64,
}

impl OpticalMedium {
    /// YVO₄ at 984.5 nm.
    pub fn yvo4() -> Self {
        Self {
            n_parallel: 2.17,
            n_perpendicular: 1.96,
            wavelength0: 984.5e-9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n_parallel > 1.0) || !(self.n_perpendicular > 1.0) {
            return Err(Error::InvalidParameter("refractive indices must exceed 1".into()));
        }
        if !(self.wavelength0 > 0.3e-6 && self.wavelength0 < 3e-6) {
            return Err(Error::InvalidParameter(format!(
                "wavelength {} m outside (0.3, 3) µm",
                self.wavelength0
            )));
        }
        Ok(())
    }

    pub fn index(&self, axis: Axis) -> f64 {
        match axis {
            Axis::Parallel => self.n_parallel,
            Axis::Perpendicular => self.n_perpendicular,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Parallel,
    Perpendicular,
}

impl Axis {
    pub fn of(pol: Polarization) -> Self {
        match pol {
            Polarization::Pi => Axis::Parallel,
            Polarization::Sigma => Axis::Perpendicular,
        }
    }

    /// Number of the three orthogonal polarizations along this axis type.
    pub fn multiplicity(self) -> f64 {
        match self {
            Axis::Parallel => 1.0,
            Axis::Perpendicular => 2.0,
        }
    }
}

/// Measured integrated absorption of one labeled line.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorptionRecord {
    pub label: String,
    pub pol: Polarization,
    /// GHz/cm.
    pub integrated_alpha: f64,
    /// 1-based lowest ground level of the originating group.
    pub originating_level: usize,
    pub originating_degeneracy: usize,
    pub excited_degeneracy: usize,
}

/// Virtual-cavity local-field factor `9n/(n²+2)²`.
pub fn local_field_factor(n: f64) -> f64 {
    9.0 * n / (n * n + 2.0).powi(2)
}

/// Absorption oscillator strength.
///
/// `number_density` in cm⁻³; `level_population` is the fraction of ions in
/// the originating level (or degenerate group).
pub fn oscillator_strength(
    rec: &AbsorptionRecord,
    number_density: f64,
    level_population: f64,
    medium: &OpticalMedium,
) -> Result<f64> {
    if rec.integrated_alpha < 0.0 || !rec.integrated_alpha.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "integrated absorption of {} must be nonnegative",
            rec.label
        )));
    }
    if !(number_density > 0.0) {
        return Err(Error::InvalidParameter("number density must be positive".into()));
    }
    if !(level_population > 0.0 && level_population <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "level population {level_population} outside (0, 1]"
        )));
    }
    let prefactor = 4.0 * si::VACUUM_PERMITTIVITY * si::ELECTRON_MASS * si::SPEED_OF_LIGHT
        / si::ELEMENTARY_CHARGE.powi(2);
    let axis = Axis::of(rec.pol);
    let n = medium.index(axis);
    let level_density = number_density * si::PER_CUBIC_CM * level_population;
    Ok(prefactor / level_density
        * axis.multiplicity()
        * local_field_factor(n)
        * rec.integrated_alpha
        * si::GHZ_PER_CM)
}

/// `f_ji = (g_i / g_j) f_ij`.
pub fn emission_oscillator_strength(f_abs: f64, gi: usize, gj: usize) -> Result<f64> {
    if gi == 0 || gj == 0 {
        return Err(Error::InvalidParameter("degeneracies must be at least 1".into()));
    }
    Ok(gi as f64 / gj as f64 * f_abs)
}

/// Spontaneous emission rate (s⁻¹) of one line along `axis`.
pub fn radiative_rate(f_em: f64, medium: &OpticalMedium, axis: Axis) -> Result<f64> {
    if f_em < 0.0 || !f_em.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "emission oscillator strength {f_em} must be nonnegative"
        )));
    }
    let n = medium.index(axis);
    let prefactor = 2.0 * std::f64::consts::PI * si::ELEMENTARY_CHARGE.powi(2)
        / (si::VACUUM_PERMITTIVITY * si::ELECTRON_MASS * si::SPEED_OF_LIGHT);
    Ok(prefactor / local_field_factor(n) * n * n / medium.wavelength0.powi(2) * f_em / 3.0)
}

/// How per-line rates are reduced to one radiative lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RateAggregation {
    /// Mean over excited levels of each level's summed decay rate.
    #[default]
    PerExcitedLevel,
    /// Plain mean of the per-line rates.
    ArithmeticMean,
}

/// Per-line emission rate with the excited levels it decays from.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRecord {
    pub label: String,
    /// s⁻¹, per excited level of the group.
    pub rate: f64,
    /// 1-based excited levels.
    pub excited_levels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateRate {
    /// s⁻¹.
    pub rate: f64,
    /// s.
    pub tau_rad: f64,
}

pub fn aggregate_radiative_rate(records: &[RateRecord], mode: RateAggregation) -> Result<AggregateRate> {
    if records.is_empty() {
        return Err(Error::EmptyInput("rate records".into()));
    }
    let rate = match mode {
        RateAggregation::ArithmeticMean => {
            records.iter().map(|r| r.rate).sum::<f64>() / records.len() as f64
        }
        RateAggregation::PerExcitedLevel => {
            let mut per_level: BTreeMap<usize, f64> = BTreeMap::new();
            for r in records {
                if r.excited_levels.is_empty() {
                    return Err(Error::InvalidParameter(format!(
                        "record {} has no excited level",
                        r.label
                    )));
                }
                for &e in &r.excited_levels {
                    *per_level.entry(e).or_default() += r.rate;
                }
            }
            per_level.values().sum::<f64>() / per_level.len() as f64
        }
    };
    Ok(AggregateRate {
        rate,
        tau_rad: 1.0 / rate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchingRatio {
    pub beta: f64,
}

impl BranchingRatio {
    /// β > 1 means the fluorescence lifetime exceeds the radiative one,
    /// i.e. the inputs are inconsistent.
    pub fn is_physical(&self) -> bool {
        self.beta <= 1.0
    }
}

/// `β = τ_f / τ_rad`.
pub fn branching_ratio(tau_f: f64, tau_rad: f64) -> Result<BranchingRatio> {
    if !(tau_f > 0.0) || !(tau_rad > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lifetimes must be positive (tau_f = {tau_f}, tau_rad = {tau_rad})"
        )));
    }
    Ok(BranchingRatio {
        beta: tau_f / tau_rad,
    })
}

/// One computed row of the absorption-properties table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub label: String,
    pub pol: Polarization,
    pub integrated_alpha: f64,
    pub oscillator_strength: f64,
    pub emission_oscillator_strength: f64,
    /// s⁻¹.
    pub radiative_rate: f64,
    pub excited_levels: Vec<usize>,
}

/// Builds the record for a labeled line from its adjacency entry.
pub fn record_from_adjacency(
    entry: &AdjacencyEntry,
    pol: Polarization,
    integrated_alpha: f64,
) -> Result<AbsorptionRecord> {
    let originating_level = *entry.ground.iter().min().ok_or_else(|| {
        Error::InvalidParameter(format!("adjacency entry {} has no ground level", entry.label))
    })?;
    if entry.excited.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "adjacency entry {} has no excited level",
            entry.label
        )));
    }
    Ok(AbsorptionRecord {
        label: entry.label.clone(),
        pol,
        integrated_alpha,
        originating_level,
        originating_degeneracy: entry.ground.len(),
        excited_degeneracy: entry.excited.len(),
    })
}

/// Runs every line through the oscillator-strength and radiative-rate formulas.
///
/// `populations` are the ground-level Boltzmann fractions; a line's
/// originating population is summed over its adjacency ground group.
pub fn absorption_table(
    lines: &[(String, Polarization, f64)],
    adjacency: &[AdjacencyEntry],
    populations: &[f64; 4],
    number_density: f64,
    medium: &OpticalMedium,
) -> Result<Vec<TableRow>> {
    if lines.is_empty() {
        return Err(Error::EmptyInput("integrated absorption table".into()));
    }
    medium.validate()?;
    lines
        .iter()
        .map(|(label, pol, area)| {
            let entry = adjacency.iter().find(|e| &e.label == label).ok_or_else(|| {
                Error::InvalidParameter(format!("line {label} missing from adjacency table"))
            })?;
            if let Some(expected) = entry.pol {
                if expected != *pol {
                    return Err(Error::InvalidParameter(format!(
                        "line {label} is {pol} but the adjacency table says {expected}"
                    )));
                }
            }
            let rec = record_from_adjacency(entry, *pol, *area)?;
            let population: f64 = entry
                .ground
                .iter()
                .map(|&g| {
                    populations.get(g.wrapping_sub(1)).copied().ok_or_else(|| {
                        Error::InvalidParameter(format!("ground level {g} out of range"))
                    })
                })
                .sum::<Result<f64>>()?;
            let f = oscillator_strength(&rec, number_density, population, medium)?;
            let f_em = emission_oscillator_strength(f, rec.originating_degeneracy, rec.excited_degeneracy)?;
            let rate = radiative_rate(f_em, medium, Axis::of(*pol))?;
            Ok(TableRow {
                label: label.clone(),
                pol: *pol,
                integrated_alpha: *area,
                oscillator_strength: f,
                emission_oscillator_strength: f_em,
                radiative_rate: rate,
                excited_levels: entry.excited.clone(),
            })
        })
        .collect()
}

/// Rate records ready for [`aggregate_radiative_rate`].
pub fn rate_records(rows: &[TableRow]) -> Vec<RateRecord> {
    rows.iter()
        .map(|r| RateRecord {
            label: r.label.clone(),
            rate: r.radiative_rate,
            excited_levels: r.excited_levels.clone(),
        })
        .collect()
}
