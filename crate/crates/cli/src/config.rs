//! TOML run configuration. Every section and key is optional; unknown keys
//! are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use ybspin::hamfit::{AssignmentOptions, HamFitOptions};
use ybspin::photophysics::{OpticalMedium, RateAggregation};
use ybspin::spectra::{
    DetuningGrid, LineshapeKind, LineshapeParams, TransitionMoment, DEFAULT_PI_AMPLITUDE, DEFAULT_SIGMA_AMPLITUDE,
};
use ybspin::spinham::{AxialTensor, ManifoldParams, NuclearZeeman, SpinSystem};
use ybspin::zefoz::{FieldBox, ZefozOptions, DEFAULT_STEP, DEFAULT_THRESHOLD};
use ybspin::PhysicalConstants;

use crate::error::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub constants: ConstantsSection,
    pub model: ModelSection,
    pub ground: ManifoldSection,
    pub excited: ManifoldSection,
    pub spectrum: SpectrumSection,
    pub photophysics: PhotophysicsSection,
    pub fit: FitSection,
    pub zefoz: ZefozSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantsSection {
    pub bohr_magneton_over_h: Option<f64>,
    pub nuclear_magneton_over_h: Option<f64>,
    pub boltzmann_over_h: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// "folded" or "explicit".
    pub nuclear_zeeman: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            nuclear_zeeman: "folded".into(),
        }
    }
}

/// Overrides on top of the built-in ¹⁷¹Yb³⁺:YVO₄ values.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManifoldSection {
    pub g_parallel: Option<f64>,
    pub g_perpendicular: Option<f64>,
    pub a_parallel: Option<f64>,
    pub a_perpendicular: Option<f64>,
    pub gn: Option<f64>,
    pub optical_offset: Option<f64>,
}

impl ManifoldSection {
    fn apply(&self, base: ManifoldParams) -> ManifoldParams {
        ManifoldParams {
            g: AxialTensor::new(
                self.g_parallel.unwrap_or(base.g.parallel),
                self.g_perpendicular.unwrap_or(base.g.perpendicular),
            ),
            a: AxialTensor::new(
                self.a_parallel.unwrap_or(base.a.parallel),
                self.a_perpendicular.unwrap_or(base.a.perpendicular),
            ),
            gn: self.gn.unwrap_or(base.gn),
            optical_offset: self.optical_offset.unwrap_or(base.optical_offset),
            ..base
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    /// K.
    pub temperature: f64,
    pub lineshape: String,
    /// GHz.
    pub fwhm: f64,
    /// Per-label FWHM in GHz.
    pub fwhm_overrides: BTreeMap<String, f64>,
    /// GHz/cm per unit population-weighted amplitude.
    pub scale: f64,
    pub pi_amplitude: f64,
    pub sigma_amplitude: f64,
    pub detuning_start: f64,
    pub detuning_stop: f64,
    pub detuning_points: usize,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        let shape = LineshapeParams::default();
        Self {
            temperature: 2.0,
            lineshape: shape.kind.to_string(),
            fwhm: shape.fwhm,
            fwhm_overrides: BTreeMap::new(),
            scale: 389.7,
            pi_amplitude: DEFAULT_PI_AMPLITUDE,
            sigma_amplitude: DEFAULT_SIGMA_AMPLITUDE,
            detuning_start: -8.0,
            detuning_stop: 8.0,
            detuning_points: 1601,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhotophysicsSection {
    /// cm⁻³.
    pub number_density: f64,
    /// K.
    pub temperature: f64,
    pub n_parallel: f64,
    pub n_perpendicular: f64,
    /// m.
    pub wavelength: f64,
    /// "per-excited-level" or "arithmetic-mean".
    pub aggregation: String,
    /// s.
    pub fluorescence_lifetime: f64,
}

impl Default for PhotophysicsSection {
    fn default() -> Self {
        let m = OpticalMedium::yvo4();
        Self {
            number_density: 1.24e18,
            temperature: 2.0,
            n_parallel: m.n_parallel,
            n_perpendicular: m.n_perpendicular,
            wavelength: m.wavelength0,
            aggregation: "per-excited-level".into(),
            fluorescence_lifetime: 267e-6,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub gate_factor: f64,
    pub ambiguity_factor: f64,
    pub min_gate: f64,
    pub coarse_gate: f64,
    pub extra_starts: usize,
    pub perturbation: f64,
    pub max_rounds: usize,
    pub seed: u64,
}

impl Default for FitSection {
    fn default() -> Self {
        let o = HamFitOptions::default();
        Self {
            gate_factor: o.assignment.gate_factor,
            ambiguity_factor: o.assignment.ambiguity_factor,
            min_gate: o.assignment.min_gate,
            coarse_gate: o.coarse_gate,
            extra_starts: o.extra_starts,
            perturbation: o.perturbation,
            max_rounds: o.max_rounds,
            seed: o.seed,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZefozSection {
    /// Two levels such as "g3,g4" or "e1,e2".
    pub transition: String,
    /// T.
    pub box_lower: [f64; 3],
    pub box_upper: [f64; 3],
    pub starts: usize,
    /// GHz/T.
    pub threshold: f64,
    /// T.
    pub step: f64,
    pub dedup: f64,
    pub seed: u64,
}

impl Default for ZefozSection {
    fn default() -> Self {
        let b = FieldBox::centered(0.05);
        Self {
            transition: "g3,g4".into(),
            box_lower: b.lower,
            box_upper: b.upper,
            starts: 16,
            threshold: DEFAULT_THRESHOLD,
            step: DEFAULT_STEP,
            dedup: 1e-3,
            seed: 0,
        }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl Config {
    /// Parses and validates; nothing is computed before this succeeds.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => bad(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Config = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.system()?.validate().map_err(|e| bad(e.to_string()))?;
        self.shape()?.validate().map_err(|e| bad(e.to_string()))?;
        self.grid()?;
        self.medium().validate().map_err(|e| bad(e.to_string()))?;
        self.aggregation()?;
        self.box_domain().validate().map_err(|e| bad(format!("zefoz: {e}")))?;
        if !(self.spectrum.temperature > 0.0) || !(self.photophysics.temperature > 0.0) {
            return Err(bad("temperatures must be positive"));
        }
        if !(self.photophysics.number_density > 0.0) || !(self.photophysics.fluorescence_lifetime > 0.0) {
            return Err(bad("number_density and fluorescence_lifetime must be positive"));
        }
        Ok(())
    }

    pub fn system(&self) -> Result<SpinSystem, CliError> {
        let d = PhysicalConstants::default();
        let c = &self.constants;
        let constants = PhysicalConstants {
            bohr_magneton_over_h: c.bohr_magneton_over_h.unwrap_or(d.bohr_magneton_over_h),
            nuclear_magneton_over_h: c.nuclear_magneton_over_h.unwrap_or(d.nuclear_magneton_over_h),
            boltzmann_over_h: c.boltzmann_over_h.unwrap_or(d.boltzmann_over_h),
        };
        let nuclear_zeeman = match self.model.nuclear_zeeman.as_str() {
            "folded" => NuclearZeeman::Folded,
            "explicit" => NuclearZeeman::Explicit,
            other => return Err(bad(format!("model.nuclear_zeeman: unknown mode '{other}'"))),
        };
        Ok(SpinSystem {
            ground: self.ground.apply(ManifoldParams::yb171_yvo4_ground()),
            excited: self.excited.apply(ManifoldParams::yb171_yvo4_excited()),
            constants,
            nuclear_zeeman,
        })
    }

    pub fn moments(&self) -> Vec<TransitionMoment> {
        TransitionMoment::default_pair(self.spectrum.pi_amplitude, self.spectrum.sigma_amplitude)
    }

    pub fn shape(&self) -> Result<LineshapeParams, CliError> {
        let kind: LineshapeKind = self.spectrum.lineshape.parse().map_err(|e: ybspin::Error| bad(e.to_string()))?;
        Ok(LineshapeParams {
            kind,
            fwhm: self.spectrum.fwhm,
            overrides: self.spectrum.fwhm_overrides.clone(),
        })
    }

    pub fn grid(&self) -> Result<DetuningGrid, CliError> {
        let s = &self.spectrum;
        DetuningGrid::new(s.detuning_start, s.detuning_stop, s.detuning_points).map_err(|e| bad(e.to_string()))
    }

    pub fn medium(&self) -> OpticalMedium {
        OpticalMedium {
            n_parallel: self.photophysics.n_parallel,
            n_perpendicular: self.photophysics.n_perpendicular,
            wavelength0: self.photophysics.wavelength,
        }
    }

    pub fn aggregation(&self) -> Result<RateAggregation, CliError> {
        match self.photophysics.aggregation.as_str() {
            "per-excited-level" => Ok(RateAggregation::PerExcitedLevel),
            "arithmetic-mean" => Ok(RateAggregation::ArithmeticMean),
            other => Err(bad(format!("photophysics.aggregation: unknown mode '{other}'"))),
        }
    }

    pub fn fit_options(&self, seed: Option<u64>) -> HamFitOptions {
        let f = &self.fit;
        HamFitOptions {
            assignment: AssignmentOptions {
                gate_factor: f.gate_factor,
                ambiguity_factor: f.ambiguity_factor,
                min_gate: f.min_gate,
            },
            coarse_gate: f.coarse_gate,
            extra_starts: f.extra_starts,
            perturbation: f.perturbation,
            seed: seed.unwrap_or(f.seed),
            max_rounds: f.max_rounds,
        }
    }

    pub fn box_domain(&self) -> FieldBox {
        FieldBox {
            lower: self.zefoz.box_lower,
            upper: self.zefoz.box_upper,
        }
    }

    pub fn zefoz_options(&self, seed: Option<u64>, threshold: Option<f64>) -> ZefozOptions {
        let z = &self.zefoz;
        ZefozOptions {
            starts: z.starts,
            seed: seed.unwrap_or(z.seed),
            threshold: threshold.unwrap_or(z.threshold),
            step: z.step,
            dedup: z.dedup,
        }
    }
}
