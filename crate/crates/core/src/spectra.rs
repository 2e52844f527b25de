//! Optical-hyperfine transition catalogs and synthetic absorption spectra.
//!
//! A transition moment acts on the electron pseudo-spin only; the nuclear
//! spin is a spectator (`M ⊗ 1`). Line strengths are `|⟨ψe|M ⊗ 1|ψg⟩|²`
//! and each line is weighted by the Boltzmann population of its ground level.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix2;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};
use crate::spinham::{kron, FieldVector, LevelSet, Manifold, SpinSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarization {
    /// E ∥ c.
    Pi,
    /// E ⊥ c.
    Sigma,
}

impl fmt::Display for Polarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarization::Pi => "pi",
            Polarization::Sigma => "sigma",
        })
    }
}

impl FromStr for Polarization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pi" | "π" => Ok(Polarization::Pi),
            "sigma" | "σ" => Ok(Polarization::Sigma),
            other => Err(Error::InvalidParameter(format!(
                "unknown polarization '{other}' (expected pi or sigma)"
            ))),
        }
    }
}

/// Electric-dipole transition operator in electron pseudo-spin space.
///
/// `m[(s_e, s_g)]` maps ground electron state `s_g` to excited `s_e`
/// with `↑ = 0`, `↓ = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMoment {
    pub pol: Polarization,
    pub m: Matrix2<Complex64>,
}

impl TransitionMoment {
    pub fn new(pol: Polarization, m: Matrix2<Complex64>) -> Result<Self> {
        if m.iter().all(|z| z.norm() == 0.0) {
            return Err(Error::InvalidParameter(format!(
                "{pol} transition moment has no nonzero element"
            )));
        }
        Ok(Self { pol, m })
    }

    /// Electron-spin-conserving moment `a (|↑⟩e⟨↑|g + |↓⟩e⟨↓|g)`.
    pub fn spin_conserving(a: f64) -> Self {
        let z = Complex64::new(0.0, 0.0);
        let v = Complex64::new(a, 0.0);
        Self {
            pol: Polarization::Pi,
            m: Matrix2::new(v, z, z, v),
        }
    }

    /// Electron-spin-flipping moment `b (|↑⟩e⟨↓|g + |↓⟩e⟨↑|g)`.
    pub fn spin_flipping(b: f64) -> Self {
        let z = Complex64::new(0.0, 0.0);
        let v = Complex64::new(b, 0.0);
        Self {
            pol: Polarization::Sigma,
            m: Matrix2::new(z, v, v, z),
        }
    }

    /// π spin-conserving and σ spin-flipping moments.
    pub fn default_pair(a: f64, b: f64) -> Vec<Self> {
        vec![Self::spin_conserving(a), Self::spin_flipping(b)]
    }
}

/// Default π amplitude.
pub const DEFAULT_PI_AMPLITUDE: f64 = 1.0;
/// Default σ amplitude: `sqrt(Σσ/Σπ)` of the measured integrated absorptions
/// (73.9 / 389.7 GHz/cm). At zero field each ground level carries a total
/// strength of a² in π and b² in σ.
pub const DEFAULT_SIGMA_AMPLITUDE: f64 = 0.435_470_2;
/// Lines closer than this (GHz) are considered coincident.
pub const MERGE_TOLERANCE: f64 = 1e-3;
/// Relative amplitude below which a line is flagged forbidden.
pub const FORBIDDEN_THRESHOLD: f64 = 1e-12;

/// One (ground level, excited level) contribution to a catalog line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineMember {
    /// 1-based.
    pub ground_index: usize,
    /// 1-based.
    pub excited_index: usize,
    pub amplitude: f64,
}

/// One optical-hyperfine line.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionLine {
    /// `(E_e + offset_e) - (E_g + offset_g)` in GHz.
    pub freq: f64,
    pub pol: Polarization,
    /// Relative strength `|matrix element|²` (summed over members if merged).
    pub amplitude: f64,
    /// Degeneracy of the ground level.
    pub gi: usize,
    /// Degeneracy of the excited level.
    pub gj: usize,
    /// 1-based.
    pub ground_index: usize,
    /// 1-based.
    pub excited_index: usize,
    pub label: Option<String>,
    pub forbidden: bool,
    pub members: Vec<LineMember>,
}

impl TransitionLine {
    /// `Σ amplitude × population(ground level)` over members.
    pub fn weighted_strength(&self, populations: &[f64; 4]) -> f64 {
        self.members
            .iter()
            .map(|m| m.amplitude * populations[m.ground_index - 1])
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatalogOptions {
    /// Merge coincident lines of equal polarization.
    pub merge: bool,
    pub merge_tolerance: f64,
    pub forbidden_threshold: f64,
    /// Tolerance used to count level degeneracies.
    pub degeneracy_tolerance: f64,
}

impl Default for CatalogOptions {
    fn default() -> Self {
        Self {
            merge: false,
            merge_tolerance: MERGE_TOLERANCE,
            forbidden_threshold: FORBIDDEN_THRESHOLD,
            degeneracy_tolerance: MERGE_TOLERANCE,
        }
    }
}

impl CatalogOptions {
    pub fn merged() -> Self {
        Self {
            merge: true,
            ..Self::default()
        }
    }
}

fn same_field(a: &FieldVector, b: &FieldVector) -> bool {
    a.components()
        .iter()
        .zip(b.components())
        .all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()))
}

/// Evaluates all 16 ground → excited pairs for every supplied moment.
pub fn transition_catalog(
    ground: &LevelSet,
    excited: &LevelSet,
    moments: &[TransitionMoment],
    opts: &CatalogOptions,
) -> Result<Vec<TransitionLine>> {
    if ground.manifold != Manifold::Ground || excited.manifold != Manifold::Excited {
        return Err(Error::InvalidParameter(
            "catalog needs a ground and an excited level set".into(),
        ));
    }
    if !same_field(&ground.field, &excited.field) {
        return Err(Error::MismatchedFields);
    }
    let one = Matrix2::<Complex64>::identity();
    let mut lines = Vec::with_capacity(16 * moments.len());
    for moment in moments {
        let op = kron(&moment.m, &one);
        let start = lines.len();
        for (ie, psi_e) in excited.states.iter().enumerate() {
            for (ig, psi_g) in ground.states.iter().enumerate() {
                let amplitude = psi_e.dotc(&(op * psi_g)).norm_sqr();
                lines.push(TransitionLine {
                    freq: excited.absolute_energy(ie) - ground.absolute_energy(ig),
                    pol: moment.pol,
                    amplitude,
                    gi: ground.degeneracy(ig, opts.degeneracy_tolerance),
                    gj: excited.degeneracy(ie, opts.degeneracy_tolerance),
                    ground_index: ig + 1,
                    excited_index: ie + 1,
                    label: None,
                    forbidden: false,
                    members: vec![LineMember {
                        ground_index: ig + 1,
                        excited_index: ie + 1,
                        amplitude,
                    }],
                });
            }
        }
        let max = lines[start..]
            .iter()
            .map(|l| l.amplitude)
            .fold(0.0, f64::max);
        for l in &mut lines[start..] {
            l.forbidden = l.amplitude <= opts.forbidden_threshold * max;
        }
    }
    if opts.merge {
        lines = merge_lines(lines, opts.merge_tolerance);
    }
    Ok(lines)
}

/// Merges allowed lines of equal polarization whose frequencies agree within
/// `tol`. Forbidden lines are kept as they are. Output is sorted by
/// (polarization, frequency).
pub fn merge_lines(mut lines: Vec<TransitionLine>, tol: f64) -> Vec<TransitionLine> {
    lines.sort_by(|a, b| a.pol.cmp(&b.pol).then(a.freq.total_cmp(&b.freq)));
    let mut out: Vec<TransitionLine> = Vec::with_capacity(lines.len());
    for line in lines {
        if !line.forbidden {
            if let Some(prev) = out
                .iter_mut()
                .rev()
                .find(|p| !p.forbidden && p.pol == line.pol)
            {
                if (prev.freq - line.freq).abs() <= tol {
                    let total = prev.amplitude + line.amplitude;
                    prev.freq = (prev.freq * prev.amplitude + line.freq * line.amplitude) / total;
                    prev.amplitude = total;
                    prev.members.extend(line.members);
                    continue;
                }
            }
        }
        out.push(line);
    }
    out
}

/// Allowed lines of one polarization.
pub fn allowed(lines: &[TransitionLine], pol: Polarization) -> impl Iterator<Item = &TransitionLine> {
    lines.iter().filter(move |l| l.pol == pol && !l.forbidden)
}

/// Thermal populations of the four levels, `p_i ∝ exp(-E_i h / k_B T)`.
pub fn boltzmann_populations(
    levels: &LevelSet,
    temperature: f64,
    consts: &PhysicalConstants,
) -> Result<[f64; 4]> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let kt = consts.boltzmann_over_h * temperature;
    let e0 = levels.energies[0];
    let w = levels.energies.map(|e| (-(e - e0) / kt).exp());
    let z: f64 = w.iter().sum();
    Ok(w.map(|x| x / z))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineshapeKind {
    Gaussian,
    Lorentzian,
}

impl FromStr for LineshapeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(LineshapeKind::Gaussian),
            "lorentzian" => Ok(LineshapeKind::Lorentzian),
            other => Err(Error::InvalidParameter(format!("unknown lineshape '{other}'"))),
        }
    }
}

impl fmt::Display for LineshapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LineshapeKind::Gaussian => "gaussian",
            LineshapeKind::Lorentzian => "lorentzian",
        })
    }
}

/// Inhomogeneous line shape. Default: Gaussian, 275 MHz FWHM for every line.
#[derive(Debug, Clone, PartialEq)]
pub struct LineshapeParams {
    pub kind: LineshapeKind,
    /// GHz.
    pub fwhm: f64,
    /// Per-label FWHM overrides (GHz).
    pub overrides: BTreeMap<String, f64>,
}

impl Default for LineshapeParams {
    fn default() -> Self {
        Self {
            kind: LineshapeKind::Gaussian,
            fwhm: 0.275,
            overrides: BTreeMap::new(),
        }
    }
}

impl LineshapeParams {
    pub fn new(kind: LineshapeKind, fwhm: f64) -> Self {
        Self {
            kind,
            fwhm,
            overrides: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |w: f64| !(w > 0.0) || !w.is_finite();
        if bad(self.fwhm) || self.overrides.values().any(|w| bad(*w)) {
            return Err(Error::InvalidParameter("line FWHM must be positive".into()));
        }
        Ok(())
    }

    pub fn fwhm_for(&self, line: &TransitionLine) -> f64 {
        line.label
            .as_ref()
            .and_then(|l| self.overrides.get(l))
            .copied()
            .unwrap_or(self.fwhm)
    }

    fn min_fwhm(&self) -> f64 {
        self.overrides.values().copied().fold(self.fwhm, f64::min)
    }
}

/// Unit-area line profile evaluated at detuning `x` from the line center.
pub fn profile(kind: LineshapeKind, fwhm: f64, x: f64) -> f64 {
    match kind {
        LineshapeKind::Gaussian => {
            let sigma = fwhm / (8.0 * std::f64::consts::LN_2).sqrt();
            (-0.5 * (x / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
        }
        LineshapeKind::Lorentzian => {
            let hw = 0.5 * fwhm;
            hw / (std::f64::consts::PI * (x * x + hw * hw))
        }
    }
}

/// Uniform detuning grid in GHz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetuningGrid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl DetuningGrid {
    pub fn new(start: f64, stop: f64, points: usize) -> Result<Self> {
        if points < 2 || !(stop > start) || !start.is_finite() || !stop.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "grid needs start < stop and >= 2 points (got {start}:{stop}:{points})"
            )));
        }
        Ok(Self {
            start,
            stop,
            points,
        })
    }

    pub fn step(&self) -> f64 {
        (self.stop - self.start) / (self.points - 1) as f64
    }

    pub fn values(&self) -> Vec<f64> {
        let step = self.step();
        (0..self.points)
            .map(|i| self.start + step * i as f64)
            .collect()
    }
}

/// Sampled absorption coefficient (cm⁻¹) versus detuning (GHz).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub detunings: Vec<f64>,
    pub alpha: Vec<f64>,
    pub pol: Polarization,
    pub field: Option<FieldVector>,
    pub temperature: Option<f64>,
    pub lineshape: Option<LineshapeParams>,
}

impl Spectrum {
    /// Trapezoidal integral of alpha over the grid (GHz/cm).
    pub fn integral(&self) -> f64 {
        self.detunings
            .windows(2)
            .zip(self.alpha.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum()
    }
}

fn check_resolution(shape: &LineshapeParams, grid: &DetuningGrid) -> Result<()> {
    shape.validate()?;
    let limit = shape.min_fwhm() / 8.0;
    if grid.step() > limit {
        return Err(Error::GridTooCoarse {
            step: grid.step(),
            limit,
        });
    }
    Ok(())
}

fn accumulate(
    catalog: &[TransitionLine],
    populations: &[f64; 4],
    shape: &LineshapeParams,
    scale: f64,
    detunings: &[f64],
    pol: Polarization,
) -> Vec<f64> {
    let mut alpha = vec![0.0; detunings.len()];
    for line in catalog.iter().filter(|l| l.pol == pol) {
        let weight = scale * line.weighted_strength(populations);
        if weight == 0.0 {
            continue;
        }
        let fwhm = shape.fwhm_for(line);
        for (a, x) in alpha.iter_mut().zip(detunings) {
            *a += weight * profile(shape.kind, fwhm, x - line.freq);
        }
    }
    alpha
}

/// `alpha(ν) = scale Σ amplitude · p(ground) · L(ν - freq)` over lines of `pol`.
///
/// `scale` is in GHz/cm per unit population-weighted amplitude. The grid must
/// resolve the narrowest line with at least 8 samples per FWHM and cover every
/// contributing line ± 3 FWHM.
pub fn synth_spectrum(
    catalog: &[TransitionLine],
    populations: &[f64; 4],
    shape: &LineshapeParams,
    scale: f64,
    grid: &DetuningGrid,
    pol: Polarization,
) -> Result<Spectrum> {
    check_resolution(shape, grid)?;
    for line in catalog.iter().filter(|l| l.pol == pol) {
        if line.weighted_strength(populations) * scale == 0.0 {
            continue;
        }
        let w = 3.0 * shape.fwhm_for(line);
        if line.freq - w < grid.start || line.freq + w > grid.stop {
            return Err(Error::GridTooNarrow {
                start: grid.start,
                stop: grid.stop,
                center: line.freq,
            });
        }
    }
    let detunings = grid.values();
    let alpha = accumulate(catalog, populations, shape, scale, &detunings, pol);
    Ok(Spectrum {
        detunings,
        alpha,
        pol,
        field: None,
        temperature: None,
        lineshape: Some(shape.clone()),
    })
}

/// Rescales the lines carrying each label so that, with unit `scale`, their
/// population-weighted strength equals the given integrated absorption
/// (GHz/cm). Unlabeled lines and labels without an entry are zeroed.
pub fn calibrate_to_areas(
    catalog: &[TransitionLine],
    populations: &[f64; 4],
    areas: &BTreeMap<String, f64>,
) -> Result<Vec<TransitionLine>> {
    let mut totals: BTreeMap<&str, f64> = BTreeMap::new();
    for line in catalog {
        if let Some(l) = &line.label {
            *totals.entry(l.as_str()).or_default() += line.weighted_strength(populations);
        }
    }
    let mut out = catalog.to_vec();
    for line in &mut out {
        let factor = match (&line.label, line.label.as_ref().and_then(|l| areas.get(l))) {
            (Some(l), Some(area)) => {
                let total = totals[l.as_str()];
                if total <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "line {l} has no strength to calibrate"
                    )));
                }
                area / total
            }
            _ => 0.0,
        };
        line.amplitude *= factor;
        for m in &mut line.members {
            m.amplitude *= factor;
        }
    }
    Ok(out)
}

/// Level-pair groups of one labeled zero-field line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyEntry {
    pub label: String,
    pub pol: Option<Polarization>,
    /// 1-based ground levels.
    pub ground: Vec<usize>,
    /// 1-based excited levels.
    pub excited: Vec<usize>,
}

impl AdjacencyEntry {
    pub fn new(label: &str, pol: Option<Polarization>, ground: &[usize], excited: &[usize]) -> Self {
        Self {
            label: label.to_string(),
            pol,
            ground: ground.to_vec(),
            excited: excited.to_vec(),
        }
    }

    pub fn contains(&self, ground_index: usize, excited_index: usize) -> bool {
        self.ground.contains(&ground_index) && self.excited.contains(&excited_index)
    }
}

/// Zero-field line letters A–I for ¹⁷¹Yb³⁺:YVO₄.
///
/// Letters run over excited levels |1⟩e, |2⟩e, |3,4⟩e and, for each, over
/// ground levels |3⟩g, |4⟩g, |1,2⟩g. B and D are symmetry forbidden.
pub fn yb171_adjacency() -> Vec<AdjacencyEntry> {
    use Polarization::{Pi, Sigma};
    vec![
        AdjacencyEntry::new("A", Some(Pi), &[3], &[1]),
        AdjacencyEntry::new("B", None, &[4], &[1]),
        AdjacencyEntry::new("C", Some(Sigma), &[1, 2], &[1]),
        AdjacencyEntry::new("D", None, &[3], &[2]),
        AdjacencyEntry::new("E", Some(Pi), &[4], &[2]),
        AdjacencyEntry::new("F", Some(Sigma), &[1, 2], &[2]),
        AdjacencyEntry::new("G", Some(Sigma), &[3], &[3, 4]),
        AdjacencyEntry::new("H", Some(Sigma), &[4], &[3, 4]),
        AdjacencyEntry::new("I", Some(Pi), &[1, 2], &[3, 4]),
    ]
}

/// Attaches adjacency-table letters to allowed lines whose members all fall
/// inside one entry of matching polarization.
pub fn assign_labels(catalog: &mut [TransitionLine], adjacency: &[AdjacencyEntry]) {
    for line in catalog.iter_mut().filter(|l| !l.forbidden) {
        line.label = adjacency
            .iter()
            .find(|e| {
                e.pol == Some(line.pol)
                    && line
                        .members
                        .iter()
                        .all(|m| e.contains(m.ground_index, m.excited_index))
            })
            .map(|e| e.label.clone());
    }
}

/// Absorption map over a field sweep along a fixed direction.
#[derive(Debug, Clone, PartialEq)]
pub struct RampMap {
    /// Field magnitudes (T) along `orientation`.
    pub fields: Vec<f64>,
    pub orientation: FieldVector,
    pub detunings: Vec<f64>,
    pub pol: Polarization,
    /// `alpha[row][column]`, one row per field.
    pub alpha: Vec<Vec<f64>>,
    /// Unmerged catalog per row.
    pub lines: Vec<Vec<TransitionLine>>,
}

/// Inputs shared by every row of a ramp or a single spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSetup {
    pub moments: Vec<TransitionMoment>,
    pub shape: LineshapeParams,
    /// K.
    pub temperature: f64,
    /// GHz/cm per unit population-weighted amplitude.
    pub scale: f64,
    pub grid: DetuningGrid,
    pub pol: Polarization,
}

/// Catalog and ground populations at one field.
pub fn catalog_at(
    system: &SpinSystem,
    b: &FieldVector,
    moments: &[TransitionMoment],
    temperature: f64,
    opts: &CatalogOptions,
) -> Result<(Vec<TransitionLine>, [f64; 4])> {
    let ground = system.levels(Manifold::Ground, b)?;
    let excited = system.levels(Manifold::Excited, b)?;
    let catalog = transition_catalog(&ground, &excited, moments, opts)?;
    let pops = boltzmann_populations(&ground, temperature, &system.constants)?;
    Ok((catalog, pops))
}

/// Zero- or finite-field spectrum of the whole system with strict grid checks.
pub fn system_spectrum(system: &SpinSystem, b: &FieldVector, setup: &SpectrumSetup) -> Result<Spectrum> {
    let (catalog, pops) = catalog_at(system, b, &setup.moments, setup.temperature, &CatalogOptions::default())?;
    let mut s = synth_spectrum(&catalog, &pops, &setup.shape, setup.scale, &setup.grid, setup.pol)?;
    s.field = Some(*b);
    s.temperature = Some(setup.temperature);
    Ok(s)
}

/// One spectrum per field value `orientation × b`. Rows are computed in
/// parallel; each row is identical to a sequential evaluation. Lines leaving
/// the detuning window are clipped rather than rejected.
pub fn field_ramp_map(
    system: &SpinSystem,
    orientation: &FieldVector,
    b_range: &[f64],
    setup: &SpectrumSetup,
) -> Result<RampMap> {
    if b_range.is_empty() {
        return Err(Error::EmptyInput("field range".into()));
    }
    let unit = orientation
        .unit()
        .ok_or_else(|| Error::InvalidParameter("ramp orientation must be nonzero".into()))?;
    check_resolution(&setup.shape, &setup.grid)?;
    let detunings = setup.grid.values();
    let rows: Vec<(Vec<f64>, Vec<TransitionLine>)> = b_range
        .par_iter()
        .map(|&b| {
            let field = unit.scaled(b);
            let (catalog, pops) = catalog_at(
                system,
                &field,
                &setup.moments,
                setup.temperature,
                &CatalogOptions::default(),
            )?;
            let alpha = accumulate(&catalog, &pops, &setup.shape, setup.scale, &detunings, setup.pol);
            Ok((alpha, catalog))
        })
        .collect::<Result<_>>()?;
    let (alpha, lines) = rows.into_iter().unzip();
    Ok(RampMap {
        fields: b_range.to_vec(),
        orientation: unit,
        detunings,
        pol: setup.pol,
        alpha,
        lines,
    })
}

/// A located spectral peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    /// GHz, parabolic interpolation of the three samples around the maximum.
    pub center: f64,
    pub height: f64,
    /// Width at half prominence, linearly interpolated.
    pub fwhm: f64,
    pub prominence: f64,
}

/// Local maxima with topographic prominence ≥ `min_prominence`.
pub fn peak_find(s: &Spectrum, min_prominence: f64) -> Result<Vec<Peak>> {
    let x = &s.detunings;
    let y = &s.alpha;
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::EmptyInput("spectrum".into()));
    }
    if x.len() < 3 {
        return Ok(Vec::new());
    }
    let step = (x[x.len() - 1] - x[0]) / (x.len() - 1) as f64;
    if !(step > 0.0) || x.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > 1e-6 * step) {
        return Err(Error::Precondition("spectrum must be sampled uniformly".into()));
    }

    let n = y.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i < n - 1 {
        if y[i] > y[i - 1] {
            // Walk across a plateau.
            let mut j = i;
            while j + 1 < n && y[j + 1] == y[i] {
                j += 1;
            }
            if j + 1 < n && y[j + 1] < y[i] {
                let k = (i + j) / 2;
                if let Some(p) = describe_peak(x, y, k, step) {
                    if p.prominence >= min_prominence {
                        peaks.push(p);
                    }
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    Ok(peaks)
}

fn describe_peak(x: &[f64], y: &[f64], k: usize, step: f64) -> Option<Peak> {
    let n = y.len();
    let h = y[k];
    // Lowest point on each side before reaching higher ground.
    let mut left_min = h;
    let mut l = k;
    while l > 0 && y[l - 1] <= h {
        l -= 1;
        left_min = left_min.min(y[l]);
    }
    let mut right_min = h;
    let mut r = k;
    while r + 1 < n && y[r + 1] <= h {
        r += 1;
        right_min = right_min.min(y[r]);
    }
    let base = left_min.max(right_min);
    let prominence = h - base;
    if prominence <= 0.0 {
        return None;
    }

    let (y0, y1, y2) = (y[k - 1], y[k], y[k + 1]);
    let denom = y0 - 2.0 * y1 + y2;
    let shift = if denom != 0.0 { 0.5 * (y0 - y2) / denom } else { 0.0 };
    let center = x[k] + shift.clamp(-0.5, 0.5) * step;
    let height = y1 - 0.25 * (y0 - y2) * shift;

    let half = h - 0.5 * prominence;
    let mut a = k;
    while a > 0 && y[a] > half {
        a -= 1;
    }
    let left = if y[a] <= half && a < k {
        x[a] + (half - y[a]) / (y[a + 1] - y[a]) * step
    } else {
        x[a]
    };
    let mut b = k;
    while b + 1 < n && y[b] > half {
        b += 1;
    }
    let right = if y[b] <= half && b > k {
        x[b] - (half - y[b]) / (y[b - 1] - y[b]) * step
    } else {
        x[b]
    };
    Some(Peak {
        center,
        height,
        fwhm: right - left,
        prominence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spinham::{levels, ManifoldParams, NuclearZeeman};

    fn zero_field_catalog(opts: &CatalogOptions) -> (Vec<TransitionLine>, LevelSet) {
        let consts = PhysicalConstants::default();
        let b = FieldVector::zero();
        let g = levels(&ManifoldParams::yb171_yvo4_ground(), &b, &consts, NuclearZeeman::Folded)
            .unwrap();
        let e = levels(&ManifoldParams::yb171_yvo4_excited(), &b, &consts, NuclearZeeman::Folded)
            .unwrap();
        let moments = TransitionMoment::default_pair(1.0, DEFAULT_SIGMA_AMPLITUDE);
        (transition_catalog(&g, &e, &moments, opts).unwrap(), g)
    }

    fn distinct(freqs: impl Iterator<Item = f64>) -> Vec<f64> {
        let mut v: Vec<f64> = freqs.collect();
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() < MERGE_TOLERANCE);
        v
    }

    #[test]
    fn zero_field_line_counts() {
        let (cat, _) = zero_field_catalog(&CatalogOptions::default());
        assert_eq!(cat.len(), 32);
        let pi = distinct(allowed(&cat, Polarization::Pi).map(|l| l.freq));
        let sigma = distinct(allowed(&cat, Polarization::Sigma).map(|l| l.freq));
        assert_eq!(pi.len(), 3, "{pi:?}");
        assert_eq!(sigma.len(), 4, "{sigma:?}");

        let merged = zero_field_catalog(&CatalogOptions::merged()).0;
        assert_eq!(allowed(&merged, Polarization::Pi).count(), 3);
        assert_eq!(allowed(&merged, Polarization::Sigma).count(), 4);
    }

    #[test]
    fn pi_between_lowest_levels_is_zero() {
        let (cat, _) = zero_field_catalog(&CatalogOptions::default());
        let l = cat
            .iter()
            .find(|l| l.pol == Polarization::Pi && l.ground_index == 1 && l.excited_index == 1)
            .unwrap();
        assert!(l.amplitude < 1e-20);
        assert!(l.forbidden);
    }

    #[test]
    fn mismatched_fields_rejected() {
        let consts = PhysicalConstants::default();
        let g = levels(
            &ManifoldParams::yb171_yvo4_ground(),
            &FieldVector::zero(),
            &consts,
            NuclearZeeman::Folded,
        )
        .unwrap();
        let e = levels(
            &ManifoldParams::yb171_yvo4_excited(),
            &FieldVector::along_c(0.1),
            &consts,
            NuclearZeeman::Folded,
        )
        .unwrap();
        let moments = TransitionMoment::default_pair(1.0, 0.4);
        assert_eq!(
            transition_catalog(&g, &e, &moments, &CatalogOptions::default()),
            Err(Error::MismatchedFields)
        );
    }

    #[test]
    fn populations() {
        let (_, g) = zero_field_catalog(&CatalogOptions::default());
        let consts = PhysicalConstants::default();
        let hot = boltzmann_populations(&g, 1e9, &consts).unwrap();
        assert!(hot.iter().all(|p| (p - 0.25).abs() < 1e-9));
        // k_B T = 0.21 GHz at 10 mK still leaves ~5e-5 in the upper levels;
        // 1 mK is deep in the limit.
        let cool = boltzmann_populations(&g, 0.01, &consts).unwrap();
        assert!(cool[2] < 1e-4 && cool[3] < 1e-4 && (cool[0] - 0.5).abs() < 1e-4);
        let cold = boltzmann_populations(&g, 0.001, &consts).unwrap();
        assert!((cold[0] - 0.5).abs() < 1e-9 && (cold[1] - 0.5).abs() < 1e-9);
        assert!(cold[2] < 1e-10 && cold[3] < 1e-10);

        // Direct evaluation at 2 K.
        let kt: f64 = 20.836_619_12 * 2.0;
        let e: [f64; 4] = [-1.205, -1.205, 0.8675, 1.5425];
        let w: Vec<f64> = e.iter().map(|x| (-x / kt).exp()).collect();
        let z: f64 = w.iter().sum();
        let p2 = boltzmann_populations(&g, 2.0, &consts).unwrap();
        for i in 0..4 {
            assert!((p2[i] - w[i] / z).abs() < 1e-12);
        }
        assert!((p2[0] - 0.258).abs() < 1e-3 && (p2[3] - 0.241).abs() < 1e-3);
        assert!((p2.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        assert!(boltzmann_populations(&g, 0.0, &consts).is_err());
        assert!(boltzmann_populations(&g, -1.0, &consts).is_err());
    }

    fn single_line(freq: f64, amplitude: f64) -> TransitionLine {
        TransitionLine {
            freq,
            pol: Polarization::Pi,
            amplitude,
            gi: 1,
            gj: 1,
            ground_index: 1,
            excited_index: 1,
            label: None,
            forbidden: false,
            members: vec![LineMember {
                ground_index: 1,
                excited_index: 1,
                amplitude,
            }],
        }
    }

    #[test]
    fn gaussian_peak_and_area() {
        let f = 0.275;
        let cat = vec![single_line(0.0, 1.0)];
        let pops = [1.0, 0.0, 0.0, 0.0];
        let grid = DetuningGrid::new(-2.0, 2.0, 4001).unwrap();
        let s = synth_spectrum(&cat, &pops, &LineshapeParams::default(), 1.0, &grid, Polarization::Pi)
            .unwrap();
        let peak = s.alpha[2000];
        let expect = 2.0 / f * (std::f64::consts::LN_2 / std::f64::consts::PI).sqrt();
        assert!((peak - expect).abs() < 1e-12);
        assert!((expect * f - 0.9394).abs() < 1e-4);
        assert!((s.integral() - 1.0).abs() < 1e-2);
    }

    #[test]
    fn lorentzian_area_on_wide_grid() {
        let cat = vec![single_line(0.0, 2.0)];
        let pops = [0.5, 0.5, 0.0, 0.0];
        let shape = LineshapeParams::new(LineshapeKind::Lorentzian, 0.1);
        let grid = DetuningGrid::new(-200.0, 200.0, 40_001).unwrap();
        let s = synth_spectrum(&cat, &pops, &shape, 3.0, &grid, Polarization::Pi).unwrap();
        assert!((s.integral() / 3.0 - 1.0).abs() < 1e-2);
    }

    #[test]
    fn coarse_and_narrow_grids_rejected() {
        let cat = vec![single_line(0.0, 1.0)];
        let pops = [1.0, 0.0, 0.0, 0.0];
        let shape = LineshapeParams::default();
        let coarse = DetuningGrid::new(-2.0, 2.0, 100).unwrap();
        assert!(matches!(
            synth_spectrum(&cat, &pops, &shape, 1.0, &coarse, Polarization::Pi),
            Err(Error::GridTooCoarse { .. })
        ));
        let narrow = DetuningGrid::new(-0.5, 0.5, 1001).unwrap();
        assert!(matches!(
            synth_spectrum(&cat, &pops, &shape, 1.0, &narrow, Polarization::Pi),
            Err(Error::GridTooNarrow { .. })
        ));
    }

    #[test]
    fn zero_catalog_gives_zero_spectrum() {
        let cat = vec![single_line(0.0, 0.0)];
        let grid = DetuningGrid::new(-1.0, 1.0, 201).unwrap();
        let s = synth_spectrum(&cat, &[0.25; 4], &LineshapeParams::default(), 10.0, &grid, Polarization::Pi)
            .unwrap();
        assert!(s.alpha.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn linearity_over_catalog_parts() {
        let (cat, g) = zero_field_catalog(&CatalogOptions::default());
        let pops = boltzmann_populations(&g, 2.0, &PhysicalConstants::default()).unwrap();
        let grid = DetuningGrid::new(-6.0, 6.0, 1201).unwrap();
        let shape = LineshapeParams::default();
        let (a, b) = cat.split_at(11);
        for pol in [Polarization::Pi, Polarization::Sigma] {
            let whole = synth_spectrum(&cat, &pops, &shape, 389.7, &grid, pol).unwrap();
            let sa = synth_spectrum(a, &pops, &shape, 389.7, &grid, pol).unwrap();
            let sb = synth_spectrum(b, &pops, &shape, 389.7, &grid, pol).unwrap();
            for i in 0..whole.alpha.len() {
                let sum = sa.alpha[i] + sb.alpha[i];
                assert!((whole.alpha[i] - sum).abs() <= 1e-12 * whole.alpha[i].abs().max(1e-300));
            }
        }
    }

    #[test]
    fn adjacency_matches_allowed_set() {
        let (mut cat, _) = zero_field_catalog(&CatalogOptions::default());
        let table = yb171_adjacency();
        // Degenerate levels come back in an arbitrary basis, so compare
        // strengths summed over each letter's level groups.
        for entry in &table {
            for pol in [Polarization::Pi, Polarization::Sigma] {
                let strength: f64 = cat
                    .iter()
                    .filter(|l| l.pol == pol && entry.contains(l.ground_index, l.excited_index))
                    .map(|l| l.amplitude)
                    .sum();
                assert_eq!(strength > 1e-12, entry.pol == Some(pol), "{} {pol}", entry.label);
            }
        }
        for line in &cat {
            assert_eq!(
                table.iter().filter(|e| e.contains(line.ground_index, line.excited_index)).count(),
                1
            );
        }
        assign_labels(&mut cat, &table);
        let mut labels: Vec<_> = cat.iter().filter_map(|l| l.label.clone()).collect();
        labels.sort();
        labels.dedup();
        assert_eq!(labels, ["A", "C", "E", "F", "G", "H", "I"]);
    }

    #[test]
    fn calibration_reproduces_areas() {
        let (mut cat, g) = zero_field_catalog(&CatalogOptions::default());
        assign_labels(&mut cat, &yb171_adjacency());
        let pops = boltzmann_populations(&g, 2.0, &PhysicalConstants::default()).unwrap();
        let areas: BTreeMap<String, f64> =
            [("A", 97.3), ("I", 189.7)].map(|(k, v)| (k.to_string(), v)).into();
        let cal = calibrate_to_areas(&cat, &pops, &areas).unwrap();
        let sum_i: f64 = cal
            .iter()
            .filter(|l| l.label.as_deref() == Some("I"))
            .map(|l| l.weighted_strength(&pops))
            .sum();
        assert!((sum_i - 189.7).abs() < 1e-9);
        assert!(cal
            .iter()
            .filter(|l| l.label.is_none())
            .all(|l| l.amplitude == 0.0));
    }

    fn gaussian_spectrum(centers: &[f64], fwhm: f64, grid: &DetuningGrid) -> Spectrum {
        let x = grid.values();
        let alpha = x
            .iter()
            .map(|v| centers.iter().map(|c| profile(LineshapeKind::Gaussian, fwhm, v - c)).sum())
            .collect();
        Spectrum {
            detunings: x,
            alpha,
            pol: Polarization::Pi,
            field: None,
            temperature: None,
            lineshape: None,
        }
    }

    #[test]
    fn peak_find_single_gaussian() {
        let grid = DetuningGrid::new(-1.0, 3.0, 201).unwrap();
        let step = grid.step();
        for center in [1.0, 1.0 + 0.3 * step, 1.0 + 0.5 * step] {
            let s = gaussian_spectrum(&[center], 0.275, &grid);
            let peaks = peak_find(&s, 0.1).unwrap();
            assert_eq!(peaks.len(), 1);
            assert!((peaks[0].center - center).abs() < step / 10.0, "{center}");
            assert!((peaks[0].fwhm - 0.275).abs() < step);
        }
    }

    #[test]
    fn peak_find_two_and_flat() {
        let grid = DetuningGrid::new(-2.0, 4.0, 601).unwrap();
        let s = gaussian_spectrum(&[0.0, 5.0 * 0.275], 0.275, &grid);
        assert_eq!(peak_find(&s, 0.1).unwrap().len(), 2);
        let flat = Spectrum {
            alpha: vec![1.0; s.alpha.len()],
            ..s
        };
        assert!(peak_find(&flat, 0.0).unwrap().is_empty());
        let empty = Spectrum {
            detunings: vec![],
            alpha: vec![],
            ..flat
        };
        assert!(peak_find(&empty, 0.0).is_err());
    }
}
