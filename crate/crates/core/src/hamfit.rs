//! Excited-state spin-Hamiltonian parameters from field-dependent optical
//! line positions.
//!
//! Observed peaks are paired with catalog lines by a gated greedy match, the
//! parameters are refined by least squares, and the two steps alternate
//! until the pairing is stable. Fields are brought in by increasing
//! magnitude so that the hyperfine tensor is pinned by the zero-field lines
//! before the Zeeman terms matter.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};
use crate::fit::{to_result, Coord, FitFlag, FitResult};
use crate::lsq::{minimize, Bounds, LsqOptions};
use crate::spectra::{transition_catalog, CatalogOptions, Polarization, TransitionMoment, DEFAULT_PI_AMPLITUDE, DEFAULT_SIGMA_AMPLITUDE};
use crate::spinham::{levels, AxialTensor, FieldVector, LevelSet, ManifoldParams, NuclearZeeman};

/// A measured optical line position.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakObservation {
    pub field: FieldVector,
    pub pol: Polarization,
    /// GHz.
    pub freq: f64,
    /// GHz, one standard deviation.
    pub uncertainty: f64,
    pub label: Option<String>,
}

impl PeakObservation {
    pub fn new(field: FieldVector, pol: Polarization, freq: f64, uncertainty: f64) -> Result<Self> {
        let obs = Self {
            field,
            pol,
            freq,
            uncertainty,
            label: None,
        };
        obs.validate()?;
        Ok(obs)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.uncertainty > 0.0) || !self.uncertainty.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "observation uncertainty must be positive, got {}",
                self.uncertainty
            )));
        }
        if !self.freq.is_finite() || !self.field.is_finite() {
            return Err(Error::InvalidParameter("observation contains non-finite values".into()));
        }
        Ok(())
    }

    fn cmp_key(&self, other: &Self) -> Ordering {
        cmp_field(&self.field, &other.field)
            .then(self.pol.cmp(&other.pol))
            .then(self.freq.total_cmp(&other.freq))
            .then(self.uncertainty.total_cmp(&other.uncertainty))
            .then(self.label.cmp(&other.label))
    }
}

fn cmp_field(a: &FieldVector, b: &FieldVector) -> Ordering {
    a.magnitude()
        .total_cmp(&b.magnitude())
        .then(a.bx.total_cmp(&b.bx))
        .then(a.by.total_cmp(&b.by))
        .then(a.bz.total_cmp(&b.bz))
}

fn same_field(a: &FieldVector, b: &FieldVector) -> bool {
    a.components()
        .iter()
        .zip(b.components())
        .all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()))
}

/// A predicted allowed line with its constituent level pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedLine {
    pub field: FieldVector,
    pub pol: Polarization,
    pub freq: f64,
    /// (1-based ground, 1-based excited, amplitude) of each merged member.
    pub members: Vec<(usize, usize, f64)>,
    /// Summed relative strength.
    pub amplitude: f64,
}

/// Model settings shared by prediction, assignment and fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct HamModel {
    pub ground: ManifoldParams,
    pub constants: PhysicalConstants,
    pub nuclear: NuclearZeeman,
    pub moments: Vec<TransitionMoment>,
}

impl HamModel {
    pub fn new(ground: ManifoldParams) -> Self {
        Self {
            ground,
            constants: PhysicalConstants::default(),
            nuclear: NuclearZeeman::Folded,
            moments: TransitionMoment::default_pair(DEFAULT_PI_AMPLITUDE, DEFAULT_SIGMA_AMPLITUDE),
        }
    }

    /// Allowed lines at each field, coincident lines merged.
    pub fn predict(&self, excited: &ManifoldParams, fields: &[FieldVector]) -> Result<Vec<PredictedLine>> {
        let mut out = Vec::new();
        for b in fields {
            let g = levels(&self.ground, b, &self.constants, self.nuclear)?;
            let e = levels(excited, b, &self.constants, self.nuclear)?;
            let cat = transition_catalog(&g, &e, &self.moments, &CatalogOptions::merged())?;
            out.extend(cat.into_iter().filter(|l| !l.forbidden).map(|l| PredictedLine {
                field: *b,
                pol: l.pol,
                freq: l.freq,
                members: l
                    .members
                    .iter()
                    .map(|m| (m.ground_index, m.excited_index, m.amplitude))
                    .collect(),
                amplitude: l.amplitude,
            }));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssignmentOptions {
    /// Match gate in units of the observation uncertainty.
    pub gate_factor: f64,
    /// Observations with several predictions within this many σ are flagged.
    pub ambiguity_factor: f64,
    /// Lower limit on the gate in GHz.
    pub min_gate: f64,
}

impl Default for AssignmentOptions {
    fn default() -> Self {
        Self {
            gate_factor: 3.0,
            ambiguity_factor: 2.0,
            min_gate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    /// Predicted-line index for each observation, in input order.
    pub matches: Vec<Option<usize>>,
    pub unmatched: Vec<usize>,
    /// (observation, number of competing candidates).
    pub ambiguous: Vec<(usize, usize)>,
}

impl Assignment {
    pub fn matched_count(&self) -> usize {
        self.matches.iter().flatten().count()
    }
}

/// Greedy nearest-frequency pairing within a gate, one observation per line.
///
/// Candidate pairs are processed in order of normalized distance with ties
/// broken by the observation values, so the result does not depend on the
/// input order.
pub fn line_assignment(
    observations: &[PeakObservation],
    predicted: &[PredictedLine],
    opts: &AssignmentOptions,
) -> Assignment {
    let gate = |o: &PeakObservation| (opts.gate_factor * o.uncertainty).max(opts.min_gate);
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    let mut near: Vec<usize> = vec![0; observations.len()];
    let mut per_line: Vec<Vec<usize>> = vec![Vec::new(); predicted.len()];
    for (i, o) in observations.iter().enumerate() {
        for (k, l) in predicted.iter().enumerate() {
            if l.pol != o.pol || !same_field(&l.field, &o.field) {
                continue;
            }
            let d = (l.freq - o.freq).abs();
            if d <= opts.ambiguity_factor * o.uncertainty {
                near[i] += 1;
            }
            if d <= gate(o) {
                pairs.push((d / o.uncertainty, i, k));
                per_line[k].push(i);
            }
        }
    }
    pairs.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| observations[a.1].cmp_key(&observations[b.1]))
            .then(predicted[a.2].freq.total_cmp(&predicted[b.2].freq))
    });
    let mut matches = vec![None; observations.len()];
    let mut taken = vec![false; predicted.len()];
    for &(_, i, k) in &pairs {
        if matches[i].is_none() && !taken[k] {
            matches[i] = Some(k);
            taken[k] = true;
        }
    }
    let mut ambiguous: Vec<(usize, usize)> = Vec::new();
    for (i, &n) in near.iter().enumerate() {
        if n > 1 {
            ambiguous.push((i, n));
        }
    }
    for obs in per_line.iter().filter(|v| v.len() > 1) {
        for &i in obs {
            if !ambiguous.iter().any(|a| a.0 == i) {
                ambiguous.push((i, obs.len()));
            }
        }
    }
    ambiguous.sort_unstable();
    let unmatched = (0..observations.len()).filter(|&i| matches[i].is_none()).collect();
    Assignment {
        matches,
        unmatched,
        ambiguous,
    }
}

pub const PARAM_NAMES: [&str; 5] = ["A_e_par", "A_e_perp", "g_e_par", "g_e_perp", "optical_offset"];

fn to_vector(p: &ManifoldParams) -> [f64; 5] {
    [p.a.parallel, p.a.perpendicular, p.g.parallel, p.g.perpendicular, p.optical_offset]
}

fn from_vector(base: &ManifoldParams, x: &[f64]) -> ManifoldParams {
    ManifoldParams {
        a: AxialTensor::new(x[0], x[1]),
        g: AxialTensor::new(x[2], x[3]),
        optical_offset: x[4],
        ..*base
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HamFitOptions {
    pub assignment: AssignmentOptions,
    /// Gate (GHz) used for the first pairing of each stage.
    pub coarse_gate: f64,
    /// Number of randomized starts in addition to the supplied guess.
    pub extra_starts: usize,
    /// Relative perturbation of A and g for the extra starts.
    pub perturbation: f64,
    pub seed: u64,
    /// Reassign-and-refit rounds per stage.
    pub max_rounds: usize,
}

impl Default for HamFitOptions {
    fn default() -> Self {
        Self {
            assignment: AssignmentOptions::default(),
            coarse_gate: 0.3,
            extra_starts: 3,
            perturbation: 0.2,
            seed: 0,
            max_rounds: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HamFit {
    pub result: FitResult,
    pub excited: ManifoldParams,
    /// Assignment at the optimum, indices into [`HamFit::predicted`].
    pub assignment: Assignment,
    pub predicted: Vec<PredictedLine>,
    pub start_index: usize,
    /// χ² plus a gate² penalty per unmatched observation.
    pub score: f64,
}

/// Precomputed ground levels per field group.
struct Groups {
    fields: Vec<FieldVector>,
    ground: Vec<LevelSet>,
}

impl Groups {
    fn new(model: &HamModel, obs: &[PeakObservation]) -> Result<Self> {
        let mut fields: Vec<FieldVector> = Vec::new();
        for o in obs {
            if !fields.iter().any(|f| same_field(f, &o.field)) {
                fields.push(o.field);
            }
        }
        fields.sort_by(cmp_field);
        let ground = fields
            .iter()
            .map(|b| levels(&model.ground, b, &model.constants, model.nuclear))
            .collect::<Result<_>>()?;
        Ok(Self { fields, ground })
    }

    fn index(&self, b: &FieldVector) -> usize {
        self.fields.iter().position(|f| same_field(f, b)).expect("grouped field")
    }
}

/// Paired observation and the frozen member list of its predicted line.
#[derive(Clone)]
struct Pair {
    obs: usize,
    group: usize,
    members: Vec<(usize, usize, f64)>,
}

fn residuals(
    model: &HamModel,
    base: &ManifoldParams,
    groups: &Groups,
    obs: &[PeakObservation],
    pairs: &[Pair],
    x: &[f64],
) -> Result<Vec<f64>> {
    let excited = from_vector(base, x);
    let mut cache: Vec<Option<LevelSet>> = vec![None; groups.fields.len()];
    let mut out = Vec::with_capacity(pairs.len());
    for p in pairs {
        if cache[p.group].is_none() {
            cache[p.group] = Some(levels(&excited, &groups.fields[p.group], &model.constants, model.nuclear)?);
        }
        let e = cache[p.group].as_ref().expect("filled");
        let g = &groups.ground[p.group];
        let total: f64 = p.members.iter().map(|m| m.2).sum();
        let freq = p
            .members
            .iter()
            .map(|&(ig, ie, a)| (e.absolute_energy(ie - 1) - g.absolute_energy(ig - 1)) * a)
            .sum::<f64>()
            / total;
        let o = &obs[p.obs];
        out.push((freq - o.freq) / o.uncertainty);
    }
    Ok(out)
}

struct StartOutcome {
    x: Vec<f64>,
    score: f64,
}

fn pairs_for(assign: &Assignment, predicted: &[PredictedLine], groups: &Groups) -> Vec<Pair> {
    assign
        .matches
        .iter()
        .enumerate()
        .filter_map(|(i, m)| {
            m.map(|k| Pair {
                obs: i,
                group: groups.index(&predicted[k].field),
                members: predicted[k].members.clone(),
            })
        })
        .collect()
}

/// Shift of the optical offset that lines up the most observations with
/// predictions, each candidate shift taken from one observation/line pair.
fn align_offset(obs: &[PeakObservation], predicted: &[PredictedLine], gate: f64) -> f64 {
    let mut best = (0usize, f64::INFINITY, 0.0);
    for o in obs {
        for l in predicted.iter().filter(|l| l.pol == o.pol && same_field(&l.field, &o.field)) {
            let shift = o.freq - l.freq;
            let mut count = 0;
            let mut ss = 0.0;
            for q in obs {
                let d = predicted
                    .iter()
                    .filter(|l| l.pol == q.pol && same_field(&l.field, &q.field))
                    .map(|l| (l.freq + shift - q.freq).abs())
                    .fold(f64::INFINITY, f64::min);
                if d <= gate {
                    count += 1;
                    ss += d * d;
                }
            }
            let better = count > best.0 || (count == best.0 && ss < best.1);
            if better {
                best = (count, ss, shift);
            }
        }
    }
    best.2
}

fn score(model: &HamModel, base: &ManifoldParams, groups: &Groups, obs: &[PeakObservation], x: &[f64], opts: &HamFitOptions) -> Result<(f64, Assignment, Vec<PredictedLine>)> {
    let predicted = model.predict(&from_vector(base, x), &groups.fields)?;
    let assign = line_assignment(obs, &predicted, &opts.assignment);
    let pairs = pairs_for(&assign, &predicted, groups);
    let r = residuals(model, base, groups, obs, &pairs, x)?;
    let chi2: f64 = r.iter().map(|v| v * v).sum();
    let penalty = assign.unmatched.len() as f64 * opts.assignment.gate_factor.powi(2);
    Ok((chi2 + penalty, assign, predicted))
}

fn run_start(
    model: &HamModel,
    base: &ManifoldParams,
    groups: &Groups,
    obs: &[PeakObservation],
    x0: [f64; 5],
    opts: &HamFitOptions,
) -> Result<StartOutcome> {
    let mut x = x0.to_vec();
    let lsq = LsqOptions {
        scale_covariance: false,
        ..LsqOptions::default()
    };
    let scale = [1.0, 1.0, 1.0, 1.0, 1.0];
    // Stages: cumulative field groups by magnitude.
    let mut mags: Vec<f64> = groups.fields.iter().map(|f| f.magnitude()).collect();
    mags.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    for (stage, &mag) in mags.iter().enumerate() {
        let in_stage: Vec<usize> = (0..obs.len())
            .filter(|&i| obs[i].field.magnitude() <= mag * (1.0 + 1e-12) + 1e-15)
            .collect();
        let sub: Vec<PeakObservation> = in_stage.iter().map(|&i| obs[i].clone()).collect();
        let fields: Vec<FieldVector> = groups
            .fields
            .iter()
            .filter(|f| f.magnitude() <= mag * (1.0 + 1e-12) + 1e-15)
            .cloned()
            .collect();
        let zero_only = mag == 0.0;
        if stage == 0 {
            let predicted = model.predict(&from_vector(base, &x), &fields)?;
            x[4] += align_offset(&sub, &predicted, opts.coarse_gate);
        }
        let mut previous: Option<Vec<Option<usize>>> = None;
        for round in 0..opts.max_rounds {
            let predicted = model.predict(&from_vector(base, &x), &fields)?;
            let gate = (opts.coarse_gate * 0.5f64.powi(round as i32)).max(0.0);
            let assign = line_assignment(
                &sub,
                &predicted,
                &AssignmentOptions {
                    min_gate: gate,
                    ..opts.assignment
                },
            );
            let key: Vec<Option<(usize, usize)>> = assign
                .matches
                .iter()
                .map(|m| m.map(|k| predicted[k].members[0]).map(|m| (m.0, m.1)))
                .collect();
            let pairs: Vec<Pair> = pairs_for(&assign, &predicted, groups)
                .into_iter()
                .map(|mut p| {
                    p.obs = in_stage[p.obs];
                    p
                })
                .collect();
            if pairs.is_empty() {
                break;
            }
            let bounds = if zero_only || stage == 0 {
                Bounds::unbounded(5).with(2, x[2], x[2]).with(3, x[3], x[3])
            } else {
                Bounds::unbounded(5)
            };
            let f = |p: &[f64]| residuals(model, base, groups, obs, &pairs, p);
            let sol = minimize(f, &x, &bounds, &scale, &lsq)?;
            x = sol.x;
            let key_usize: Vec<Option<usize>> = key.iter().map(|k| k.map(|(g, e)| g * 8 + e)).collect();
            if gate <= opts.assignment.gate_factor * 1e-3 && previous.as_ref() == Some(&key_usize) {
                break;
            }
            previous = Some(key_usize);
        }
    }
    let (s, _, _) = score(model, base, groups, obs, &x, opts)?;
    Ok(StartOutcome { x, score: s })
}

/// Fits excited-state A∥, A⊥, g∥, g⊥ and the optical offset to line positions.
pub fn fit_spin_hamiltonian(
    observations: &[PeakObservation],
    model: &HamModel,
    initial: &ManifoldParams,
    opts: &HamFitOptions,
) -> Result<HamFit> {
    for o in observations {
        o.validate()?;
    }
    model.ground.validate()?;
    initial.validate()?;
    let mut obs = observations.to_vec();
    obs.sort_by(|a, b| a.cmp_key(b));
    let groups = Groups::new(model, &obs)?;
    let zero_field = obs.iter().filter(|o| o.field.magnitude() == 0.0).count();
    if obs.len() < 5 || (groups.fields.len() < 2 && zero_field < 4) {
        return Err(Error::InsufficientData(format!(
            "need at least 5 observations over 2 fields or 4 zero-field lines; got {} over {} field(s)",
            obs.len(),
            groups.fields.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let x0 = to_vector(initial);
    let mut starts = vec![x0];
    for _ in 0..opts.extra_starts {
        let mut s = x0;
        for v in s.iter_mut().take(4) {
            *v *= 1.0 + rng.random_range(-opts.perturbation..=opts.perturbation);
        }
        starts.push(s);
    }
    let outcomes: Vec<Result<StartOutcome>> = starts
        .par_iter()
        .map(|s| run_start(model, initial, &groups, &obs, *s, opts))
        .collect();
    let mut best: Option<(usize, StartOutcome)> = None;
    let mut first_err = None;
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(o) => {
                if best.as_ref().is_none_or(|b| o.score < b.1.score) {
                    best = Some((i, o));
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let (start_index, best) = match best {
        Some(b) => b,
        None => return Err(first_err.expect("at least one start")),
    };

    // Final polish with every parameter free, then report.
    let predicted = model.predict(&from_vector(initial, &best.x), &groups.fields)?;
    let assign = line_assignment(&obs, &predicted, &opts.assignment);
    let pairs = pairs_for(&assign, &predicted, &groups);
    if pairs.is_empty() {
        return Err(Error::NotConverged {
            iterations: 0,
            residual_norm: f64::INFINITY,
            reason: "no observation matched a predicted line".into(),
        });
    }
    let lsq = LsqOptions {
        scale_covariance: false,
        ..LsqOptions::default()
    };
    let f = |p: &[f64]| residuals(model, initial, &groups, &obs, &pairs, p);
    let sol = minimize(f, &best.x, &Bounds::unbounded(5), &[1.0; 5], &lsq)?;
    let excited = from_vector(initial, &sol.x);
    let (final_score, assign, predicted) = score(model, initial, &groups, &obs, &sol.x, opts)?;
    let mut result = to_result(&PARAM_NAMES, &[Coord::Linear; 5], &sol);
    if sol.rank < 5 && !result.flags.iter().any(|f| matches!(f, FitFlag::Unidentifiable { .. })) {
        result.flags.push(FitFlag::Unidentifiable {
            params: PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
        });
    }
    // Report indices in the caller's observation order.
    let order: Vec<usize> = {
        let mut used = vec![false; observations.len()];
        obs.iter()
            .map(|o| {
                let k = (0..observations.len())
                    .find(|&k| !used[k] && observations[k] == *o)
                    .expect("sorted copy");
                used[k] = true;
                k
            })
            .collect()
    };
    let mut matches = vec![None; observations.len()];
    for (sorted, m) in assign.matches.iter().enumerate() {
        matches[order[sorted]] = *m;
    }
    let mut unmatched: Vec<usize> = assign.unmatched.iter().map(|&i| order[i]).collect();
    unmatched.sort_unstable();
    let mut ambiguous: Vec<(usize, usize)> = assign.ambiguous.iter().map(|&(i, n)| (order[i], n)).collect();
    ambiguous.sort_unstable();
    for &(observation, candidates) in &ambiguous {
        result.flags.push(FitFlag::AmbiguousAssignment { observation, candidates });
    }
    if !unmatched.is_empty() {
        result.flags.push(FitFlag::Unmatched {
            observations: unmatched.clone(),
        });
    }
    Ok(HamFit {
        result,
        excited,
        assignment: Assignment {
            matches,
            unmatched,
            ambiguous,
        },
        predicted,
        start_index,
        score: final_score,
    })
}

/// Fields used when no list is given: zero field, then 30 and 100 mT along
/// c and along a.
pub fn default_fit_fields() -> Vec<FieldVector> {
    vec![
        FieldVector::zero(),
        FieldVector::new(0.0, 0.0, 0.03),
        FieldVector::new(0.03, 0.0, 0.0),
        FieldVector::new(0.0, 0.0, 0.1),
        FieldVector::new(0.1, 0.0, 0.0),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticOptions {
    /// GHz, standard deviation of the Gaussian position noise.
    pub noise: f64,
    /// Lines weaker than this fraction of the strongest line of the same
    /// polarization at that field are not observed.
    pub min_relative_amplitude: f64,
    /// Lines with a same-polarization neighbour closer than this (GHz) are
    /// unresolved and dropped.
    pub resolution: f64,
    pub seed: u64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self {
            noise: 0.01,
            min_relative_amplitude: 0.05,
            resolution: 0.1,
            seed: 0,
        }
    }
}

/// Noisy peak positions generated from known excited parameters.
pub fn synthetic_observations(
    model: &HamModel,
    excited: &ManifoldParams,
    fields: &[FieldVector],
    opts: &SyntheticOptions,
) -> Result<Vec<PeakObservation>> {
    if !(opts.noise >= 0.0) {
        return Err(Error::InvalidParameter("noise must be nonnegative".into()));
    }
    let uncertainty = if opts.noise > 0.0 { opts.noise } else { 1e-3 };
    let normal = Normal::new(0.0, opts.noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::new();
    for b in fields {
        let lines = model.predict(excited, std::slice::from_ref(b))?;
        for pol in [Polarization::Pi, Polarization::Sigma] {
            let of_pol: Vec<&PredictedLine> = lines.iter().filter(|l| l.pol == pol).collect();
            let max = of_pol.iter().map(|l| l.amplitude).fold(0.0, f64::max);
            let visible: Vec<&PredictedLine> = of_pol
                .into_iter()
                .filter(|l| l.amplitude >= opts.min_relative_amplitude * max)
                .collect();
            for (i, l) in visible.iter().enumerate() {
                let crowded = visible
                    .iter()
                    .enumerate()
                    .any(|(j, m)| j != i && (m.freq - l.freq).abs() < opts.resolution);
                if crowded {
                    continue;
                }
                out.push(PeakObservation {
                    field: *b,
                    pol,
                    freq: l.freq + normal.sample(&mut rng),
                    uncertainty,
                    label: None,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> HamModel {
        HamModel::new(ManifoldParams::yb171_yvo4_ground())
    }

    fn obs(freq: f64, pol: Polarization) -> PeakObservation {
        PeakObservation::new(FieldVector::zero(), pol, freq, 0.01).unwrap()
    }

    #[test]
    fn observation_needs_positive_uncertainty() {
        assert!(PeakObservation::new(FieldVector::zero(), Polarization::Pi, 1.0, 0.0).is_err());
    }

    #[test]
    fn assignment_of_exact_predictions() {
        let m = model();
        let pred = m.predict(&ManifoldParams::yb171_yvo4_excited(), &[FieldVector::zero()]).unwrap();
        assert_eq!(pred.len(), 7);
        let o: Vec<PeakObservation> = pred.iter().map(|l| obs(l.freq, l.pol)).collect();
        let a = line_assignment(&o, &pred, &AssignmentOptions::default());
        assert_eq!(a.matches, (0..7).map(Some).collect::<Vec<_>>());
        assert!(a.unmatched.is_empty() && a.ambiguous.is_empty());
    }

    #[test]
    fn spurious_and_colliding_observations() {
        let pred = model().predict(&ManifoldParams::yb171_yvo4_excited(), &[FieldVector::zero()]).unwrap();
        let target = &pred[0];
        let o = vec![
            obs(target.freq + 0.005, target.pol),
            obs(target.freq - 0.004, target.pol),
            obs(50.0, Polarization::Pi),
        ];
        let a = line_assignment(&o, &pred, &AssignmentOptions::default());
        assert_eq!(a.matches[1], Some(0));
        assert_eq!(a.unmatched, vec![0, 2]);
        let flagged: Vec<usize> = a.ambiguous.iter().map(|x| x.0).collect();
        assert_eq!(flagged, vec![0, 1]);
    }

    #[test]
    fn insufficient_observations() {
        let o = vec![obs(1.0, Polarization::Pi); 3];
        let r = fit_spin_hamiltonian(&o, &model(), &ManifoldParams::yb171_yvo4_excited(), &HamFitOptions::default());
        assert!(matches!(r, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn synthetic_lines_are_resolved() {
        let m = model();
        let o = synthetic_observations(
            &m,
            &ManifoldParams::yb171_yvo4_excited(),
            &default_fit_fields(),
            &SyntheticOptions {
                noise: 0.0,
                ..SyntheticOptions::default()
            },
        )
        .unwrap();
        let zero: Vec<&PeakObservation> = o.iter().filter(|o| o.field.magnitude() == 0.0).collect();
        assert_eq!(zero.len(), 7);
        for f in default_fit_fields() {
            assert!(o.iter().filter(|x| x.field == f).count() >= 4);
        }
    }

    #[test]
    fn noise_free_closed_loop() {
        let m = model();
        let truth = ManifoldParams::yb171_yvo4_excited();
        let o = synthetic_observations(
            &m,
            &truth,
            &default_fit_fields(),
            &SyntheticOptions {
                noise: 0.0,
                ..SyntheticOptions::default()
            },
        )
        .unwrap();
        let guess = ManifoldParams {
            a: AxialTensor::new(5.3, 3.0),
            g: AxialTensor::new(2.8, 1.5),
            ..truth
        };
        let fit = fit_spin_hamiltonian(&o, &m, &guess, &HamFitOptions::default()).unwrap();
        let t = to_vector(&truth);
        for (k, name) in PARAM_NAMES.iter().enumerate().take(4) {
            let v = fit.result.get(name).unwrap();
            assert!((v - t[k]).abs() < 1e-6 * t[k].abs(), "{name}: {v}");
        }
        assert!(fit.assignment.unmatched.is_empty());
    }

    #[test]
    fn zero_field_only_flags_g() {
        let m = model();
        let truth = ManifoldParams::yb171_yvo4_excited();
        let o = synthetic_observations(
            &m,
            &truth,
            &[FieldVector::zero()],
            &SyntheticOptions {
                noise: 0.0,
                ..SyntheticOptions::default()
            },
        )
        .unwrap();
        let fit = fit_spin_hamiltonian(&o, &m, &truth, &HamFitOptions::default()).unwrap();
        assert!((fit.result.get("A_e_par").unwrap() - 4.86).abs() < 1e-6);
        assert!((fit.result.get("A_e_perp").unwrap() - 3.37).abs() < 1e-6);
        let flagged = fit.result.flags.iter().find_map(|f| match f {
            FitFlag::Unidentifiable { params } => Some(params.clone()),
            _ => None,
        });
        assert_eq!(flagged, Some(vec!["g_e_par".to_string(), "g_e_perp".to_string()]));
    }
}
