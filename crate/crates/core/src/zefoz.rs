//! Field derivatives of transition frequencies and the search for points
//! where the first-order Zeeman shift vanishes.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lsq::{minimize, Bounds, LsqOptions};
use crate::spinham::{FieldVector, LevelSet, Manifold, SpinSystem};

/// Default finite-difference step (T).
pub const DEFAULT_STEP: f64 = 1e-3;
/// Levels closer than this (GHz) inside a stencil make derivatives unreliable.
pub const DEGENERACY_GAP: f64 = 1e-5;
/// Gradient norm (GHz/T) below which a point is reported.
pub const DEFAULT_THRESHOLD: f64 = 1e-4;

/// A transition between two levels, given by manifold and 1-based sorted index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionSpec {
    pub manifold_a: Manifold,
    pub level_a: usize,
    pub manifold_b: Manifold,
    pub level_b: usize,
}

impl TransitionSpec {
    pub fn new(manifold_a: Manifold, level_a: usize, manifold_b: Manifold, level_b: usize) -> Result<Self> {
        let s = Self {
            manifold_a,
            level_a,
            manifold_b,
            level_b,
        };
        s.validate()?;
        Ok(s)
    }

    /// Spin transition within one manifold.
    pub fn spin(manifold: Manifold, level_a: usize, level_b: usize) -> Result<Self> {
        Self::new(manifold, level_a, manifold, level_b)
    }

    pub fn validate(&self) -> Result<()> {
        for l in [self.level_a, self.level_b] {
            if !(1..=4).contains(&l) {
                return Err(Error::InvalidParameter(format!("level index {l} outside 1..4")));
            }
        }
        if self.manifold_a == self.manifold_b && self.level_a == self.level_b {
            return Err(Error::InvalidParameter(
                "transition needs two distinct levels".into(),
            ));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        format!(
            "|{}⟩{}-|{}⟩{}",
            self.level_a,
            self.manifold_a.suffix(),
            self.level_b,
            self.manifold_b.suffix()
        )
    }

    fn manifolds(&self) -> Vec<Manifold> {
        if self.manifold_a == self.manifold_b {
            vec![self.manifold_a]
        } else {
            vec![self.manifold_a, self.manifold_b]
        }
    }
}

struct Evaluation {
    freq: f64,
    /// Smallest gap from either involved level to a neighbour in its manifold.
    min_gap: f64,
}

fn neighbour_gap(levels: &LevelSet, index: usize) -> f64 {
    let e = &levels.energies;
    let mut gap = f64::INFINITY;
    if index > 0 {
        gap = gap.min(e[index] - e[index - 1]);
    }
    if index < 3 {
        gap = gap.min(e[index + 1] - e[index]);
    }
    gap
}

fn evaluate(spec: &TransitionSpec, system: &SpinSystem, b: &FieldVector) -> Result<Evaluation> {
    let mut sets: Vec<(Manifold, LevelSet)> = Vec::with_capacity(2);
    for m in spec.manifolds() {
        sets.push((m, system.levels(m, b)?));
    }
    let get = |m: Manifold| &sets.iter().find(|s| s.0 == m).expect("evaluated").1;
    let (la, lb) = (get(spec.manifold_a), get(spec.manifold_b));
    let (ia, ib) = (spec.level_a - 1, spec.level_b - 1);
    Ok(Evaluation {
        freq: lb.absolute_energy(ib) - la.absolute_energy(ia),
        min_gap: neighbour_gap(la, ia).min(neighbour_gap(lb, ib)),
    })
}

/// `E_b − E_a` in GHz, levels identified by sorted index at `b`.
pub fn transition_frequency(spec: &TransitionSpec, system: &SpinSystem, b: &FieldVector) -> Result<f64> {
    spec.validate()?;
    Ok(evaluate(spec, system, b)?.freq)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gradient {
    /// GHz/T.
    pub vector: [f64; 3],
    pub norm: f64,
    /// A level gap within the stencil fell below [`DEGENERACY_GAP`].
    pub degenerate: bool,
    /// Smallest gap seen in the stencil (GHz).
    pub min_gap: f64,
}

fn axis(k: usize, h: f64) -> FieldVector {
    let mut v = [0.0; 3];
    v[k] = h;
    FieldVector::from_components(v)
}

/// Central differences per axis at `step` and `step/2`, Richardson-combined.
pub fn frequency_gradient(spec: &TransitionSpec, system: &SpinSystem, b: &FieldVector, step: f64) -> Result<Gradient> {
    spec.validate()?;
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
    }
    let mut min_gap = evaluate(spec, system, b)?.min_gap;
    let mut vector = [0.0; 3];
    for (k, slot) in vector.iter_mut().enumerate() {
        let mut central = |h: f64| -> Result<f64> {
            let p = evaluate(spec, system, &(*b + axis(k, h)))?;
            let m = evaluate(spec, system, &(*b + axis(k, -h)))?;
            min_gap = min_gap.min(p.min_gap).min(m.min_gap);
            Ok((p.freq - m.freq) / (2.0 * h))
        };
        let d1 = central(step)?;
        let d2 = central(0.5 * step)?;
        *slot = (4.0 * d2 - d1) / 3.0;
    }
    Ok(Gradient {
        norm: vector.iter().map(|v| v * v).sum::<f64>().sqrt(),
        vector,
        degenerate: min_gap < DEGENERACY_GAP,
        min_gap,
    })
}

/// Second-difference Hessian (GHz/T²), symmetric by construction.
pub fn hessian(spec: &TransitionSpec, system: &SpinSystem, b: &FieldVector, step: f64) -> Result<Matrix3<f64>> {
    spec.validate()?;
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
    }
    let f = |d: FieldVector| -> Result<f64> { Ok(evaluate(spec, system, &(*b + d))?.freq) };
    let f0 = f(FieldVector::zero())?;
    let h = step;
    let mut out = Matrix3::zeros();
    for i in 0..3 {
        out[(i, i)] = (f(axis(i, h))? - 2.0 * f0 + f(axis(i, -h))?) / (h * h);
        for j in 0..i {
            let pp = f(axis(i, h) + axis(j, h))?;
            let pm = f(axis(i, h) + axis(j, -h))?;
            let mp = f(axis(i, -h) + axis(j, h))?;
            let mm = f(axis(i, -h) + axis(j, -h))?;
            let v = (pp - pm - mp + mm) / (4.0 * h * h);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZefozReport {
    pub field: FieldVector,
    /// GHz.
    pub freq: f64,
    /// GHz/T.
    pub gradient: [f64; 3],
    /// GHz/T².
    pub hessian: Matrix3<f64>,
    pub gradient_norm: f64,
}

/// Axis-aligned search box in T.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldBox {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

impl FieldBox {
    /// Cube of half-width `half` (T) around the origin.
    pub fn centered(half: f64) -> Self {
        Self {
            lower: [-half; 3],
            upper: [half; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for k in 0..3 {
            if !(self.lower[k] <= self.upper[k]) || !self.lower[k].is_finite() || !self.upper[k].is_finite() {
                return Err(Error::InvalidParameter("search box is empty or not finite".into()));
            }
        }
        Ok(())
    }

    fn center(&self) -> [f64; 3] {
        [0, 1, 2].map(|k| 0.5 * (self.lower[k] + self.upper[k]))
    }

    fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.lower[k] && p[k] <= self.upper[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZefozOptions {
    /// Number of starts: the box centre plus uniformly drawn points.
    pub starts: usize,
    pub seed: u64,
    pub threshold: f64,
    pub step: f64,
    /// Points closer than this (T) are merged.
    pub dedup: f64,
}

impl Default for ZefozOptions {
    fn default() -> Self {
        Self {
            starts: 16,
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
            step: DEFAULT_STEP,
            dedup: 1e-3,
        }
    }
}

/// Local minima of ‖∇f‖² inside the box with norm below the threshold.
///
/// Each start runs a bounded Levenberg–Marquardt solve of `∇f(B) = 0`.
/// Candidates are kept only if no level gap in the stencil is degenerate and
/// the gradient re-evaluated with a different step also passes. Results
/// are ordered by field magnitude.
pub fn zefoz_search(
    spec: &TransitionSpec,
    system: &SpinSystem,
    domain: &FieldBox,
    opts: &ZefozOptions,
) -> Result<Vec<ZefozReport>> {
    spec.validate()?;
    domain.validate()?;
    if opts.starts == 0 {
        return Err(Error::InvalidParameter("need at least one start".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![domain.center()];
    for _ in 1..opts.starts {
        starts.push([0, 1, 2].map(|k| {
            if domain.upper[k] > domain.lower[k] {
                rng.random_range(domain.lower[k]..=domain.upper[k])
            } else {
                domain.lower[k]
            }
        }));
    }
    let width = (0..3).map(|k| domain.upper[k] - domain.lower[k]).fold(0.0, f64::max);
    let scale = [width.max(opts.step); 3];
    let bounds = Bounds {
        lower: domain.lower.to_vec(),
        upper: domain.upper.to_vec(),
    };
    let lsq = LsqOptions {
        max_iterations: 100,
        ..LsqOptions::default()
    };
    let candidates: Vec<[f64; 3]> = starts
        .par_iter()
        .map(|s| -> Result<[f64; 3]> {
            let f = |x: &[f64]| -> Result<Vec<f64>> {
                let g = frequency_gradient(spec, system, &FieldVector::new(x[0], x[1], x[2]), opts.step)?;
                Ok(g.vector.to_vec())
            };
            let sol = minimize(f, s, &bounds, &scale, &lsq)?;
            Ok([sol.x[0], sol.x[1], sol.x[2]])
        })
        .collect::<Result<_>>()?;

    let mut found: Vec<ZefozReport> = Vec::new();
    for p in candidates {
        if !domain.contains(&p) {
            continue;
        }
        let b = FieldVector::new(p[0], p[1], p[2]);
        let g = frequency_gradient(spec, system, &b, opts.step)?;
        if g.degenerate || g.norm >= opts.threshold {
            continue;
        }
        let check = frequency_gradient(spec, system, &b, 0.37 * opts.step)?;
        if check.degenerate || check.norm >= opts.threshold {
            continue;
        }
        let report = ZefozReport {
            field: b,
            freq: transition_frequency(spec, system, &b)?,
            gradient: g.vector,
            hessian: hessian(spec, system, &b, opts.step)?,
            gradient_norm: g.norm,
        };
        match found
            .iter_mut()
            .find(|r| (r.field + (-report.field)).magnitude() < opts.dedup)
        {
            Some(existing) => {
                if report.gradient_norm < existing.gradient_norm {
                    *existing = report;
                }
            }
            None => found.push(report),
        }
    }
    found.sort_by(|a, b| {
        a.field
            .magnitude()
            .total_cmp(&b.field.magnitude())
            .then(a.field.bx.total_cmp(&b.field.bx))
            .then(a.field.by.total_cmp(&b.field.by))
            .then(a.field.bz.total_cmp(&b.field.bz))
    });
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spinham::high_field_labels;

    fn sys() -> SpinSystem {
        SpinSystem::yb171_yvo4()
    }

    #[test]
    fn spec_validation() {
        assert!(TransitionSpec::spin(Manifold::Ground, 2, 2).is_err());
        assert!(TransitionSpec::spin(Manifold::Ground, 0, 2).is_err());
        assert!(TransitionSpec::spin(Manifold::Ground, 1, 5).is_err());
        assert!(TransitionSpec::new(Manifold::Ground, 2, Manifold::Excited, 2).is_ok());
    }

    #[test]
    fn zero_field_frequencies() {
        let s = sys();
        let g34 = TransitionSpec::spin(Manifold::Ground, 3, 4).unwrap();
        let e12 = TransitionSpec::spin(Manifold::Excited, 1, 2).unwrap();
        let z = FieldVector::zero();
        assert!((transition_frequency(&g34, &s, &z).unwrap() - 0.675).abs() < 1e-12);
        assert!((transition_frequency(&e12, &s, &z).unwrap() - 3.37).abs() < 1e-12);
    }

    #[test]
    fn zero_field_gradient_vanishes() {
        let s = sys();
        for spec in [
            TransitionSpec::spin(Manifold::Ground, 3, 4).unwrap(),
            TransitionSpec::spin(Manifold::Excited, 1, 2).unwrap(),
        ] {
            for step in [1e-3, 5e-4] {
                let g = frequency_gradient(&spec, &s, &FieldVector::zero(), step).unwrap();
                assert!(g.norm < 1e-6, "{}", g.norm);
                assert!(!g.degenerate);
            }
        }
    }

    #[test]
    fn degenerate_pair_flagged() {
        let spec = TransitionSpec::spin(Manifold::Ground, 1, 2).unwrap();
        let g = frequency_gradient(&spec, &sys(), &FieldVector::zero(), DEFAULT_STEP).unwrap();
        assert!(g.degenerate);
    }

    #[test]
    fn electron_flip_slope_at_high_field() {
        let s = sys();
        let b = FieldVector::along_c(1.0);
        let labels = high_field_labels(&s.levels(Manifold::Ground, &b).unwrap(), &s.ground, &s.constants).unwrap();
        assert_eq!(labels[0].prime_index, 1);
        let spec = TransitionSpec::spin(Manifold::Ground, 1, 3).unwrap();
        let g = frequency_gradient(&spec, &s, &b, DEFAULT_STEP).unwrap();
        let expected = s.ground.g.parallel.abs() * s.constants.bohr_magneton_over_h;
        assert!((g.vector[2] / expected - 1.0).abs() < 1e-6, "{} vs {expected}", g.vector[2]);
    }

    #[test]
    fn hessian_is_symmetric() {
        let spec = TransitionSpec::spin(Manifold::Ground, 3, 4).unwrap();
        let h = hessian(&spec, &sys(), &FieldVector::new(0.01, -0.02, 0.005), DEFAULT_STEP).unwrap();
        assert!((h - h.transpose()).amax() <= 1e-8);
    }

    #[test]
    fn search_finds_origin() {
        let s = sys();
        let domain = FieldBox::centered(0.05);
        for spec in [
            TransitionSpec::spin(Manifold::Ground, 3, 4).unwrap(),
            TransitionSpec::spin(Manifold::Excited, 1, 2).unwrap(),
        ] {
            let found = zefoz_search(&spec, &s, &domain, &ZefozOptions::default()).unwrap();
            assert!(!found.is_empty());
            assert!(found[0].field.magnitude() < 1e-3, "{:?}", found[0].field);
            for r in &found {
                assert!(r.gradient_norm < DEFAULT_THRESHOLD);
            }
        }
        let degenerate = TransitionSpec::spin(Manifold::Ground, 1, 2).unwrap();
        let found = zefoz_search(&degenerate, &s, &domain, &ZefozOptions::default()).unwrap();
        assert!(found.iter().all(|r| r.field.magnitude() > 1e-3));
    }
}
