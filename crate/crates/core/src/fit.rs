//! Decay-trace and lineshape fits, and the shared result type.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lsq::{minimize, Bounds, LsqOptions, LsqSolution};

/// A sampled decay; times in s.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayTrace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub sigma: Option<Vec<f64>>,
}

impl DecayTrace {
    pub const MIN_POINTS: usize = 5;

    pub fn new(times: Vec<f64>, values: Vec<f64>, sigma: Option<Vec<f64>>) -> Result<Self> {
        if times.len() != values.len() || sigma.as_ref().is_some_and(|s| s.len() != times.len()) {
            return Err(Error::InvalidParameter("trace columns differ in length".into()));
        }
        if times.len() < Self::MIN_POINTS {
            return Err(Error::InsufficientData(format!(
                "decay trace needs at least {} points, got {}",
                Self::MIN_POINTS,
                times.len()
            )));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("trace contains non-finite values".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("trace times must be strictly increasing".into()));
        }
        if let Some(s) = &sigma {
            if s.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidParameter("noise sigma must be positive".into()));
            }
        }
        Ok(Self { times, values, sigma })
    }

    fn weights(&self) -> Vec<f64> {
        match &self.sigma {
            Some(s) => s.iter().map(|s| 1.0 / s).collect(),
            None => vec![1.0; self.times.len()],
        }
    }

    fn span(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }
}

/// Conditions attached to a fit that did not stop it from returning.
#[derive(Debug, Clone, PartialEq)]
pub enum FitFlag {
    /// Parameter sits on a box bound.
    AtBound { param: String, bound: f64 },
    /// Null directions of the Jacobian.
    Unidentifiable { params: Vec<String> },
    /// Trace covers less than two decay constants.
    ShortSpan { span: f64, tau: f64 },
    /// Observation lies within the ambiguity window of several predicted lines,
    /// or several observations compete for one line.
    AmbiguousAssignment { observation: usize, candidates: usize },
    /// Observations that matched no predicted line.
    Unmatched { observations: Vec<usize> },
    /// Optimizer stopped without meeting the gradient test.
    NotConverged { reason: String },
}

impl fmt::Display for FitFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitFlag::AtBound { param, bound } => write!(f, "{param} pinned at bound {bound}"),
            FitFlag::Unidentifiable { params } => write!(f, "unidentifiable: {}", params.join(" ")),
            FitFlag::ShortSpan { span, tau } => write!(f, "trace span {span:e} s shorter than 2 tau ({tau:e} s)"),
            FitFlag::AmbiguousAssignment { observation, candidates } => {
                write!(f, "observation {observation} ambiguous between {candidates} lines")
            }
            FitFlag::Unmatched { observations } => {
                let list: Vec<String> = observations.iter().map(|i| i.to_string()).collect();
                write!(f, "unmatched observations: {}", list.join(" "))
            }
            FitFlag::NotConverged { reason } => write!(f, "not converged: {reason}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub names: Vec<String>,
    pub params: Vec<f64>,
    pub uncertainties: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub flags: Vec<FitFlag>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.params[i])
    }

    pub fn uncertainty(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.uncertainties[i])
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }

    /// `key = value` lines.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for ((n, v), u) in self.names.iter().zip(&self.params).zip(&self.uncertainties) {
            out.push_str(&format!("{n} = {v:.8e}\n{n}_err = {u:.8e}\n"));
        }
        out.push_str(&format!("residual_norm = {:.8e}\n", self.residual_norm));
        out.push_str(&format!("iterations = {}\n", self.iterations));
        out.push_str(&format!("converged = {}\n", self.converged));
        for flag in &self.flags {
            out.push_str(&format!("flag = {flag}\n"));
        }
        out
    }

    pub fn csv_header(&self) -> String {
        let mut cols: Vec<String> = Vec::new();
        for n in &self.names {
            cols.push(n.clone());
            cols.push(format!("{n}_err"));
        }
        cols.extend(["residual_norm", "iterations", "converged", "flags"].map(String::from));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols: Vec<String> = Vec::new();
        for (v, u) in self.params.iter().zip(&self.uncertainties) {
            cols.push(format!("{v:.8e}"));
            cols.push(format!("{u:.8e}"));
        }
        cols.push(format!("{:.8e}", self.residual_norm));
        cols.push(self.iterations.to_string());
        cols.push(self.converged.to_string());
        let flags: Vec<String> = self.flags.iter().map(|f| f.to_string().replace(',', ";")).collect();
        cols.push(format!("\"{}\"", flags.join("; ")));
        cols.join(",")
    }
}

/// How each internal coordinate maps to a reported parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Coord {
    Linear,
    Log,
}

/// Converts an optimizer solution to physical parameters, propagating the
/// covariance through the coordinate map.
pub(crate) fn to_result(names: &[&str], coords: &[Coord], sol: &LsqSolution) -> FitResult {
    let deriv: Vec<f64> = sol
        .x
        .iter()
        .zip(coords)
        .map(|(x, c)| match c {
            Coord::Linear => 1.0,
            Coord::Log => x.exp(),
        })
        .collect();
    let n = names.len();
    let cov = DMatrix::from_fn(n, n, |i, j| deriv[i] * sol.covariance[(i, j)] * deriv[j]);
    let params = sol
        .x
        .iter()
        .zip(coords)
        .map(|(x, c)| match c {
            Coord::Linear => *x,
            Coord::Log => x.exp(),
        })
        .collect();
    let mut flags = Vec::new();
    if !sol.unidentifiable.is_empty() {
        flags.push(FitFlag::Unidentifiable {
            params: sol.unidentifiable.iter().map(|&i| names[i].to_string()).collect(),
        });
    }
    if !sol.converged {
        flags.push(FitFlag::NotConverged {
            reason: sol.reason.to_string(),
        });
    }
    FitResult {
        names: names.iter().map(|s| s.to_string()).collect(),
        params,
        uncertainties: (0..n).map(|i| cov[(i, i)].max(0.0).sqrt()).collect(),
        covariance: cov,
        residual_norm: sol.residual_norm,
        initial_residual_norm: sol.initial_residual_norm,
        iterations: sol.iterations,
        converged: sol.converged,
        gradient_norm: sol.gradient_norm,
        flags,
    }
}

fn not_converged(sol: &LsqSolution, reason: String) -> Error {
    Error::NotConverged {
        iterations: sol.iterations,
        residual_norm: sol.residual_norm,
        reason,
    }
}

/// Rejects fits that failed or whose parameters are not determined.
fn require_converged(sol: &LsqSolution, names: &[&str]) -> Result<()> {
    if !sol.converged {
        return Err(not_converged(sol, sol.reason.to_string()));
    }
    if !sol.unidentifiable.is_empty() {
        let which: Vec<&str> = sol.unidentifiable.iter().map(|&i| names[i]).collect();
        return Err(not_converged(sol, format!("parameters not determined: {}", which.join(" "))));
    }
    Ok(())
}

/// Rounding floor of a residual vector built from `values`.
fn floor_of(values: &[f64], w: &[f64]) -> f64 {
    1e-10 * values.iter().zip(w).map(|(v, w)| (v * w).powi(2)).sum::<f64>().sqrt()
}

fn is_flat(values: &[f64]) -> bool {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min <= 1e-12 * max.abs().max(min.abs()).max(f64::MIN_POSITIVE)
}

fn log_grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(move |i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
}

/// Weighted linear least squares of `y ≈ Σ c_k basis_k` for one or two basis
/// functions; returns coefficients and the weighted sum of squares.
fn linear_fit(basis: &[&[f64]], y: &[f64], w: &[f64]) -> Option<(Vec<f64>, f64)> {
    let k = basis.len();
    let a = DMatrix::from_fn(y.len(), k, |i, j| basis[j][i] * w[i]);
    let b = nalgebra::DVector::from_iterator(y.len(), y.iter().zip(w).map(|(y, w)| y * w));
    let coef = a.clone().svd(true, true).solve(&b, 1e-12).ok()?;
    let ssr = (&a * &coef - &b).norm_squared();
    Some((coef.iter().cloned().collect(), ssr))
}

/// Fits `A e^{−t/τ} + c`. Returns {amplitude, tau, offset}.
pub fn fit_exponential(trace: &DecayTrace) -> Result<FitResult> {
    if is_flat(&trace.values) {
        return Err(Error::NotConverged {
            iterations: 0,
            residual_norm: 0.0,
            reason: "trace is constant; no decay to fit".into(),
        });
    }
    let w = trace.weights();
    let t0 = trace.times[0];
    let span = trace.span();
    let ones = vec![1.0; trace.times.len()];
    // Variable projection over a τ grid for the starting point.
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for tau in log_grid(span / 100.0, span * 30.0, 60) {
        let e: Vec<f64> = trace.times.iter().map(|t| (-(t - t0) / tau).exp()).collect();
        if let Some((c, ssr)) = linear_fit(&[&e, &ones], &trace.values, &w) {
            if best.is_none_or(|b| ssr < b.3) {
                best = Some((c[0], tau, c[1], ssr));
            }
        }
    }
    let (a0, tau0, c0, _) = best.ok_or_else(|| Error::InvalidParameter("no starting point".into()))?;
    let scale_y = trace.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    // Amplitude is referred to t = 0, internally to the first sample.
    let f = |p: &[f64]| -> Result<Vec<f64>> {
        let tau = p[1].exp();
        Ok(trace
            .times
            .iter()
            .zip(&trace.values)
            .zip(&w)
            .map(|((t, y), w)| (p[0] * (-(t - t0) / tau).exp() + p[2] - y) * w)
            .collect())
    };
    let opts = LsqOptions {
        scale_covariance: trace.sigma.is_none(),
        residual_floor: floor_of(&trace.values, &w),
        ..LsqOptions::default()
    };
    let sol = minimize(f, &[a0, tau0.ln(), c0], &Bounds::unbounded(3), &[scale_y, 1.0, scale_y], &opts)?;
    let names = ["amplitude", "tau", "offset"];
    require_converged(&sol, &names)?;
    let mut res = to_result(&names, &[Coord::Linear, Coord::Log, Coord::Linear], &sol);
    let tau = res.params[1];
    let shift = (t0 / tau).exp();
    res.params[0] *= shift;
    res.uncertainties[0] *= shift;
    for k in 0..3 {
        res.covariance[(0, k)] *= shift;
        res.covariance[(k, 0)] *= shift;
    }
    // d(A e^{t0/τ})/dτ = −A t0/τ² e^{t0/τ}; fold that cross term in.
    if t0 != 0.0 {
        let d = -res.params[0] * t0 / (tau * tau);
        let c = &res.covariance;
        let var_a = c[(0, 0)] + 2.0 * d * c[(0, 1)] + d * d * c[(1, 1)];
        let cov_at = c[(0, 1)] + d * c[(1, 1)];
        let cov_ac = c[(0, 2)] + d * c[(1, 2)];
        res.covariance[(0, 0)] = var_a;
        res.covariance[(0, 1)] = cov_at;
        res.covariance[(1, 0)] = cov_at;
        res.covariance[(0, 2)] = cov_ac;
        res.covariance[(2, 0)] = cov_ac;
        res.uncertainties[0] = var_a.max(0.0).sqrt();
    }
    if span < 2.0 * tau {
        res.flags.push(FitFlag::ShortSpan { span, tau });
    }
    Ok(res)
}

/// Echo detection mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EchoMode {
    /// Heterodyne: the trace is the echo field amplitude.
    #[default]
    Field,
    /// Photodetected power: the model is squared.
    Intensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MimsOptions {
    pub mode: EchoMode,
    /// Hold the stretch exponent at this value.
    pub fixed_x: Option<f64>,
}

pub const MIMS_X_MIN: f64 = 0.5;
pub const MIMS_X_MAX: f64 = 4.0;

/// `E₀ exp(−(2t/T_m)^x)`, squared in intensity mode.
pub fn mims_model(t: f64, e0: f64, tm: f64, x: f64, mode: EchoMode) -> f64 {
    let e = e0 * (-(2.0 * t / tm).powf(x)).exp();
    match mode {
        EchoMode::Field => e,
        EchoMode::Intensity => e * e,
    }
}

/// Fits the Mims stretched exponential to echo amplitude against delay t₁₂.
/// Returns {E0, Tm, x}; with a fixed exponent the `x` entry carries zero
/// uncertainty.
pub fn fit_mims(trace: &DecayTrace, opts: &MimsOptions) -> Result<FitResult> {
    if trace.times[0] < 0.0 {
        return Err(Error::InvalidParameter("echo delays must be nonnegative".into()));
    }
    if is_flat(&trace.values) {
        return Err(Error::NotConverged {
            iterations: 0,
            residual_norm: 0.0,
            reason: "trace is constant; no decay to fit".into(),
        });
    }
    if let Some(x) = opts.fixed_x {
        if !(MIMS_X_MIN..=MIMS_X_MAX).contains(&x) {
            return Err(Error::InvalidParameter(format!(
                "fixed exponent {x} outside [{MIMS_X_MIN}, {MIMS_X_MAX}]"
            )));
        }
    }
    let w = trace.weights();
    let tmax = trace.times[trace.times.len() - 1];
    let xs: Vec<f64> = match opts.fixed_x {
        Some(x) => vec![x],
        None => (0..15).map(|i| MIMS_X_MIN + 0.25 * i as f64).collect(),
    };
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for &x in &xs {
        for tm in log_grid(tmax / 20.0, tmax * 40.0, 60) {
            let shape: Vec<f64> = trace.times.iter().map(|&t| mims_model(t, 1.0, tm, x, opts.mode)).collect();
            if let Some((c, ssr)) = linear_fit(&[&shape], &trace.values, &w) {
                if best.is_none_or(|b| ssr < b.3) {
                    best = Some((c[0], tm, x, ssr));
                }
            }
        }
    }
    let (amp, tm0, x0, _) = best.ok_or_else(|| Error::InvalidParameter("no starting point".into()))?;
    let e0 = match opts.mode {
        EchoMode::Field => amp,
        EchoMode::Intensity => amp.abs().sqrt(),
    };
    let scale_y = trace.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let e_scale = match opts.mode {
        EchoMode::Field => scale_y,
        EchoMode::Intensity => scale_y.sqrt(),
    };
    let fixed = opts.fixed_x;
    let f = |p: &[f64]| -> Result<Vec<f64>> {
        let x = fixed.unwrap_or_else(|| p[2]);
        let tm = p[1].exp();
        Ok(trace
            .times
            .iter()
            .zip(&trace.values)
            .zip(&w)
            .map(|((&t, y), w)| (mims_model(t, p[0], tm, x, opts.mode) - y) * w)
            .collect())
    };
    let lsq = LsqOptions {
        scale_covariance: trace.sigma.is_none(),
        residual_floor: floor_of(&trace.values, &w),
        ..LsqOptions::default()
    };
    let names = ["E0", "Tm", "x"];
    let (sol, mut res) = match fixed {
        Some(x) => {
            let sol = minimize(f, &[e0, tm0.ln()], &Bounds::unbounded(2), &[e_scale, 1.0], &lsq)?;
            require_converged(&sol, &names[..2])?;
            let mut res = to_result(&names[..2], &[Coord::Linear, Coord::Log], &sol);
            res.names.push("x".into());
            res.params.push(x);
            res.uncertainties.push(0.0);
            res.covariance = res.covariance.clone().resize(3, 3, 0.0);
            (sol, res)
        }
        None => {
            let bounds = Bounds::unbounded(3).with(2, MIMS_X_MIN, MIMS_X_MAX);
            let sol = minimize(f, &[e0, tm0.ln(), x0], &bounds, &[e_scale, 1.0, 1.0], &lsq)?;
            require_converged(&sol, &names)?;
            let res = to_result(&names, &[Coord::Linear, Coord::Log, Coord::Linear], &sol);
            (sol, res)
        }
    };
    if fixed.is_none() {
        let x = sol.x[2];
        for bound in [MIMS_X_MIN, MIMS_X_MAX] {
            if (x - bound).abs() <= 1e-6 {
                res.flags.push(FitFlag::AtBound {
                    param: "x".into(),
                    bound,
                });
            }
        }
    }
    if matches!(opts.mode, EchoMode::Intensity) && res.params[0] < 0.0 {
        res.params[0] = -res.params[0];
    }
    Ok(res)
}

/// Effective homogeneous linewidth `Γ = 1/(π T_m)` in Hz for `tm` in s.
/// `tm` must be positive.
pub fn effective_linewidth(tm: f64) -> f64 {
    1.0 / (PI * tm)
}

/// `h (Γ/2)² / ((x − x₀)² + (Γ/2)²) + c`.
pub fn lorentzian(x: f64, center: f64, fwhm: f64, height: f64, offset: f64) -> f64 {
    let hw2 = 0.25 * fwhm * fwhm;
    height * hw2 / ((x - center).powi(2) + hw2) + offset
}

/// Fits a single Lorentzian peak (or dip). Returns {center, fwhm, height, offset}.
pub fn fit_lorentzian(xs: &[f64], ys: &[f64]) -> Result<FitResult> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidParameter("x and y differ in length".into()));
    }
    if xs.len() < 7 {
        return Err(Error::InsufficientData(format!(
            "Lorentzian fit needs at least 7 points, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("data contain non-finite values".into()));
    }
    let mut pts: Vec<(f64, f64)> = xs.iter().cloned().zip(ys.iter().cloned()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    if is_flat(&y) {
        return Err(Error::NotConverged {
            iterations: 0,
            residual_norm: 0.0,
            reason: "data are constant; no peak to fit".into(),
        });
    }
    let n = x.len();
    let edge = (n / 10).max(1);
    let offset0 = (y[..edge].iter().sum::<f64>() + y[n - edge..].iter().sum::<f64>()) / (2 * edge) as f64;
    let (imax, _) = y
        .iter()
        .enumerate()
        .max_by(|a, b| (a.1 - offset0).abs().total_cmp(&(b.1 - offset0).abs()))
        .expect("nonempty");
    let height0 = y[imax] - offset0;
    let above = y.iter().filter(|v| (*v - offset0) / height0 >= 0.5).count().max(1);
    let range = x[n - 1] - x[0];
    let fwhm0 = (range * above as f64 / n as f64).max(range / n as f64);
    let f = |p: &[f64]| -> Result<Vec<f64>> {
        let g = p[1].exp();
        Ok(x.iter().zip(&y).map(|(x, y)| lorentzian(*x, p[0], g, p[2], p[3]) - y).collect())
    };
    let sol = minimize(
        f,
        &[x[imax], fwhm0.ln(), height0, offset0],
        &Bounds::unbounded(4),
        &[fwhm0, 1.0, height0.abs(), height0.abs()],
        &LsqOptions {
            residual_floor: floor_of(&y, &vec![1.0; n]),
            ..LsqOptions::default()
        },
    )?;
    let names = ["center", "fwhm", "height", "offset"];
    require_converged(&sol, &names)?;
    Ok(to_result(&names, &[Coord::Linear, Coord::Log, Coord::Linear, Coord::Linear], &sol))
}
