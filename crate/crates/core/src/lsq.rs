//! Bounded Levenberg–Marquardt on a residual vector.
//!
//! Cost is `½‖r(x)‖²`. The Jacobian comes from central differences; bounds are
//! enforced by projection with an active set (variables at a bound whose
//! gradient points outward are frozen for the step).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LsqOptions {
    pub max_iterations: usize,
    /// Relative gradient tolerance, see [`LsqSolution::gradient_norm`].
    pub gradient_tolerance: f64,
    /// Relative step below which the iteration stops.
    pub step_tolerance: f64,
    /// Finite-difference step in units of `scale_j`.
    pub fd_step: f64,
    pub initial_damping: f64,
    /// Singular values below `rcond · σ_max` of the column-scaled Jacobian
    /// are treated as zero.
    pub rcond: f64,
    /// Multiply the covariance by `‖r‖² / (m − n)`. Use for unweighted data.
    pub scale_covariance: bool,
    /// Residual norm treated as an exact fit (data-scale rounding floor).
    pub residual_floor: f64,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-15,
            fd_step: 2e-4,
            initial_damping: 1e-3,
            rcond: 1e-8,
            scale_covariance: true,
            residual_floor: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn with(mut self, index: usize, lower: f64, upper: f64) -> Self {
        self.lower[index] = lower;
        self.upper[index] = upper;
        self
    }

    fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Gradient,
    ExactFit,
    SmallStep,
    DampingExhausted,
    MaxIterations,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::Gradient => "gradient below tolerance",
            StopReason::ExactFit => "zero residual",
            StopReason::SmallStep => "step below tolerance",
            StopReason::DampingExhausted => "no downhill step found",
            StopReason::MaxIterations => "iteration limit reached",
        })
    }
}

#[derive(Debug, Clone)]
pub struct LsqSolution {
    pub x: Vec<f64>,
    pub residuals: Vec<f64>,
    pub jacobian: DMatrix<f64>,
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    pub iterations: usize,
    /// True only when the relative gradient is below tolerance, or the
    /// residual has dropped to `1e-12` of its initial norm or below
    /// [`LsqOptions::residual_floor`].
    pub converged: bool,
    pub reason: StopReason,
    /// `max_j |g_j| / (‖J_j‖ ‖r‖)` over the projected gradient `g = Jᵀr`.
    pub gradient_norm: f64,
    pub covariance: DMatrix<f64>,
    pub rank: usize,
    /// Parameters involved in null directions of the Jacobian.
    pub unidentifiable: Vec<usize>,
}

impl LsqSolution {
    pub fn uncertainties(&self) -> Vec<f64> {
        (0..self.x.len())
            .map(|i| self.covariance[(i, i)].max(0.0).sqrt())
            .collect()
    }
}

const EXACT_FIT: f64 = 1e-12;
const NOISE: f64 = 1e-12;

/// Jacobian `∂r_i/∂x_j` by central differences at steps `h` and `h/2`
/// combined by Richardson extrapolation, `h = rel_step · scale_j`.
pub fn jacobian_fd<F>(f: &F, x: &[f64], scale: &[f64], rel_step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if scale.len() != x.len() {
        return Err(Error::InvalidParameter("one scale per parameter required".into()));
    }
    let mut cols = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    let mut central = |j: usize, h: f64| -> Result<Vec<f64>> {
        xp[j] = x[j] + h;
        let rp = f(&xp)?;
        xp[j] = x[j] - h;
        let rm = f(&xp)?;
        xp[j] = x[j];
        if rp.len() != rm.len() {
            return Err(Error::InvalidParameter("residual length changed".into()));
        }
        Ok(rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
    };
    for (j, &s) in scale.iter().enumerate() {
        let h = rel_step * s;
        if !(h > 0.0) {
            return Err(Error::InvalidParameter(format!("parameter scale {s} must be positive")));
        }
        let d1 = central(j, h)?;
        let d2 = central(j, 0.5 * h)?;
        cols.push(DVector::from_iterator(
            d1.len(),
            d1.iter().zip(&d2).map(|(a, b)| (4.0 * b - a) / 3.0),
        ));
    }
    let m = cols.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_columns(&cols).resize(m, x.len(), 0.0))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn projected_gradient(g: &DVector<f64>, x: &[f64], bounds: &Bounds) -> DVector<f64> {
    DVector::from_iterator(
        g.len(),
        g.iter().enumerate().map(|(j, &gj)| {
            let at_lo = x[j] <= bounds.lower[j] && gj > 0.0;
            let at_hi = x[j] >= bounds.upper[j] && gj < 0.0;
            if at_lo || at_hi {
                0.0
            } else {
                gj
            }
        }),
    )
}

fn relative_gradient(g: &DVector<f64>, j: &DMatrix<f64>, rnorm: f64) -> f64 {
    g
        .iter()
        .enumerate()
        .map(|(k, gk)| {
            let c = j.column(k).norm();
            if c == 0.0 || rnorm == 0.0 {
                0.0
            } else {
                gk.abs() / (c * rnorm)
            }
        })
        .fold(0.0, f64::max)
}

/// Pseudo-inverse of `JᵀJ` on the column-scaled Jacobian.
fn covariance(j: &DMatrix<f64>, rcond: f64) -> (DMatrix<f64>, usize, Vec<usize>) {
    let n = j.ncols();
    let col: Vec<f64> = (0..n).map(|k| j.column(k).norm()).collect();
    let cmax = col.iter().cloned().fold(0.0, f64::max);
    let mut cov = DMatrix::zeros(n, n);
    let mut unidentifiable: Vec<usize> = (0..n).filter(|&k| col[k] <= 1e-14 * cmax).collect();
    if cmax == 0.0 {
        return (cov, 0, (0..n).collect());
    }
    let live: Vec<usize> = (0..n).filter(|k| !unidentifiable.contains(k)).collect();
    let mut js = DMatrix::zeros(j.nrows(), live.len());
    for (c, &k) in live.iter().enumerate() {
        js.set_column(c, &(j.column(k) / col[k]));
    }
    // Pad so the SVD exposes all live columns even when m < n.
    if js.nrows() < live.len() {
        js = js.resize_vertically(live.len(), 0.0);
    }
    let svd = js.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let smax = svd.singular_values.max();
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        let v = v_t.row(i);
        if s > rcond * smax {
            rank += 1;
            for (a, &ka) in live.iter().enumerate() {
                for (b, &kb) in live.iter().enumerate() {
                    cov[(ka, kb)] += v[a] * v[b] / (s * s * col[ka] * col[kb]);
                }
            }
        } else {
            for (a, &ka) in live.iter().enumerate() {
                if v[a].abs() > 0.1 && !unidentifiable.contains(&ka) {
                    unidentifiable.push(ka);
                }
            }
        }
    }
    unidentifiable.sort_unstable();
    let sym = (&cov + cov.transpose()) * 0.5;
    (sym, rank, unidentifiable)
}

/// Minimizes `½‖f(x)‖²` subject to `bounds`.
///
/// `scale` sets the typical magnitude of each parameter for the
/// finite-difference step. Fails only on invalid input or a residual
/// evaluation error; non-convergence is reported in the solution.
pub fn minimize<F>(f: F, x0: &[f64], bounds: &Bounds, scale: &[f64], opts: &LsqOptions) -> Result<LsqSolution>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x0.len();
    if n == 0 {
        return Err(Error::EmptyInput("parameter vector".into()));
    }
    if bounds.lower.len() != n || bounds.upper.len() != n || scale.len() != n {
        return Err(Error::InvalidParameter("bounds and scale must match the parameter count".into()));
    }
    if bounds.lower.iter().zip(&bounds.upper).any(|(l, u)| !(l <= u)) {
        return Err(Error::InvalidParameter("lower bound exceeds upper bound".into()));
    }
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let mut r = f(&x)?;
    if r.is_empty() {
        return Err(Error::EmptyInput("residual vector".into()));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("residuals are not finite at the initial guess".into()));
    }
    let initial_residual_norm = norm(&r);
    let mut cost = 0.5 * initial_residual_norm.powi(2);
    let mut lambda = opts.initial_damping;
    let mut nu = 2.0;
    let mut jac = jacobian_fd(&f, &x, scale, opts.fd_step)?;
    let mut g = projected_gradient(&(jac.transpose() * DVector::from_column_slice(&r)), &x, bounds);
    let mut iterations = 0;
    let mut reason = StopReason::MaxIterations;
    let mut grad_rel = relative_gradient(&g, &jac, norm(&r));

    while iterations < opts.max_iterations {
        if norm(&r) <= (EXACT_FIT * initial_residual_norm).max(opts.residual_floor) {
            reason = StopReason::ExactFit;
            break;
        }
        if grad_rel <= opts.gradient_tolerance {
            reason = StopReason::Gradient;
            break;
        }
        iterations += 1;
        let a = jac.transpose() * &jac;
        let free: Vec<usize> = (0..n)
            .filter(|&k| a[(k, k)] > 0.0 && (g[k] != 0.0 || (x[k] > bounds.lower[k] && x[k] < bounds.upper[k])))
            .collect();
        let dmax = free.iter().map(|&k| a[(k, k)]).fold(0.0, f64::max);
        let mut accepted = false;
        let mut tiny_step = false;
        while !accepted {
            let mut sys = DMatrix::zeros(free.len(), free.len());
            let mut rhs = DVector::zeros(free.len());
            for (p, &kp) in free.iter().enumerate() {
                rhs[p] = -g[kp];
                for (q, &kq) in free.iter().enumerate() {
                    sys[(p, q)] = a[(kp, kq)];
                }
                sys[(p, p)] += lambda * a[(kp, kp)].max(1e-12 * dmax);
            }
            let delta = match sys.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => {
                    lambda *= nu;
                    nu *= 2.0;
                    if lambda > 1e20 {
                        break;
                    }
                    continue;
                }
            };
            let mut xn = x.clone();
            for (p, &k) in free.iter().enumerate() {
                xn[k] += delta[p];
            }
            bounds.project(&mut xn);
            let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let step_norm = norm(&step);
            if step_norm <= opts.step_tolerance * (norm(&x) + opts.step_tolerance) {
                tiny_step = true;
                break;
            }
            let s = DVector::from_column_slice(&step);
            let predicted = -(g.dot(&s) + 0.5 * s.dot(&(&a * &s)));
            let rn = f(&xn)?;
            let new_cost = 0.5 * rn.iter().map(|v| v * v).sum::<f64>();
            if !new_cost.is_finite() {
                lambda *= nu;
                nu *= 2.0;
                if lambda > 1e20 {
                    break;
                }
                continue;
            }
            // Elementwise difference keeps the reduction accurate for tiny steps.
            let actual = -0.5 * rn.iter().zip(&r).map(|(a, b)| (a - b) * (a + b)).sum::<f64>();
            let rho = if predicted > 0.0 { actual / predicted } else { -1.0 };
            // Below the rounding noise of the cost the ratio is meaningless;
            // take the Gauss–Newton step unless it clearly raises the cost.
            let in_noise = predicted <= NOISE * cost && actual >= -NOISE * cost;
            if rho > 1e-4 || in_noise {
                x = xn;
                r = rn;
                cost = new_cost;
                lambda *= (1.0f64 / 3.0).max(1.0 - (2.0 * rho.min(1.0) - 1.0).powi(3));
                nu = 2.0;
                accepted = true;
            } else {
                lambda *= nu;
                nu *= 2.0;
                if lambda > 1e20 {
                    break;
                }
            }
        }
        if accepted {
            jac = jacobian_fd(&f, &x, scale, opts.fd_step)?;
            g = projected_gradient(&(jac.transpose() * DVector::from_column_slice(&r)), &x, bounds);
            grad_rel = relative_gradient(&g, &jac, norm(&r));
            continue;
        }
        reason = if tiny_step {
            StopReason::SmallStep
        } else {
            StopReason::DampingExhausted
        };
        break;
    }
    if norm(&r) <= (EXACT_FIT * initial_residual_norm).max(opts.residual_floor) {
        reason = StopReason::ExactFit;
    }
    let converged = reason == StopReason::ExactFit || grad_rel <= opts.gradient_tolerance;
    if converged && reason != StopReason::ExactFit {
        reason = StopReason::Gradient;
    }
    let (mut cov, rank, unidentifiable) = covariance(&jac, opts.rcond);
    let m = r.len();
    if opts.scale_covariance && m > n {
        cov *= 2.0 * cost / (m - n) as f64;
    }
    Ok(LsqSolution {
        x,
        residual_norm: norm(&r),
        residuals: r,
        jacobian: jac,
        initial_residual_norm,
        iterations,
        converged,
        reason,
        gradient_norm: grad_rel,
        covariance: cov,
        rank,
        unidentifiable,
    })
}
