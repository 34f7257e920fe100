//! L1-penalized minimization of averaged smooth per-observation losses.
//!
//! Every penalized fit in the crate goes through this module: the surrogate
//! rule estimator, the projection-direction regressions used for inference,
//! and the penalized nuisance regressions. The objective is
//!
//! ```text
//! (1/m) Σᵢ fᵢ(xᵢᵀθ) + λ Σⱼ cⱼ |θⱼ|
//! ```
//!
//! where each `fᵢ` is smooth and convex in the linear predictor and `cⱼ >= 0`
//! are per-coordinate penalty factors (zero leaves a coordinate, e.g. an
//! intercept, unpenalized).

mod cv;
mod design;
mod quadratic;

pub use cv::{cv_lambda, tune, CvCurve, LambdaPath, LambdaPolicy, TunedFit};
pub use quadratic::{weighted_lasso_ls, WeightedQuadratic};

pub(crate) use design::Design;

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// A smooth convex loss evaluated at the linear predictor of each observation.
///
/// `derivative` must be the derivative of `value` in `t`, and `curvature`
/// its second derivative. When every observation reports a global upper
/// bound on its curvature the solver uses coordinate descent on local
/// quadratic models (with the bound as a safeguard); otherwise it falls back
/// to proximal gradient with backtracking.
pub trait SmoothLoss: Send + Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn value(&self, i: usize, t: f64) -> f64;

    fn derivative(&self, i: usize, t: f64) -> f64;

    fn curvature(&self, i: usize, t: f64) -> f64;

    fn curvature_bound(&self, _i: usize) -> Option<f64> {
        None
    }
}

/// Losses whose per-observation data can be restricted to a subset of rows,
/// as cross-validation requires.
pub trait SubsetLoss: SmoothLoss + Sized {
    fn subset(&self, idx: &[usize]) -> Self;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Stop once a full pass moves no coefficient by more than this and the
    /// KKT residual is below it as well.
    pub tolerance: f64,
    /// Maximum number of coordinate passes (or gradient steps).
    pub max_iterations: usize,
    pub penalty_factors: Option<Vec<f64>>,
    pub warm_start: Option<Vec<f64>>,
    /// Record the objective after every pass.
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-7,
            max_iterations: 10_000,
            penalty_factors: None,
            warm_start: None,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1Fit {
    pub coefficients: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub trace: Vec<f64>,
}

pub(crate) fn soft_threshold(z: f64, threshold: f64) -> f64 {
    if z > threshold {
        z - threshold
    } else if z < -threshold {
        z + threshold
    } else {
        0.0
    }
}

fn penalty_vector(p: usize, opts: &SolverOptions) -> Result<Vec<f64>> {
    match &opts.penalty_factors {
        None => Ok(vec![1.0; p]),
        Some(f) if f.len() != p => Err(Error::validation(format!(
            "{} penalty factors for {} coefficients",
            f.len(),
            p
        ))),
        Some(f) if f.iter().any(|c| !(c.is_finite() && *c >= 0.0)) => {
            Err(Error::validation("penalty factors must be finite and nonnegative"))
        }
        Some(f) => Ok(f.clone()),
    }
}

fn check_inputs<L: SmoothLoss>(design: &Design, loss: &L, lambda: f64, opts: &SolverOptions) -> Result<()> {
    if design.rows() != loss.len() {
        return Err(Error::validation(format!(
            "{} feature rows for {} loss observations",
            design.rows(),
            loss.len()
        )));
    }
    if design.rows() == 0 {
        return Err(Error::validation("cannot fit on zero observations"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::validation(format!("lambda must be nonnegative, got {lambda}")));
    }
    if !(opts.tolerance > 0.0) || opts.max_iterations == 0 {
        return Err(Error::validation("solver tolerance must be > 0 and max iterations >= 1"));
    }
    Ok(())
}

pub(crate) fn smooth_value<L: SmoothLoss>(loss: &L, predictor: &[f64]) -> f64 {
    let m = predictor.len() as f64;
    predictor.iter().enumerate().map(|(i, &t)| loss.value(i, t)).sum::<f64>() / m
}

pub(crate) fn smooth_gradient<L: SmoothLoss>(design: &Design, loss: &L, predictor: &[f64]) -> Vec<f64> {
    let m = design.rows() as f64;
    let d: Vec<f64> = predictor.iter().enumerate().map(|(i, &t)| loss.derivative(i, t)).collect();
    (0..design.cols())
        .map(|j| design.col(j).iter().zip(&d).map(|(x, g)| x * g).sum::<f64>() / m)
        .collect()
}

fn penalty_value(theta: &[f64], lambda: f64, pen: &[f64]) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    lambda * theta.iter().zip(pen).map(|(t, c)| c * t.abs()).sum::<f64>()
}

pub(crate) fn kkt_from_gradient(grad: &[f64], theta: &[f64], lambda: f64, pen: &[f64]) -> f64 {
    grad.iter()
        .zip(theta)
        .zip(pen)
        .map(|((&g, &th), &c)| {
            let l = lambda * c;
            if th == 0.0 {
                (g.abs() - l).max(0.0)
            } else {
                (g + l * th.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Penalized objective at `theta`.
pub fn objective<L: SmoothLoss>(features: ArrayView2<'_, f64>, loss: &L, theta: &[f64], lambda: f64, penalty_factors: Option<&[f64]>) -> f64 {
    let design = Design::from_rows(features);
    let pen = penalty_factors.map(<[f64]>::to_vec).unwrap_or_else(|| vec![1.0; design.cols()]);
    let t = design.predict(theta);
    smooth_value(loss, &t) + penalty_value(theta, lambda, &pen)
}

/// Largest subgradient-violation of the optimality conditions at `theta`.
pub fn kkt_residual<L: SmoothLoss>(features: ArrayView2<'_, f64>, loss: &L, theta: &[f64], lambda: f64, penalty_factors: Option<&[f64]>) -> f64 {
    let design = Design::from_rows(features);
    let pen = penalty_factors.map(<[f64]>::to_vec).unwrap_or_else(|| vec![1.0; design.cols()]);
    let t = design.predict(theta);
    kkt_from_gradient(&smooth_gradient(&design, loss, &t), theta, lambda, &pen)
}

/// Minimizes the penalized objective for a fixed `lambda`.
pub fn solve_l1<L: SmoothLoss>(features: ArrayView2<'_, f64>, loss: &L, lambda: f64, opts: &SolverOptions) -> Result<L1Fit> {
    solve_design(&Design::from_rows(features), loss, lambda, opts)
}

pub(crate) fn solve_design<L: SmoothLoss>(design: &Design, loss: &L, lambda: f64, opts: &SolverOptions) -> Result<L1Fit> {
    check_inputs(design, loss, lambda, opts)?;
    let pen = penalty_vector(design.cols(), opts)?;
    let theta = match &opts.warm_start {
        Some(w) if w.len() != design.cols() => {
            return Err(Error::validation("warm start has the wrong length"));
        }
        Some(w) => w.clone(),
        None => vec![0.0; design.cols()],
    };
    let bounds: Option<Vec<f64>> = (0..loss.len()).map(|i| loss.curvature_bound(i)).collect();
    match bounds {
        Some(b) => coordinate_descent(design, loss, lambda, &pen, theta, &b, opts),
        None => proximal_gradient(design, loss, lambda, &pen, theta, opts),
    }
}

fn non_convergence<L: SmoothLoss>(design: &Design, loss: &L, theta: Vec<f64>, t: &[f64], lambda: f64, pen: &[f64], iterations: usize) -> Error {
    let kkt = kkt_from_gradient(&smooth_gradient(design, loss, t), &theta, lambda, pen);
    Error::NonConvergence {
        iterations,
        kkt_residual: kkt,
        last_iterate: theta,
    }
}

/// Minimizes the local quadratic model `gᵀΔt + ½ Σ hᵢ Δtᵢ²` plus the penalty
/// by cyclic coordinate descent, alternating full sweeps with sweeps over the
/// active set. `curv` holds the per-observation curvatures `hᵢ`, `grad_t` the
/// loss derivatives at the current predictor. Returns the new coefficients.
///
/// When sweeps over a sign-stable active set stall, the model is minimized
/// over that set directly (one linear solve), stopping at the first
/// coordinate that would cross zero; later sweeps verify the result.
fn quadratic_model_cd(
    design: &Design,
    curv: &[f64],
    grad_t: &[f64],
    lambda: f64,
    pen: &[f64],
    theta: &[f64],
    tolerance: f64,
    max_passes: usize,
) -> Vec<f64> {
    let m = design.rows();
    let p = design.cols();
    let inv_m = 1.0 / m as f64;
    // curvature-weighted columns
    let mut weighted = Vec::with_capacity(m * p);
    for j in 0..p {
        weighted.extend(design.col(j).iter().zip(curv).map(|(x, h)| h * x));
    }
    let wcol = |j: usize| &weighted[j * m..(j + 1) * m];
    let diag: Vec<f64> = (0..p).map(|j| dot(design.col(j), wcol(j)) * inv_m).collect();
    let mut new = theta.to_vec();
    // model gradient per observation: gᵢ + hᵢ·Δtᵢ
    let mut resid = grad_t.to_vec();
    let mut active_only = false;
    let mut stalled = 0usize;
    let mut newton_budget = 20usize;
    for _ in 0..max_passes {
        let mut max_change = 0.0f64;
        let mut sign_change = false;
        for j in 0..p {
            if active_only && new[j] == 0.0 {
                continue;
            }
            if diag[j] <= 0.0 {
                // flat direction: only the penalty acts
                if pen[j] > 0.0 && lambda > 0.0 && new[j] != 0.0 {
                    let delta = -new[j];
                    axpy(delta, wcol(j), &mut resid);
                    new[j] = 0.0;
                    max_change = max_change.max(delta.abs());
                }
                continue;
            }
            let g = dot(design.col(j), &resid) * inv_m;
            let updated = soft_threshold(new[j] - g / diag[j], lambda * pen[j] / diag[j]);
            let delta = updated - new[j];
            if delta != 0.0 {
                if updated.signum() != new[j].signum() || updated == 0.0 || new[j] == 0.0 {
                    sign_change = true;
                }
                axpy(delta, wcol(j), &mut resid);
                new[j] = updated;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < tolerance {
            if active_only {
                active_only = false;
            } else {
                break;
            }
        } else if !active_only {
            active_only = true;
            stalled = 0;
        } else {
            stalled = if sign_change { 0 } else { stalled + 1 };
            if stalled >= 2 && newton_budget > 0 {
                stalled = 0;
                newton_budget -= 1;
                active_set_newton(design, &weighted, lambda, pen, &diag, &mut new, &mut resid);
            }
        }
    }
    new
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Moves towards the minimizer of the quadratic model over the current
/// nonzero coordinates with their signs held fixed, stopping where the first
/// penalized coordinate reaches zero. The model objective cannot increase.
/// Leaves `new` and `resid` untouched if the reduced system is not positive
/// definite.
fn active_set_newton(
    design: &Design,
    weighted: &[f64],
    lambda: f64,
    pen: &[f64],
    diag: &[f64],
    new: &mut [f64],
    resid: &mut [f64],
) {
    let m = design.rows();
    let inv_m = 1.0 / m as f64;
    let wcol = |j: usize| &weighted[j * m..(j + 1) * m];
    let active: Vec<usize> = (0..design.cols())
        .filter(|&j| diag[j] > 0.0 && (new[j] != 0.0 || pen[j] == 0.0))
        .collect();
    let k = active.len();
    if k == 0 || k >= m {
        return;
    }
    let mut rhs = nalgebra::DVector::zeros(k);
    let mut gram = nalgebra::DMatrix::zeros(k, k);
    for (a, &j) in active.iter().enumerate() {
        let col = design.col(j);
        let g = dot(col, resid) * inv_m;
        rhs[a] = -(g + lambda * pen[j] * new[j].signum() * f64::from(new[j] != 0.0));
        for (b, &l) in active.iter().enumerate().take(a + 1) {
            let v = dot(col, wcol(l)) * inv_m;
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
    }
    let Some(chol) = gram.cholesky() else {
        return;
    };
    let step = chol.solve(&rhs);
    if step.iter().any(|s| !s.is_finite()) {
        return;
    }
    let mut alpha = 1.0f64;
    let mut hit = None;
    for (a, &j) in active.iter().enumerate() {
        if pen[j] > 0.0 && new[j] * (new[j] + step[a]) <= 0.0 {
            let frac = -new[j] / step[a];
            if frac < alpha {
                alpha = frac;
                hit = Some(j);
            }
        }
    }
    for (a, &j) in active.iter().enumerate() {
        let delta = if Some(j) == hit { -new[j] } else { alpha * step[a] };
        new[j] += delta;
        if Some(j) == hit {
            new[j] = 0.0;
        }
        axpy(delta, wcol(j), resid);
    }
}

/// Proximal Newton: each outer iteration minimizes the local quadratic model
/// of the smooth part (exact curvatures, floored by a small multiple of the
/// curvature bound) with coordinate descent, then backtracks along the step
/// until the penalized objective decreases sufficiently. If no decrease is
/// found, a step on the bound-based majorizer is taken instead, which always
/// decreases the objective.
fn coordinate_descent<L: SmoothLoss>(
    design: &Design,
    loss: &L,
    lambda: f64,
    pen: &[f64],
    mut theta: Vec<f64>,
    bounds: &[f64],
    opts: &SolverOptions,
) -> Result<L1Fit> {
    let m = design.rows();
    let p = design.cols();
    let inner_passes = opts.max_iterations.max(100);
    let mut t = design.predict(&theta);
    let mut f = smooth_value(loss, &t) + penalty_value(&theta, lambda, pen);
    if !f.is_finite() {
        return Err(Error::NonFinite);
    }
    let mut trace = Vec::new();
    let mut grad_t = vec![0.0; m];
    let mut curv = vec![0.0; m];
    for iter in 1..=opts.max_iterations {
        for i in 0..m {
            grad_t[i] = loss.derivative(i, t[i]);
            curv[i] = loss.curvature(i, t[i]).max(1e-8 * bounds[i]);
        }
        let grad: Vec<f64> = (0..p)
            .map(|j| design.col(j).iter().zip(&grad_t).map(|(x, g)| x * g).sum::<f64>() / m as f64)
            .collect();
        let kkt = kkt_from_gradient(&grad, &theta, lambda, pen);
        let target = quadratic_model_cd(design, &curv, &grad_t, lambda, pen, &theta, opts.tolerance, inner_passes);
        let step: Vec<f64> = target.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let max_step = step.iter().fold(0.0f64, |a, s| a.max(s.abs()));
        if max_step < opts.tolerance && kkt <= opts.tolerance {
            return Ok(L1Fit {
                coefficients: theta,
                objective: f,
                kkt_residual: kkt,
                iterations: iter - 1,
                trace,
            });
        }
        let dt = design.predict(&step);
        let decrease = grad.iter().zip(&step).map(|(g, s)| g * s).sum::<f64>()
            + penalty_value(&target, lambda, pen)
            - penalty_value(&theta, lambda, pen);
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1e-10 {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a + alpha * s).collect();
            let tc: Vec<f64> = t.iter().zip(&dt).map(|(a, d)| a + alpha * d).collect();
            let fc = smooth_value(loss, &tc) + penalty_value(&cand, lambda, pen);
            // slack of a few ulps so steps below rounding noise are not rejected
            if fc.is_finite() && fc <= f + 1e-4 * alpha * decrease.min(0.0) + 4.0 * f64::EPSILON * f.abs() {
                accepted = Some((cand, tc, fc));
                break;
            }
            alpha *= 0.5;
        }
        let (cand, tc, fc) = match accepted {
            // stationary to working precision: the objective no longer moves
            Some((_, _, fc)) if fc >= f && kkt <= opts.tolerance => {
                return Ok(L1Fit {
                    coefficients: theta,
                    objective: f,
                    kkt_residual: kkt,
                    iterations: iter,
                    trace,
                });
            }
            Some(c) => c,
            None => {
                // majorizer step: curvature bounds in place of the exact ones
                let target = quadratic_model_cd(design, bounds, &grad_t, lambda, pen, &theta, opts.tolerance, inner_passes);
                let tc = design.predict(&target);
                let fc = smooth_value(loss, &tc) + penalty_value(&target, lambda, pen);
                if !fc.is_finite() {
                    return Err(Error::NonFinite);
                }
                if fc > f {
                    return Err(non_convergence(design, loss, theta, &t, lambda, pen, iter));
                }
                (target, tc, fc)
            }
        };
        theta = cand;
        t = tc;
        f = fc;
        if opts.record_trace {
            trace.push(f);
        }
    }
    Err(non_convergence(design, loss, theta, &t, lambda, pen, opts.max_iterations))
}

/// Proximal gradient with backtracking on the smooth part; each accepted
/// step satisfies the sufficient-decrease condition, so the objective never
/// increases.
fn proximal_gradient<L: SmoothLoss>(
    design: &Design,
    loss: &L,
    lambda: f64,
    pen: &[f64],
    mut theta: Vec<f64>,
    opts: &SolverOptions,
) -> Result<L1Fit> {
    let p = design.cols();
    let mut t = design.predict(&theta);
    let mut f = smooth_value(loss, &t);
    if !f.is_finite() {
        return Err(Error::NonFinite);
    }
    let mut grad = smooth_gradient(design, loss, &t);
    let mut step = 1.0;
    let mut trace = Vec::new();
    for iter in 1..=opts.max_iterations {
        let kkt = kkt_from_gradient(&grad, &theta, lambda, pen);
        if kkt <= opts.tolerance {
            return Ok(L1Fit {
                objective: f + penalty_value(&theta, lambda, pen),
                coefficients: theta,
                kkt_residual: kkt,
                iterations: iter - 1,
                trace,
            });
        }
        let (cand, tc, fc) = loop {
            let cand: Vec<f64> = (0..p)
                .map(|j| soft_threshold(theta[j] - step * grad[j], step * lambda * pen[j]))
                .collect();
            let tc = design.predict(&cand);
            let fc = smooth_value(loss, &tc);
            let mut lin = 0.0;
            let mut sq = 0.0;
            for j in 0..p {
                let d = cand[j] - theta[j];
                lin += grad[j] * d;
                sq += d * d;
            }
            if fc.is_finite() && fc <= f + lin + sq / (2.0 * step) {
                break (cand, tc, fc);
            }
            step *= 0.5;
            if step < 1e-30 {
                return Err(non_convergence(design, loss, theta, &t, lambda, pen, iter));
            }
        };
        theta = cand;
        t = tc;
        f = fc;
        grad = smooth_gradient(design, loss, &t);
        if opts.record_trace {
            trace.push(f + penalty_value(&theta, lambda, pen));
        }
        step *= 1.5;
    }
    Err(non_convergence(design, loss, theta, &t, lambda, pen, opts.max_iterations))
}

/// Smallest `lambda` whose solution has every penalized coefficient at zero.
/// Unpenalized coefficients are fitted first.
pub fn lambda_max<L: SmoothLoss>(features: ArrayView2<'_, f64>, loss: &L, opts: &SolverOptions) -> Result<f64> {
    lambda_max_design(&Design::from_rows(features), loss, opts)
}

pub(crate) fn lambda_max_design<L: SmoothLoss>(design: &Design, loss: &L, opts: &SolverOptions) -> Result<f64> {
    let pen = penalty_vector(design.cols(), opts)?;
    let theta = if pen.contains(&0.0) {
        let o = SolverOptions {
            warm_start: None,
            record_trace: false,
            ..opts.clone()
        };
        solve_design(design, loss, f64::MAX, &o)?.coefficients
    } else {
        vec![0.0; design.cols()]
    };
    let t = design.predict(&theta);
    let grad = smooth_gradient(design, loss, &t);
    Ok(grad
        .iter()
        .zip(&pen)
        .filter(|(_, &c)| c > 0.0)
        .map(|(g, c)| g.abs() / c)
        .fold(0.0, f64::max))
}
