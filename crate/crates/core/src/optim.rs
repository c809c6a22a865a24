//! Smooth unconstrained minimization used by every inner solve in the crate.
//!
//! Damped Newton with Armijo backtracking when the objective supplies a Hessian,
//! limited-memory BFGS otherwise. Convergence is declared on the relative
//! gradient norm `|g| <= tol * (1 + |g_0|)` where `g_0` is the gradient at the
//! starting point.

use std::collections::VecDeque;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// A differentiable objective on `R^n`.
///
/// `value` may return `+inf` outside the effective domain; the line search treats
/// such trial points as rejected.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

impl<T: Objective + ?Sized> Objective for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).gradient(x)
    }
    fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        (**self).hessian(x)
    }
}

#[derive(Clone, Debug)]
pub struct MinimizeOptions<'a> {
    pub tol: f64,
    pub max_iters: usize,
    /// SPD matrix approximating the Hessian; seeds the quasi-Newton metric.
    pub preconditioner: Option<&'a DMatrix<f64>>,
    /// Iterates beyond this Euclidean norm abort with [`FailureReason::Diverged`].
    pub divergence_radius: Option<f64>,
    pub memory: usize,
}

impl Default for MinimizeOptions<'_> {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 200,
            preconditioner: None,
            divergence_radius: None,
            memory: 12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Converged,
    /// No step along the search direction decreased the objective.
    Stalled {
        at_domain_boundary: bool,
    },
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub gradient_norm: f64,
    pub initial_gradient_norm: f64,
    pub iterations: usize,
    pub status: Status,
}

impl Minimum {
    pub fn relative_residual(&self) -> f64 {
        self.gradient_norm / (1.0 + self.initial_gradient_norm)
    }

    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FailureReason {
    IterationLimit,
    NonFiniteStart,
    Diverged { norm: f64 },
}

#[derive(Clone, Debug)]
pub struct OptimFailure {
    pub reason: FailureReason,
    pub best: Minimum,
}

struct LbfgsMemory {
    pairs: VecDeque<(DVector<f64>, DVector<f64>, f64)>,
    capacity: usize,
}

impl LbfgsMemory {
    fn push(&mut self, s: DVector<f64>, y: DVector<f64>) {
        let sy = s.dot(&y);
        if sy <= 1e-12 * s.norm() * y.norm() || !sy.is_finite() {
            return;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    fn direction(&self, g: &DVector<f64>, precond: Option<&Cholesky<f64, Dyn>>) -> DVector<f64> {
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * s.dot(&q);
            q.axpy(-a, y, 1.0);
            alphas.push(a);
        }
        let mut r = match precond {
            Some(ch) => ch.solve(&q),
            None => match self.pairs.back() {
                Some((s, y, _)) => q * (s.dot(y) / y.dot(y)),
                None => q,
            },
        };
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * y.dot(&r);
            r.axpy(a - b, s, 1.0);
        }
        -r
    }
}

fn newton_direction(h: DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = h.diagonal().amax().max(1e-300);
    let mut shift = 0.0;
    for _ in 0..30 {
        let mut m = h.clone();
        if shift > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += shift;
            }
        }
        if let Some(ch) = Cholesky::new(m) {
            let d = -ch.solve(g);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        shift = if shift == 0.0 {
            1e-10 * scale
        } else {
            shift * 10.0
        };
    }
    None
}

/// Minimizes `obj` starting from `x0`.
///
/// Returns `Ok` for both converged and stalled runs (inspect [`Minimum::status`]);
/// `Err` only when the iteration cap is hit, the start is not finite, or the
/// iterates leave the divergence radius.
pub fn minimize<O: Objective + ?Sized>(
    obj: &O,
    x0: &DVector<f64>,
    opts: &MinimizeOptions<'_>,
) -> Result<Minimum, OptimFailure> {
    let mut x = x0.clone();
    let mut f = obj.value(&x);
    let mut g = obj.gradient(&x);
    let g0 = g.norm();
    let mut state = Minimum {
        x: x.clone(),
        value: f,
        gradient: g.clone(),
        gradient_norm: g0,
        initial_gradient_norm: g0,
        iterations: 0,
        status: Status::Converged,
    };
    if !f.is_finite() || !g0.is_finite() {
        return Err(OptimFailure {
            reason: FailureReason::NonFiniteStart,
            best: state,
        });
    }
    let threshold = opts.tol * (1.0 + g0);
    let precond = opts.preconditioner.and_then(|p| Cholesky::new(p.clone()));
    let mut memory = LbfgsMemory {
        pairs: VecDeque::new(),
        capacity: opts.memory.max(1),
    };

    let mut best_gnorm = g0;
    let mut idle = 0;
    for iter in 0..opts.max_iters {
        let gnorm = g.norm();
        if gnorm <= threshold {
            state.iterations = iter;
            return Ok(finish(state, x, f, g, Status::Converged));
        }

        let hessian = obj.hessian(&x);
        let has_hessian = hessian.is_some();
        let mut d = match hessian {
            Some(h) => newton_direction(h, &g).unwrap_or_else(|| -g.clone()),
            None => memory.direction(&g, precond.as_ref()),
        };
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            d = -g.clone();
            slope = -gnorm * gnorm;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        let mut boundary = false;
        let mut full_step = None;
        // Predicted decrease below value rounding: search on the slope instead.
        let noisy = -slope <= 1e-10 * (1.0 + f.abs());
        if noisy {
            accepted = slope_search(obj, &x, &d, slope);
        }
        for _ in 0..if noisy { 0 } else { 60 } {
            let trial = &x + &d * alpha;
            let ft = obj.value(&trial);
            if !ft.is_finite() {
                boundary = true;
            } else {
                if alpha == 1.0 {
                    full_step = Some((trial.clone(), ft));
                }
                if ft < f && ft <= f + 1e-4 * alpha * slope {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !has_hessian && !noisy {
            // Without curvature information the unit step may be far too short;
            // extrapolate while the decrease continues.
            if let Some((_, mut fa)) = accepted.clone().filter(|_| alpha == 1.0) {
                let mut a = 2.0;
                for _ in 0..60 {
                    let trial = &x + &d * a;
                    let ft = obj.value(&trial);
                    if !(ft.is_finite() && ft < fa && ft <= f + 1e-4 * a * slope) {
                        break;
                    }
                    fa = ft;
                    accepted = Some((trial, ft));
                    a *= 2.0;
                }
            }
        }
        if accepted.is_none() {
            // Near the optimum, value decreases fall below rounding; accept the
            // full step if it reduces the gradient without raising the value.
            if let Some((trial, ft)) = full_step {
                let gt = obj.gradient(&trial);
                if gt.norm() < gnorm && ft <= f + 1e-12 * (1.0 + f.abs()) {
                    accepted = Some((trial, ft));
                }
            }
        }
        if accepted.is_none() && !noisy {
            accepted = slope_search(obj, &x, &d, slope);
        }
        let Some((x_new, f_new)) = accepted else {
            state.iterations = iter;
            return Ok(finish(
                state,
                x,
                f,
                g,
                Status::Stalled {
                    at_domain_boundary: boundary,
                },
            ));
        };

        let g_new = obj.gradient(&x_new);
        if !has_hessian {
            memory.push(&x_new - &x, &g_new - &g);
        }
        // Rounding floor: the best gradient norm stops halving.
        let gn = g_new.norm();
        if gn < 0.5 * best_gnorm {
            best_gnorm = gn;
            idle = 0;
        } else {
            idle += 1;
        }
        if idle >= 25 {
            state.iterations = iter + 1;
            return Ok(finish(
                state,
                x_new,
                f_new,
                g_new,
                Status::Stalled {
                    at_domain_boundary: false,
                },
            ));
        }
        x = x_new;
        f = f_new;
        g = g_new;

        if let Some(radius) = opts.divergence_radius {
            let n = x.norm();
            if n > radius {
                state.iterations = iter + 1;
                return Err(OptimFailure {
                    reason: FailureReason::Diverged { norm: n },
                    best: finish(state, x, f, g, Status::Converged),
                });
            }
        }
    }

    state.iterations = opts.max_iters;
    if g.norm() <= threshold {
        return Ok(finish(state, x, f, g, Status::Converged));
    }
    Err(OptimFailure {
        reason: FailureReason::IterationLimit,
        best: finish(state, x, f, g, Status::Converged),
    })
}

/// Secant search for a root of `a -> g(x + a d) . d`, used once value
/// differences are lost in rounding.
fn slope_search<O: Objective + ?Sized>(
    obj: &O,
    x: &DVector<f64>,
    d: &DVector<f64>,
    slope: f64,
) -> Option<(DVector<f64>, f64)> {
    let phi = |a: f64| {
        let g = obj.gradient(&(x + d * a));
        g.dot(d)
    };
    let (mut lo, mut dlo) = (0.0, slope);
    let mut hi = 1.0;
    let mut dhi = phi(hi);
    while dhi.is_finite() && dhi < 0.0 && hi < 1e12 {
        lo = hi;
        dlo = dhi;
        hi *= 2.0;
        dhi = phi(hi);
    }
    while !dhi.is_finite() && hi - lo > 1e-12 {
        hi = 0.5 * (lo + hi);
        dhi = phi(hi);
    }
    if !(dhi >= 0.0) {
        return None;
    }
    let mut a = hi;
    for _ in 0..40 {
        let width = hi - lo;
        a = lo - dlo * width / (dhi - dlo);
        if !(a > lo + 1e-3 * width && a < hi - 1e-3 * width) {
            a = 0.5 * (lo + hi);
        }
        let da = phi(a);
        if da.abs() <= 0.1 * slope.abs() {
            break;
        }
        if da < 0.0 {
            lo = a;
            dlo = da;
        } else {
            hi = a;
            dhi = da;
        }
    }
    let trial = x + d * a;
    let ft = obj.value(&trial);
    ft.is_finite().then_some((trial, ft))
}

fn finish(mut state: Minimum, x: DVector<f64>, f: f64, g: DVector<f64>, status: Status) -> Minimum {
    state.gradient_norm = g.norm();
    state.x = x;
    state.value = f;
    state.gradient = g;
    state.status = status;
    state
}

/// Objective assembled from closures; handy for tests and one-off solves.
pub struct FnObjective<F, G> {
    pub dim: usize,
    pub value: F,
    pub gradient: G,
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(x)
    }
}

/// Minimizes a convex function of one variable on `[lo, hi]` by bisection on the
/// sign of its derivative. `deriv` must be nondecreasing.
pub fn bisect_monotone<D: FnMut(f64) -> f64>(
    mut deriv: D,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> f64 {
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if deriv(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}
