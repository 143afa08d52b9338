//! Constrained nonparametric maximum likelihood for fixed crossing parameters.
//!
//! The objective is the discrete-time log-likelihood
//! `Σ_a Σ_j d_ja·log(1 − e^{u_ja}) + (R_ja − d_ja)·u_ja` over log-jumps
//! `u_ja ∈ [−CAP, 0]`, subject to a [`ConstraintSystem`].
//!
//! Two routes solve the same problem. The structured route works on the
//! Lagrangian dual, which for these systems is an isotonic regression in the
//! cumulative multipliers and is solved by pool-adjacent-violators. The
//! generic route is a dense sequential quadratic programming method with a
//! dual active-set QP kernel. Every structured solution is checked with a KKT
//! certificate and the generic route takes over when the check fails.

mod active_set;
pub(crate) mod dual;

use serde::{Deserialize, Serialize};

use crate::constraints::{build_constraints, ConstraintKind, ConstraintSystem, CrossingParams};
use crate::data::{kaplan_meier, km_logjump, Arm, EventGrid, CAP};
use crate::error::{Error, Result};
use crate::scalar::{log1mexp, Scalar};

pub(crate) use active_set::project_onto_system;

/// Smooth coordinates (`d > 0`) are kept at or below this value.
pub const BARRIER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Method {
    /// Structured dual solver, generic solver when its certificate fails.
    #[default]
    Auto,
    Structured,
    Generic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Bound on the scaled KKT residual.
    pub tol: f64,
    pub max_iter: usize,
    pub method: Method,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 500,
            method: Method::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    /// The Kaplan–Meier jumps were already feasible.
    KaplanMeier,
    Structured,
    Generic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T> {
    pub u0: Vec<T>,
    pub u1: Vec<T>,
    pub loglik: T,
    pub converged: bool,
    pub kkt_residual: T,
    /// Multipliers of the `m` crossing rows.
    pub multipliers: Vec<T>,
    pub iterations: usize,
    pub route: Route,
}

impl<T: Scalar> FitResult<T> {
    pub fn logjumps(&self, arm: Arm) -> &[T] {
        match arm {
            Arm::Control => &self.u0,
            Arm::Treatment => &self.u1,
        }
    }

    /// Discrete hazards `1 − e^{u}` for both arms.
    pub fn hazards(&self) -> [Vec<T>; 2] {
        [
            self.u0.iter().map(|&u| -u.exp_m1()).collect(),
            self.u1.iter().map(|&u| -u.exp_m1()).collect(),
        ]
    }
}

/// Per-coordinate likelihood term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Coord<T> {
    /// `d > 0`: strictly concave, diverges at `u = 0`.
    Smooth { d: T, r: T, thresh: T },
    /// `d = 0`: linear cost `r·u`.
    Linear { r: T },
    /// No subject at risk; held at `u = 0`.
    Pinned,
}

/// Lagrangian maximizer of one coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Response<T> {
    Point(T),
    /// Any value in `[−CAP, 0]` is optimal.
    Kink,
}

impl<T: Scalar> Coord<T> {
    pub(crate) fn new(d: usize, r: usize, kind: ConstraintKind) -> Self {
        if d > 0 {
            let d = T::from_count(d);
            let cap = T::lit(CAP);
            Coord::Smooth {
                d,
                r: T::from_count(r),
                thresh: d / (-(-cap).exp_m1()),
            }
        } else if r > 0 || kind == ConstraintKind::Hazard {
            Coord::Linear { r: T::from_count(r) }
        } else {
            Coord::Pinned
        }
    }

    pub(crate) fn at_risk(&self) -> T {
        match *self {
            Coord::Smooth { r, .. } | Coord::Linear { r } => r,
            Coord::Pinned => T::zero(),
        }
    }

    pub(crate) fn objective(&self, u: T) -> T {
        match *self {
            Coord::Smooth { d, r, .. } => d * log1mexp(u) + (r - d) * u,
            Coord::Linear { r } => r * u,
            Coord::Pinned => T::zero(),
        }
    }

    pub(crate) fn gradient(&self, u: T) -> T {
        match *self {
            Coord::Smooth { d, r, .. } => (r - d) - d / (-u).exp_m1(),
            Coord::Linear { r } => r,
            Coord::Pinned => T::zero(),
        }
    }

    pub(crate) fn curvature(&self, u: T) -> T {
        match *self {
            Coord::Smooth { d, .. } => {
                let e = (-u).exp_m1();
                -d * (e + T::one()) / (e * e)
            }
            _ => T::zero(),
        }
    }

    /// Maximizer of `objective(u) + shift·u` over `[−CAP, 0]`.
    #[inline]
    pub(crate) fn response(&self, shift: T) -> Response<T> {
        let cap = T::lit(CAP);
        match *self {
            Coord::Smooth { d, r, thresh } => {
                let rr = r + shift;
                if rr <= thresh {
                    Response::Point(-cap)
                } else if d < rr * T::lit(0.5) {
                    Response::Point((-d / rr).ln_1p().max(-cap))
                } else {
                    Response::Point((((r - d) + shift) / rr).ln().max(-cap))
                }
            }
            Coord::Linear { r } => {
                let rr = r + shift;
                if rr > T::zero() {
                    Response::Point(T::zero())
                } else if rr < T::zero() {
                    Response::Point(-cap)
                } else {
                    Response::Kink
                }
            }
            Coord::Pinned => Response::Point(T::zero()),
        }
    }

    /// Response with a kink resolved as the limit from `shift + 0`.
    #[inline]
    pub(crate) fn response_above(&self, shift: T) -> T {
        match self.response(shift) {
            Response::Point(u) => u,
            Response::Kink => T::zero(),
        }
    }

    /// Response with a kink resolved as the limit from `shift − 0`.
    #[inline]
    pub(crate) fn response_below(&self, shift: T) -> T {
        match self.response(shift) {
            Response::Point(u) => u,
            Response::Kink => -T::lit(CAP),
        }
    }

    /// Derivative of the response in `shift` away from kinks.
    #[inline]
    pub(crate) fn response_slope(&self, shift: T) -> T {
        match *self {
            Coord::Smooth { d, r, thresh } => {
                let rr = r + shift;
                if rr <= thresh {
                    T::zero()
                } else {
                    d / (rr * ((r - d) + shift))
                }
            }
            _ => T::zero(),
        }
    }

    /// Shift at which a linear coordinate switches bound.
    pub(crate) fn kink(&self) -> Option<T> {
        match *self {
            Coord::Linear { r } => Some(-r),
            _ => None,
        }
    }

    /// Upper bound used by the generic route.
    pub(crate) fn upper(&self) -> T {
        match self {
            Coord::Smooth { .. } => -T::lit(BARRIER),
            _ => T::zero(),
        }
    }
}

/// Coordinates of both arms for a grid and constraint family.
#[derive(Debug, Clone)]
pub(crate) struct Coords<T> {
    pub arms: [Vec<Coord<T>>; 2],
}

impl<T: Scalar> Coords<T> {
    pub(crate) fn new(grid: &EventGrid<T>, kind: ConstraintKind) -> Self {
        let arm = |a: Arm| {
            (0..grid.m())
                .map(|j| Coord::new(grid.d(j, a), grid.r(j, a), kind))
                .collect()
        };
        Self {
            arms: [arm(Arm::Control), arm(Arm::Treatment)],
        }
    }

    pub(crate) fn m(&self) -> usize {
        self.arms[0].len()
    }

    pub(crate) fn swapped(&self) -> Self {
        Self {
            arms: [self.arms[1].clone(), self.arms[0].clone()],
        }
    }

    pub(crate) fn loglik(&self, u0: &[T], u1: &[T]) -> T {
        let mut total = T::zero();
        for (coords, u) in self.arms.iter().zip([u0, u1]) {
            for (c, &x) in coords.iter().zip(u) {
                total = total + c.objective(x);
            }
        }
        total
    }

    /// Kaplan–Meier log-jumps under this family's conventions.
    pub(crate) fn km(&self, grid: &EventGrid<T>) -> [Vec<T>; 2] {
        let arm = |a: Arm| (0..grid.m()).map(|j| km_logjump(grid.d(j, a), grid.r(j, a))).collect();
        [arm(Arm::Control), arm(Arm::Treatment)]
    }
}

/// Log-likelihood of `(u0, u1)` on `grid`; `−∞` when an arm with events at
/// `t_j` has `u_ja = 0`.
pub fn loglik<T: Scalar>(u0: &[T], u1: &[T], grid: &EventGrid<T>) -> Result<T> {
    let m = grid.m();
    for u in [u0, u1] {
        if u.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: u.len(),
            });
        }
        if let Some(&bad) = u.iter().find(|&&x| !(x <= T::zero())) {
            return Err(Error::InvalidInput(format!("log-jump {bad} is positive")));
        }
    }
    let mut total = T::zero();
    for (a, u) in [u0, u1].into_iter().enumerate() {
        let arm = Arm::from_index(a)?;
        for (j, &x) in u.iter().enumerate() {
            let d = T::from_count(grid.d(j, arm));
            let r = T::from_count(grid.r(j, arm));
            if d > T::zero() {
                total = total + d * log1mexp(x);
            }
            total = total + (r - d) * x;
        }
    }
    Ok(total)
}

/// Scaled KKT residual of `(u0, u1)` with crossing-row multipliers `mu`.
///
/// Combines primal infeasibility, negative multipliers, complementary
/// slackness and box-projected stationarity (each coordinate scaled by
/// `1/(1 + R_ja)`).
pub fn kkt_residual<T: Scalar>(grid: &EventGrid<T>, system: &ConstraintSystem, u0: &[T], u1: &[T], mu: &[T]) -> T {
    let coords = Coords::new(grid, system.kind());
    residual_with(&coords, system, u0, u1, mu)
}

pub(crate) fn residual_with<T: Scalar>(
    coords: &Coords<T>,
    system: &ConstraintSystem,
    u0: &[T],
    u1: &[T],
    mu: &[T],
) -> T {
    let m = coords.m();
    let one = T::one();
    let cap = T::lit(CAP);
    let edge = T::lit(1e-12);
    let mut worst = T::zero();

    let slacks = system.crossing_slacks(u0, u1);
    for (k, (&s, &l)) in slacks.iter().zip(mu).enumerate() {
        let _ = k;
        worst = worst.max(-s).max(-l / (one + l.abs()));
        worst = worst.max((l * s).abs() / (one + l.abs()));
    }

    // multiplier seen by node j in each arm
    let mut shift = vec![T::zero(); m];
    match system.kind() {
        ConstraintKind::Survival => {
            let mut acc = T::zero();
            for k in (0..m).rev() {
                acc = acc + mu[k] * T::lit(f64::from(system.sign(k)));
                shift[k] = acc;
            }
        }
        ConstraintKind::Hazard => {
            for k in 0..m {
                shift[k] = mu[k] * T::lit(f64::from(system.sign(k)));
            }
        }
    }

    for (a, u) in [u0, u1].into_iter().enumerate() {
        let sign = if a == 0 { one } else { -one };
        for j in 0..m {
            let c = coords.arms[a][j];
            let x = u[j];
            if matches!(c, Coord::Pinned) {
                worst = worst.max(x.abs());
                continue;
            }
            worst = worst.max(x - c.upper().max(T::zero())).max(-cap - x);
            let g = c.gradient(x) + sign * shift[j];
            let r = if x >= c.upper() - edge {
                (-g).max(T::zero())
            } else if x <= -cap + edge {
                g.max(T::zero())
            } else {
                g.abs()
            };
            let scaled = r / (one + c.at_risk());
            worst = worst.max(if scaled.is_nan() { T::infinity() } else { scaled });
        }
    }
    worst
}

/// Least-squares projection of the Kaplan–Meier jumps onto the feasible set
/// (with smooth coordinates kept at or below `−1e−10`).
pub fn init_from_km<T: Scalar>(grid: &EventGrid<T>, system: &ConstraintSystem) -> Result<(Vec<T>, Vec<T>)> {
    let coords = Coords::new(grid, system.kind());
    let km = coords.km(grid);
    project_onto_system(&coords, system, &km[0], &km[1], true).map_err(|reason| Error::SolverFailure {
        theta: f64::NAN,
        gamma: system.gamma().gamma(),
        reason,
    })
}

/// Constrained MLE on the survival-curve system for `params`.
pub fn fit_conditional<T: Scalar>(
    grid: &EventGrid<T>,
    params: &CrossingParams<T>,
    opts: &SolverOptions,
) -> Result<FitResult<T>> {
    let system = build_constraints(grid, params);
    fit_system(grid, &system, opts).map_err(|e| with_theta(e, params.theta.as_f64()))
}

pub(crate) fn with_theta(e: Error, theta: f64) -> Error {
    match e {
        Error::SolverFailure { gamma, reason, .. } => Error::SolverFailure { theta, gamma, reason },
        other => other,
    }
}

/// Constrained MLE for an arbitrary survival or hazard system.
pub fn fit_system<T: Scalar>(
    grid: &EventGrid<T>,
    system: &ConstraintSystem,
    opts: &SolverOptions,
) -> Result<FitResult<T>> {
    if system.m() != grid.m() {
        return Err(Error::DimensionMismatch {
            expected: grid.m(),
            found: system.m(),
        });
    }
    let coords = Coords::new(grid, system.kind());
    let km = coords.km(grid);
    let structured = || match system.kind() {
        ConstraintKind::Survival => dual::survival_candidates(&coords, system.gamma(), &[system.v()])
            .pop()
            .expect("one candidate"),
        ConstraintKind::Hazard => dual::HazardNodes::new(&coords).solve(system),
    };
    finish(&coords, system, &km, opts, structured)
}

/// Shared tail of every conditional fit: iteration guard, the Kaplan–Meier
/// shortcut, the certificate and the generic fallback.
pub(crate) fn finish<T: Scalar, F>(
    coords: &Coords<T>,
    system: &ConstraintSystem,
    km: &[Vec<T>; 2],
    opts: &SolverOptions,
    structured: F,
) -> Result<FitResult<T>>
where
    F: FnOnce() -> dual::Candidate<T>,
{
    let fail = |reason: String| Error::SolverFailure {
        theta: f64::NAN,
        gamma: system.gamma().gamma(),
        reason,
    };
    if opts.max_iter == 0 {
        return Err(fail("iteration limit is zero".into()));
    }
    let tol = T::lit(opts.tol);
    let m = coords.m();

    if opts.method != Method::Generic && system.max_violation(&km[0], &km[1]) <= T::zero() {
        let mu = vec![T::zero(); m];
        let res = residual_with(coords, system, &km[0], &km[1], &mu);
        return Ok(FitResult {
            loglik: coords.loglik(&km[0], &km[1]),
            u0: km[0].clone(),
            u1: km[1].clone(),
            converged: true,
            kkt_residual: res,
            multipliers: mu,
            iterations: 0,
            route: Route::KaplanMeier,
        });
    }

    if opts.method != Method::Generic {
        let cand = structured();
        let loglik = coords.loglik(&cand.u0, &cand.u1);
        let res = residual_with(coords, system, &cand.u0, &cand.u1, &cand.mu);
        let feasible = system.max_violation(&cand.u0, &cand.u1) <= T::lit(1e-9);
        // an infinite multiplier certifies that every feasible point has
        // an arm with events at a zero jump
        let degenerate = feasible && loglik == T::neg_infinity() && cand.unbounded;
        if res <= tol || degenerate {
            return Ok(FitResult {
                u0: cand.u0,
                u1: cand.u1,
                loglik,
                converged: true,
                kkt_residual: if degenerate { T::zero() } else { res },
                multipliers: cand.mu,
                iterations: cand.iterations,
                route: Route::Structured,
            });
        }
        if opts.method == Method::Structured {
            return Err(fail(format!("structured certificate failed (residual {res})")));
        }
        log::debug!("structured certificate failed (residual {res}); using generic route");
    }

    let out = active_set::solve_generic(coords, system, km, opts).map_err(fail)?;
    let loglik = coords.loglik(&out.u0, &out.u1);
    let res = if loglik == T::neg_infinity() {
        T::zero()
    } else {
        residual_with(coords, system, &out.u0, &out.u1, &out.mu)
    };
    if !out.converged {
        return Err(fail(format!(
            "no convergence within {} iterations (residual {res})",
            opts.max_iter
        )));
    }
    Ok(FitResult {
        u0: out.u0,
        u1: out.u1,
        loglik,
        converged: true,
        kkt_residual: res,
        multipliers: out.mu,
        iterations: out.iterations,
        route: Route::Generic,
    })
}

/// Unconstrained maximum of the log-likelihood (attained by Kaplan–Meier).
pub fn km_loglik<T: Scalar>(grid: &EventGrid<T>) -> T {
    let s0 = kaplan_meier(grid, Arm::Control);
    let s1 = kaplan_meier(grid, Arm::Treatment);
    loglik(s0.logjumps(), s1.logjumps(), grid).expect("KM jumps are valid")
}
