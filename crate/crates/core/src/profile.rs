//! Profile likelihood over the discrete crossing candidates.
//!
//! The profile is piecewise constant in `θ` on the grid cells, so the search
//! runs over `θ ∈ {0, t_1, …, t_{m−1}}` and both dominance directions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintKind, ConstraintSystem, CrossingParams, Dominance};
use crate::data::{Cohort, EventGrid, StepSurvival};
use crate::error::Result;
use crate::mle::{dual, finish, fit_conditional, with_theta, Coords, FitResult, Route, SolverOptions};
use crate::scalar::Scalar;

/// Profile values closer than this count as tied.
pub const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry<T> {
    pub theta: T,
    pub gamma: Dominance,
    pub loglik: T,
    pub route: Route,
}

/// Single-crossing constrained estimate.
#[derive(Debug, Clone)]
pub struct SccFit<T> {
    pub theta_hat: T,
    pub gamma_hat: Dominance,
    pub s0: StepSurvival<T>,
    pub s1: StepSurvival<T>,
    /// All `2m` candidates, `θ` ascending and `γ = +1` first.
    pub profile: Vec<ProfileEntry<T>>,
    pub loglik: T,
    /// Conditional fit at `(θ̂, γ̂)`.
    pub fit: FitResult<T>,
    pub kind: ConstraintKind,
    pub grid: EventGrid<T>,
}

impl<T: Scalar> SccFit<T> {
    pub fn params(&self) -> CrossingParams<T> {
        CrossingParams {
            theta: self.theta_hat,
            gamma: self.gamma_hat,
        }
    }

    /// Discrete hazards `1 − e^{û}` of both arms.
    pub fn hazards(&self) -> [Vec<T>; 2] {
        self.fit.hazards()
    }
}

/// Value of the profile log-likelihood at `params`.
pub fn profile_loglik<T: Scalar>(grid: &EventGrid<T>, params: &CrossingParams<T>, opts: &SolverOptions) -> Result<T> {
    Ok(fit_conditional(grid, params, opts)?.loglik)
}

/// Step curves `exp(Σ_{t_j ≤ t} û_ja)` of both arms.
pub fn curves_from_fit<T: Scalar>(fit: &FitResult<T>, grid: &EventGrid<T>) -> (StepSurvival<T>, StepSurvival<T>) {
    let build =
        |u: &[T]| StepSurvival::from_logjumps(grid.times().to_vec(), u.to_vec()).expect("fitted log-jumps are valid");
    (build(&fit.u0), build(&fit.u1))
}

/// Candidate crossing times `0, t_1, …, t_{m−1}`; index `v` has `v` grid
/// times at or before it.
pub fn candidate_thetas<T: Scalar>(grid: &EventGrid<T>) -> Vec<T> {
    let mut out = vec![T::zero()];
    out.extend_from_slice(&grid.times()[..grid.m() - 1]);
    out
}

/// Constrained estimate under survival-curve constraints.
pub fn scc_fit<T: Scalar>(cohort: &Cohort<T>, opts: &SolverOptions) -> Result<SccFit<T>> {
    let grid = EventGrid::build(cohort)?;
    scc_fit_grid(&grid, opts)
}

pub fn scc_fit_grid<T: Scalar>(grid: &EventGrid<T>, opts: &SolverOptions) -> Result<SccFit<T>> {
    profile_search(grid, ConstraintKind::Survival, opts)
}

/// Every conditional fit of the profile for `kind`, in candidate order.
pub fn profile_fits<T: Scalar>(
    grid: &EventGrid<T>,
    kind: ConstraintKind,
    opts: &SolverOptions,
) -> Result<Vec<(CrossingParams<T>, FitResult<T>)>> {
    let m = grid.m();
    let thetas = candidate_thetas(grid);
    let coords = Coords::new(grid, kind);
    let km = coords.km(grid);
    let vs: Vec<usize> = (0..m).collect();

    let jobs: Vec<(usize, Dominance)> = vs.iter().flat_map(|&v| Dominance::ORDER.map(|g| (v, g))).collect();

    let fits: Vec<Result<FitResult<T>>> = match kind {
        ConstraintKind::Survival => {
            let per_gamma = Dominance::ORDER.map(|g| dual::survival_candidates(&coords, g, &vs));
            jobs.par_iter()
                .map(|&(v, g)| {
                    let cand = per_gamma[(g.gamma() < 0) as usize][v].clone();
                    let system = ConstraintSystem::with_split(m, v, g, kind);
                    finish(&coords, &system, &km, opts, move || cand)
                })
                .collect()
        }
        ConstraintKind::Hazard => {
            let nodes = dual::HazardNodes::new(&coords);
            jobs.par_iter()
                .map(|&(v, g)| {
                    let system = ConstraintSystem::with_split(m, v, g, kind);
                    finish(&coords, &system, &km, opts, || nodes.solve(&system))
                })
                .collect()
        }
    };

    jobs.iter()
        .zip(fits)
        .map(|(&(v, gamma), fit)| {
            let theta = thetas[v];
            let fit = fit.map_err(|e| with_theta(e, theta.as_f64()))?;
            Ok((CrossingParams { theta, gamma }, fit))
        })
        .collect()
}

/// Index of the profile maximizer: smallest `θ` among values within
/// [`TIE_TOL`] of the maximum, then `γ = +1`.
pub fn argmax_with_ties<T: Scalar>(profile: &[ProfileEntry<T>]) -> usize {
    let best = profile.iter().map(|e| e.loglik).fold(T::neg_infinity(), T::max);
    let tied = |x: T| x == best || (best - x).abs() <= T::lit(TIE_TOL);
    // candidate order is already θ ascending with γ = +1 first
    profile.iter().position(|e| tied(e.loglik)).expect("non-empty profile")
}

pub(crate) fn profile_search<T: Scalar>(
    grid: &EventGrid<T>,
    kind: ConstraintKind,
    opts: &SolverOptions,
) -> Result<SccFit<T>> {
    let fits = profile_fits(grid, kind, opts)?;
    let profile: Vec<ProfileEntry<T>> = fits
        .iter()
        .map(|(p, f)| ProfileEntry {
            theta: p.theta,
            gamma: p.gamma,
            loglik: f.loglik,
            route: f.route,
        })
        .collect();
    let k = argmax_with_ties(&profile);
    let (params, fit) = fits.into_iter().nth(k).expect("index in range");
    let (s0, s1) = curves_from_fit(&fit, grid);
    Ok(SccFit {
        theta_hat: params.theta,
        gamma_hat: params.gamma,
        s0,
        s1,
        loglik: fit.loglik,
        profile,
        fit,
        kind,
        grid: grid.clone(),
    })
}

/// Direct fit of one candidate, bypassing the shared dual work.
pub fn refit_candidate<T: Scalar>(
    grid: &EventGrid<T>,
    kind: ConstraintKind,
    params: &CrossingParams<T>,
    opts: &SolverOptions,
) -> Result<FitResult<T>> {
    match kind {
        ConstraintKind::Survival => fit_conditional(grid, params, opts),
        ConstraintKind::Hazard => {
            let system = crate::hazard::build_hazard_constraints(grid, params);
            crate::mle::fit_system(grid, &system, opts).map_err(|e| with_theta(e, params.theta.as_f64()))
        }
    }
}
