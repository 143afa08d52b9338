//! Single-crossing constraints on discrete hazards and LOWESS smoothing of
//! fitted hazards.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::constraints::{v_index, ConstraintKind, ConstraintSystem, CrossingParams};
use crate::data::{Cohort, EventGrid};
use crate::error::{Error, Result};
use crate::mle::{FitResult, SolverOptions};
use crate::profile::{profile_search, SccFit};
use crate::scalar::Scalar;

/// Number of evaluation points of [`smooth_hazards`].
pub const SMOOTH_POINTS: usize = 200;

/// Span used for presentation in the absence of a caller choice.
pub const DEFAULT_SPAN: f64 = 2.0 / 3.0;

/// Discrete hazards `h_ja = 1 − e^{u_ja}` on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteHazards<T> {
    pub times: Vec<T>,
    /// `[h_j0, h_j1]` per grid time.
    pub h: Vec<[T; 2]>,
}

impl<T: Scalar> DiscreteHazards<T> {
    pub fn from_logjumps(times: Vec<T>, u0: &[T], u1: &[T]) -> Result<Self> {
        for u in [u0, u1] {
            if u.len() != times.len() {
                return Err(Error::DimensionMismatch {
                    expected: times.len(),
                    found: u.len(),
                });
            }
        }
        let h = u0.iter().zip(u1).map(|(&a, &b)| [-a.exp_m1(), -b.exp_m1()]).collect();
        Ok(Self { times, h })
    }

    pub fn from_fit(fit: &FitResult<T>, grid: &EventGrid<T>) -> Self {
        Self::from_logjumps(grid.times().to_vec(), &fit.u0, &fit.u1).expect("fit matches its grid")
    }

    /// Inverse map `u = log(1 − h)`.
    pub fn logjumps(&self) -> (Vec<T>, Vec<T>) {
        let arm = |a: usize| self.h.iter().map(|h| (-h[a]).ln_1p()).collect();
        (arm(0), arm(1))
    }

    pub fn arm(&self, a: usize) -> Vec<T> {
        self.h.iter().map(|h| h[a]).collect()
    }

    pub fn m(&self) -> usize {
        self.times.len()
    }
}

/// Pointwise hazard system for `params`.
pub fn build_hazard_constraints<T: Scalar>(grid: &EventGrid<T>, params: &CrossingParams<T>) -> ConstraintSystem {
    ConstraintSystem::with_split(
        grid.m(),
        v_index(params.theta, grid),
        params.gamma,
        ConstraintKind::Hazard,
    )
}

/// Constrained estimate under hazard constraints.
pub fn scc_hazard_fit<T: Scalar>(cohort: &Cohort<T>, opts: &SolverOptions) -> Result<SccFit<T>> {
    let grid = EventGrid::build(cohort)?;
    scc_hazard_fit_grid(&grid, opts)
}

pub fn scc_hazard_fit_grid<T: Scalar>(grid: &EventGrid<T>, opts: &SolverOptions) -> Result<SccFit<T>> {
    profile_search(grid, ConstraintKind::Hazard, opts)
}

/// Smoothed hazard curves on a uniform grid over `[0, t_m]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedHazards<T> {
    pub times: Vec<T>,
    pub h0: Vec<T>,
    pub h1: Vec<T>,
    /// Whether the smoothed curves change order at most once.
    pub single_crossing: bool,
    /// Evaluation time of the second change of order, if any.
    pub first_violation: Option<T>,
}

impl<T: Scalar> SmoothedHazards<T> {
    /// CSV with header `time,h0,h1`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "h0", "h1"])?;
        for ((t, a), b) in self.times.iter().zip(&self.h0).zip(&self.h1) {
            w.write_record([fmt(*t), fmt(*a), fmt(*b)])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt<T: Scalar>(x: T) -> String {
    format!("{:.17e}", x.as_f64())
}

/// Tricube-weighted local linear fits of each arm's hazards against time,
/// neighbourhood fraction `span`, no robustness iterations.
pub fn smooth_hazards<T: Scalar>(h: &DiscreteHazards<T>, span: T) -> Result<SmoothedHazards<T>> {
    if !(span > T::zero() && span <= T::one()) {
        return Err(Error::InvalidInput(format!("span must lie in (0, 1], got {span}")));
    }
    let m = h.m();
    if m < 3 {
        return Err(Error::DegenerateWindow { arm: 0, points: m });
    }
    let t_max = *h.times.last().expect("non-empty");
    let step = t_max / T::from_count(SMOOTH_POINTS - 1);
    let times: Vec<T> = (0..SMOOTH_POINTS).map(|i| T::from_count(i) * step).collect();
    let y0 = h.arm(0);
    let y1 = h.arm(1);
    let h0: Vec<T> = times.iter().map(|&x| lowess_at(&h.times, &y0, span, x)).collect();
    let h1: Vec<T> = times.iter().map(|&x| lowess_at(&h.times, &y1, span, x)).collect();
    let first_violation = second_sign_change(&times, &h0, &h1);
    Ok(SmoothedHazards {
        times,
        h0,
        h1,
        single_crossing: first_violation.is_none(),
        first_violation,
    })
}

/// Local linear estimate at `x0` from the `⌊span·n⌋` nearest points.
pub fn lowess_at<T: Scalar>(x: &[T], y: &[T], span: T, x0: T) -> T {
    let n = x.len();
    let k = ((span * T::from_count(n) + T::lit(1e-7)).floor().to_usize().unwrap_or(n)).clamp(2, n);
    let mut dist: Vec<T> = x.iter().map(|&xi| (xi - x0).abs()).collect();
    dist.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    let radius = dist[k - 1];
    let hi = T::lit(0.999) * radius;
    let lo = T::lit(0.001) * radius;
    let weights: Vec<T> = x
        .iter()
        .map(|&xi| {
            let d = (xi - x0).abs();
            if d <= lo {
                T::one()
            } else if d <= hi {
                let r = d / radius;
                let c = T::one() - r * r * r;
                c * c * c
            } else {
                T::zero()
            }
        })
        .collect();
    let sw: T = weights.iter().copied().sum();
    let mx = weights.iter().zip(x).map(|(&w, &xi)| w * xi).sum::<T>() / sw;
    let my = weights.iter().zip(y).map(|(&w, &yi)| w * yi).sum::<T>() / sw;
    let sxx: T = weights.iter().zip(x).map(|(&w, &xi)| w * (xi - mx) * (xi - mx)).sum();
    let sxy: T = weights
        .iter()
        .zip(x.iter().zip(y))
        .map(|(&w, (&xi, &yi))| w * (xi - mx) * (yi - my))
        .sum();
    let range = x[n - 1] - x[0];
    if sxx <= T::lit(1e-12) * range * range * sw {
        return my;
    }
    my + sxy / sxx * (x0 - mx)
}

/// Time at which the sign of `a − b` changes for the second time.
pub fn second_sign_change<T: Scalar>(times: &[T], a: &[T], b: &[T]) -> Option<T> {
    let tol = T::lit(1e-12);
    let mut last = 0i8;
    let mut changes = 0;
    for ((&t, &x), &y) in times.iter().zip(a).zip(b) {
        let d = x - y;
        let s = if d > tol {
            1
        } else if d < -tol {
            -1
        } else {
            0
        };
        if s == 0 {
            continue;
        }
        if last != 0 && s != last {
            changes += 1;
            if changes == 2 {
                return Some(t);
            }
        }
        last = s;
    }
    None
}
