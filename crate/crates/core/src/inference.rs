//! Stratified bootstrap intervals, joint one-sided tests and permutation
//! tests.
//!
//! Replicate `i` always draws from stream `i` of the seed, so every output is
//! a deterministic function of the data, the options and the seed, whatever
//! the number of worker threads.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Arm, Cohort};
use crate::error::{Error, Result};
use crate::mle::SolverOptions;
use crate::profile::{scc_fit, SccFit};
use crate::rng::substream;
use crate::scalar::Scalar;

/// Failure share above which a warning is logged.
pub const FAILURE_WARN_SHARE: f64 = 0.01;

/// Default replicate count.
pub const DEFAULT_B: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub estimand: String,
    pub point: f64,
    /// Successful replicates in replicate order.
    pub replicates: Vec<f64>,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
    pub seed: u64,
    /// Requested replicate count.
    pub b: usize,
    /// Replicates excluded because the estimand failed on them.
    pub failures: usize,
}

impl BootstrapResult {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "estimand": self.estimand,
            "point": self.point,
            "level": self.level,
            "B": self.b,
            "seed": self.seed,
            "ci": [self.ci_lower, self.ci_upper],
            "failures": self.failures,
        })
    }
}

/// Type-7 sample quantile: linear interpolation between order statistics
/// at position `(n − 1)·p`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Resample `n_a` subjects with replacement within each arm.
pub fn resample_within_arms<T: Scalar, R: rand::Rng>(cohort: &Cohort<T>, rng: &mut R) -> Cohort<T> {
    let mut picks = Vec::with_capacity(cohort.n());
    for arm in [Arm::Control, Arm::Treatment] {
        let idx = cohort.arm_indices(arm);
        for _ in 0..idx.len() {
            picks.push(idx[rng.random_range(0..idx.len())]);
        }
    }
    cohort.select(&picks)
}

/// Runs `f` on `b` replicates in parallel; `Err` replicates are counted and
/// dropped.
fn replicate<F>(b: usize, f: F) -> (Vec<f64>, usize)
where
    F: Fn(usize) -> Result<f64> + Sync,
{
    let results: Vec<Result<f64>> = (0..b).into_par_iter().map(&f).collect();
    let mut ok = Vec::with_capacity(b);
    let mut failures = 0;
    for r in results {
        match r {
            Ok(v) if v.is_finite() => ok.push(v),
            Ok(_) => failures += 1,
            Err(e) => {
                log::debug!("replicate failed: {e}");
                failures += 1;
            }
        }
    }
    if failures as f64 > FAILURE_WARN_SHARE * b as f64 {
        log::warn!("{failures} of {b} replicates failed and were excluded");
    }
    (ok, failures)
}

fn check_b_level(b: usize, level: f64) -> Result<()> {
    if b == 0 {
        return Err(Error::InvalidInput("replicate count must be at least 1".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("level must lie in (0, 1), got {level}")));
    }
    Ok(())
}

/// Percentile interval for `estimand` from `b` stratified resamples.
pub fn stratified_bootstrap<T, F>(
    cohort: &Cohort<T>,
    name: &str,
    estimand: F,
    b: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapResult>
where
    T: Scalar,
    F: Fn(&Cohort<T>) -> Result<f64> + Sync,
{
    check_b_level(b, level)?;
    let point = estimand(cohort)?;
    let (replicates, failures) = replicate(b, |i| {
        let mut rng = substream(seed, i as u64);
        estimand(&resample_within_arms(cohort, &mut rng))
    });
    if replicates.is_empty() {
        return Err(Error::AllReplicatesFailed(b));
    }
    let s = sorted(&replicates);
    let alpha = 1.0 - level;
    Ok(BootstrapResult {
        estimand: name.to_string(),
        point,
        ci_lower: quantile(&s, alpha / 2.0),
        ci_upper: quantile(&s, 1.0 - alpha / 2.0),
        replicates,
        level,
        seed,
        b,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    /// `η₁ = min{φ − φ*, θ* − θ}`.
    Theta,
    /// `η₂ = min{φ − φ*, S_1(θ) − p*}`.
    Surv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTestResult {
    pub kind: JointKind,
    /// Observed `η`.
    pub eta: f64,
    /// One-sided lower confidence bound at `level`.
    pub ci_lower: f64,
    pub reject: bool,
    pub phi_star: f64,
    /// `θ*` or `p*`.
    pub bound: f64,
    pub level: f64,
    pub b: usize,
    pub seed: u64,
    pub failures: usize,
    pub replicates: Vec<f64>,
}

impl JointTestResult {
    pub fn to_json(&self) -> serde_json::Value {
        let bound = match self.kind {
            JointKind::Theta => "theta_star",
            JointKind::Surv => "p_star",
        };
        serde_json::json!({
            "type": self.kind,
            "eta": self.eta,
            "ci_lower": self.ci_lower,
            "reject": self.reject,
            "phi_star": self.phi_star,
            bound: self.bound,
            "level": self.level,
            "B": self.b,
            "seed": self.seed,
            "failures": self.failures,
        })
    }
}

/// `η` of the joint hypothesis for one fitted data set.
pub fn joint_eta<T: Scalar>(fit: &SccFit<T>, phi: f64, kind: JointKind, phi_star: f64, bound: f64) -> f64 {
    let second = match kind {
        JointKind::Theta => bound - fit.theta_hat.as_f64(),
        JointKind::Surv => {
            let s1 = if fit.theta_hat <= T::zero() {
                T::one()
            } else {
                fit.s1.eval(fit.theta_hat)
            };
            s1.as_f64() - bound
        }
    };
    (phi - phi_star).min(second)
}

/// Bootstrap test of `H_0: φ ≤ φ* or θ ≥ θ*` (`Theta`) or
/// `H_0: φ ≤ φ* or S_1(θ) ≤ p*` (`Surv`).
///
/// `phi` maps a survival-constrained fit to `φ`. The null is rejected when
/// the `(1 − level)` quantile of the bootstrapped `η` exceeds zero.
#[allow(clippy::too_many_arguments)]
pub fn joint_test<T, F>(
    cohort: &Cohort<T>,
    phi: F,
    kind: JointKind,
    phi_star: f64,
    bound: f64,
    b: usize,
    level: f64,
    seed: u64,
    opts: &SolverOptions,
) -> Result<JointTestResult>
where
    T: Scalar,
    F: Fn(&SccFit<T>) -> Result<f64> + Sync,
{
    check_b_level(b, level)?;
    match kind {
        JointKind::Theta if !(bound >= 0.0) => {
            return Err(Error::InvalidInput(format!("theta* must be non-negative, got {bound}")))
        }
        JointKind::Surv if !(0.0..=1.0).contains(&bound) => {
            return Err(Error::InvalidInput(format!("p* must lie in [0, 1], got {bound}")))
        }
        _ => {}
    }
    let eta_of = |c: &Cohort<T>| -> Result<f64> {
        let fit = scc_fit(c, opts)?;
        Ok(joint_eta(&fit, phi(&fit)?, kind, phi_star, bound))
    };
    let eta = eta_of(cohort)?;
    let (replicates, failures) = replicate(b, |i| {
        let mut rng = substream(seed, i as u64);
        eta_of(&resample_within_arms(cohort, &mut rng))
    });
    if replicates.is_empty() {
        return Err(Error::AllReplicatesFailed(b));
    }
    let ci_lower = quantile(&sorted(&replicates), 1.0 - level);
    Ok(JointTestResult {
        kind,
        eta,
        ci_lower,
        reject: ci_lower > 0.0,
        phi_star,
        bound,
        level,
        b,
        seed,
        failures,
        replicates,
    })
}

pub fn joint_test_theta<T, F>(
    cohort: &Cohort<T>,
    phi: F,
    phi_star: f64,
    theta_star: f64,
    b: usize,
    level: f64,
    seed: u64,
) -> Result<JointTestResult>
where
    T: Scalar,
    F: Fn(&SccFit<T>) -> Result<f64> + Sync,
{
    joint_test(
        cohort,
        phi,
        JointKind::Theta,
        phi_star,
        theta_star,
        b,
        level,
        seed,
        &SolverOptions::default(),
    )
}

pub fn joint_test_surv<T, F>(
    cohort: &Cohort<T>,
    phi: F,
    phi_star: f64,
    p_star: f64,
    b: usize,
    level: f64,
    seed: u64,
) -> Result<JointTestResult>
where
    T: Scalar,
    F: Fn(&SccFit<T>) -> Result<f64> + Sync,
{
    joint_test(
        cohort,
        phi,
        JointKind::Surv,
        phi_star,
        p_star,
        b,
        level,
        seed,
        &SolverOptions::default(),
    )
}

/// Which values of a statistic component count as extreme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Greater,
    Less,
    /// Larger absolute value.
    Both,
}

impl Direction {
    fn as_extreme(self, permuted: f64, observed: f64) -> bool {
        match self {
            Direction::Greater => permuted >= observed,
            Direction::Less => permuted <= observed,
            Direction::Both => permuted.abs() >= observed.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub observed: Vec<f64>,
    pub p_value: f64,
    pub b: usize,
    pub seed: u64,
    /// Permutations excluded because the statistic failed on them.
    pub failures: usize,
    /// Permutations at least as extreme as the observed statistic.
    pub extreme: usize,
}

/// Monte Carlo permutation p-value `(#{as extreme} + 1)/(B + 1)`.
///
/// A permuted statistic counts as extreme when every component is at least
/// as extreme as observed in its own direction.
pub fn permutation_test<T, F>(
    cohort: &Cohort<T>,
    statistic: F,
    directions: &[Direction],
    b: usize,
    seed: u64,
) -> Result<PermutationResult>
where
    T: Scalar,
    F: Fn(&Cohort<T>) -> Result<Vec<f64>> + Sync,
{
    if b == 0 {
        return Err(Error::InvalidInput("replicate count must be at least 1".into()));
    }
    let observed = statistic(cohort)?;
    if observed.len() != directions.len() {
        return Err(Error::DimensionMismatch {
            expected: observed.len(),
            found: directions.len(),
        });
    }
    let labels: Vec<Arm> = cohort.subjects().iter().map(|s| s.arm).collect();
    let results: Vec<Result<bool>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            let mut arms = labels.clone();
            arms.shuffle(&mut rng);
            let stat = statistic(&cohort.relabel(&arms)?)?;
            Ok(stat
                .iter()
                .zip(&observed)
                .zip(directions)
                .all(|((&p, &o), d)| d.as_extreme(p, o)))
        })
        .collect();
    let mut extreme = 0;
    let mut failures = 0;
    for r in results {
        match r {
            Ok(true) => extreme += 1,
            Ok(false) => {}
            Err(_) => failures += 1,
        }
    }
    let done = b - failures;
    if done == 0 {
        return Err(Error::AllReplicatesFailed(b));
    }
    if failures as f64 > FAILURE_WARN_SHARE * b as f64 {
        log::warn!("{failures} of {b} permutations failed and were excluded");
    }
    Ok(PermutationResult {
        observed,
        p_value: (extreme + 1) as f64 / (done + 1) as f64,
        b,
        seed,
        failures,
        extreme,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::kaplan_meier;
    use crate::data::EventGrid;
    use crate::estimands::rmst;

    fn cohort(rows: &[(f64, bool, usize)]) -> Cohort<f64> {
        Cohort::from_tuples(rows).unwrap()
    }

    fn small() -> Cohort<f64> {
        cohort(&[
            (1.0, true, 0),
            (2.0, true, 0),
            (3.0, false, 0),
            (4.0, true, 0),
            (2.5, true, 1),
            (3.5, true, 1),
            (5.0, false, 1),
            (6.0, true, 1),
        ])
    }

    fn km_rmst_diff(c: &Cohort<f64>) -> Result<f64> {
        let g = EventGrid::build(c)?;
        Ok(rmst(&kaplan_meier(&g, Arm::Treatment), 4.0)? - rmst(&kaplan_meier(&g, Arm::Control), 4.0)?)
    }

    #[test]
    fn type7_quantiles() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&x, 0.0), 1.0);
        assert_eq!(quantile(&x, 1.0), 5.0);
        assert_eq!(quantile(&x, 0.5), 3.0);
        assert!((quantile(&x, 0.1) - 1.4).abs() < 1e-15);
        assert_eq!(quantile(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn constant_estimand_has_zero_width() {
        let r = stratified_bootstrap(&small(), "const", |_| Ok(2.5), 50, 0.95, 1).unwrap();
        assert_eq!((r.ci_lower, r.ci_upper, r.point), (2.5, 2.5, 2.5));
        assert_eq!(r.replicates.len() + r.failures, 50);
    }

    #[test]
    fn bootstrap_is_reproducible_and_percentile() {
        let a = stratified_bootstrap(&small(), "d", km_rmst_diff, 200, 0.9, 42).unwrap();
        let b = stratified_bootstrap(&small(), "d", km_rmst_diff, 200, 0.9, 42).unwrap();
        assert_eq!(a, b);
        let mut s = a.replicates.clone();
        s.sort_by(f64::total_cmp);
        let n = s.len() as f64;
        let q = |p: f64| {
            let h = (n - 1.0) * p;
            s[h.floor() as usize] + (h - h.floor()) * (s[h.ceil() as usize] - s[h.floor() as usize])
        };
        assert_eq!(a.ci_lower, q(0.05));
        assert_eq!(a.ci_upper, q(0.95));
    }

    #[test]
    fn resampling_keeps_arm_sizes() {
        let c = small();
        let mut rng = substream(3, 0);
        let r = resample_within_arms(&c, &mut rng);
        assert_eq!(r.arm_size(Arm::Control), 4);
        assert_eq!(r.arm_size(Arm::Treatment), 4);
    }

    #[test]
    fn degenerate_replicates_are_counted() {
        // one control event: many resamples have none
        let c = cohort(&[
            (1.0, true, 0),
            (2.0, false, 0),
            (3.0, false, 0),
            (1.5, true, 1),
            (2.5, true, 1),
        ]);
        let r = stratified_bootstrap(&c, "d", km_rmst_diff, 100, 0.95, 9).unwrap();
        assert!(r.failures > 0);
        assert_eq!(r.failures + r.replicates.len(), 100);
    }

    #[test]
    fn bad_arguments_are_rejected() {
        assert!(stratified_bootstrap(&small(), "c", |_| Ok(1.0), 0, 0.95, 1).is_err());
        assert!(stratified_bootstrap(&small(), "c", |_| Ok(1.0), 5, 1.0, 1).is_err());
    }

    #[test]
    fn constant_statistic_has_unit_p_value() {
        let r = permutation_test(&small(), |_| Ok(vec![1.0]), &[Direction::Greater], 99, 5).unwrap();
        assert_eq!(r.p_value, 1.0);
        let r = permutation_test(
            &small(),
            |_| Ok(vec![1.0, -2.0]),
            &[Direction::Both, Direction::Less],
            9,
            5,
        )
        .unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(permutation_test(&small(), |_| Ok(vec![1.0]), &[], 9, 5).is_err());
    }

    #[test]
    fn unreachable_phi_star_never_rejects() {
        let phi = |f: &SccFit<f64>| Ok(rmst(&f.s1, 4.0)? - rmst(&f.s0, 4.0)?);
        let r = joint_test_theta(&small(), phi, 100.0, 3.0, 30, 0.95, 2).unwrap();
        assert!(!r.reject && r.eta < 0.0);
        assert!(r.replicates.iter().all(|&e| e < 0.0));
        let r = joint_test_theta(&small(), phi, -100.0, 0.0, 30, 0.95, 2).unwrap();
        assert!(!r.reject && r.eta <= 0.0);
        let r = joint_test_surv(&small(), phi, -100.0, 1.0, 30, 0.95, 2).unwrap();
        assert!(!r.reject);
        assert_eq!(r.reject, r.ci_lower > 0.0);
    }
}
