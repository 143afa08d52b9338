//! Efficacy measures computed from fitted step curves and discrete hazards.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{StepSurvival, CAP};
use crate::error::{Error, Result};
use crate::hazard::DiscreteHazards;
use crate::profile::SccFit;
use crate::scalar::Scalar;

/// `Ŝ_1(t*) − Ŝ_0(t*)`.
pub fn milestone_diff<T: Scalar>(s1: &StepSurvival<T>, s0: &StepSurvival<T>, tstar: T) -> T {
    s1.eval(tstar) - s0.eval(tstar)
}

/// `{Ŝ_1(θ̂) + Ŝ_0(θ̂)} / 2`, which is `1` at `θ̂ = 0`.
pub fn surv_at_crossing<T: Scalar>(fit: &SccFit<T>) -> T {
    if fit.theta_hat <= T::zero() {
        return T::one();
    }
    (fit.s0.eval(fit.theta_hat) + fit.s1.eval(fit.theta_hat)) / T::lit(2.0)
}

/// Restricted mean survival time `∫_0^τ S(u) du`.
///
/// Beyond the last grid time the curve is extended flat; use
/// [`extrapolates`] to detect that case.
pub fn rmst<T: Scalar>(s: &StepSurvival<T>, tau: T) -> Result<T> {
    if !(tau > T::zero()) {
        return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
    }
    Ok(s.integral(T::zero(), tau))
}

/// Whether `tau` lies past the last grid time of `s`.
pub fn extrapolates<T: Scalar>(s: &StepSurvival<T>, tau: T) -> bool {
    s.times().last().is_some_and(|&t| tau > t)
}

fn positive_survival<T: Scalar>(s: &StepSurvival<T>, t: T) -> Result<T> {
    let st = s.eval(t);
    if st <= T::lit(-CAP).exp() {
        return Err(Error::ZeroSurvival(t.as_f64()));
    }
    Ok(st)
}

/// Restricted residual mean life `∫_t^τ S(u) du / S(t)`.
pub fn rrml<T: Scalar>(s: &StepSurvival<T>, t: T, tau: T) -> Result<T> {
    if !(t >= T::zero() && t < tau) {
        return Err(Error::InvalidInput(format!(
            "rrml needs 0 <= t < tau, got t = {t}, tau = {tau}"
        )));
    }
    let st = positive_survival(s, t)?;
    Ok(s.integral(t, tau) / st)
}

/// `S(t) / S(θ)` for `t > θ`.
pub fn conditional_survival<T: Scalar>(s: &StepSurvival<T>, theta: T, t: T) -> Result<T> {
    if !(t > theta) {
        return Err(Error::InvalidInput(format!(
            "conditional survival needs t > theta, got t = {t}, theta = {theta}"
        )));
    }
    let st = positive_survival(s, theta)?;
    Ok((s.eval(t) / st).min(T::one()))
}

/// Pre- and post-crossing average hazard ratios in treatment-to-total form.
///
/// Grid times with `h_j0 + h_j1 = 0` contribute nothing.
pub fn avg_hazard_ratios<T: Scalar>(h: &DiscreteHazards<T>, theta_hat: T) -> Result<(T, T)> {
    let t_max = *h
        .times
        .last()
        .ok_or_else(|| Error::InvalidInput("empty hazard grid".into()))?;
    if !(theta_hat > T::zero() && theta_hat < t_max) {
        return Err(Error::CrossingOutOfRange {
            theta: theta_hat.as_f64(),
            t_max: t_max.as_f64(),
        });
    }
    let mut pre = T::zero();
    let mut post = T::zero();
    let mut prev = T::zero();
    for (&t, hj) in h.times.iter().zip(&h.h) {
        let total = hj[0] + hj[1];
        let term = if total > T::zero() {
            hj[1] * (t - prev) / total
        } else {
            T::zero()
        };
        if t <= theta_hat {
            pre = pre + term;
        } else {
            post = post + term;
        }
        prev = t;
    }
    Ok((pre / theta_hat, post / (t_max - theta_hat)))
}

/// Which fit supplies the hazards and crossing time of the average hazard
/// ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HazardSource {
    #[default]
    Survival,
    Hazard,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EstimandSpec<T> {
    /// Truncation time; `t_m` when absent.
    pub tau: Option<T>,
    pub milestones: Vec<T>,
    /// Times `t` for the conditional survival difference given survival to
    /// `θ̂`.
    pub conditional_times: Vec<T>,
    pub hazard_source: HazardSource,
}

/// Named estimands with the crossing parameters they were computed at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandReport {
    pub theta_hat: f64,
    pub gamma_hat: i8,
    pub tau: f64,
    pub values: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl EstimandReport {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    /// Flat JSON object: the crossing parameters, `tau` and every estimand.
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        map.insert("theta_hat".into(), self.theta_hat.into());
        map.insert("gamma_hat".into(), self.gamma_hat.into());
        map.insert("tau".into(), self.tau.into());
        for (k, v) in &self.values {
            map.insert(
                k.clone(),
                serde_json::Number::from_f64(*v).map_or(serde_json::Value::Null, Into::into),
            );
        }
        if !self.warnings.is_empty() {
            map.insert("warnings".into(), self.warnings.clone().into());
        }
        serde_json::Value::Object(map)
    }

    /// CSV with header `parameter,estimate`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["parameter", "estimate"])?;
        w.write_record(["theta_hat", &self.theta_hat.to_string()])?;
        for (k, v) in &self.values {
            w.write_record([k.as_str(), &v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn key(name: &str, args: &[f64]) -> String {
    let args: Vec<String> = args.iter().map(|a| a.to_string()).collect();
    format!("{name}({})", args.join(","))
}

/// `RRML_1(θ, τ) − RRML_0(θ, τ)`, taken as `0` when `θ ≥ τ`.
pub fn rrml_diff<T: Scalar>(s1: &StepSurvival<T>, s0: &StepSurvival<T>, theta: T, tau: T) -> Result<T> {
    if theta >= tau {
        return Ok(T::zero());
    }
    Ok(rrml(s1, theta, tau)? - rrml(s0, theta, tau)?)
}

/// Every estimand of `spec` for a survival-constrained fit, with an optional
/// hazard-constrained fit of the same data as hazard source.
pub fn estimand_report<T: Scalar>(
    fit: &SccFit<T>,
    hazard_fit: Option<&SccFit<T>>,
    spec: &EstimandSpec<T>,
) -> Result<EstimandReport> {
    let tau = spec.tau.unwrap_or_else(|| fit.grid.last_time());
    let theta = fit.theta_hat;
    let mut values = BTreeMap::new();
    let mut warnings = Vec::new();
    let f = |x: T| x.as_f64();
    let tau64 = f(tau);

    if extrapolates(&fit.s0, tau) {
        warnings.push(format!("tau = {tau64} exceeds the last grid time"));
    }
    let r0 = rmst(&fit.s0, tau)?;
    let r1 = rmst(&fit.s1, tau)?;
    values.insert(key("rmst0", &[tau64]), f(r0));
    values.insert(key("rmst1", &[tau64]), f(r1));
    values.insert(key("rmst_diff", &[tau64]), f(r1 - r0));

    for &t in &spec.milestones {
        values.insert(key("milestone_diff", &[f(t)]), f(milestone_diff(&fit.s1, &fit.s0, t)));
    }

    values.insert("surv_at_crossing".into(), f(surv_at_crossing(fit)));
    values.insert(
        key("rrml_diff", &[f(theta), tau64]),
        f(rrml_diff(&fit.s1, &fit.s0, theta, tau)?),
    );

    for &t in &spec.conditional_times {
        if t > theta {
            let d = conditional_survival(&fit.s1, theta, t)? - conditional_survival(&fit.s0, theta, t)?;
            values.insert(key("cond_surv_diff", &[f(t)]), f(d));
        } else {
            warnings.push(format!("conditional time {} is not after the crossing", f(t)));
        }
    }

    let source = match spec.hazard_source {
        HazardSource::Survival => Some(fit),
        HazardSource::Hazard => hazard_fit,
    };
    match source {
        Some(src) if src.theta_hat > T::zero() && src.theta_hat < src.grid.last_time() => {
            let h = DiscreteHazards::from_fit(&src.fit, &src.grid);
            let (pre, post) = avg_hazard_ratios(&h, src.theta_hat)?;
            values.insert("ahr_pre".into(), f(pre));
            values.insert("ahr_post".into(), f(post));
            values.insert("ahr_theta".into(), f(src.theta_hat));
        }
        Some(_) => {}
        None => warnings.push("hazard-constrained fit not supplied; average hazard ratios omitted".into()),
    }

    Ok(EstimandReport {
        theta_hat: f(theta),
        gamma_hat: fit.gamma_hat.gamma(),
        tau: tau64,
        values,
        warnings,
    })
}

/// A scalar estimand addressed by name, as in `rmst_diff(36)` or `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimand {
    Theta,
    SurvAtCrossing,
    Rmst0(f64),
    Rmst1(f64),
    RmstDiff(f64),
    MilestoneDiff(f64),
    /// `ΔRRML(θ̂, τ)`.
    RrmlDiff(f64),
    CondSurvDiff(f64),
    AhrPre,
    AhrPost,
}

impl Estimand {
    pub fn evaluate<T: Scalar>(&self, fit: &SccFit<T>) -> Result<f64> {
        let c = T::lit;
        let (s0, s1, theta) = (&fit.s0, &fit.s1, fit.theta_hat);
        let v = match *self {
            Estimand::Theta => theta,
            Estimand::SurvAtCrossing => surv_at_crossing(fit),
            Estimand::Rmst0(tau) => rmst(s0, c(tau))?,
            Estimand::Rmst1(tau) => rmst(s1, c(tau))?,
            Estimand::RmstDiff(tau) => rmst(s1, c(tau))? - rmst(s0, c(tau))?,
            Estimand::MilestoneDiff(t) => milestone_diff(s1, s0, c(t)),
            Estimand::RrmlDiff(tau) => rrml_diff(s1, s0, theta, c(tau))?,
            Estimand::CondSurvDiff(t) => {
                if !(c(t) > theta) {
                    return Err(Error::InvalidInput(format!(
                        "conditional time {t} is not after the crossing"
                    )));
                }
                conditional_survival(s1, theta, c(t))? - conditional_survival(s0, theta, c(t))?
            }
            Estimand::AhrPre | Estimand::AhrPost => {
                let h = DiscreteHazards::from_fit(&fit.fit, &fit.grid);
                let (pre, post) = avg_hazard_ratios(&h, theta)?;
                if *self == Estimand::AhrPre {
                    pre
                } else {
                    post
                }
            }
        };
        Ok(v.as_f64())
    }
}

impl std::fmt::Display for Estimand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match *self {
            Estimand::Theta => "theta".into(),
            Estimand::SurvAtCrossing => "surv_at_crossing".into(),
            Estimand::Rmst0(t) => key("rmst0", &[t]),
            Estimand::Rmst1(t) => key("rmst1", &[t]),
            Estimand::RmstDiff(t) => key("rmst_diff", &[t]),
            Estimand::MilestoneDiff(t) => key("milestone_diff", &[t]),
            Estimand::RrmlDiff(t) => key("rrml_diff", &[t]),
            Estimand::CondSurvDiff(t) => key("cond_surv_diff", &[t]),
            Estimand::AhrPre => "ahr_pre".into(),
            Estimand::AhrPost => "ahr_post".into(),
        };
        f.write_str(&s)
    }
}

impl std::str::FromStr for Estimand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("unknown estimand `{s}`"));
        let s = s.trim();
        let (name, arg) = match s.split_once('(') {
            Some((n, rest)) => {
                let inner = rest.strip_suffix(')').ok_or_else(bad)?;
                let x: f64 = inner.trim().parse().map_err(|_| bad())?;
                if !x.is_finite() {
                    return Err(bad());
                }
                (n.trim(), Some(x))
            }
            None => (s, None),
        };
        let e = match (name, arg) {
            ("theta", None) => Estimand::Theta,
            ("surv_at_crossing", None) => Estimand::SurvAtCrossing,
            ("ahr_pre", None) => Estimand::AhrPre,
            ("ahr_post", None) => Estimand::AhrPost,
            ("rmst0", Some(t)) => Estimand::Rmst0(t),
            ("rmst1", Some(t)) => Estimand::Rmst1(t),
            ("rmst_diff", Some(t)) => Estimand::RmstDiff(t),
            ("milestone_diff", Some(t)) => Estimand::MilestoneDiff(t),
            ("rrml_diff", Some(t)) => Estimand::RrmlDiff(t),
            ("cond_surv_diff", Some(t)) => Estimand::CondSurvDiff(t),
            _ => return Err(bad()),
        };
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve(times: &[f64], values: &[f64]) -> StepSurvival<f64> {
        StepSurvival::from_values(times.to_vec(), values.to_vec()).unwrap()
    }

    /// Step curve of `Exp(rate)` sampled on `n` points over `[0, end]`.
    fn exp_steps(rate: f64, end: f64, n: usize) -> StepSurvival<f64> {
        let times: Vec<f64> = (1..=n).map(|i| end * i as f64 / n as f64).collect();
        let values = times.iter().map(|t| (-rate * t).exp()).collect::<Vec<_>>();
        curve(&times, &values)
    }

    #[test]
    fn rmst_examples() {
        let flat = StepSurvival::<f64>::flat(vec![5.0]);
        assert_eq!(rmst(&flat, 3.0).unwrap(), 3.0);
        let s = curve(&[1.0, 3.0], &[0.5, 0.5]);
        assert!((rmst(&s, 2.0).unwrap() - 1.5).abs() < 1e-15);
        let e = exp_steps(1.0, 2.0, 20_000);
        let gap = 2.0 / 20_000.0;
        assert!((rmst(&e, 2.0).unwrap() - (1.0 - (-2.0f64).exp())).abs() <= gap);
        assert!(rmst(&s, 0.0).is_err());
        assert!(extrapolates(&s, 4.0) && !extrapolates(&s, 3.0));
    }

    #[test]
    fn rrml_examples() {
        let s = curve(&[1.0, 3.0], &[0.5, 0.5]);
        assert!((rrml(&s, 1.0, 3.0).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(rrml(&s, 0.0, 2.5).unwrap(), rmst(&s, 2.5).unwrap());
        let dead = curve(&[1.0], &[0.0]);
        assert!(matches!(rrml(&dead, 1.0, 2.0), Err(Error::ZeroSurvival(_))));
    }

    #[test]
    fn conditional_survival_examples() {
        let s = curve(&[1.0, 2.0, 36.0], &[0.9, 0.73, 0.40]);
        assert_eq!(conditional_survival(&s, 0.0, 2.0).unwrap(), s.eval(2.0));
        assert!((conditional_survival(&s, 2.0, 36.0).unwrap() - 0.40 / 0.73).abs() < 1e-15);
        assert!((conditional_survival(&s, 2.0, 36.0).unwrap() - 0.548).abs() < 1e-3);
    }

    #[test]
    fn milestone_examples() {
        let s = curve(&[1.0, 2.0], &[0.8, 0.6]);
        let t = curve(&[1.0, 2.0], &[0.9, 0.5]);
        assert_eq!(milestone_diff(&s, &s, 1.5), 0.0);
        assert_eq!(milestone_diff(&t, &s, 0.5), 0.0);
        assert!((milestone_diff(&t, &s, 1.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn average_hazard_ratio_examples() {
        let times = vec![1.0f64, 2.5, 4.0, 6.0];
        let h = DiscreteHazards {
            times: times.clone(),
            h: vec![[0.2, 0.2], [0.1, 0.1], [0.3, 0.3], [0.05, 0.05]],
        };
        let (pre, post) = avg_hazard_ratios(&h, 2.5).unwrap();
        assert!((pre - 0.5).abs() < 1e-15 && (post - 0.5).abs() < 1e-15);

        let h = DiscreteHazards {
            times: times.clone(),
            h: vec![[0.2, 0.0], [0.1, 0.0], [0.0, 0.0], [0.05, 0.0]],
        };
        assert_eq!(avg_hazard_ratios(&h, 2.5).unwrap(), (0.0, 0.0));
        assert!(matches!(
            avg_hazard_ratios(&h, 6.0),
            Err(Error::CrossingOutOfRange { .. })
        ));
        assert!(avg_hazard_ratios(&h, 0.0).is_err());
    }

    #[test]
    fn report_keys_are_stable() {
        assert_eq!(key("rmst_diff", &[36.0]), "rmst_diff(36)");
        assert_eq!(key("rrml_diff", &[7.36, 36.0]), "rrml_diff(7.36,36)");
    }

    /// `∫_θ^τ S(u)/S(θ) du` piece by piece.
    fn conditional_integral(s: &StepSurvival<f64>, theta: f64, tau: f64) -> f64 {
        let mut cuts: Vec<f64> = s.times().iter().copied().filter(|&t| t > theta && t < tau).collect();
        cuts.insert(0, theta);
        cuts.push(tau);
        cuts.windows(2)
            .map(|w| {
                let c = if w[0] == theta {
                    1.0
                } else {
                    conditional_survival(s, theta, w[0]).unwrap()
                };
                c * (w[1] - w[0])
            })
            .sum()
    }

    proptest! {
        #[test]
        fn rrml_is_integrated_conditional_survival(
            drops in prop::collection::vec(0.0f64..0.3, 1..15),
            gaps in prop::collection::vec(0.1f64..2.0, 15),
            a in 0.0f64..1.0,
            b in 0.0f64..1.0,
        ) {
            let mut t = 0.0;
            let mut v = 1.0;
            let (mut times, mut values) = (Vec::new(), Vec::new());
            for (d, g) in drops.iter().zip(&gaps) {
                t += g;
                v *= 1.0 - d;
                times.push(t);
                values.push(v);
            }
            let s = curve(&times, &values);
            let end = t * 1.2;
            let theta = a.min(b) * end;
            let tau = a.max(b) * end + 1e-3;
            let lhs = rrml(&s, theta, tau).unwrap();
            let rhs = conditional_integral(&s, theta, tau);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn rmst_is_monotone_and_bounded(drops in prop::collection::vec(0.0f64..0.5, 1..10), t1 in 0.01f64..10.0, t2 in 0.01f64..10.0) {
            let times: Vec<f64> = (1..=drops.len()).map(|i| i as f64).collect();
            let mut v = 1.0;
            let values: Vec<f64> = drops.iter().map(|d| { v *= 1.0 - d; v }).collect();
            let s = curve(&times, &values);
            let (lo, hi) = (t1.min(t2), t1.max(t2));
            let (a, b) = (rmst(&s, lo).unwrap(), rmst(&s, hi).unwrap());
            prop_assert!(a <= b + 1e-15);
            prop_assert!((0.0..=hi + 1e-12).contains(&b));
        }

        #[test]
        fn conditional_survival_is_a_survival_function(drops in prop::collection::vec(0.0f64..0.5, 2..10), k in 0usize..10) {
            let times: Vec<f64> = (1..=drops.len()).map(|i| i as f64).collect();
            let mut v = 1.0;
            let values: Vec<f64> = drops.iter().map(|d| { v *= 1.0 - d; v }).collect();
            let s = curve(&times, &values);
            let theta = (k % drops.len()) as f64 + 0.5;
            let mut prev = 1.0;
            for i in 1..40 {
                let c = conditional_survival(&s, theta, theta + 0.25 * i as f64).unwrap();
                prop_assert!(c <= prev && c <= 1.0);
                prev = c;
            }
        }
    }

    #[test]
    fn estimand_names_round_trip() {
        for name in [
            "theta",
            "surv_at_crossing",
            "rmst_diff(36)",
            "rmst0(7.5)",
            "milestone_diff(12)",
            "rrml_diff(36)",
            "cond_surv_diff(24)",
            "ahr_post",
        ] {
            let e: Estimand = name.parse().unwrap();
            assert_eq!(e.to_string(), name);
        }
        for bad in ["rmst_diff", "theta(3)", "rmst_diff(x)", "nope", "rmst_diff(3"] {
            assert!(bad.parse::<Estimand>().is_err(), "{bad}");
        }
    }
}
