//! Piecewise-exponential data generation and the mean-squared-error study
//! comparing constrained and Kaplan–Meier based estimators.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::Dominance;
use crate::data::{kaplan_meier, Arm, Cohort, EventGrid, Subject};
use crate::error::{Error, Result};
use crate::estimands::{key, rmst, rrml_diff, surv_at_crossing, EstimandReport};
use crate::mle::SolverOptions;
use crate::profile::scc_fit_grid;
use crate::rng::{substream, Rng};

/// Scenario file shipped with the crate.
pub const SHIPPED_SCENARIOS: &str = include_str!("../../../scenarios/mse_study.toml");

/// Tolerance for the declared crossing time of a scenario.
pub const THETA_TOL: f64 = 1e-9;

/// Piecewise-constant hazard `λ_k` on `[b_{k−1}, b_k)` with `b_0 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseExp {
    pub breakpoints: Vec<f64>,
    pub rates: Vec<f64>,
}

impl PiecewiseExp {
    pub fn new(breakpoints: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        let d = Self { breakpoints, rates };
        d.validate()?;
        Ok(d)
    }

    pub fn constant(rate: f64) -> Result<Self> {
        Self::new(Vec::new(), vec![rate])
    }

    fn validate(&self) -> Result<()> {
        if self.rates.len() != self.breakpoints.len() + 1 {
            return Err(Error::Config(format!(
                "{} rates given for {} breakpoints",
                self.rates.len(),
                self.breakpoints.len()
            )));
        }
        if self.rates.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::Config("rates must be positive and finite".into()));
        }
        let mut prev = 0.0;
        for &b in &self.breakpoints {
            if !(b > prev && b.is_finite()) {
                return Err(Error::Config("breakpoints must be positive and increasing".into()));
            }
            prev = b;
        }
        Ok(())
    }

    /// `(start, end, rate)` for each piece; the last piece is unbounded.
    fn pieces(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let starts = std::iter::once(0.0).chain(self.breakpoints.iter().copied());
        let ends = self.breakpoints.iter().copied().chain(std::iter::once(f64::INFINITY));
        starts.zip(ends).zip(&self.rates).map(|((a, b), &r)| (a, b, r))
    }

    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        self.pieces()
            .take_while(|&(a, _, _)| a < t)
            .map(|(a, b, r)| r * (b.min(t) - a))
            .sum()
    }

    pub fn survival(&self, t: f64) -> f64 {
        (-self.cumulative_hazard(t.max(0.0))).exp()
    }

    /// Exact `∫_lo^hi S(u) du`.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        if !(hi > lo) {
            return 0.0;
        }
        let mut total = 0.0;
        for (a, b, r) in self.pieces() {
            let (x, y) = (a.max(lo), b.min(hi));
            if y <= x {
                continue;
            }
            total += self.survival(x) * -(-r * (y - x)).exp_m1() / r;
        }
        total
    }

    /// Time with cumulative hazard `e`, so `e ~ Exp(1)` gives a draw.
    pub fn quantile_of_hazard(&self, e: f64) -> f64 {
        let mut acc = 0.0;
        for (a, b, r) in self.pieces() {
            let piece = r * (b - a);
            if acc + piece >= e {
                return a + (e - acc) / r;
            }
            acc += piece;
        }
        unreachable!("the last piece is unbounded")
    }

    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.quantile_of_hazard(-(-u).ln_1p())
    }

    /// Times in `(0, horizon]` where `S` and `other.S` change order.
    pub fn crossings(&self, other: &PiecewiseExp, horizon: f64) -> Vec<f64> {
        let mut cuts: Vec<f64> = self
            .breakpoints
            .iter()
            .chain(&other.breakpoints)
            .copied()
            .filter(|&b| b < horizon)
            .collect();
        cuts.push(horizon);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let diff = |t: f64| self.cumulative_hazard(t) - other.cumulative_hazard(t);
        let scale = |t: f64| 1.0 + self.cumulative_hazard(t) + other.cumulative_hazard(t);
        let sign = |x: f64, t: f64| {
            if x.abs() <= 1e-14 * scale(t) {
                0
            } else if x > 0.0 {
                1
            } else {
                -1
            }
        };
        let mut out = Vec::new();
        let mut last = 0;
        let mut a = 0.0;
        for b in cuts {
            let (da, db) = (diff(a), diff(b));
            let sb = sign(db, b);
            if sb != 0 && last != 0 && sb != last {
                // linear on [a, b]
                out.push(a + (b - a) * da / (da - db));
            }
            if sb != 0 {
                last = sb;
            }
            a = b;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Censoring {
    Uniform { lo: f64, hi: f64 },
    None,
}

impl Censoring {
    fn sample<R: rand::Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Censoring::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Censoring::None => f64::INFINITY,
        }
    }

    fn horizon(&self) -> f64 {
        match *self {
            Censoring::Uniform { hi, .. } => hi,
            Censoring::None => f64::INFINITY,
        }
    }
}

/// Two arm laws with their declared crossing pattern.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSpec {
    pub label: String,
    pub note: String,
    pub dist0: PiecewiseExp,
    pub dist1: PiecewiseExp,
    pub censoring: Censoring,
    pub true_theta: f64,
    pub true_gamma: Dominance,
    /// More than one crossing inside the follow-up window.
    pub multiple_crossings: bool,
}

impl ScenarioSpec {
    /// Checks the declared `(θ, γ)` against the crossings of the two laws
    /// inside the follow-up window.
    pub fn new(
        label: impl Into<String>,
        dist0: PiecewiseExp,
        dist1: PiecewiseExp,
        censoring: Censoring,
        true_theta: f64,
        true_gamma: Dominance,
    ) -> Result<Self> {
        let label = label.into();
        dist0.validate()?;
        dist1.validate()?;
        if let Censoring::Uniform { lo, hi } = censoring {
            if !(0.0 <= lo && lo <= hi && hi.is_finite()) {
                return Err(Error::Config(format!("scenario {label}: bad censoring bounds")));
            }
        }
        let horizon = censoring.horizon().min(1e6);
        let crossings = dist0.crossings(&dist1, horizon);
        let expected_theta = crossings.first().copied().unwrap_or(0.0);
        if (true_theta - expected_theta).abs() > THETA_TOL {
            return Err(Error::Config(format!(
                "scenario {label}: declared crossing {true_theta} but the laws cross at {crossings:?}"
            )));
        }
        // sign of S0 − S1 just after the first crossing (or anywhere without one)
        let probe = if crossings.len() > 1 {
            0.5 * (crossings[0] + crossings[1])
        } else if let Some(&c) = crossings.first() {
            0.5 * (c + horizon.min(c + 1.0))
        } else {
            horizon.min(1.0)
        };
        let d = dist0.survival(probe) - dist1.survival(probe);
        let gamma = if d <= 0.0 {
            Dominance::Control
        } else {
            Dominance::Treatment
        };
        if gamma != true_gamma && d != 0.0 {
            return Err(Error::Config(format!(
                "scenario {label}: declared gamma {} but the laws imply {}",
                true_gamma.gamma(),
                gamma.gamma()
            )));
        }
        Ok(Self {
            label,
            note: String::new(),
            dist0,
            dist1,
            censoring,
            true_theta,
            true_gamma,
            multiple_crossings: crossings.len() > 1,
        })
    }

    pub fn dist(&self, arm: Arm) -> &PiecewiseExp {
        match arm {
            Arm::Control => &self.dist0,
            Arm::Treatment => &self.dist1,
        }
    }

    /// `n` subjects split evenly (control takes the smaller half).
    pub fn simulate<R: rand::Rng>(&self, n: usize, rng: &mut R) -> Cohort<f64> {
        let n1 = n.div_ceil(2);
        let subjects = (0..n)
            .map(|i| {
                let arm = if i < n - n1 { Arm::Control } else { Arm::Treatment };
                let t = self.dist(arm).sample(rng);
                let c = self.censoring.sample(rng);
                Subject::new(t.min(c), t <= c, arm)
            })
            .collect();
        Cohort::new(subjects).expect("simulated times are valid")
    }
}

/// `exp(−Σ_k λ_k·|piece_k ∩ [0, t]|)`.
pub fn pwexp_survival(dist: &PiecewiseExp, t: f64) -> f64 {
    dist.survival(t)
}

/// Parameters of the mean-squared-error study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Parameter {
    RmstDiff,
    /// Survival difference at the first milestone.
    MilestoneA,
    MilestoneB,
    Theta,
    SurvAtCrossing,
    RrmlDiff,
}

impl Parameter {
    pub const ALL: [Parameter; 6] = [
        Parameter::RmstDiff,
        Parameter::MilestoneA,
        Parameter::MilestoneB,
        Parameter::Theta,
        Parameter::SurvAtCrossing,
        Parameter::RrmlDiff,
    ];

    /// Whether a Kaplan–Meier estimator is reported for this parameter.
    pub fn has_km(self) -> bool {
        matches!(
            self,
            Parameter::RmstDiff | Parameter::MilestoneA | Parameter::MilestoneB
        )
    }

    /// Whether the parameter involves the crossing time.
    pub fn uses_theta(self) -> bool {
        !self.has_km()
    }

    pub fn name(self, design: &Design) -> String {
        match self {
            Parameter::RmstDiff => key("drmst", &[design.tau]),
            Parameter::MilestoneA => key("ds", &[design.milestones[0]]),
            Parameter::MilestoneB => key("ds", &[design.milestones[1]]),
            Parameter::Theta => "theta".into(),
            Parameter::SurvAtCrossing => "s_theta".into(),
            Parameter::RrmlDiff => key("drrml", &[design.tau]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Estimator {
    Scc,
    Km,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Scc => "SCC",
            Estimator::Km => "KM",
        }
    }
}

/// Truncation time and the two milestone times of the study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub tau: f64,
    pub milestones: [f64; 2],
}

impl Default for Design {
    fn default() -> Self {
        Self {
            tau: 7.0,
            milestones: [2.0, 4.0],
        }
    }
}

/// Closed-form values of every study parameter (`None` for crossing-time
/// parameters of multiple-crossing scenarios).
pub fn true_parameters(spec: &ScenarioSpec, design: &Design) -> BTreeMap<Parameter, Option<f64>> {
    let (d0, d1) = (&spec.dist0, &spec.dist1);
    let theta = spec.true_theta;
    let tau = design.tau;
    let mut out = BTreeMap::new();
    out.insert(Parameter::RmstDiff, Some(d1.integral(0.0, tau) - d0.integral(0.0, tau)));
    out.insert(
        Parameter::MilestoneA,
        Some(d1.survival(design.milestones[0]) - d0.survival(design.milestones[0])),
    );
    out.insert(
        Parameter::MilestoneB,
        Some(d1.survival(design.milestones[1]) - d0.survival(design.milestones[1])),
    );
    let single = !spec.multiple_crossings;
    let s_theta = if theta > 0.0 {
        0.5 * (d0.survival(theta) + d1.survival(theta))
    } else {
        1.0
    };
    let rrml = if theta >= tau {
        0.0
    } else {
        d1.integral(theta, tau) / d1.survival(theta) - d0.integral(theta, tau) / d0.survival(theta)
    };
    out.insert(Parameter::Theta, single.then_some(theta));
    out.insert(Parameter::SurvAtCrossing, single.then_some(s_theta));
    out.insert(Parameter::RrmlDiff, single.then_some(rrml));
    out
}

/// The true estimands of a scenario under the naming of
/// [`crate::estimands::estimand_report`].
pub fn true_estimands(spec: &ScenarioSpec, tau: f64) -> EstimandReport {
    let (d0, d1) = (&spec.dist0, &spec.dist1);
    let theta = spec.true_theta;
    let mut values = BTreeMap::new();
    let (r0, r1) = (d0.integral(0.0, tau), d1.integral(0.0, tau));
    values.insert(key("rmst0", &[tau]), r0);
    values.insert(key("rmst1", &[tau]), r1);
    values.insert(key("rmst_diff", &[tau]), r1 - r0);
    for t in [2.0, 4.0] {
        values.insert(key("milestone_diff", &[t]), d1.survival(t) - d0.survival(t));
    }
    let truth = true_parameters(
        spec,
        &Design {
            tau,
            ..Design::default()
        },
    );
    let mut warnings = Vec::new();
    if spec.multiple_crossings {
        warnings.push("laws cross more than once; crossing-time estimands omitted".into());
    } else {
        values.insert("theta".into(), theta);
        values.insert(
            "surv_at_crossing".into(),
            truth[&Parameter::SurvAtCrossing].expect("single crossing"),
        );
        values.insert(
            key("rrml_diff", &[theta, tau]),
            truth[&Parameter::RrmlDiff].expect("single crossing"),
        );
        for a in [Arm::Control, Arm::Treatment] {
            values.insert(format!("surv{}(theta)", a.index()), spec.dist(a).survival(theta));
        }
    }
    EstimandReport {
        theta_hat: theta,
        gamma_hat: spec.true_gamma.gamma(),
        tau,
        values,
        warnings,
    }
}

/// Estimates of every study parameter from one simulated cohort.
pub fn estimate_parameters(
    cohort: &Cohort<f64>,
    design: &Design,
    opts: &SolverOptions,
) -> Result<BTreeMap<(Estimator, Parameter), f64>> {
    let grid = EventGrid::build(cohort)?;
    let fit = scc_fit_grid(&grid, opts)?;
    let km0 = kaplan_meier(&grid, Arm::Control);
    let km1 = kaplan_meier(&grid, Arm::Treatment);
    let tau = design.tau;
    let [ma, mb] = design.milestones;
    let mut out = BTreeMap::new();
    for (est, s0, s1) in [(Estimator::Scc, &fit.s0, &fit.s1), (Estimator::Km, &km0, &km1)] {
        out.insert((est, Parameter::RmstDiff), rmst(s1, tau)? - rmst(s0, tau)?);
        out.insert((est, Parameter::MilestoneA), s1.eval(ma) - s0.eval(ma));
        out.insert((est, Parameter::MilestoneB), s1.eval(mb) - s0.eval(mb));
    }
    out.insert((Estimator::Scc, Parameter::Theta), fit.theta_hat);
    out.insert((Estimator::Scc, Parameter::SurvAtCrossing), surv_at_crossing(&fit));
    out.insert(
        (Estimator::Scc, Parameter::RrmlDiff),
        rrml_diff(&fit.s1, &fit.s0, fit.theta_hat, tau)?,
    );
    Ok(out)
}

/// Study configuration as read from a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub seed: u64,
    pub reps: usize,
    pub ns: Vec<usize>,
    #[serde(default)]
    pub design: Option<Design>,
    #[serde(rename = "scenario")]
    pub scenarios: Vec<ScenarioConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub label: String,
    #[serde(default)]
    pub note: String,
    pub theta: f64,
    pub gamma: i64,
    pub censoring: Censoring,
    pub control: PiecewiseExp,
    pub treatment: PiecewiseExp,
}

impl ScenarioConfig {
    pub fn build(&self) -> Result<ScenarioSpec> {
        let mut spec = ScenarioSpec::new(
            self.label.clone(),
            self.control.clone(),
            self.treatment.clone(),
            self.censoring,
            self.theta,
            Dominance::from_gamma(self.gamma)?,
        )?;
        spec.note = self.note.clone();
        Ok(spec)
    }
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if cfg.ns.iter().any(|&n| n < 2) {
            return Err(Error::Config("every n must be at least 2".into()));
        }
        if cfg.scenarios.is_empty() {
            return Err(Error::Config("no scenarios".into()));
        }
        Ok(cfg)
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn shipped() -> Self {
        Self::from_toml(SHIPPED_SCENARIOS).expect("shipped scenarios parse")
    }

    pub fn specs(&self) -> Result<Vec<ScenarioSpec>> {
        self.scenarios.iter().map(ScenarioConfig::build).collect()
    }

    pub fn design(&self) -> Design {
        self.design.clone().unwrap_or_default()
    }

    /// Keeps only the scenarios with the given labels, in file order.
    pub fn select(mut self, labels: &[&str]) -> Self {
        self.scenarios.retain(|s| labels.contains(&s.label.as_str()));
        self
    }
}

/// One replicate of the study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub scenario: String,
    pub n: usize,
    pub rep: usize,
    pub event_fraction: f64,
    /// `None` when the fit failed.
    pub estimates: Option<BTreeMap<(Estimator, Parameter), f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseCell {
    pub scenario: String,
    pub n: usize,
    pub estimator: Estimator,
    pub parameter: Parameter,
    /// `None` for parameters that are not defined for the scenario.
    pub mse: Option<f64>,
    pub used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseTable {
    pub design: Design,
    pub reps: usize,
    pub seed: u64,
    pub cells: Vec<MseCell>,
    /// Mean observed-event fraction per `(scenario, n)`.
    pub event_fraction: BTreeMap<(String, usize), f64>,
    /// Failed replicates per `(scenario, n)`.
    pub failures: BTreeMap<(String, usize), usize>,
    pub records: Vec<ReplicateRecord>,
}

/// Stream of replicate `rep` of sample size index `ni` in scenario `si`.
fn stream_id(si: usize, ni: usize, rep: usize) -> u64 {
    ((si as u64) << 48) | ((ni as u64) << 32) | rep as u64
}

pub fn run_replicate(
    spec: &ScenarioSpec,
    n: usize,
    rep: usize,
    rng: &mut Rng,
    design: &Design,
    opts: &SolverOptions,
) -> ReplicateRecord {
    let cohort = spec.simulate(n, rng);
    let (estimates, error) = match estimate_parameters(&cohort, design, opts) {
        Ok(e) => (Some(e), None),
        Err(e) => (None, Some(e.to_string())),
    };
    ReplicateRecord {
        scenario: spec.label.clone(),
        n,
        rep,
        event_fraction: cohort.event_fraction(),
        estimates,
        error,
    }
}

/// Runs every `(scenario, n, replicate)` and reduces to mean-squared errors
/// against the closed-form parameters.
pub fn run_mse_study(
    specs: &[ScenarioSpec],
    ns: &[usize],
    reps: usize,
    seed: u64,
    design: &Design,
    opts: &SolverOptions,
) -> Result<MseTable> {
    if reps == 0 {
        return Err(Error::InvalidInput("reps must be at least 1".into()));
    }
    let jobs: Vec<(usize, usize, usize)> = (0..specs.len())
        .flat_map(|si| (0..ns.len()).flat_map(move |ni| (0..reps).map(move |r| (si, ni, r))))
        .collect();
    let records: Vec<ReplicateRecord> = jobs
        .par_iter()
        .map(|&(si, ni, rep)| {
            let mut rng = substream(seed, stream_id(si, ni, rep));
            run_replicate(&specs[si], ns[ni], rep, &mut rng, design, opts)
        })
        .collect();

    let mut cells = Vec::new();
    let mut event_fraction = BTreeMap::new();
    let mut failures = BTreeMap::new();
    for spec in specs {
        let truth = true_parameters(spec, design);
        for &n in ns {
            let recs: Vec<&ReplicateRecord> = records
                .iter()
                .filter(|r| r.scenario == spec.label && r.n == n)
                .collect();
            let ok: Vec<&BTreeMap<(Estimator, Parameter), f64>> =
                recs.iter().filter_map(|r| r.estimates.as_ref()).collect();
            let fail = recs.len() - ok.len();
            if fail > 0 {
                log::warn!("scenario {} n = {n}: {fail} replicates failed", spec.label);
            }
            failures.insert((spec.label.clone(), n), fail);
            let mean_events = recs.iter().map(|r| r.event_fraction).sum::<f64>() / recs.len() as f64;
            event_fraction.insert((spec.label.clone(), n), mean_events);
            for p in Parameter::ALL {
                for est in [Estimator::Scc, Estimator::Km] {
                    if est == Estimator::Km && !p.has_km() {
                        continue;
                    }
                    let mse = truth[&p]
                        .filter(|_| !ok.is_empty())
                        .map(|t| ok.iter().map(|e| (e[&(est, p)] - t).powi(2)).sum::<f64>() / ok.len() as f64);
                    cells.push(MseCell {
                        scenario: spec.label.clone(),
                        n,
                        estimator: est,
                        parameter: p,
                        mse,
                        used: ok.len(),
                    });
                }
            }
        }
    }
    Ok(MseTable {
        design: design.clone(),
        reps,
        seed,
        cells,
        event_fraction,
        failures,
        records,
    })
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

impl MseTable {
    pub fn get(&self, scenario: &str, n: usize, estimator: Estimator, parameter: Parameter) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.scenario == scenario && c.n == n && c.estimator == estimator && c.parameter == parameter)
            .and_then(|c| c.mse)
    }

    /// Columns in the order of the published table.
    pub fn columns() -> Vec<(Parameter, Estimator)> {
        Parameter::ALL
            .iter()
            .flat_map(|&p| {
                let mut v = vec![(p, Estimator::Scc)];
                if p.has_km() {
                    v.push((p, Estimator::Km));
                }
                v
            })
            .collect()
    }

    /// One row per `(n, scenario)`; undefined cells are `NA`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["n".to_string(), "scenario".to_string()];
        for (p, e) in Self::columns() {
            header.push(format!("{}_{}", p.name(&self.design), e.name()));
        }
        header.extend(["event_fraction", "reps", "failures"].map(String::from));
        w.write_record(&header)?;
        let mut ns: Vec<usize> = self.cells.iter().map(|c| c.n).collect();
        ns.sort_unstable();
        ns.dedup();
        let mut labels: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !labels.contains(&c.scenario.as_str()) {
                labels.push(&c.scenario);
            }
        }
        for &n in &ns {
            for &label in &labels {
                let mut row = vec![n.to_string(), label.to_string()];
                for (p, e) in Self::columns() {
                    row.push(self.get(label, n, e, p).map_or_else(|| "NA".into(), num));
                }
                let k = (label.to_string(), n);
                row.push(num(self.event_fraction[&k]));
                row.push(self.reps.to_string());
                row.push(self.failures[&k].to_string());
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Long-format replicate log: one row per estimate, with the truth it is
    /// scored against.
    pub fn write_log<W: Write>(&self, specs: &[ScenarioSpec], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "scenario",
            "n",
            "rep",
            "estimator",
            "parameter",
            "estimate",
            "truth",
            "status",
        ])?;
        for r in &self.records {
            let spec = specs
                .iter()
                .find(|s| s.label == r.scenario)
                .expect("record of a known scenario");
            let truth = true_parameters(spec, &self.design);
            let (n, rep) = (r.n.to_string(), r.rep.to_string());
            match &r.estimates {
                None => {
                    let msg = r.error.clone().unwrap_or_default();
                    w.write_record([r.scenario.as_str(), &n, &rep, "", "", "", "", &format!("failed: {msg}")])?;
                }
                Some(est) => {
                    for (&(e, p), &v) in est {
                        let t = truth[&p].map_or_else(|| "NA".into(), num);
                        w.write_record([
                            r.scenario.as_str(),
                            &n,
                            &rep,
                            e.name(),
                            &p.name(&self.design),
                            &num(v),
                            &t,
                            "ok",
                        ])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}
