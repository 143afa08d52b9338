//! Two-arm right-censored samples, risk tables and Kaplan–Meier references.
//!
//! A [`Cohort`] holds the raw `(Y_i, δ_i, A_i)` triples. [`EventGrid`] is the
//! risk table over the unique event times pooled across arms, and
//! [`StepSurvival`] is a right-continuous step survival curve on such a grid,
//! parameterized by its log-jumps.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Log-jump used to represent a drop to zero survival; `exp(-CAP) ≈ 1e-12`.
pub const CAP: f64 = 27.63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    Control,
    Treatment,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treatment];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treatment => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Arm::Control),
            1 => Ok(Arm::Treatment),
            _ => Err(Error::InvalidInput(format!("arm must be 0 or 1, got {i}"))),
        }
    }

    #[inline]
    pub fn other(self) -> Self {
        match self {
            Arm::Control => Arm::Treatment,
            Arm::Treatment => Arm::Control,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Subject<T> {
    pub time: T,
    /// `true` when the event was observed (`δ_i = 1`).
    pub event: bool,
    pub arm: Arm,
}

impl<T: Scalar> Subject<T> {
    pub fn new(time: T, event: bool, arm: Arm) -> Self {
        Self { time, event, arm }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort<T> {
    subjects: Vec<Subject<T>>,
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    time: f64,
    event: u8,
    arm: u8,
}

impl<T: Scalar> Cohort<T> {
    /// Validates that all times are finite and non-negative.
    pub fn new(subjects: Vec<Subject<T>>) -> Result<Self> {
        for (index, s) in subjects.iter().enumerate() {
            if !s.time.is_finite() {
                return Err(Error::InvalidInput(format!("subject {index} has non-finite time")));
            }
            if s.time < T::zero() {
                return Err(Error::NegativeTime {
                    index,
                    time: s.time.as_f64(),
                });
            }
        }
        Ok(Self { subjects })
    }

    /// Convenience constructor from parallel `(time, event, arm)` tuples.
    pub fn from_tuples(rows: &[(f64, bool, usize)]) -> Result<Self> {
        let subjects = rows
            .iter()
            .map(|&(t, e, a)| Ok(Subject::new(T::lit(t), e, Arm::from_index(a)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(subjects)
    }

    /// Reads `time,event,arm` CSV (header required, exactly these columns).
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let names: Vec<&str> = headers.iter().collect();
        if names != ["time", "event", "arm"] {
            return Err(Error::InvalidInput(format!(
                "expected header `time,event,arm`, found `{}`",
                names.join(",")
            )));
        }
        let mut subjects = Vec::new();
        for (line, row) in rdr.deserialize::<CsvRow>().enumerate() {
            let row = row?;
            let event = match row.event {
                0 => false,
                1 => true,
                other => {
                    return Err(Error::InvalidInput(format!(
                        "row {}: event must be 0 or 1, got {other}",
                        line + 1
                    )))
                }
            };
            let arm =
                Arm::from_index(row.arm as usize).map_err(|e| Error::InvalidInput(format!("row {}: {e}", line + 1)))?;
            subjects.push(Subject::new(T::lit(row.time), event, arm));
        }
        if subjects.is_empty() {
            return Err(Error::InvalidInput("no subjects in input".into()));
        }
        Self::new(subjects)
    }

    pub fn from_csv_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(std::io::BufReader::new(file))
    }

    pub fn subjects(&self) -> &[Subject<T>] {
        &self.subjects
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn arm_size(&self, arm: Arm) -> usize {
        self.subjects.iter().filter(|s| s.arm == arm).count()
    }

    pub fn events_in(&self, arm: Arm) -> usize {
        self.subjects.iter().filter(|s| s.arm == arm && s.event).count()
    }

    /// Fraction of subjects with an observed event.
    pub fn event_fraction(&self) -> f64 {
        if self.subjects.is_empty() {
            return 0.0;
        }
        self.subjects.iter().filter(|s| s.event).count() as f64 / self.n() as f64
    }

    /// Indices of the subjects in `arm`, in input order.
    pub fn arm_indices(&self, arm: Arm) -> Vec<usize> {
        self.subjects
            .iter()
            .enumerate()
            .filter(|(_, s)| s.arm == arm)
            .map(|(i, _)| i)
            .collect()
    }

    /// A cohort made of the given subject indices (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            subjects: indices.iter().map(|&i| self.subjects[i]).collect(),
        }
    }

    /// Same follow-up data with arm labels replaced.
    pub fn relabel(&self, arms: &[Arm]) -> Result<Self> {
        if arms.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: arms.len(),
            });
        }
        Ok(Self {
            subjects: self
                .subjects
                .iter()
                .zip(arms)
                .map(|(s, &arm)| Subject { arm, ..*s })
                .collect(),
        })
    }
}

/// Replaces each follow-up time by the midpoint of its bin `[k·w, (k+1)·w)`.
pub fn bin_followup<T: Scalar>(cohort: &Cohort<T>, width: T) -> Result<Cohort<T>> {
    if !(width > T::zero()) || !width.is_finite() {
        return Err(Error::InvalidWidth(width.as_f64()));
    }
    let half = T::lit(0.5);
    let subjects = cohort
        .subjects
        .iter()
        .map(|s| {
            let k = (s.time / width).floor();
            Subject {
                time: (k + half) * width,
                ..*s
            }
        })
        .collect();
    Ok(Cohort { subjects })
}

/// Risk table over the pooled unique event times `t_1 < … < t_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventGrid<T> {
    times: Vec<T>,
    events: Vec<[usize; 2]>,
    at_risk: Vec<[usize; 2]>,
}

impl<T: Scalar> EventGrid<T> {
    /// Builds `d_ja = #{A_i = a, δ_i = 1, Y_i = t_j}` and
    /// `R_ja = #{A_i = a, Y_i ≥ t_j}`.
    pub fn build(cohort: &Cohort<T>) -> Result<Self> {
        if cohort.is_empty() {
            return Err(Error::InvalidInput("cohort is empty".into()));
        }
        for (index, s) in cohort.subjects().iter().enumerate() {
            if s.time < T::zero() {
                return Err(Error::NegativeTime {
                    index,
                    time: s.time.as_f64(),
                });
            }
        }
        for arm in Arm::BOTH {
            if cohort.events_in(arm) == 0 {
                return Err(Error::EmptyArm { arm: arm.index() });
            }
        }

        let mut event_times: Vec<T> = cohort.subjects().iter().filter(|s| s.event).map(|s| s.time).collect();
        event_times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
        event_times.dedup();
        if event_times[0] <= T::zero() {
            return Err(Error::InvalidInput("event times must be strictly positive".into()));
        }

        let mut sorted: [Vec<T>; 2] = [Vec::new(), Vec::new()];
        let mut sorted_events: [Vec<T>; 2] = [Vec::new(), Vec::new()];
        for s in cohort.subjects() {
            sorted[s.arm.index()].push(s.time);
            if s.event {
                sorted_events[s.arm.index()].push(s.time);
            }
        }
        for v in sorted.iter_mut().chain(sorted_events.iter_mut()) {
            v.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
        }

        let m = event_times.len();
        let mut events = Vec::with_capacity(m);
        let mut at_risk = Vec::with_capacity(m);
        for &t in &event_times {
            let mut d = [0usize; 2];
            let mut r = [0usize; 2];
            for a in 0..2 {
                let below = sorted[a].partition_point(|&y| y < t);
                r[a] = sorted[a].len() - below;
                let lo = sorted_events[a].partition_point(|&y| y < t);
                let hi = sorted_events[a].partition_point(|&y| y <= t);
                d[a] = hi - lo;
            }
            events.push(d);
            at_risk.push(r);
        }
        Ok(Self {
            times: event_times,
            events,
            at_risk,
        })
    }

    /// Rebuilds a grid from stored counts, checking the risk-table invariants.
    pub fn from_parts(times: Vec<T>, events: Vec<[usize; 2]>, at_risk: Vec<[usize; 2]>) -> Result<Self> {
        let m = times.len();
        if events.len() != m || at_risk.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: events.len().min(at_risk.len()),
            });
        }
        if m == 0 {
            return Err(Error::InvalidInput("grid has no event times".into()));
        }
        for j in 0..m {
            if !(times[j] > T::zero()) || (j > 0 && !(times[j] > times[j - 1])) {
                return Err(Error::InvalidInput(
                    "grid times must be positive and strictly increasing".into(),
                ));
            }
            if events[j][0] + events[j][1] == 0 {
                return Err(Error::InvalidInput(format!("grid row {j} has no events")));
            }
            for a in 0..2 {
                if events[j][a] > at_risk[j][a] {
                    return Err(Error::InvalidInput(format!(
                        "grid row {j}: more events than subjects at risk"
                    )));
                }
                if j > 0 && at_risk[j][a] > at_risk[j - 1][a] {
                    return Err(Error::InvalidInput(format!("grid row {j}: risk set grows over time")));
                }
            }
        }
        for a in 0..2 {
            if events.iter().all(|d| d[a] == 0) {
                return Err(Error::EmptyArm { arm: a });
            }
        }
        Ok(Self { times, events, at_risk })
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    #[inline]
    pub fn d(&self, j: usize, arm: Arm) -> usize {
        self.events[j][arm.index()]
    }

    #[inline]
    pub fn r(&self, j: usize, arm: Arm) -> usize {
        self.at_risk[j][arm.index()]
    }

    pub fn events(&self) -> &[[usize; 2]] {
        &self.events
    }

    pub fn at_risk(&self) -> &[[usize; 2]] {
        &self.at_risk
    }

    pub fn last_time(&self) -> T {
        *self.times.last().expect("non-empty grid")
    }
}

/// Right-continuous step survival curve `S(t) = exp(Σ_j u_j·I(t_j ≤ t))`.
///
/// Both the log-jumps and the survival values at the grid times are kept so
/// that curves read back from disk reproduce their values bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSurvival<T> {
    times: Vec<T>,
    logjumps: Vec<T>,
    values: Vec<T>,
}

impl<T: Scalar> StepSurvival<T> {
    pub fn from_logjumps(times: Vec<T>, logjumps: Vec<T>) -> Result<Self> {
        if times.len() != logjumps.len() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                found: logjumps.len(),
            });
        }
        let cap = T::lit(CAP);
        let mut acc = T::zero();
        let mut values = Vec::with_capacity(times.len());
        for &u in &logjumps {
            if u > T::zero() || u.is_nan() {
                return Err(Error::InvalidInput(format!("log-jump {u} is positive")));
            }
            acc = (acc + u).max(-cap * T::lit(2.0));
            values.push(acc.exp());
        }
        Ok(Self {
            times,
            logjumps,
            values,
        })
    }

    /// Builds a curve from survival values at the grid times; values must be
    /// non-increasing and in `[0, 1]`.
    pub fn from_values(times: Vec<T>, values: Vec<T>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                found: values.len(),
            });
        }
        let cap = T::lit(CAP);
        let mut prev = T::one();
        let mut logjumps = Vec::with_capacity(values.len());
        for &s in &values {
            if !(s >= T::zero() && s <= prev) {
                return Err(Error::InvalidInput(format!(
                    "survival values must be non-increasing in [0, 1], got {s} after {prev}"
                )));
            }
            let u = if s <= T::zero() {
                -cap
            } else if prev <= T::zero() {
                T::zero()
            } else {
                (s.ln() - prev.ln()).min(T::zero()).max(-cap)
            };
            logjumps.push(u);
            prev = s;
        }
        Ok(Self {
            times,
            logjumps,
            values,
        })
    }

    /// The constant curve `S ≡ 1` on `times`.
    pub fn flat(times: Vec<T>) -> Self {
        let m = times.len();
        Self {
            times,
            logjumps: vec![T::zero(); m],
            values: vec![T::one(); m],
        }
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn logjumps(&self) -> &[T] {
        &self.logjumps
    }

    /// `S(t_j)` at each grid time.
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Right-continuous evaluation; `S(t) = 1` before the first grid time and
    /// flat after the last one.
    pub fn eval(&self, t: T) -> T {
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            T::one()
        } else {
            self.values[k - 1]
        }
    }

    /// Exact `∫_a^b S(u) du` for `0 ≤ a ≤ b`.
    pub fn integral(&self, a: T, b: T) -> T {
        if !(b > a) {
            return T::zero();
        }
        let mut total = T::zero();
        let mut left = a;
        let mut k = self.times.partition_point(|&x| x <= a);
        let mut height = if k == 0 { T::one() } else { self.values[k - 1] };
        while k < self.times.len() && self.times[k] < b {
            total = total + height * (self.times[k] - left);
            left = self.times[k];
            height = self.values[k];
            k += 1;
        }
        total + height * (b - left)
    }

    /// Discrete hazards `h_j = 1 - exp(u_j)`.
    pub fn discrete_hazards(&self) -> Vec<T> {
        self.logjumps.iter().map(|&u| -u.exp_m1()).collect()
    }
}

/// Product-limit estimator for `arm` on the pooled grid, as log-jumps.
pub fn kaplan_meier<T: Scalar>(grid: &EventGrid<T>, arm: Arm) -> StepSurvival<T> {
    let u = (0..grid.m())
        .map(|j| km_logjump(grid.d(j, arm), grid.r(j, arm)))
        .collect();
    StepSurvival::from_logjumps(grid.times().to_vec(), u).expect("KM log-jumps are valid")
}

/// `log(1 - d/r)` with the zero-survival cap; `0` when nothing happens.
pub(crate) fn km_logjump<T: Scalar>(d: usize, r: usize) -> T {
    if d == 0 || r == 0 {
        T::zero()
    } else if d >= r {
        -T::lit(CAP)
    } else {
        let h = T::from_count(d) / T::from_count(r);
        (-h).ln_1p().max(-T::lit(CAP))
    }
}
