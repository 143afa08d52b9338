//! On-disk form of a fit: `curves.csv`, `profile.csv` and `fit.json`.

use std::path::Path;

use serde_json::{json, Value};

use scc_core::mle::{km_loglik, FitResult, Route};
use scc_core::profile::{ProfileEntry, SccFit};
use scc_core::{ConstraintKind, Dominance, EventGrid, StepSurvival};

use crate::output::{input_error, num, CliResult};

pub fn kind_name(kind: ConstraintKind) -> &'static str {
    match kind {
        ConstraintKind::Survival => "survival",
        ConstraintKind::Hazard => "hazard",
    }
}

fn route_name(route: Route) -> &'static str {
    match route {
        Route::KaplanMeier => "kaplan_meier",
        Route::Structured => "structured",
        Route::Generic => "generic",
    }
}

fn parse_route(s: &str) -> CliResult<Route> {
    match s {
        "kaplan_meier" => Ok(Route::KaplanMeier),
        "structured" => Ok(Route::Structured),
        "generic" => Ok(Route::Generic),
        _ => Err(input_error(format!("unknown route `{s}`"))),
    }
}

fn fmt(x: f64) -> String {
    format!("{x:?}")
}

pub fn write_curves(path: &Path, fit: &SccFit<f64>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "S0", "S1"])?;
    for (j, &t) in fit.grid.times().iter().enumerate() {
        w.write_record([fmt(t), fmt(fit.s0.values()[j]), fmt(fit.s1.values()[j])])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_profile(path: &Path, fit: &SccFit<f64>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["theta", "gamma", "loglik", "route"])?;
    for e in &fit.profile {
        w.write_record([
            fmt(e.theta),
            e.gamma.gamma().to_string(),
            fmt(e.loglik),
            route_name(e.route).into(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn fit_json(fit: &SccFit<f64>, n: usize, bin_width: Option<f64>) -> Value {
    let g = &fit.grid;
    let f = &fit.fit;
    json!({
        "constraint": kind_name(fit.kind),
        "theta_hat": num(fit.theta_hat),
        "gamma_hat": fit.gamma_hat.gamma(),
        "loglik": num(fit.loglik),
        "km_loglik": num(km_loglik(g)),
        "n": n,
        "m": g.m(),
        "bin_width": bin_width,
        "diagnostics": {
            "route": route_name(f.route),
            "converged": f.converged,
            "kkt_residual": num(f.kkt_residual),
            "iterations": f.iterations,
            "multipliers": f.multipliers.iter().copied().map(num).collect::<Vec<_>>(),
        },
        "grid": {
            "times": g.times(),
            "events": g.events(),
            "at_risk": g.at_risk(),
        },
        "u0": f.u0.iter().copied().map(num).collect::<Vec<_>>(),
        "u1": f.u1.iter().copied().map(num).collect::<Vec<_>>(),
    })
}

fn field<'a>(v: &'a Value, key: &str) -> CliResult<&'a Value> {
    v.get(key)
        .ok_or_else(|| input_error(format!("fit.json: missing `{key}`")))
}

fn as_f64(v: &Value, key: &str) -> CliResult<f64> {
    field(v, key)?
        .as_f64()
        .ok_or_else(|| input_error(format!("fit.json: `{key}` is not a number")))
}

fn f64s(v: &Value, key: &str) -> CliResult<Vec<f64>> {
    serde_json::from_value(field(v, key)?.clone()).map_err(|e| input_error(format!("fit.json: `{key}`: {e}")))
}

fn pairs(v: &Value, key: &str) -> CliResult<Vec<[usize; 2]>> {
    serde_json::from_value(field(v, key)?.clone()).map_err(|e| input_error(format!("fit.json: `{key}`: {e}")))
}

/// Reads a fit directory back into an [`SccFit`]; the curves come from
/// `curves.csv` so that estimands see exactly the written values.
pub fn read_fit_dir(dir: &Path) -> CliResult<SccFit<f64>> {
    let need = |name: &str| {
        let p = dir.join(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(input_error(format!("missing fit artifact {}", p.display())))
        }
    };
    let (fit_path, curves_path, profile_path) = (need("fit.json")?, need("curves.csv")?, need("profile.csv")?);
    let text = std::fs::read_to_string(&fit_path)?;
    let v: Value = serde_json::from_str(&text)?;

    let kind = match field(&v, "constraint")?.as_str() {
        Some("survival") => ConstraintKind::Survival,
        Some("hazard") => ConstraintKind::Hazard,
        _ => return Err(input_error("fit.json: `constraint` must be survival or hazard")),
    };
    let gamma = field(&v, "gamma_hat")?
        .as_i64()
        .ok_or_else(|| input_error("fit.json: bad `gamma_hat`"))?;
    let gamma_hat = Dominance::from_gamma(gamma)?;
    let theta_hat = as_f64(&v, "theta_hat")?;
    let loglik = as_f64(&v, "loglik")?;
    let grid_v = field(&v, "grid")?;
    let grid = EventGrid::from_parts(
        f64s(grid_v, "times")?,
        pairs(grid_v, "events")?,
        pairs(grid_v, "at_risk")?,
    )?;
    let d = field(&v, "diagnostics")?;
    let route = parse_route(field(d, "route")?.as_str().unwrap_or_default())?;
    let fit = FitResult {
        u0: f64s(&v, "u0")?,
        u1: f64s(&v, "u1")?,
        loglik,
        converged: field(d, "converged")?.as_bool().unwrap_or(false),
        kkt_residual: as_f64(d, "kkt_residual")?,
        multipliers: f64s(d, "multipliers")?,
        iterations: field(d, "iterations")?.as_u64().unwrap_or(0) as usize,
        route,
    };
    if fit.u0.len() != grid.m() || fit.u1.len() != grid.m() {
        return Err(input_error("fit.json: log-jumps do not match the grid"));
    }

    let mut times = Vec::new();
    let (mut v0, mut v1) = (Vec::new(), Vec::new());
    let mut rdr = csv::Reader::from_path(&curves_path)?;
    if rdr.headers()?.iter().collect::<Vec<_>>() != ["t", "S0", "S1"] {
        return Err(input_error("curves.csv: expected header `t,S0,S1`"));
    }
    for row in rdr.deserialize::<(f64, f64, f64)>() {
        let (t, a, b) = row?;
        times.push(t);
        v0.push(a);
        v1.push(b);
    }
    if times != grid.times() {
        return Err(input_error("curves.csv does not match the grid in fit.json"));
    }
    let s0 = StepSurvival::from_values(times.clone(), v0)?;
    let s1 = StepSurvival::from_values(times, v1)?;

    let mut profile = Vec::new();
    let mut rdr = csv::Reader::from_path(&profile_path)?;
    for row in rdr.deserialize::<(f64, i64, f64, String)>() {
        let (theta, gamma, loglik, route) = row?;
        profile.push(ProfileEntry {
            theta,
            gamma: Dominance::from_gamma(gamma)?,
            loglik,
            route: parse_route(&route)?,
        });
    }

    Ok(SccFit {
        theta_hat,
        gamma_hat,
        s0,
        s1,
        profile,
        loglik,
        fit,
        kind,
        grid,
    })
}
