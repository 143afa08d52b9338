use std::path::Path;

use serde_json::{json, Value};

use scc_core::hazard::{scc_hazard_fit, smooth_hazards, DiscreteHazards};
use scc_core::inference::{joint_test, permutation_test, stratified_bootstrap, Direction, JointKind};
use scc_core::mle::SolverOptions;
use scc_core::profile::{scc_fit, SccFit};
use scc_core::simulation::{run_mse_study, true_parameters, Parameter, StudyConfig};
use scc_core::{bin_followup, estimand_report, Cohort, ConstraintKind, Error, Estimand, EstimandSpec, HazardSource};

use crate::artifacts::{fit_json, read_fit_dir, write_curves, write_profile};
use crate::output::{input_error, num, out_file, write_json, CliResult, Manifest};
use crate::{
    BootstrapArgs, Constraint, DirectionArg, EstimandsArgs, FitArgs, SimulateArgs, SolverArgs, Source, TestArgs,
    TestType,
};

fn solver_opts(a: &SolverArgs) -> CliResult<SolverOptions> {
    if !(a.tol > 0.0) || a.max_iter == 0 {
        return Err(input_error("--tol must be positive and --max-iter at least 1"));
    }
    Ok(SolverOptions {
        tol: a.tol,
        max_iter: a.max_iter,
        ..SolverOptions::default()
    })
}

fn load_cohort(path: &Path, bin_width: Option<f64>) -> CliResult<Cohort<f64>> {
    let cohort = Cohort::from_csv_path(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    match bin_width {
        Some(w) => Ok(bin_followup(&cohort, w)?),
        None => Ok(cohort),
    }
}

fn fit_with(cohort: &Cohort<f64>, constraint: Constraint, opts: &SolverOptions) -> scc_core::Result<SccFit<f64>> {
    match constraint {
        Constraint::Survival => scc_fit(cohort, opts),
        Constraint::Hazard => scc_hazard_fit(cohort, opts),
    }
}

fn parse_estimand(s: &str) -> CliResult<Estimand> {
    s.parse::<Estimand>().map_err(|e| input_error(e.to_string()))
}

fn fmt(x: f64) -> String {
    format!("{x:?}")
}

pub fn fit(a: &FitArgs) -> CliResult<()> {
    let mut manifest = Manifest::start("fit", a, None);
    manifest.input(&a.input)?;
    let opts = solver_opts(&a.solver)?;
    let cohort = load_cohort(&a.input, a.bin_width)?;
    let fit = fit_with(&cohort, a.constraint, &opts)?;
    let hazards = DiscreteHazards::from_fit(&fit.fit, &fit.grid);
    let smoothed = if fit.kind == ConstraintKind::Hazard {
        match smooth_hazards(&hazards, a.span) {
            Ok(s) => Some(s),
            Err(e @ Error::DegenerateWindow { .. }) => {
                log::warn!("hazards not smoothed: {e}");
                None
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };

    let mut payload = fit_json(&fit, cohort.n(), a.bin_width);
    if let Some(s) = &smoothed {
        payload["smoothed"] = json!({
            "span": a.span,
            "single_crossing": s.single_crossing,
            "first_violation": s.first_violation,
        });
    }
    write_curves(&out_file(&a.out, "curves.csv")?, &fit)?;
    write_profile(&out_file(&a.out, "profile.csv")?, &fit)?;
    let mut w = csv::Writer::from_path(out_file(&a.out, "hazards.csv")?)?;
    w.write_record(["t", "h0", "h1"])?;
    for (t, h) in hazards.times.iter().zip(&hazards.h) {
        w.write_record([fmt(*t), fmt(h[0]), fmt(h[1])])?;
    }
    w.flush()?;
    if let Some(s) = &smoothed {
        s.write_csv(std::fs::File::create(out_file(&a.out, "smoothed_hazards.csv")?)?)?;
    }
    write_json(&out_file(&a.out, "fit.json")?, &payload)?;
    write_json(&out_file(&a.out, "manifest.json")?, &manifest.to_json())
}

pub fn estimands(a: &EstimandsArgs) -> CliResult<()> {
    let mut manifest = Manifest::start("estimands", a, None);
    let fit = read_fit_dir(&a.fitdir)?;
    for name in ["fit.json", "curves.csv", "profile.csv"] {
        manifest.input(&a.fitdir.join(name))?;
    }
    let hazard_fit = match &a.hazard_fit {
        Some(dir) => {
            let h = read_fit_dir(dir)?;
            if h.kind != ConstraintKind::Hazard {
                return Err(input_error(format!(
                    "{} is not a hazard-constrained fit",
                    dir.display()
                )));
            }
            if h.grid != fit.grid {
                return Err(input_error("the hazard fit was computed on different data"));
            }
            manifest.input(&dir.join("fit.json"))?;
            Some(h)
        }
        None => None,
    };
    let source = match a.hazard_source {
        Source::Survival => HazardSource::Survival,
        Source::Hazard => HazardSource::Hazard,
    };
    if source == HazardSource::Hazard && hazard_fit.is_none() {
        return Err(input_error("--hazard-source hazard needs --hazard-fit"));
    }
    let spec = EstimandSpec {
        tau: a.tau,
        milestones: a.milestones.clone(),
        conditional_times: a.conditional_times.clone(),
        hazard_source: source,
    };
    let report = estimand_report(&fit, hazard_fit.as_ref(), &spec)?;
    manifest.resolved("tau", num(report.tau));
    let dir = a.out.as_deref().unwrap_or(&a.fitdir);
    write_json(&out_file(dir, "estimands.json")?, &report.to_json())?;
    write_json(&out_file(dir, "estimands.manifest.json")?, &manifest.to_json())
}

pub fn bootstrap(a: &BootstrapArgs) -> CliResult<()> {
    let mut manifest = Manifest::start("bootstrap", a, Some(a.seed));
    manifest.input(&a.input)?;
    let opts = solver_opts(&a.solver)?;
    let estimands = a
        .estimands
        .iter()
        .map(|s| parse_estimand(s))
        .collect::<CliResult<Vec<_>>>()?;
    let cohort = load_cohort(&a.input, a.bin_width)?;
    let mut results = Vec::new();
    for e in &estimands {
        let r = stratified_bootstrap(
            &cohort,
            &e.to_string(),
            |c| e.evaluate(&fit_with(c, a.constraint, &opts)?),
            a.b,
            a.level,
            a.seed,
        )?;
        results.push(r);
    }
    let mut w = csv::Writer::from_path(out_file(&a.out, "replicates.csv")?)?;
    w.write_record(["estimand", "value"])?;
    for r in &results {
        for &v in &r.replicates {
            w.write_record([r.estimand.clone(), fmt(v)])?;
        }
    }
    w.flush()?;
    let payload: Vec<Value> = results.iter().map(|r| r.to_json()).collect();
    write_json(&out_file(&a.out, "bootstrap.json")?, &Value::Array(payload))?;
    write_json(&out_file(&a.out, "manifest.json")?, &manifest.to_json())
}

pub fn test(a: &TestArgs) -> CliResult<()> {
    let mut manifest = Manifest::start("test", a, Some(a.seed));
    manifest.input(&a.input)?;
    let opts = solver_opts(&a.solver)?;
    let payload = match a.test_type {
        TestType::Theta | TestType::Surv => {
            let phi = parse_estimand(a.phi.as_deref().ok_or_else(|| input_error("--phi is required"))?)?;
            let (kind, bound) = match a.test_type {
                TestType::Theta => (
                    JointKind::Theta,
                    a.theta_star.ok_or_else(|| input_error("--theta-star is required"))?,
                ),
                _ => (
                    JointKind::Surv,
                    a.p_star.ok_or_else(|| input_error("--p-star is required"))?,
                ),
            };
            let cohort = load_cohort(&a.input, a.bin_width)?;
            let r = joint_test(
                &cohort,
                |f| phi.evaluate(f),
                kind,
                a.phi_star,
                bound,
                a.b,
                a.level,
                a.seed,
                &opts,
            )?;
            let mut v = r.to_json();
            v["phi"] = json!(phi.to_string());
            v
        }
        TestType::Perm => {
            let stats = a
                .statistics
                .iter()
                .map(|s| parse_estimand(s))
                .collect::<CliResult<Vec<_>>>()?;
            if a.directions.len() != stats.len() {
                return Err(input_error(format!(
                    "{} statistics but {} directions; give one --direction per --statistic",
                    stats.len(),
                    a.directions.len()
                )));
            }
            let dirs: Vec<Direction> = a
                .directions
                .iter()
                .map(|d| match d {
                    DirectionArg::Greater => Direction::Greater,
                    DirectionArg::Less => Direction::Less,
                    DirectionArg::Both => Direction::Both,
                })
                .collect();
            let cohort = load_cohort(&a.input, a.bin_width)?;
            let statistic = |c: &Cohort<f64>| {
                let f = scc_fit(c, &opts)?;
                stats
                    .iter()
                    .map(|s| s.evaluate(&f))
                    .collect::<scc_core::Result<Vec<f64>>>()
            };
            let r = permutation_test(&cohort, statistic, &dirs, a.b, a.seed)?;
            json!({
                "type": "perm",
                "statistics": stats.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
                "directions": a.directions,
                "observed": r.observed.iter().copied().map(num).collect::<Vec<_>>(),
                "p_value": r.p_value,
                "extreme": r.extreme,
                "B": r.b,
                "seed": r.seed,
                "failures": r.failures,
            })
        }
    };
    write_json(&out_file(&a.out, "test.json")?, &payload)?;
    write_json(&out_file(&a.out, "manifest.json")?, &manifest.to_json())
}

pub fn simulate(a: &SimulateArgs) -> CliResult<()> {
    let mut manifest = Manifest::start("simulate", a, Some(a.seed));
    manifest.input(&a.config)?;
    let opts = solver_opts(&a.solver)?;
    let mut cfg = StudyConfig::from_path(&a.config)?;
    cfg.seed = a.seed;
    if let Some(r) = a.reps {
        cfg.reps = r;
    }
    if !a.ns.is_empty() {
        cfg.ns = a.ns.clone();
    }
    if !a.scenarios.is_empty() {
        if let Some(missing) = a
            .scenarios
            .iter()
            .find(|s| !cfg.scenarios.iter().any(|c| &c.label == *s))
        {
            return Err(input_error(format!("no scenario labelled `{missing}`")));
        }
        let labels: Vec<&str> = a.scenarios.iter().map(String::as_str).collect();
        cfg = cfg.select(&labels);
    }
    let specs = cfg.specs()?;
    let design = cfg.design();
    let table = run_mse_study(&specs, &cfg.ns, cfg.reps, cfg.seed, &design, &opts)?;
    manifest.resolved("reps", json!(cfg.reps));
    manifest.resolved("ns", json!(cfg.ns));
    manifest.resolved("scenarios", json!(specs.iter().map(|s| &s.label).collect::<Vec<_>>()));

    table.write_csv(std::fs::File::create(out_file(&a.out, "mse.csv")?)?)?;
    table.write_log(&specs, std::fs::File::create(out_file(&a.out, "replicates.csv")?)?)?;
    let mut w = csv::Writer::from_path(out_file(&a.out, "truth.csv")?)?;
    w.write_record(["scenario", "parameter", "value"])?;
    for s in &specs {
        let truth = true_parameters(s, &design);
        for p in Parameter::ALL {
            w.write_record([
                s.label.clone(),
                p.name(&design),
                truth[&p].map_or_else(|| "NA".into(), fmt),
            ])?;
        }
    }
    w.flush()?;
    write_json(&out_file(&a.out, "manifest.json")?, &manifest.to_json())
}
