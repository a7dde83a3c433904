//! Dispatch of a [`RunConfig`] to the matching computation and assembly of
//! its output bundle.

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Mode, RunConfig};
use crate::discretization::{Dim, Grid};
use crate::error::{Error, Result};
use crate::experiments::{
    self, find_coexistence, run_simulation, semitrivial_stability, semitrivial_states,
    sweep_alpha2, verify_lemmas, SweepResult,
};
use crate::model::build_effective_params;
use crate::output::{add_trajectory, csv, Bundle};
use crate::scalar::{max_value, min_value};
use crate::spectral::{invader_potential, principal_eigenpair, SemiTrivial};
use crate::steady::{lemma_l22_integral, SteadyOptions, SteadyState};
use crate::timestepper::CompetitionSystem;

/// Files of a finished run and, if the run completed but must be reported
/// as failed (anomaly gate, failed checks), the error to exit with.
#[derive(Debug)]
pub struct RunOutput {
    pub bundle: Bundle,
    pub failure: Option<Error>,
}

/// Machine-readable error record.
pub fn error_record(e: &Error) -> Value {
    json!({
        "error": e.kind(),
        "message": e.to_string(),
        "exit_code": e.exit_code(),
    })
}

/// Runs `config` on a pool of `config.workers` threads (the global pool if unset).
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    match config.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {w} workers: {e}")))?
            .install(|| dispatch(config)),
        None => dispatch(config),
    }
}

fn dispatch(config: &RunConfig) -> Result<RunOutput> {
    let mut bundle = Bundle::new();
    bundle.insert_json("config.echo.json", &config.echo())?;
    let failure = match config.mode {
        Mode::Simulate | Mode::Figure => simulate(config, &mut bundle)?,
        Mode::Steady => steady(config, &mut bundle)?,
        Mode::Eigen => eigen(config, &mut bundle)?,
        Mode::Sweep => sweep(config, &mut bundle)?,
        Mode::Verify => verify(config, &mut bundle)?,
    };
    Ok(RunOutput { bundle, failure })
}

fn steady_opts(config: &RunConfig) -> SteadyOptions<f64> {
    SteadyOptions {
        tol: config.tol_steady,
        ..SteadyOptions::default()
    }
}

fn stability_json(system: &CompetitionSystem<f64>, config: &RunConfig) -> Value {
    let result = semitrivial_states(system, &steady_opts(config))
        .and_then(|(u, v)| semitrivial_stability(system, &u, &v, config.tol_eigen));
    match result {
        Ok(s) => json!(s),
        Err(e) => error_record(&e),
    }
}

fn simulate(config: &RunConfig, bundle: &mut Bundle) -> Result<Option<Error>> {
    let run = run_simulation(&config.simulation_setup())?;
    add_trajectory(bundle, &run.grid, &run.trajectory);
    let mut report = json!({
        "mode": config.mode,
        "outcome": run.outcome,
        "regime": run.regime,
        "run": {
            "dt": run.trajectory.dt,
            "steps": run.trajectory.steps,
            "samples": run.trajectory.len(),
            "clamps": run.trajectory.clamps,
            "truncated": run.trajectory.truncated,
        },
    });
    // linear stability of the single-species states is reported for 1D runs
    report["stability"] = match run.grid.dim() {
        Dim::One => stability_json(&run.system, config),
        Dim::Two => Value::Null,
    };
    if let Some(id) = &config.figure {
        let preset = experiments::preset(id)?;
        report["figure"] = json!({
            "id": preset.id,
            "caption": preset.caption,
            "expected": preset.expected,
            "met": preset.expected.is_met(&run.outcome),
        });
    }
    bundle.insert_json("report.json", &report)?;
    Ok(None)
}

#[derive(Serialize)]
struct SteadySummary {
    residual: f64,
    method: String,
    iterations: usize,
    min: f64,
    max: f64,
    mass: f64,
}

fn summary(s: &SteadyState<f64>, grid: &Grid<f64>) -> SteadySummary {
    SteadySummary {
        residual: s.residual_norm,
        method: format!("{:?}", s.method),
        iterations: s.iterations,
        min: min_value(&s.u),
        max: max_value(&s.u),
        mass: grid.integrate(&s.u),
    }
}

/// Columns of cell coordinates followed by the given fields.
fn field_csv(grid: &Grid<f64>, names: &[&str], fields: &[&[f64]]) -> String {
    let mut header: Vec<&str> = match grid.dim() {
        Dim::One => vec!["x"],
        Dim::Two => vec!["x", "y"],
    };
    header.extend_from_slice(names);
    csv(
        &header,
        (0..grid.len()).map(|i| {
            let (x, y) = grid.coords(i);
            let mut row = match grid.dim() {
                Dim::One => vec![x],
                Dim::Two => vec![x, y],
            };
            row.extend(fields.iter().map(|f| f[i]));
            row
        }),
    )
}

fn system(config: &RunConfig) -> Result<(Grid<f64>, CompetitionSystem<f64>)> {
    let grid = config.grid()?;
    let system = CompetitionSystem::from_params(&config.params, &grid, config.advection_2d)?;
    Ok((grid, system))
}

fn steady(config: &RunConfig, bundle: &mut Bundle) -> Result<Option<Error>> {
    let (grid, system) = system(config)?;
    let (u_hat, v_hat) = semitrivial_states(&system, &steady_opts(config))?;
    let mut integrals = Vec::new();
    for (mu, s) in [(config.params.mu1, &u_hat), (config.params.mu2, &v_hat)] {
        let eff = build_effective_params(&config.params, mu, &grid)?;
        integrals.push(lemma_l22_integral(&s.u, &eff, &grid)?);
    }
    bundle.insert_text(
        "steady.csv",
        field_csv(&grid, &["u_hat", "v_hat"], &[&u_hat.u, &v_hat.u]),
    );
    let pair = find_coexistence(&system, None, config.tol_steady)?;
    let coexistence = match &pair {
        Some(p) => {
            bundle.insert_text(
                "coexistence.csv",
                field_csv(&grid, &["u_star", "v_star"], &[&p.u, &p.v]),
            );
            json!({
                "found": true,
                "residual": p.residual_norm,
                "iterations": p.iterations,
                "near_singular": p.near_singular,
                "norm_u": max_value(&p.u),
                "norm_v": max_value(&p.v),
            })
        }
        None => json!({"found": false}),
    };
    let report = json!({
        "mode": config.mode,
        "u_hat": summary(&u_hat, &grid),
        "v_hat": summary(&v_hat, &grid),
        "capacity_integral_u": integrals[0],
        "capacity_integral_v": integrals[1],
        "coexistence": coexistence,
    });
    bundle.insert_json("report.json", &report)?;
    Ok(None)
}

fn eigen(config: &RunConfig, bundle: &mut Bundle) -> Result<Option<Error>> {
    let (grid, system) = system(config)?;
    let (u_hat, v_hat) = semitrivial_states(&system, &steady_opts(config))?;
    let pk = invader_potential(&system, SemiTrivial::UOnly, &u_hat.u);
    let pt = invader_potential(&system, SemiTrivial::VOnly, &v_hat.u);
    let kappa = principal_eigenpair(system.op_v(), &pk, config.tol_eigen)?;
    let tau = principal_eigenpair(system.op_u(), &pt, config.tol_eigen)?;
    let stab = semitrivial_stability(&system, &u_hat, &v_hat, config.tol_eigen)?;
    bundle.insert_text(
        "eigen.csv",
        field_csv(&grid, &["phi_kappa", "phi_tau"], &[&kappa.phi, &tau.phi]),
    );
    let entry = |e: &crate::spectral::EigenReport<f64>| {
        json!({
            "lambda1": e.lambda1,
            "abscissa": e.abscissa,
            "iterations": e.iterations,
            "residual": e.residual,
        })
    };
    let report = json!({
        "mode": config.mode,
        "kappa1": entry(&kappa),
        "tau1": entry(&tau),
        "stability": stab,
    });
    bundle.insert_json("report.json", &report)?;
    Ok(None)
}

fn sweep_csv(result: &SweepResult) -> String {
    let mut out = String::from("alpha2,kappa1,tau1,coexistence,verdict,simulated\n");
    for p in &result.points {
        out.push_str(&format!(
            "{:?},{:?},{:?},{},{:?},{}\n",
            p.alpha2, p.kappa1, p.tau1, p.coexistence as u8, p.verdict, p.simulated.verdict
        ));
    }
    out
}

fn sweep(config: &RunConfig, bundle: &mut Bundle) -> Result<Option<Error>> {
    let result = sweep_alpha2(&config.params, config.n, &config.sweep_settings())?;
    bundle.insert_text("sweep.csv", sweep_csv(&result));
    bundle.insert_json(
        "report.json",
        &json!({"mode": config.mode, "sweep": result}),
    )?;
    let failure = (!result.anomalies.is_empty()).then(|| {
        Error::Anomaly(format!(
            "both single-species states stable with a positive coexistence state at alpha2 = {:?}",
            result.anomalies
        ))
    });
    Ok(failure)
}

fn verify(config: &RunConfig, bundle: &mut Bundle) -> Result<Option<Error>> {
    let report = verify_lemmas(&config.params, config.n, &config.verify_settings())?;
    bundle.insert_json(
        "report.json",
        &json!({"mode": config.mode, "lemmas": report, "passed": report.passed()}),
    )?;
    let failed: Vec<&str> = report
        .checks
        .iter()
        .filter(|c| c.status == experiments::CheckStatus::Fail)
        .map(|c| c.name.as_str())
        .collect();
    Ok((!failed.is_empty()).then(|| Error::ChecksFailed(failed.join(", "))))
}
