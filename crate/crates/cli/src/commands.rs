//! Subcommand implementations. Each returns an exit status and a JSON summary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::Path;

use cyflow::experiments::{self, C0Row, SweepRow};
use cyflow::fields::{snapshot, ScalarField};
use cyflow::flow::{self, ConvergenceStop, CsvSink, FlowState, Observer, RunOutcome, RunSummary, SeriesRow, SnapshotSink};
use cyflow::geometry::Background;
use cyflow::variational;
use cyflow::{Error, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DIVERGENCE: u8 = 3;
pub const EXIT_ASSERTION: u8 = 4;

pub struct Outcome {
    pub exit: u8,
    pub summary: Value,
}

/// Exit status for an error that aborted a command.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Divergence { .. } | Error::StepTooSmall { .. } | Error::NonFinite(_) | Error::NoConvergence { .. } => {
            EXIT_DIVERGENCE
        }
        Error::CertificateFailed { .. }
        | Error::LowerBoundViolation { .. }
        | Error::NotUnstable { .. }
        | Error::EmptyReport { .. } => EXIT_ASSERTION,
        _ => EXIT_CONFIG,
    }
}

pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub dir: &'a Path,
    pub verbose: bool,
}

/// Prints each sampled row to stderr.
struct Progress;

impl Observer for Progress {
    fn observe(&mut self, row: &SeriesRow, _state: &FlowState) -> Result<ControlFlow<()>> {
        eprintln!(
            "t={:.6e} mass-1={:+.3e} S=[{:.6e}, {:.6e}] dt={:.3e}",
            row.t,
            row.mass - 1.0,
            row.s_min,
            row.s_max,
            row.dt
        );
        Ok(ControlFlow::Continue(()))
    }
}

fn setup(ctx: &Context) -> Result<(Background, ScalarField)> {
    let bg = ctx.cfg.build_background()?;
    let f0 = ctx.cfg.build_initial(&bg)?;
    Ok((bg, f0))
}

fn csv_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_table<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(csv_file(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn close(sink: CsvSink<BufWriter<File>>) -> Result<()> {
    sink.finish()?.flush()?;
    Ok(())
}

fn max_dev(rows: &[SeriesRow], get: impl Fn(&SeriesRow) -> f64, target: f64) -> f64 {
    rows.iter().map(|r| (get(r) - target).abs()).fold(0.0, f64::max)
}

fn run_json(summary: &RunSummary, bg: &Background) -> Value {
    let rows = &summary.rows;
    let energy_monotone = bg.is_balanced()
        && rows
            .windows(2)
            .all(|w| matches!((w[0].energy, w[1].energy), (Some(a), Some(b)) if b <= a + 1e-10));
    json!({
        "outcome": summary.outcome,
        "steps": summary.steps,
        "t_final": summary.final_state.t(),
        "lambda": bg.lambda(),
        "balanced": bg.is_balanced(),
        "rows": rows.len(),
        "max_mass_drift": max_dev(rows, |r| r.mass, 1.0),
        "max_weighted_scalar_drift": max_dev(rows, |r| r.weighted_scalar, bg.lambda()),
        "final_curvature_deviation": summary.final_state.curvature_deviation(bg.lambda()),
        "peak_scalar": summary.peak_scalar,
        "min_dt": summary.min_dt,
        "max_dt": summary.max_dt,
        "energy_monotone": energy_monotone,
        "final_energy": rows.last().and_then(|r| r.energy),
    })
}

fn divergence_exit(summary: &RunSummary) -> u8 {
    match summary.outcome {
        RunOutcome::Diverged { .. } => EXIT_DIVERGENCE,
        _ => EXIT_OK,
    }
}

pub fn flow(ctx: &Context) -> Result<Outcome> {
    let (bg, f0) = setup(ctx)?;
    let state = FlowState::initial(f0, &bg)?;
    let s0 = state.scalar().clone();
    let mut csv = CsvSink::new(csv_file(&ctx.dir.join("series.csv"))?)?;
    let mut snaps = SnapshotSink::new(ctx.dir.join("snapshots"))?;
    let mut progress = Progress;
    let mut observers: Vec<&mut dyn Observer> = vec![&mut csv];
    if ctx.cfg.params.write_snapshots {
        observers.push(&mut snaps);
    }
    if ctx.verbose {
        observers.push(&mut progress);
    }
    let summary = flow::run(state, &bg, &ctx.cfg.stepper, &mut observers)?;
    drop(observers);
    close(csv)?;
    snapshot::save(ctx.dir.join("final.cyf"), summary.final_state.f())?;

    let lower_bound = match flow::lower_bound_check(&summary.rows, &s0, bg.lambda()) {
        Ok(report) => json!({ "holds": true, "s0_min": report.s0_min, "margin": report.margin() }),
        Err(Error::LowerBoundViolation { violations }) => json!({ "holds": false, "violations": violations }),
        Err(e) => return Err(e),
    };
    let mut out = run_json(&summary, &bg);
    out["lower_bound"] = lower_bound;
    out["snapshots"] = json!(snaps.count());
    Ok(Outcome {
        exit: divergence_exit(&summary),
        summary: out,
    })
}

pub fn steady(ctx: &Context) -> Result<Outcome> {
    let (bg, f0) = setup(ctx)?;
    let state = FlowState::initial(f0, &bg)?;
    let mut csv = CsvSink::new(csv_file(&ctx.dir.join("series.csv"))?)?;
    let mut stop = ConvergenceStop::new(bg.lambda(), ctx.cfg.params.tol);
    let mut progress = Progress;
    let mut observers: Vec<&mut dyn Observer> = vec![&mut csv, &mut stop];
    if ctx.verbose {
        observers.push(&mut progress);
    }
    let summary = flow::run(state, &bg, &ctx.cfg.stepper, &mut observers)?;
    drop(observers);
    close(csv)?;
    snapshot::save(ctx.dir.join("final.cyf"), summary.final_state.f())?;

    let mut out = run_json(&summary, &bg);
    out["tol"] = json!(ctx.cfg.params.tol);
    out["converged_at"] = json!(stop.converged_at);
    out["timed_out"] = json!(stop.converged_at.is_none());
    let exit = match (divergence_exit(&summary), stop.converged_at) {
        (EXIT_OK, Some(_)) => EXIT_OK,
        (EXIT_OK, None) => EXIT_ASSERTION,
        (code, _) => code,
    };
    Ok(Outcome { exit, summary: out })
}

pub fn unbounded(ctx: &Context) -> Result<Outcome> {
    let bg = ctx.cfg.build_background()?;
    let radii = &ctx.cfg.params.radii;
    if radii.is_empty() {
        return Err(Error::Config("params.radii must list at least one radius".into()));
    }
    let rows: Vec<SweepRow> = experiments::unboundedness_sweep(radii, &bg)?;
    write_table(&ctx.dir.join("sweep.csv"), &rows)?;
    let energies: Vec<f64> = rows
        .iter()
        .map(|r| r.energy_radial.or(r.energy_grid).unwrap_or(f64::NAN))
        .collect();
    let mut sorted: Vec<(f64, f64)> = radii.iter().copied().zip(energies).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let decreasing = sorted.windows(2).all(|w| w[1].1 < w[0].1);
    Ok(Outcome {
        exit: EXIT_OK,
        summary: json!({
            "lambda": bg.lambda(),
            "energy_decreasing_as_r_shrinks": decreasing,
            "rows": rows,
        }),
    })
}

pub fn stability(ctx: &Context) -> Result<Outcome> {
    let (bg, f0) = setup(ctx)?;
    let saddle_cfg = ctx.cfg.saddle_config();
    let report = variational::hessian_min_eigen(&f0, &bg, &saddle_cfg.eigen)?;
    snapshot::save(ctx.dir.join("eigenvector.cyf"), &report.eigenvector)?;
    let mut out = json!({
        "lambda": bg.lambda(),
        "lambda_1": bg.grid().first_eigenvalue(),
        "hessian": report.summary(),
    });
    if ctx.cfg.params.saddle {
        let saddle = experiments::saddle_experiment(&bg, &saddle_cfg)?;
        write_table(&ctx.dir.join("saddle.csv"), &saddle.rows)?;
        out["saddle"] = json!({
            "amplitude": saddle.amplitude,
            "strictly_decreasing": saddle.strictly_decreasing,
            "reached_target": saddle.reached_target,
            "distance_grew": saddle.distance_grew,
            "max_step_change": saddle.max_step_change,
            "steps": saddle.steps,
            "outcome": saddle.outcome,
        });
    }
    Ok(Outcome {
        exit: EXIT_OK,
        summary: out,
    })
}

pub fn c0cert(ctx: &Context) -> Result<Outcome> {
    let (bg, f0) = setup(ctx)?;
    let mut csv = CsvSink::new(csv_file(&ctx.dir.join("series.csv"))?)?;
    let mut progress = Progress;
    let mut observers: Vec<&mut dyn Observer> = vec![&mut csv];
    if ctx.verbose {
        observers.push(&mut progress);
    }
    let (summary, cert) = experiments::c0_trajectory(&f0, &bg, &ctx.cfg.stepper, &mut observers)?;
    drop(observers);
    close(csv)?;
    let rows: &[C0Row] = &cert.rows;
    write_table(&ctx.dir.join("c0.csv"), rows)?;

    let verdict = cert.verify();
    let mut out = run_json(&summary, &bg);
    out["k"] = json!(cert.k);
    out["max_reconstruction_error"] = json!(cert.max_reconstruction_error());
    out["max_poisson_residual"] = json!(cert.max_poisson_residual());
    out["certificate"] = match &verdict {
        Ok(()) => json!({ "passed": true }),
        Err(e) => json!({ "passed": false, "kind": e.kind(), "message": e.to_string() }),
    };
    let exit = match (divergence_exit(&summary), verdict) {
        (EXIT_OK, Ok(())) => EXIT_OK,
        (EXIT_OK, Err(_)) => EXIT_ASSERTION,
        (code, _) => code,
    };
    Ok(Outcome { exit, summary: out })
}
