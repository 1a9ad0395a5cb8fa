//! Time integration of `∂f/∂t = (n/2)(λ - S)` and per-step diagnostics.

use std::ops::ControlFlow;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{self, snapshot, ScalarField};
use crate::geometry::{self, Background};
use crate::variational;

/// Smallest admissible time step.
pub const MIN_DT: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ExplicitRk4,
    SemiImplicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepperConfig {
    pub scheme: Scheme,
    /// Requested step; explicit steps are additionally capped by the CFL rule.
    pub dt_init: f64,
    pub cfl_safety: f64,
    pub renormalize_mass: bool,
    pub t_end: f64,
    pub snapshot_every: f64,
    /// Divergence is declared when `max |2f/n|` exceeds this.
    pub divergence_threshold: f64,
    /// Apply the 2/3-rule filter to the curvature before forming the velocity.
    pub dealias: bool,
}

impl Default for StepperConfig {
    fn default() -> Self {
        StepperConfig {
            scheme: Scheme::ExplicitRk4,
            dt_init: 1.0,
            cfl_safety: 0.5,
            renormalize_mass: false,
            t_end: 1.0,
            snapshot_every: 0.01,
            divergence_threshold: geometry::EXPONENT_LIMIT,
            dealias: false,
        }
    }
}

impl StepperConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.dt_init > 0.0) {
            return bad("dt_init must be positive");
        }
        if !(self.t_end > 0.0) {
            return bad("t_end must be positive");
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return bad("cfl_safety must lie in (0, 1]");
        }
        if !(self.snapshot_every > 0.0) {
            return bad("snapshot_every must be positive");
        }
        if !(self.divergence_threshold > 0.0) {
            return bad("divergence_threshold must be positive");
        }
        Ok(())
    }
}

/// Conformal factor at time `t` with its cached curvature and integrals.
#[derive(Clone, Debug)]
pub struct FlowState {
    f: ScalarField,
    t: f64,
    s: ScalarField,
    /// `exp(-2f/n)` pointwise.
    shrink: Vec<f64>,
    mass: f64,
    weighted_scalar: f64,
}

impl FlowState {
    pub fn new(f: ScalarField, t: f64, bg: &Background) -> Result<Self> {
        f.ensure_finite("conformal factor")?;
        let (s, shrink) = geometry::chern_scalar_parts(&f, bg).map_err(|e| with_time(e, t))?;
        let cell = f.grid().cell_volume();
        let (mut mass, mut weighted) = (0.0, 0.0);
        for (&q, &sv) in shrink.iter().zip(s.values()) {
            let e = 1.0 / q;
            mass += e;
            weighted += sv * e;
        }
        Ok(FlowState {
            f,
            t,
            s,
            shrink,
            mass: mass * cell,
            weighted_scalar: weighted * cell,
        })
    }

    /// Initial state; `f0` must satisfy the unit-mass normalization.
    pub fn initial(f0: ScalarField, bg: &Background) -> Result<Self> {
        let state = Self::new(f0, 0.0, bg)?;
        if (state.mass - 1.0).abs() > 1e-12 {
            return Err(Error::Precondition(format!(
                "initial datum is not normalized: mass - 1 = {:e}",
                state.mass - 1.0
            )));
        }
        Ok(state)
    }

    pub fn f(&self) -> &ScalarField {
        &self.f
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    /// Chern scalar curvature of the current conformal metric.
    pub fn scalar(&self) -> &ScalarField {
        &self.s
    }

    /// `exp(-2f/n)` at each grid point.
    pub fn shrink_factor(&self) -> &[f64] {
        &self.shrink
    }

    /// `∫ exp(2f/n) dμ`
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// `∫ S exp(2f/n) dμ`
    pub fn weighted_scalar(&self) -> f64 {
        self.weighted_scalar
    }

    /// `‖S - λ‖_∞`
    pub fn curvature_deviation(&self, lambda: f64) -> f64 {
        self.s.values().iter().fold(0.0, |m, s| m.max((s - lambda).abs()))
    }
}

fn with_time(err: Error, t: f64) -> Error {
    match err {
        Error::Divergence { max_exponent, .. } => Error::Divergence { t, max_exponent },
        other => other,
    }
}

/// Flow velocity `(n/2)(λ - S)` for the cached curvature of `state`.
pub fn rhs(state: &FlowState, bg: &Background) -> ScalarField {
    velocity_from_scalar(&state.s, bg)
}

fn velocity_from_scalar(s: &ScalarField, bg: &Background) -> ScalarField {
    let half_n = bg.complex_dim() as f64 / 2.0;
    let lambda = bg.lambda();
    s.map(|v| half_n * (lambda - v))
}

fn velocity(f: &ScalarField, bg: &Background, dealias: bool) -> Result<ScalarField> {
    let mut s = geometry::chern_scalar(f, bg)?;
    if dealias {
        s = fields::dealias(&s);
    }
    Ok(velocity_from_scalar(&s, bg))
}

/// Largest explicit step allowed by the diffusion CFL rule:
/// `safety · h_min² / (2 · 2n · max D)` with `D = (n/2) exp(-2f/n)`.
pub fn stable_dt(f: &ScalarField, cfl_safety: f64) -> f64 {
    let grid = f.grid();
    let n = grid.complex_dim() as f64;
    let max_d = (n / 2.0) * (-2.0 * f.min() / n).exp();
    let h = grid.min_spacing();
    cfl_safety * h * h / (2.0 * grid.real_dim() as f64 * max_d)
}

/// Step size the configured scheme would take from `f`.
pub fn choose_dt(f: &ScalarField, cfg: &StepperConfig) -> f64 {
    match cfg.scheme {
        Scheme::ExplicitRk4 => cfg.dt_init.min(stable_dt(f, cfg.cfl_safety)),
        Scheme::SemiImplicit => cfg.dt_init,
    }
}

/// Degree-7 Taylor polynomial of `exp`; relative error below `3e-21` for
/// `|x| ≤ 1e-2`.
fn exp_taylor(x: f64) -> f64 {
    let p = 1.0 + x * (1.0 / 7.0);
    let p = 1.0 + x * (1.0 / 6.0) * p;
    let p = 1.0 + x * (1.0 / 5.0) * p;
    let p = 1.0 + x * (1.0 / 4.0) * p;
    let p = 1.0 + x * (1.0 / 3.0) * p;
    let p = 1.0 + x * 0.5 * p;
    1.0 + x * p
}

fn shifted(y: &ScalarField, h: f64, k: &ScalarField) -> ScalarField {
    y.zip_map(k, |a, b| a + h * b)
}

/// Classical RK4 for the flow together with auxiliary fields whose rates
/// depend on the auxiliary fields and on `exp(-2f/n)`.
///
/// Stage values of `exp(-2f/n)` are obtained from the factor at the step
/// start times `exp(-2 h k_f / n)`, so only the caller's new state needs a
/// full exponential.
pub(crate) fn rk4_flow<A>(
    state: &FlowState,
    bg: &Background,
    dealias: bool,
    dt: f64,
    aux: &[ScalarField],
    mut aux_rate: A,
) -> Result<(ScalarField, Vec<ScalarField>)>
where
    A: FnMut(&[f64], &[ScalarField]) -> Vec<ScalarField>,
{
    let n = bg.complex_dim() as f64;
    let half_n = n / 2.0;
    let lambda = bg.lambda();
    let velocity = |s: &ScalarField| {
        if dealias {
            fields::dealias(s).map(|v| half_n * (lambda - v))
        } else {
            s.map(|v| half_n * (lambda - v))
        }
    };
    let f0 = &state.f;
    let q0 = &state.shrink;
    let kf1 = velocity(&state.s);
    let ka1 = aux_rate(q0, aux);
    let mut stage = |h: f64, kf: &ScalarField, ka: &[ScalarField]| -> Result<(ScalarField, Vec<ScalarField>)> {
        let f = shifted(f0, h, kf);
        let scale = -2.0 * h / n;
        let q: Vec<f64> = if kf.max_abs() * scale.abs() <= 1e-2 {
            q0.iter().zip(kf.values()).map(|(&q, &k)| q * exp_taylor(scale * k)).collect()
        } else {
            q0.iter().zip(kf.values()).map(|(&q, &k)| q * (scale * k).exp()).collect()
        };
        let s = geometry::chern_scalar_with_shrink(&f, &q, bg)?;
        let y: Vec<ScalarField> = aux.iter().zip(ka).map(|(a, k)| shifted(a, h, k)).collect();
        Ok((velocity(&s), aux_rate(&q, &y)))
    };
    let (kf2, ka2) = stage(dt / 2.0, &kf1, &ka1)?;
    let (kf3, ka3) = stage(dt / 2.0, &kf2, &ka2)?;
    let (kf4, ka4) = stage(dt, &kf3, &ka3)?;
    let combine = |y: &ScalarField, a: &ScalarField, b: &ScalarField, c: &ScalarField, d: &ScalarField| {
        let mut out = y.clone();
        let (a, b, c, d) = (a.values(), b.values(), c.values(), d.values());
        for (j, v) in out.values_mut().iter_mut().enumerate() {
            *v += dt / 6.0 * (a[j] + 2.0 * b[j] + 2.0 * c[j] + d[j]);
        }
        out
    };
    let f = combine(f0, &kf1, &kf2, &kf3, &kf4);
    let rest = (0..aux.len())
        .map(|i| combine(&aux[i], &ka1[i], &ka2[i], &ka3[i], &ka4[i]))
        .collect();
    Ok((f, rest))
}

/// First-order IMEX Euler: `(1 - dt c_i Δ) y_i' = y_i + dt (R_i(y) - c_i Δ y_i)`.
pub(crate) fn imex_euler_system<F>(
    y: &[ScalarField],
    dt: f64,
    stiffness: &[f64],
    mut rhs: F,
) -> Result<Vec<ScalarField>>
where
    F: FnMut(&[ScalarField]) -> Result<Vec<ScalarField>>,
{
    let r = rhs(y)?;
    Ok(y.iter()
        .zip(r)
        .zip(stiffness)
        .map(|((yi, ri), &c)| {
            let mut explicit = yi.clone();
            explicit.axpy(dt, &ri);
            if c == 0.0 {
                return explicit;
            }
            explicit.axpy(-dt * c, &fields::laplacian(yi));
            fields::solve_helmholtz(&explicit, dt * c)
        })
        .collect())
}

/// Frozen diffusion coefficient for the implicit part: `max_x (n/2) exp(-2f/n)`.
pub(crate) fn implicit_coefficient(f: &ScalarField) -> f64 {
    let n = f.grid().complex_dim() as f64;
    (n / 2.0) * (-2.0 * f.min() / n).exp()
}

/// Advances `state` by exactly `dt` with the configured scheme.
pub fn step_by(state: &FlowState, bg: &Background, cfg: &StepperConfig, dt: f64) -> Result<FlowState> {
    if !(dt >= MIN_DT) {
        return Err(Error::StepTooSmall { t: state.t, dt });
    }
    let next = match cfg.scheme {
        Scheme::ExplicitRk4 => rk4_flow(state, bg, cfg.dealias, dt, &[], |_, _| Vec::new()).map(|(f, _)| f),
        Scheme::SemiImplicit => {
            let y = std::slice::from_ref(&state.f);
            let field_rhs = |y: &[ScalarField]| velocity(&y[0], bg, cfg.dealias).map(|v| vec![v]);
            let c = implicit_coefficient(&state.f);
            imex_euler_system(y, dt, &[c], field_rhs).map(|mut v| v.remove(0))
        }
    }
    .map_err(|e| with_time(e, state.t))?;
    let mut f = next;
    check_divergence(&f, state.t + dt, cfg)?;
    if cfg.renormalize_mass {
        f = geometry::normalize_conformal(&f)?;
    }
    FlowState::new(f, state.t + dt, bg)
}

/// Flags `max |2f/n|` above the configured threshold or non-finite values.
pub(crate) fn check_divergence(f: &ScalarField, t: f64, cfg: &StepperConfig) -> Result<()> {
    let n = f.grid().complex_dim() as f64;
    let max_exponent = 2.0 * f.max_abs() / n;
    if max_exponent > cfg.divergence_threshold || !f.is_finite() {
        return Err(Error::Divergence { t, max_exponent });
    }
    Ok(())
}

/// Something that can advance a flow state, possibly carrying extra fields
/// along with it.
pub trait Advance {
    fn advance(&mut self, state: &FlowState, bg: &Background, cfg: &StepperConfig, dt: f64) -> Result<FlowState>;

    /// Called for every sampled state, before observers see it.
    fn sampled(&mut self, _state: &FlowState) -> Result<()> {
        Ok(())
    }
}

/// Plain [`step_by`].
#[derive(Clone, Copy, Debug, Default)]
pub struct FieldStepper;

impl Advance for FieldStepper {
    fn advance(&mut self, state: &FlowState, bg: &Background, cfg: &StepperConfig, dt: f64) -> Result<FlowState> {
        step_by(state, bg, cfg, dt)
    }
}

/// One step with the scheme's own step-size rule.
pub fn step(state: &FlowState, bg: &Background, cfg: &StepperConfig) -> Result<FlowState> {
    step_by(state, bg, cfg, choose_dt(&state.f, cfg))
}

/// One row of the sampled time series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub t: f64,
    pub mass: f64,
    pub weighted_scalar: f64,
    pub s_min: f64,
    pub s_max: f64,
    /// `F(f)`; only defined on balanced backgrounds.
    pub energy: Option<f64>,
    /// `-∫ (S - λ)² exp(2f/n) dμ`; only reported on balanced backgrounds.
    pub dissipation: Option<f64>,
    /// Step size that produced this state (0 for the initial state).
    pub dt: f64,
    /// `∫ S² exp(2f/n) dμ`
    pub scalar_sq_weighted: f64,
    /// Three-point finite difference of `F` using the neighbouring steps.
    pub energy_rate: Option<f64>,
}

impl SeriesRow {
    pub fn of(state: &FlowState, bg: &Background, dt: f64) -> Self {
        let lambda = bg.lambda();
        let cell = state.f.grid().cell_volume();
        let (mut sq, mut dev) = (0.0, 0.0);
        for (&q, &sv) in state.shrink.iter().zip(state.s.values()) {
            let e = 1.0 / q;
            sq += sv * sv * e;
            dev += (sv - lambda).powi(2) * e;
        }
        let (energy, dissipation) = if bg.is_balanced() {
            (variational::energy(&state.f, bg).ok(), Some(-dev * cell))
        } else {
            (None, None)
        };
        SeriesRow {
            t: state.t,
            mass: state.mass,
            weighted_scalar: state.weighted_scalar,
            s_min: state.s.min(),
            s_max: state.s.max(),
            energy,
            dissipation,
            dt,
            scalar_sq_weighted: sq * cell,
            energy_rate: None,
        }
    }
}

/// Receives every sampled row together with the state it describes.
///
/// Returning `ControlFlow::Break` stops the run after this row.
pub trait Observer {
    fn observe(&mut self, row: &SeriesRow, state: &FlowState) -> Result<ControlFlow<()>>;
}

/// Stops a run once `‖S - λ‖_∞ ≤ tol`.
#[derive(Clone, Debug)]
pub struct ConvergenceStop {
    pub lambda: f64,
    pub tol: f64,
    pub converged_at: Option<f64>,
}

impl ConvergenceStop {
    pub fn new(lambda: f64, tol: f64) -> Self {
        ConvergenceStop {
            lambda,
            tol,
            converged_at: None,
        }
    }
}

impl Observer for ConvergenceStop {
    fn observe(&mut self, _row: &SeriesRow, state: &FlowState) -> Result<ControlFlow<()>> {
        if state.curvature_deviation(self.lambda) <= self.tol {
            self.converged_at = Some(state.t);
            return Ok(ControlFlow::Break(()));
        }
        Ok(ControlFlow::Continue(()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum RunOutcome {
    Completed,
    Stopped { t: f64 },
    Diverged { t: f64, max_exponent: f64 },
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub final_state: FlowState,
    pub rows: Vec<SeriesRow>,
    pub steps: usize,
    pub outcome: RunOutcome,
    /// Largest `max_x S` seen at any step, the quantity that must stay
    /// bounded on finite time intervals for the flow to continue.
    pub peak_scalar: f64,
    pub min_dt: f64,
    pub max_dt: f64,
}

impl RunSummary {
    pub fn blow_up_time(&self) -> Option<f64> {
        match self.outcome {
            RunOutcome::Diverged { t, .. } => Some(t),
            _ => None,
        }
    }
}

fn three_point_rate(prev: (f64, f64), mid: (f64, f64), next: (f64, f64)) -> f64 {
    let a = mid.0 - prev.0;
    let b = next.0 - mid.0;
    (a * a * next.1 - b * b * prev.1 - (a * a - b * b) * mid.1) / (a * b * (a + b))
}

struct PendingRow {
    row: SeriesRow,
    state: FlowState,
    prev: (f64, f64),
}

/// Integrates from `state0` to `cfg.t_end`, sampling rows every
/// `cfg.snapshot_every` and at the final time.
///
/// Divergence ends the run with [`RunOutcome::Diverged`] and keeps the last
/// finite state; any other step failure is returned as an error.
pub fn run(
    state0: FlowState,
    bg: &Background,
    cfg: &StepperConfig,
    observers: &mut [&mut dyn Observer],
) -> Result<RunSummary> {
    run_with(state0, bg, cfg, &mut FieldStepper, observers)
}

/// [`run`] with a custom stepper.
pub fn run_with(
    state0: FlowState,
    bg: &Background,
    cfg: &StepperConfig,
    stepper: &mut dyn Advance,
    observers: &mut [&mut dyn Observer],
) -> Result<RunSummary> {
    cfg.validate()?;
    if (state0.mass - 1.0).abs() > 1e-10 {
        return Err(Error::Precondition(format!(
            "run requires a normalized initial state, mass - 1 = {:e}",
            state0.mass - 1.0
        )));
    }
    let t_start = state0.t;
    let t_end = t_start + cfg.t_end;
    let eps = 1e-12 * cfg.t_end.max(1.0);

    let mut rows = Vec::new();
    let mut state = state0;
    let mut prev: Option<(FlowState, f64)> = None;
    let mut pending: Option<PendingRow> = None;
    let mut next_sample = t_start;
    let mut last_dt = 0.0;
    let mut steps = 0;
    let mut outcome = RunOutcome::Completed;
    let mut peak_scalar = state.s.max();
    let (mut min_dt, mut max_dt) = (f64::INFINITY, 0.0f64);
    let mut stop = false;

    let mut emit = |row: SeriesRow, st: &FlowState, rows: &mut Vec<SeriesRow>| -> Result<bool> {
        let mut brk = false;
        for obs in observers.iter_mut() {
            if obs.observe(&row, st)?.is_break() {
                brk = true;
            }
        }
        rows.push(row);
        Ok(brk)
    };

    loop {
        let at_end = state.t >= t_end - eps;
        if state.t >= next_sample - eps || at_end {
            stepper.sampled(&state)?;
            let row = SeriesRow::of(&state, bg, last_dt);
            while next_sample <= state.t + eps {
                next_sample += cfg.snapshot_every;
            }
            match (&prev, row.energy) {
                (Some((p, fp)), Some(_)) if !at_end && fp.is_finite() => {
                    pending = Some(PendingRow {
                        row,
                        state: state.clone(),
                        prev: (p.t, *fp),
                    });
                }
                _ => {
                    if emit(row, &state, &mut rows)? {
                        outcome = RunOutcome::Stopped { t: state.t };
                        break;
                    }
                }
            }
        }
        if at_end || stop {
            break;
        }
        let dt = choose_dt(&state.f, cfg).min(t_end - state.t);
        if !(dt >= MIN_DT) {
            return Err(Error::StepTooSmall { t: state.t, dt });
        }
        let next = match stepper.advance(&state, bg, cfg, dt) {
            Ok(s) => s,
            Err(Error::Divergence { t, max_exponent }) => {
                outcome = RunOutcome::Diverged { t, max_exponent };
                break;
            }
            Err(e) => return Err(e),
        };
        steps += 1;
        min_dt = min_dt.min(dt);
        max_dt = max_dt.max(dt);
        last_dt = dt;
        peak_scalar = peak_scalar.max(next.s.max());
        if let Some(mut p) = pending.take() {
            let f_mid = p.row.energy.expect("pending rows carry an energy");
            if let Ok(f_next) = variational::energy(&next.f, bg) {
                p.row.energy_rate = Some(three_point_rate(p.prev, (p.row.t, f_mid), (next.t, f_next)));
            }
            if emit(p.row, &p.state, &mut rows)? {
                outcome = RunOutcome::Stopped { t: p.state.t };
                stop = true;
            }
        }
        if stop {
            state = next;
            break;
        }
        // The previous energy is only needed when the new state is sampled.
        let sampled_next = next.t >= next_sample - eps && next.t < t_end - eps;
        let prev_energy = if sampled_next && bg.is_balanced() {
            variational::energy(&state.f, bg)?
        } else {
            f64::NAN
        };
        prev = Some((state, prev_energy));
        state = next;
    }
    if let Some(p) = pending.take() {
        emit(p.row, &p.state, &mut rows)?;
    }
    Ok(RunSummary {
        final_state: state,
        rows,
        steps,
        outcome,
        peak_scalar,
        min_dt: if steps > 0 { min_dt } else { 0.0 },
        max_dt,
    })
}

/// Right-hand side of the curvature evolution,
/// `(n/2) exp(-2f/n) Δ^{Ch} S + S (S - λ)`.
pub fn scalar_rate(state: &FlowState, bg: &Background) -> ScalarField {
    let half_n = bg.complex_dim() as f64 / 2.0;
    let lambda = bg.lambda();
    let mut out = geometry::chern_laplacian(&state.s, bg);
    for ((o, &q), &s) in out.values_mut().iter_mut().zip(&state.shrink).zip(state.s.values()) {
        *o = half_n * q * *o + s * (s - lambda);
    }
    out
}

/// Advances by `dt` with RK4 substeps no longer than a quarter of the CFL
/// step, for probing the exact trajectory.
fn probe_advance(state: &FlowState, bg: &Background, dt: f64) -> Result<FlowState> {
    let cfg = StepperConfig::default();
    let substeps = (dt / (0.25 * stable_dt(&state.f, cfg.cfl_safety))).ceil().max(16.0) as usize;
    let h = dt / substeps as f64;
    let mut st = state.clone();
    for _ in 0..substeps {
        st = step_by(&st, bg, &cfg, h)?;
    }
    Ok(st)
}

/// `‖∂S/∂t - [(n/2) exp(-2f/n) Δ^{Ch} S + S (S - λ)]‖_∞` at `state`, with the
/// time derivative taken by the second-order difference
/// `(-3 S(t) + 4 S(t + δ) - S(t + 2δ)) / 2δ` over probe steps.
///
/// Only forward probe steps are used: stepping the flow backward in time is
/// ill-posed on the grid, amplifying roundoff in the top modes by
/// `exp(max D |ξ|² δ)`.
pub fn scalar_evolution_residual(state: &FlowState, bg: &Background, dt_probe: f64) -> Result<f64> {
    if !(dt_probe > 0.0) {
        return Err(Error::Precondition("dt_probe must be positive".into()));
    }
    let s1 = probe_advance(state, bg, dt_probe)?;
    let s2 = probe_advance(&s1, bg, dt_probe)?;
    let rate = scalar_rate(state, bg);
    let inv = 1.0 / (2.0 * dt_probe);
    Ok(state
        .s
        .values()
        .iter()
        .zip(s1.s.values())
        .zip(s2.s.values())
        .zip(rate.values())
        .fold(0.0, |m, (((&a, &b), &c), &r)| {
            m.max(((-3.0 * a + 4.0 * b - c) * inv - r).abs())
        }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundRow {
    pub t: f64,
    pub s_min: f64,
    /// `min{(S₀)_min, 0}`
    pub floor: f64,
    /// `(S₀)_min exp(-λt)`
    pub refined: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundReport {
    pub s0_min: f64,
    pub tol: f64,
    pub rows: Vec<LowerBoundRow>,
}

impl LowerBoundReport {
    /// `min_t (min_x S - floor)`
    pub fn margin(&self) -> f64 {
        self.rows.iter().map(|r| r.s_min - r.floor).fold(f64::INFINITY, f64::min)
    }
}

/// Checks `min_x S(t) ≥ min{(S₀)_min, 0}` and `min_x S(t) ≥ (S₀)_min e^{-λt}`
/// on every row, to `tol = 1e-8 (1 + ‖S₀‖_∞)`.
///
/// `s0` is the curvature of the initial state; rows come from one run
/// starting at `rows[0].t`.
pub fn lower_bound_check(rows: &[SeriesRow], s0: &ScalarField, lambda: f64) -> Result<LowerBoundReport> {
    let Some(first) = rows.first() else {
        return Err(Error::Precondition("empty trajectory".into()));
    };
    let s0_min = s0.min();
    let tol = 1e-8 * (1.0 + s0.max_abs());
    let report = LowerBoundReport {
        s0_min,
        tol,
        rows: rows
            .iter()
            .map(|r| LowerBoundRow {
                t: r.t,
                s_min: r.s_min,
                floor: s0_min.min(0.0),
                refined: s0_min * (-lambda * (r.t - first.t)).exp(),
            })
            .collect(),
    };
    let violations: Vec<(f64, f64)> = report
        .rows
        .iter()
        .filter(|r| !(r.s_min >= r.floor - tol && r.s_min >= r.refined - tol))
        .map(|r| (r.t, r.s_min))
        .collect();
    if !violations.is_empty() {
        return Err(Error::LowerBoundViolation { violations });
    }
    Ok(report)
}

/// Writes sampled rows as CSV with columns
/// `t,mass,weighted_scalar,S_min,S_max,F,dissipation,dt`.
pub struct CsvSink<W: std::io::Write> {
    writer: csv::Writer<W>,
}

impl<W: std::io::Write> CsvSink<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["t", "mass", "weighted_scalar", "S_min", "S_max", "F", "dissipation", "dt"])?;
        Ok(CsvSink { writer })
    }

    pub fn finish(mut self) -> Result<W> {
        self.writer.flush()?;
        self.writer
            .into_inner()
            .map_err(|e| Error::Io(e.into_error()))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl<W: std::io::Write> Observer for CsvSink<W> {
    fn observe(&mut self, row: &SeriesRow, _state: &FlowState) -> Result<ControlFlow<()>> {
        self.writer.write_record([
            format!("{:e}", row.t),
            format!("{:e}", row.mass),
            format!("{:e}", row.weighted_scalar),
            format!("{:e}", row.s_min),
            format!("{:e}", row.s_max),
            opt(row.energy),
            opt(row.dissipation),
            format!("{:e}", row.dt),
        ])?;
        Ok(ControlFlow::Continue(()))
    }
}

/// Saves `f` at every sampled row as `snap_00000.cyf`, `snap_00001.cyf`, ...
pub struct SnapshotSink {
    dir: PathBuf,
    count: usize,
}

impl SnapshotSink {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(SnapshotSink { dir, count: 0 })
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

impl Observer for SnapshotSink {
    fn observe(&mut self, _row: &SeriesRow, state: &FlowState) -> Result<ControlFlow<()>> {
        let path = self.dir.join(format!("snap_{:05}.cyf", self.count));
        snapshot::save(path, &state.f)?;
        self.count += 1;
        Ok(ControlFlow::Continue(()))
    }
}
