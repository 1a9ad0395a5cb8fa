//! Numerical C⁰ certificate.
//!
//! With `Δ^{Ch} h = S_base - λ` and `Δ^{Ch} v = exp(2f/n) - 1`, the field
//! `w = ∂v/∂t` solves the linear equation
//! `∂w/∂t = (n/2) exp(-2f/n) Δ^{Ch} w + λ w`, so the maximum principle gives
//! `‖w(t)‖_∞ ≤ K e^{λt}` and `f = w + h - λ v` is bounded by the same
//! quantities. The certificate co-evolves `(f, v, w)` and checks both facts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{self, ScalarField};
use crate::flow::{self, Advance, FlowState, Observer, RunOutcome, RunSummary, Scheme, StepperConfig};
use crate::geometry::{self, Background};

/// Relative slack allowed on `K e^{λt}`.
pub const BOUND_SLACK: f64 = 1e-6;
/// Allowed `‖f - (w + h - λ v)‖_∞`.
pub const RECONSTRUCTION_TOL: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C0Row {
    pub t: f64,
    pub w_sup: f64,
    /// `K e^{λt}`
    pub bound: f64,
    pub reconstruction_error: f64,
    /// `‖Δ^{Ch} v - (exp(2f/n) - 1)‖_∞`
    pub poisson_residual: f64,
    pub f_sup: f64,
}

impl C0Row {
    fn violation(&self) -> Option<String> {
        if !(self.w_sup <= self.bound * (1.0 + BOUND_SLACK)) {
            return Some(format!("‖w‖∞ = {:e} exceeds K e^(λt) = {:e}", self.w_sup, self.bound));
        }
        if !(self.reconstruction_error <= RECONSTRUCTION_TOL) {
            return Some(format!("reconstruction error {:e}", self.reconstruction_error));
        }
        None
    }
}

#[derive(Clone, Debug)]
pub struct C0Certificate {
    pub h: ScalarField,
    pub v0: ScalarField,
    pub w0: ScalarField,
    /// `max(|w_min(0)|, |w_max(0)|)`
    pub k: f64,
    pub rows: Vec<C0Row>,
}

impl C0Certificate {
    pub fn verify(&self) -> Result<()> {
        for r in &self.rows {
            if let Some(reason) = r.violation() {
                return Err(Error::CertificateFailed { t: r.t, reason });
            }
        }
        Ok(())
    }

    pub fn max_poisson_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.poisson_residual).fold(0.0, f64::max)
    }

    pub fn max_reconstruction_error(&self) -> f64 {
        self.rows.iter().map(|r| r.reconstruction_error).fold(0.0, f64::max)
    }
}

/// Co-evolves `(v, w)` alongside the flow and records a [`C0Row`] at every
/// sampled state. Use with [`flow::run_with`].
pub struct C0Stepper {
    h: ScalarField,
    v0: ScalarField,
    w0: ScalarField,
    v: ScalarField,
    w: ScalarField,
    k: f64,
    rows: Vec<C0Row>,
    bg: Background,
}

impl C0Stepper {
    /// Builds `h`, `v₀` and `w₀ = f₀ - h + λ v₀` for the normalized datum `f0`.
    pub fn new(f0: &ScalarField, bg: &Background, cfg: &StepperConfig) -> Result<Self> {
        if cfg.renormalize_mass {
            return Err(Error::Precondition("the certificate needs an unrenormalized run".into()));
        }
        let n = bg.complex_dim() as f64;
        let mass = geometry::conformal_mass(f0, bg.complex_dim());
        if (mass - 1.0).abs() > 1e-10 {
            return Err(Error::Precondition(format!("initial datum not normalized: mass - 1 = {:e}", mass - 1.0)));
        }
        let h = geometry::canonical_initial(bg)?;
        let v0 = geometry::solve_poisson(&f0.map(|x| (2.0 * x / n).exp() - 1.0), bg, 1e-12)?;
        let mut w0 = f0.sub(&h);
        w0.axpy(bg.lambda(), &v0);
        let k = w0.max_abs();
        Ok(C0Stepper {
            v: v0.clone(),
            w: w0.clone(),
            h,
            v0,
            w0,
            k,
            rows: Vec::new(),
            bg: bg.clone(),
        })
    }

    pub fn rows(&self) -> &[C0Row] {
        &self.rows
    }

    pub fn into_certificate(self) -> C0Certificate {
        C0Certificate {
            h: self.h,
            v0: self.v0,
            w0: self.w0,
            k: self.k,
            rows: self.rows,
        }
    }
}

fn at_time(err: Error, t: f64) -> Error {
    match err {
        Error::Divergence { max_exponent, .. } => Error::Divergence { t, max_exponent },
        other => other,
    }
}

/// `(n/2) exp(-2f/n) Δ^{Ch} w + λ w` given the factor `exp(-2f/n)`.
fn w_rate(w: &ScalarField, shrink: &[f64], bg: &Background) -> ScalarField {
    let half_n = bg.complex_dim() as f64 / 2.0;
    let lambda = bg.lambda();
    let mut out = geometry::chern_laplacian(w, bg);
    for ((o, &q), &wv) in out.values_mut().iter_mut().zip(shrink).zip(w.values()) {
        *o = half_n * q * *o + lambda * wv;
    }
    out
}

impl Advance for C0Stepper {
    fn advance(&mut self, state: &FlowState, bg: &Background, cfg: &StepperConfig, dt: f64) -> Result<FlowState> {
        let half_n = bg.complex_dim() as f64 / 2.0;
        let lambda = bg.lambda();
        let velocity = |s: &ScalarField| -> ScalarField {
            if cfg.dealias {
                fields::dealias(s).map(|sv| half_n * (lambda - sv))
            } else {
                s.map(|sv| half_n * (lambda - sv))
            }
        };
        let t = state.t() + dt;
        let (f, v, w) = match cfg.scheme {
            Scheme::ExplicitRk4 => {
                let aux = [self.v.clone(), self.w.clone()];
                let (f, mut rest) = flow::rk4_flow(state, bg, cfg.dealias, dt, &aux, |shrink, y| {
                    vec![y[1].clone(), w_rate(&y[1], shrink, bg)]
                })
                .map_err(|e| at_time(e, state.t()))?;
                let w = rest.pop().expect("two auxiliary fields");
                (f, rest.pop().expect("two auxiliary fields"), w)
            }
            Scheme::SemiImplicit => {
                let mut system = |y: &[ScalarField]| -> Result<Vec<ScalarField>> {
                    let (s, shrink) = geometry::chern_scalar_parts(&y[0], bg)?;
                    Ok(vec![velocity(&s), y[2].clone(), w_rate(&y[2], &shrink, bg)])
                };
                let y = [state.f().clone(), self.v.clone(), self.w.clone()];
                let c = flow::implicit_coefficient(state.f());
                let mut next = flow::imex_euler_system(&y, dt, &[c, 0.0, c], &mut system)
                    .map_err(|e| at_time(e, state.t()))?;
                let w = next.pop().expect("three fields");
                let v = next.pop().expect("three fields");
                (next.pop().expect("three fields"), v, w)
            }
        };
        flow::check_divergence(&f, t, cfg)?;
        if !(v.is_finite() && w.is_finite()) {
            return Err(Error::Divergence { t, max_exponent: f64::NAN });
        }
        let advanced = FlowState::new(f, t, bg)?;
        self.v = v;
        self.w = w;
        Ok(advanced)
    }

    fn sampled(&mut self, state: &FlowState) -> Result<()> {
        let lambda = self.bg.lambda();
        let mut recon = self.w.add(&self.h);
        recon.axpy(-lambda, &self.v);
        let target = state.shrink_factor().iter().map(|q| 1.0 / q - 1.0).collect::<Vec<_>>();
        let lap_v = geometry::chern_laplacian(&self.v, &self.bg);
        let poisson_residual = lap_v
            .values()
            .iter()
            .zip(&target)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        self.rows.push(C0Row {
            t: state.t(),
            w_sup: self.w.max_abs(),
            bound: self.k * (lambda * state.t()).exp(),
            reconstruction_error: state.f().max_abs_diff(&recon),
            poisson_residual,
            f_sup: state.f().max_abs(),
        });
        Ok(())
    }
}

/// Runs the flow from the normalized datum `f0` with the certificate fields
/// attached, returning the flow summary and the unchecked certificate.
pub fn c0_trajectory(
    f0: &ScalarField,
    bg: &Background,
    cfg: &StepperConfig,
    observers: &mut [&mut dyn Observer],
) -> Result<(RunSummary, C0Certificate)> {
    let mut stepper = C0Stepper::new(f0, bg, cfg)?;
    let state = FlowState::initial(f0.clone(), bg)?;
    let summary = flow::run_with(state, bg, cfg, &mut stepper, observers)?;
    Ok((summary, stepper.into_certificate()))
}

/// Runs the certificate and checks every sampled row.
///
/// Fails with `CertificateFailed` at the first row violating the bound or
/// reconstruction check, or with `Divergence` if the run blows up.
pub fn c0_certificate(f0: &ScalarField, bg: &Background, cfg: &StepperConfig) -> Result<C0Certificate> {
    let (summary, cert) = c0_trajectory(f0, bg, cfg, &mut [])?;
    cert.verify()?;
    if let RunOutcome::Diverged { t, max_exponent } = summary.outcome {
        return Err(Error::Divergence { t, max_exponent });
    }
    Ok(cert)
}
