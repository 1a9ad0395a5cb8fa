//! The instability of `f = 0` when `s_base ≡ λ` and `2λ/n > λ₁`.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::flow::{self, Advance, FlowState, Observer, RunOutcome, SeriesRow, StepperConfig};
use crate::geometry::{self, Background};
use crate::variational::{self, EigenOptions, HessianSummary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaddleConfig {
    pub amplitude: f64,
    /// The run stops once `F` drops below this value.
    pub energy_target: f64,
    pub stepper: StepperConfig,
    pub eigen: EigenOptions,
}

impl Default for SaddleConfig {
    fn default() -> Self {
        SaddleConfig {
            amplitude: 1e-3,
            energy_target: -0.1,
            stepper: StepperConfig {
                t_end: 5.0,
                ..StepperConfig::default()
            },
            eigen: EigenOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddleRow {
    pub t: f64,
    pub energy: f64,
    /// `‖f‖_{L²}`, the distance from the critical point `0`.
    pub distance: f64,
    pub s_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddleReport {
    pub lambda: f64,
    pub lambda_1: f64,
    pub hessian: HessianSummary,
    pub amplitude: f64,
    pub rows: Vec<SaddleRow>,
    /// `F` strictly decreased between every pair of consecutive rows.
    pub strictly_decreasing: bool,
    /// Time at which `F < energy_target` was first observed.
    pub reached_target: Option<f64>,
    pub distance_grew: bool,
    /// Largest `‖f_{k+1} - f_k‖_∞` over all steps taken.
    pub max_step_change: f64,
    pub steps: usize,
    pub outcome: RunOutcome,
}

struct Recorder {
    target: f64,
    rows: Vec<SaddleRow>,
    reached: Option<f64>,
}

impl Observer for Recorder {
    fn observe(&mut self, row: &SeriesRow, state: &FlowState) -> Result<ControlFlow<()>> {
        let energy = row.energy.ok_or(Error::NotBalanced)?;
        self.rows.push(SaddleRow {
            t: row.t,
            energy,
            distance: state.f().l2_norm(),
            s_max: row.s_max,
        });
        if energy < self.target {
            self.reached = Some(row.t);
            return Ok(ControlFlow::Break(()));
        }
        Ok(ControlFlow::Continue(()))
    }
}

/// Plain stepping that remembers the largest per-step change of `f`.
#[derive(Default)]
struct DriftStepper {
    max_change: f64,
}

impl Advance for DriftStepper {
    fn advance(&mut self, state: &FlowState, bg: &Background, cfg: &StepperConfig, dt: f64) -> Result<FlowState> {
        let next = flow::step_by(state, bg, cfg, dt)?;
        self.max_change = self.max_change.max(next.f().max_abs_diff(state.f()));
        Ok(next)
    }
}

/// Confirms that `f = 0` is a saddle of `F` and runs the flow from the
/// normalized perturbation `amplitude · u₀` along the unstable eigenvector.
pub fn saddle_experiment(bg: &Background, cfg: &SaddleConfig) -> Result<SaddleReport> {
    if !bg.is_balanced() {
        return Err(Error::NotBalanced);
    }
    let lambda = bg.lambda();
    let spread = bg.s_base().max() - bg.s_base().min();
    if spread > 1e-12 * (1.0 + lambda.abs()) {
        return Err(Error::Precondition(format!(
            "saddle experiment needs constant s_base (spread {spread:e})"
        )));
    }
    let grid = bg.grid();
    let n = grid.complex_dim() as f64;
    let lambda_1 = grid.first_eigenvalue();
    let threshold = 2.0 * lambda / n;
    if !(threshold > lambda_1) {
        return Err(Error::NotUnstable { threshold, lambda_1 });
    }
    let zero = ScalarField::zeros(grid);
    let hessian = variational::hessian_min_eigen(&zero, bg, &cfg.eigen)?;
    if !(hessian.min_eigenvalue < -variational::TOL_DEGENERATE) {
        return Err(Error::NotUnstable { threshold, lambda_1 });
    }

    let f0 = geometry::normalize_conformal(&hessian.eigenvector.scale(cfg.amplitude))?;
    let state = FlowState::initial(f0, bg)?;
    let mut recorder = Recorder {
        target: cfg.energy_target,
        rows: Vec::new(),
        reached: None,
    };
    let mut stepper = DriftStepper::default();
    let summary = flow::run_with(state, bg, &cfg.stepper, &mut stepper, &mut [&mut recorder])?;

    let rows = recorder.rows;
    let strictly_decreasing = rows.len() > 1 && rows.windows(2).all(|w| w[1].energy < w[0].energy);
    let distance_grew = match (rows.first(), rows.last()) {
        (Some(a), Some(b)) => b.distance > a.distance,
        _ => false,
    };
    Ok(SaddleReport {
        lambda,
        lambda_1,
        hessian: hessian.summary(),
        amplitude: cfg.amplitude,
        strictly_decreasing,
        reached_target: recorder.reached,
        distance_grew,
        max_step_change: stepper.max_change,
        steps: summary.steps,
        outcome: summary.outcome,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::TorusGrid;
    use std::f64::consts::PI;

    fn config(amplitude: f64, t_end: f64) -> SaddleConfig {
        SaddleConfig {
            amplitude,
            stepper: StepperConfig {
                t_end,
                snapshot_every: 0.005,
                ..StepperConfig::default()
            },
            ..SaddleConfig::default()
        }
    }

    #[test]
    fn perturbation_descends_below_target() {
        let g = TorusGrid::unit(1, 16).unwrap();
        let bg = Background::constant(&g, 4.0 * PI * PI);
        let report = saddle_experiment(&bg, &config(1e-3, 2.0)).unwrap();
        assert!((report.hessian.min_eigenvalue + 4.0 * PI * PI).abs() < 0.01 * 4.0 * PI * PI);
        assert!(report.strictly_decreasing);
        assert!(report.distance_grew);
        assert!(report.reached_target.is_some());
        assert!(report.rows.last().unwrap().energy < -0.1);
    }

    #[test]
    fn zero_amplitude_is_stationary() {
        let g = TorusGrid::unit(1, 16).unwrap();
        let bg = Background::constant(&g, 4.0 * PI * PI);
        let report = saddle_experiment(&bg, &config(0.0, 0.05)).unwrap();
        assert!(report.max_step_change <= 1e-12);
        assert!(report.reached_target.is_none());
        assert!(report.steps > 0);
    }

    #[test]
    fn stable_or_nonconstant_backgrounds_are_rejected() {
        let g = TorusGrid::unit(1, 16).unwrap();
        let stable = Background::constant(&g, PI * PI);
        assert!(matches!(
            saddle_experiment(&stable, &SaddleConfig::default()),
            Err(Error::NotUnstable { .. })
        ));
        let wavy = Background::balanced(ScalarField::from_fn(&g, |x| 50.0 + (2.0 * PI * x[0]).cos()));
        assert!(matches!(
            saddle_experiment(&wavy, &SaddleConfig::default()),
            Err(Error::Precondition(_))
        ));
    }
}
