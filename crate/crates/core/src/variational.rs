//! Balanced-case energy `F(f) = ½∫|df|² dμ + ∫ S_base f dμ`, its dissipation
//! along the flow, and the constrained Hessian.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{self, ScalarField};
use crate::geometry::{self, Background};

/// Eigenvalues within this distance of zero are classified as degenerate.
pub const TOL_DEGENERATE: f64 = 1e-8;

/// Directions whose weighted mean exceeds this are not tangent.
pub const TANGENCY_TOL: f64 = 1e-10;

fn require_balanced(bg: &Background) -> Result<()> {
    if bg.is_balanced() {
        Ok(())
    } else {
        Err(Error::NotBalanced)
    }
}

fn conformal_weight(f: &ScalarField) -> ScalarField {
    let n = f.grid().complex_dim() as f64;
    f.map(|v| (2.0 * v / n).exp())
}

/// `½∫|df|² dμ`
pub fn dirichlet_energy(f: &ScalarField) -> f64 {
    let df = fields::gradient(f);
    0.5 * fields::integrate(&fields::pairing(&df, &df))
}

pub fn energy(f: &ScalarField, bg: &Background) -> Result<f64> {
    require_balanced(bg)?;
    Ok(dirichlet_energy(f) + fields::integrate_product(bg.s_base(), f))
}

/// `dF/dt = -∫ (S - λ)² exp(2f/n) dμ` along the flow through `f`.
pub fn dissipation(f: &ScalarField, bg: &Background) -> Result<f64> {
    require_balanced(bg)?;
    let s = geometry::chern_scalar(f, bg)?;
    let lambda = bg.lambda();
    let w = conformal_weight(f);
    let dev = s.map(|v| (v - lambda).powi(2));
    Ok(-fields::integrate_product(&dev, &w))
}

/// `F̃(f) = F(f) - (nλ/2)(∫ exp(2f/n) dμ - 1)`, the Lagrangian of the constrained problem.
pub fn augmented_energy(f: &ScalarField, bg: &Background) -> Result<f64> {
    let e = energy(f, bg)?;
    let n = bg.complex_dim() as f64;
    let mass = geometry::conformal_mass(f, bg.complex_dim());
    Ok(e - 0.5 * n * bg.lambda() * (mass - 1.0))
}

/// `∫ exp(2f/n) u dμ`; zero exactly for directions tangent to the constraint.
pub fn weighted_mean(f: &ScalarField, u: &ScalarField) -> f64 {
    fields::integrate_product(&conformal_weight(f), u)
}

/// `δ²F(u, v) = ∫ (du, dv) dμ - (2λ/n) ∫ exp(2f/n) u v dμ` for tangent `u, v`.
pub fn second_variation(f: &ScalarField, u: &ScalarField, v: &ScalarField, bg: &Background) -> Result<f64> {
    require_balanced(bg)?;
    for dir in [u, v] {
        let weighted_mean = weighted_mean(f, dir);
        if weighted_mean.abs() > TANGENCY_TOL {
            return Err(Error::NotTangent { weighted_mean });
        }
    }
    let n = bg.complex_dim() as f64;
    let grad = fields::integrate(&fields::pairing(&fields::gradient(u), &fields::gradient(v)));
    let w = conformal_weight(f);
    let mass_term = fields::integrate_product(&w.mul(u), v);
    Ok(grad - 2.0 * bg.lambda() / n * mass_term)
}

/// Central second difference of [`augmented_energy`] along `u`, with one
/// Richardson step: `(4 D(ε/2) - D(ε)) / 3`.
pub fn second_difference(f: &ScalarField, u: &ScalarField, bg: &Background, eps: f64) -> Result<f64> {
    let centre = augmented_energy(f, bg)?;
    let d = |e: f64| -> Result<f64> {
        let mut plus = f.clone();
        plus.axpy(e, u);
        let mut minus = f.clone();
        minus.axpy(-e, u);
        Ok((augmented_energy(&plus, bg)? - 2.0 * centre + augmented_energy(&minus, bg)?) / (e * e))
    };
    Ok((4.0 * d(eps / 2.0)? - d(eps)?) / 3.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    LocalMinCandidate,
    Saddle,
    Degenerate,
}

impl Classification {
    pub fn of(min_eigenvalue: f64) -> Self {
        if min_eigenvalue < -TOL_DEGENERATE {
            Classification::Saddle
        } else if min_eigenvalue > TOL_DEGENERATE {
            Classification::LocalMinCandidate
        } else {
            Classification::Degenerate
        }
    }
}

#[derive(Clone, Debug)]
pub struct HessianReport {
    pub f_at: ScalarField,
    pub min_eigenvalue: f64,
    /// Unit L² norm, tangent at `f_at`.
    pub eigenvector: ScalarField,
    pub iterations: usize,
    pub classification: Classification,
}

/// JSON-facing part of a [`HessianReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianSummary {
    pub min_eigenvalue: f64,
    pub classification: Classification,
    pub iterations: usize,
}

impl HessianReport {
    pub fn summary(&self) -> HessianSummary {
        HessianSummary {
            min_eigenvalue: self.min_eigenvalue,
            classification: self.classification,
            iterations: self.iterations,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigenOptions {
    /// Convergence threshold on successive eigenvalue estimates.
    pub tol: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: 1e-10,
            max_iterations: 500,
            seed: 0,
        }
    }
}

/// The constrained Hessian `u ↦ P(-Δu - (2λ/n) exp(2f/n) u)`, with `P` the
/// L²-orthogonal projection onto `{∫ exp(2f/n) u dμ = 0}`.
struct TangentHessian {
    weight: ScalarField,
    weight_sq: f64,
    coupling: f64,
    shift: f64,
}

impl TangentHessian {
    fn new(f: &ScalarField, bg: &Background) -> Self {
        let weight = conformal_weight(f);
        let weight_sq = weight.inner(&weight);
        let coupling = 2.0 * bg.lambda() / bg.complex_dim() as f64;
        // Keeps the preconditioner (-Δ + shift)^{-1} positive definite and
        // comparable to the operator on low modes.
        let shift = 1.0 + (coupling * weight.max()).abs();
        TangentHessian {
            weight,
            weight_sq,
            coupling,
            shift,
        }
    }

    fn project(&self, u: &ScalarField) -> ScalarField {
        let c = self.weight.inner(u) / self.weight_sq;
        let mut out = u.clone();
        out.axpy(-c, &self.weight);
        out
    }

    fn apply(&self, u: &ScalarField) -> ScalarField {
        let mut out = fields::laplacian(u).scale(-1.0);
        for ((o, &uv), &w) in out.values_mut().iter_mut().zip(u.values()).zip(self.weight.values()) {
            *o -= self.coupling * w * uv;
        }
        self.project(&out)
    }

    fn precondition(&self, r: &ScalarField) -> ScalarField {
        // (σ - Δ)^{-1} r = σ^{-1} (1 - Δ/σ)^{-1} r
        let smoothed = fields::solve_helmholtz(&r.scale(1.0 / self.shift), 1.0 / self.shift);
        self.project(&smoothed)
    }
}

/// Orthonormalizes `vectors` in L², dropping ones that are numerically dependent.
fn orthonormalize(vectors: Vec<ScalarField>) -> Vec<ScalarField> {
    let mut basis: Vec<ScalarField> = Vec::with_capacity(vectors.len());
    for mut v in vectors {
        let original = v.l2_norm();
        if original == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for b in &basis {
                let c = b.inner(&v);
                v.axpy(-c, b);
            }
        }
        let norm = v.l2_norm();
        if norm > 1e-10 * original {
            basis.push(v.scale(1.0 / norm));
        }
    }
    basis
}

/// Smallest eigenvalue of the second variation on the tangent space, with
/// the plain L² norm in the Rayleigh quotient.
///
/// Locally optimal preconditioned conjugate gradient iteration (single
/// vector LOBPCG): each step performs Rayleigh-Ritz on `{x, T r, p}`, where
/// `T = (-Δ + σ)^{-1}` and every vector is re-projected onto the tangent space.
pub fn hessian_min_eigen(f: &ScalarField, bg: &Background, opts: &EigenOptions) -> Result<HessianReport> {
    require_balanced(bg)?;
    let op = TangentHessian::new(f, bg);
    let grid = f.grid();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let noise = ScalarField::from_values(grid, (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let mut x = op.precondition(&noise);
    x = x.scale(1.0 / x.l2_norm());
    let mut ax = op.apply(&x);
    let mut rho = x.inner(&ax);
    let mut p: Option<ScalarField> = None;
    let mut settled = 0;

    for iter in 1..=opts.max_iterations {
        let mut r = ax.clone();
        r.axpy(-rho, &x);
        let w = op.precondition(&r);
        let mut candidates = vec![x.clone(), w];
        if let Some(p) = &p {
            candidates.push(p.clone());
        }
        let basis = orthonormalize(candidates);
        let images: Vec<ScalarField> = basis.iter().map(|b| op.apply(b)).collect();
        let k = basis.len();
        let gram = DMatrix::from_fn(k, k, |i, j| 0.5 * (basis[i].inner(&images[j]) + basis[j].inner(&images[i])));
        let eig = SymmetricEigen::new(gram);
        let (imin, &rho_new) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty Ritz basis");
        let coeffs = eig.eigenvectors.column(imin);

        let mut x_new = ScalarField::zeros(grid);
        let mut ax_new = ScalarField::zeros(grid);
        for i in 0..k {
            x_new.axpy(coeffs[i], &basis[i]);
            ax_new.axpy(coeffs[i], &images[i]);
        }
        // Search direction: the part of the update outside the old iterate.
        let mut p_new = x_new.clone();
        p_new.axpy(-basis[0].inner(&x_new), &basis[0]);
        p = if p_new.l2_norm() > 0.0 { Some(p_new) } else { None };

        let norm = x_new.l2_norm();
        x = op.project(&x_new.scale(1.0 / norm));
        ax = ax_new.scale(1.0 / norm);
        let change = (rho_new - rho).abs();
        rho = rho_new;

        let mut res = ax.clone();
        res.axpy(-rho, &x);
        let res_norm = res.l2_norm();
        if change <= opts.tol && res_norm <= opts.tol.sqrt() * rho.abs().max(1.0) {
            settled += 1;
        } else {
            settled = 0;
        }
        if settled >= 2 {
            let x = op.project(&x);
            let x = x.scale(1.0 / x.l2_norm());
            let min_eigenvalue = x.inner(&op.apply(&x));
            return Ok(HessianReport {
                f_at: f.clone(),
                min_eigenvalue,
                eigenvector: x,
                iterations: iter,
                classification: Classification::of(min_eigenvalue),
            });
        }
    }
    Err(Error::NoConvergence {
        what: "hessian eigen-iteration",
        iterations: opts.max_iterations,
        residual: {
            let mut res = ax.clone();
            res.axpy(-rho, &x);
            res.l2_norm()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::TorusGrid;
    use crate::flow;
    use proptest::prelude::*;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn unit(points: usize) -> Arc<TorusGrid> {
        TorusGrid::unit(1, points).unwrap()
    }

    #[test]
    fn energy_examples() {
        let g = unit(16);
        let s = ScalarField::from_fn(&g, |x| 2.0 + (2.0 * PI * x[0]).cos());
        let bg = Background::balanced(s);
        assert_eq!(energy(&ScalarField::zeros(&g), &bg).unwrap(), 0.0);
        let e = energy(&ScalarField::constant(&g, 0.5), &bg).unwrap();
        assert!((e - 0.5 * bg.lambda()).abs() < 1e-14);
    }

    #[test]
    fn energy_requires_balanced() {
        let g = unit(16);
        let t0 = ScalarField::from_fn(&g, |x| (2.0 * PI * x[1]).sin());
        let theta = crate::fields::CovectorField::new(&g, vec![t0, ScalarField::zeros(&g)]).unwrap();
        let bg = Background::new(ScalarField::zeros(&g), Some(theta)).unwrap();
        assert!(matches!(energy(&ScalarField::zeros(&g), &bg), Err(Error::NotBalanced)));
        assert!(matches!(dissipation(&ScalarField::zeros(&g), &bg), Err(Error::NotBalanced)));
    }

    #[test]
    fn stationary_point_has_zero_dissipation() {
        let g = unit(8);
        let bg = Background::constant(&g, -2.0);
        assert_eq!(dissipation(&ScalarField::zeros(&g), &bg).unwrap(), 0.0);
    }

    #[test]
    fn augmented_energy_of_constant() {
        let g = unit(8);
        let bg = Background::constant(&g, 3.0);
        let c: f64 = 0.2;
        let got = augmented_energy(&ScalarField::constant(&g, c), &bg).unwrap();
        let expect = c * 3.0 - 0.5 * 3.0 * ((2.0 * c).exp() - 1.0);
        assert!((got - expect).abs() < 1e-13);
    }

    #[test]
    fn orthogonal_modes_decouple_at_zero() {
        let g = unit(16);
        let bg = Background::constant(&g, 5.0);
        let f = ScalarField::zeros(&g);
        let u = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).cos());
        let v = ScalarField::from_fn(&g, |x| (4.0 * PI * x[1]).sin());
        assert!(second_variation(&f, &u, &v, &bg).unwrap().abs() < 1e-12);
    }

    #[test]
    fn non_tangent_direction_is_rejected() {
        let g = unit(8);
        let bg = Background::constant(&g, 1.0);
        let f = ScalarField::zeros(&g);
        let u = ScalarField::constant(&g, 1.0);
        assert!(matches!(
            second_variation(&f, &u, &u, &bg),
            Err(Error::NotTangent { .. })
        ));
    }

    #[test]
    fn pure_laplacian_is_local_min_candidate() {
        let g = unit(16);
        let bg = Background::constant(&g, 0.0);
        let rep = hessian_min_eigen(&ScalarField::zeros(&g), &bg, &EigenOptions::default()).unwrap();
        assert!((rep.min_eigenvalue - 4.0 * PI * PI).abs() < 1e-6 * 4.0 * PI * PI);
        assert_eq!(rep.classification, Classification::LocalMinCandidate);
        assert!(weighted_mean(&rep.f_at, &rep.eigenvector).abs() < TANGENCY_TOL);
        assert!((rep.eigenvector.l2_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn classification_thresholds() {
        assert_eq!(Classification::of(-1e-7), Classification::Saddle);
        assert_eq!(Classification::of(1e-9), Classification::Degenerate);
        assert_eq!(Classification::of(2e-8), Classification::LocalMinCandidate);
    }

    #[test]
    fn single_mode_energy_is_half_the_dirichlet_integral() {
        let g = unit(16);
        let bg = Background::constant(&g, 0.0);
        let f = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).sin());
        // ∫|df|² = 2π², so F = π².
        assert!((energy(&f, &bg).unwrap() - PI * PI).abs() < 1e-12);
    }

    #[test]
    fn augmented_equals_energy_when_normalized() {
        let g = unit(16);
        let bg = Background::balanced(ScalarField::from_fn(&g, |x| 1.0 + (2.0 * PI * x[1]).cos()));
        let f = geometry::normalize_conformal(&ScalarField::random_band_limited(&g, 3, 5, 9)).unwrap();
        assert!((augmented_energy(&f, &bg).unwrap() - energy(&f, &bg).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn first_variation_vanishes_at_critical_point() {
        let g = unit(16);
        // Base curvature chosen so that `f` solves the constant-curvature equation with λ = -1.
        let f = geometry::normalize_conformal(&ScalarField::from_fn(&g, |x| 0.3 * (2.0 * PI * x[0]).sin())).unwrap();
        let bg = Background::balanced(f.map(|v| -(2.0 * v).exp()).add(&fields::laplacian(&f)));
        let raw = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).cos() + 0.5 * (2.0 * PI * x[1]).sin());
        let u = raw.shift(-weighted_mean(&f, &raw) / fields::integrate(&conformal_weight(&f)));
        let eps = 1e-4;
        let shifted = |e: f64| {
            let mut g = f.clone();
            g.axpy(e, &u);
            augmented_energy(&g, &bg).unwrap()
        };
        let (plus, minus) = (shifted(eps), shifted(-eps));
        assert!(((plus - minus) / (2.0 * eps)).abs() <= 1e-6);
    }

    #[test]
    fn single_mode_second_variation() {
        let g = unit(16);
        for lambda in [0.5, 4.0, 60.0] {
            let bg = Background::constant(&g, lambda);
            let f = ScalarField::zeros(&g);
            let u = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).cos());
            let got = second_variation(&f, &u, &u, &bg).unwrap();
            let expect = 2.0 * PI * PI - lambda;
            assert!((got - expect).abs() <= 1e-10 * expect.abs(), "{got} vs {expect}");
            let fd = second_difference(&f, &u, &bg, 1e-3).unwrap();
            assert!((fd - got).abs() <= 1e-4 * (1.0 + got.abs()), "{fd} vs {got}");
        }
    }

    #[test]
    fn second_variation_matches_finite_differences_off_critical_points() {
        let g = unit(16);
        let bg = Background::balanced(ScalarField::from_fn(&g, |x| -1.0 + (2.0 * PI * x[0]).sin()));
        let f = geometry::normalize_conformal(&ScalarField::random_band_limited(&g, 2, 4, 5).scale(0.2)).unwrap();
        let raw = ScalarField::random_band_limited(&g, 3, 4, 6);
        let w = conformal_weight(&f);
        let u = raw.shift(-weighted_mean(&f, &raw) / fields::integrate(&w));
        assert!(weighted_mean(&f, &u).abs() <= TANGENCY_TOL);
        let exact = second_variation(&f, &u, &u, &bg).unwrap();
        let fd = second_difference(&f, &u, &bg, 1e-3).unwrap();
        assert!((fd - exact).abs() <= 1e-4 * (1.0 + exact.abs()), "{fd} vs {exact}");
    }

    #[test]
    fn energy_rate_is_half_n_times_dissipation() {
        // Differentiating F along ∂f/∂t = (n/2)(λ - S) gives (n/2) times the
        // dissipation integral.
        for (n, points) in [(1usize, 16usize), (2, 8)] {
            let g = TorusGrid::unit(n, points).unwrap();
            let bg = Background::balanced(ScalarField::from_fn(&g, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).cos()));
            let f = geometry::normalize_conformal(&ScalarField::random_band_limited(&g, 2, 4, 21).scale(0.2)).unwrap();
            let state = flow::FlowState::initial(f.clone(), &bg).unwrap();
            let v = flow::rhs(&state, &bg);
            let dt = 1e-5;
            let mut plus = f.clone();
            plus.axpy(dt, &v);
            let mut minus = f.clone();
            minus.axpy(-dt, &v);
            let rate = (energy(&plus, &bg).unwrap() - energy(&minus, &bg).unwrap()) / (2.0 * dt);
            let diss = dissipation(&f, &bg).unwrap();
            let expect = n as f64 / 2.0 * diss;
            assert!((rate - expect).abs() <= 1e-6 * expect.abs(), "n={n}: {rate} vs {expect}");
        }
    }

    #[test]
    fn stability_spectrum_at_zero() {
        let g = unit(16);
        let opts = EigenOptions::default();
        let zero = ScalarField::zeros(&g);
        let l1 = 4.0 * PI * PI;
        let rep = hessian_min_eigen(&zero, &Background::constant(&g, l1), &opts).unwrap();
        assert!((rep.min_eigenvalue + l1).abs() <= 0.01 * l1);
        assert_eq!(rep.classification, Classification::Saddle);
        let rep = hessian_min_eigen(&zero, &Background::constant(&g, PI * PI), &opts).unwrap();
        assert!((rep.min_eigenvalue - 2.0 * PI * PI).abs() <= 0.01 * 2.0 * PI * PI);
        assert_eq!(rep.classification, Classification::LocalMinCandidate);
    }

    #[test]
    fn saddle_eigenvector_is_a_descent_direction() {
        let g = unit(16);
        let bg = Background::constant(&g, 30.0);
        let zero = ScalarField::zeros(&g);
        let rep = hessian_min_eigen(&zero, &bg, &EigenOptions::default()).unwrap();
        assert_eq!(rep.classification, Classification::Saddle);
        let base = augmented_energy(&zero, &bg).unwrap();
        let found = [1e-4, 1e-3, 1e-2]
            .iter()
            .any(|&e| augmented_energy(&rep.eigenvector.scale(e), &bg).unwrap() < base);
        assert!(found);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn dissipation_is_never_positive(seed in any::<u64>(), amp in 0.0f64..0.5) {
            let g = unit(16);
            let bg = Background::balanced(ScalarField::random_band_limited(&g, 2, 3, seed ^ 1));
            let f = geometry::normalize_conformal(&ScalarField::random_band_limited(&g, 3, 4, seed).scale(amp)).unwrap();
            prop_assert!(dissipation(&f, &bg).unwrap() <= 0.0);
        }

        #[test]
        fn second_variation_is_symmetric(seed in any::<u64>()) {
            let g = unit(16);
            let bg = Background::constant(&g, 7.0);
            let f = geometry::normalize_conformal(&ScalarField::random_band_limited(&g, 2, 3, seed).scale(0.3)).unwrap();
            let w = conformal_weight(&f);
            let tangent = |u: ScalarField| u.shift(-weighted_mean(&f, &u) / fields::integrate(&w));
            let u = tangent(ScalarField::random_band_limited(&g, 3, 4, seed.wrapping_add(1)));
            let v = tangent(ScalarField::random_band_limited(&g, 3, 4, seed.wrapping_add(2)));
            let a = second_variation(&f, &u, &v, &bg).unwrap();
            let b = second_variation(&f, &v, &u, &bg).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn hessian_sign_follows_stability_threshold(lambda in 0.0f64..60.0) {
            let l1 = 4.0 * PI * PI;
            prop_assume!((l1 - 2.0 * lambda).abs() > 1.0);
            let g = unit(8);
            let rep = hessian_min_eigen(&ScalarField::zeros(&g), &Background::constant(&g, lambda), &EigenOptions::default()).unwrap();
            prop_assert_eq!(rep.min_eigenvalue > 0.0, l1 > 2.0 * lambda);
        }
    }
}
