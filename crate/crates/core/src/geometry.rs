//! Gauduchon background data, the Chern Laplacian and conformal curvature.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::{self, CovectorField, ScalarField, TorusGrid};

/// Largest `|2f/n|` accepted before exponentials are considered divergent.
pub const EXPONENT_LIMIT: f64 = 500.0;

/// Admissible torsion must have spectral divergence below this (L² norm).
pub const TORSION_DIVERGENCE_LIMIT: f64 = 1e-8;

const POISSON_MAX_ITERATIONS: usize = 500;

/// Fixed background: base Chern scalar curvature and torsion 1-form.
#[derive(Clone, Debug)]
pub struct Background {
    grid: Arc<TorusGrid>,
    s_base: ScalarField,
    torsion: CovectorField,
    balanced: bool,
    lambda_total: f64,
}

impl Background {
    /// Builds a background, rejecting torsion whose divergence is not zero.
    ///
    /// `∫ (df, θ) dμ = -∫ f div θ dμ`, so a divergence-free θ is exactly
    /// what makes `∫ Δ^{Ch} f dμ = 0` for every `f`.
    pub fn new(s_base: ScalarField, torsion: Option<CovectorField>) -> Result<Self> {
        let grid = Arc::clone(s_base.grid());
        s_base.ensure_finite("s_base")?;
        let torsion = torsion.unwrap_or_else(|| CovectorField::zeros(&grid));
        if !torsion.grid().same_as(&grid) {
            return Err(Error::GridMismatch("torsion and s_base grids differ".into()));
        }
        if !torsion.is_finite() {
            return Err(Error::NonFinite("torsion"));
        }
        let balanced = torsion.is_zero();
        if !balanced {
            let divergence_l2 = fields::divergence(&torsion).l2_norm();
            if divergence_l2 > TORSION_DIVERGENCE_LIMIT {
                return Err(Error::InadmissibleTorsion {
                    divergence_l2,
                    limit: TORSION_DIVERGENCE_LIMIT,
                });
            }
        }
        let lambda_total = fields::integrate(&s_base);
        Ok(Background {
            grid,
            s_base,
            torsion,
            balanced,
            lambda_total,
        })
    }

    pub fn balanced(s_base: ScalarField) -> Self {
        Self::new(s_base, None).expect("zero torsion is always admissible")
    }

    /// Balanced background with constant base curvature.
    pub fn constant(grid: &Arc<TorusGrid>, s: f64) -> Self {
        Self::balanced(ScalarField::constant(grid, s))
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn s_base(&self) -> &ScalarField {
        &self.s_base
    }

    pub fn torsion(&self) -> &CovectorField {
        &self.torsion
    }

    pub fn is_balanced(&self) -> bool {
        self.balanced
    }

    /// `λ = ∫ S_base dμ`.
    pub fn lambda(&self) -> f64 {
        self.lambda_total
    }

    pub fn complex_dim(&self) -> usize {
        self.grid.complex_dim()
    }

    fn n(&self) -> f64 {
        self.grid.complex_dim() as f64
    }
}

/// `λ = ∫ S_base dμ`, the total Chern scalar curvature.
pub fn total_scalar(bg: &Background) -> f64 {
    bg.lambda()
}

/// `Δ^{Ch} f = Δ f - (df, θ)`.
pub fn chern_laplacian(f: &ScalarField, bg: &Background) -> ScalarField {
    let lap = fields::laplacian(f);
    if bg.balanced {
        return lap;
    }
    let drift = fields::pairing(&fields::gradient(f), &bg.torsion);
    lap.sub(&drift)
}

fn check_exponent(f: &ScalarField, n: f64) -> Result<()> {
    let max_exponent = 2.0 * f.max_abs() / n;
    if max_exponent > EXPONENT_LIMIT || !max_exponent.is_finite() {
        return Err(Error::Divergence { t: f64::NAN, max_exponent });
    }
    Ok(())
}

/// Chern scalar curvature of `exp(2f/n) ω`: `exp(-2f/n) (S_base - Δ^{Ch} f)`.
pub fn chern_scalar(f: &ScalarField, bg: &Background) -> Result<ScalarField> {
    chern_scalar_parts(f, bg).map(|(s, _)| s)
}

/// `S` together with the pointwise factor `exp(-2f/n)`.
pub(crate) fn chern_scalar_parts(f: &ScalarField, bg: &Background) -> Result<(ScalarField, Vec<f64>)> {
    let n = bg.n();
    check_exponent(f, n)?;
    let mut out = chern_laplacian(f, bg);
    let mut factor = vec![0.0; f.values().len()];
    for (((o, q), &fv), &s) in out
        .values_mut()
        .iter_mut()
        .zip(factor.iter_mut())
        .zip(f.values())
        .zip(bg.s_base.values())
    {
        *q = (-2.0 * fv / n).exp();
        *o = *q * (s - *o);
    }
    Ok((out, factor))
}

/// `S` from a precomputed factor `shrink = exp(-2f/n)`.
pub(crate) fn chern_scalar_with_shrink(f: &ScalarField, shrink: &[f64], bg: &Background) -> Result<ScalarField> {
    check_exponent(f, bg.n())?;
    let mut out = chern_laplacian(f, bg);
    for ((o, &q), &s) in out.values_mut().iter_mut().zip(shrink).zip(bg.s_base.values()) {
        *o = q * (s - *o);
    }
    Ok(out)
}

/// `∫ exp(2f/n) dμ`.
pub fn conformal_mass(f: &ScalarField, n: usize) -> f64 {
    let n = n as f64;
    f.values().iter().map(|&v| (2.0 * v / n).exp()).sum::<f64>() * f.grid().cell_volume()
}

/// Shifts `f` by the constant making `∫ exp(2f/n) dμ = 1`.
pub fn normalize_conformal(f: &ScalarField) -> Result<ScalarField> {
    let n = f.grid().complex_dim();
    check_exponent(f, n as f64)?;
    // Factor out the maximum so the exponentials cannot overflow.
    let top = f.max();
    let shifted = conformal_mass(&f.shift(-top), n);
    let c = -(n as f64 / 2.0) * shifted.ln() - top;
    Ok(f.shift(c))
}

/// Mean-zero solution of `Δ^{Ch} u = rhs` with `‖Δ^{Ch} u - rhs‖_∞ ≤ tol`.
///
/// Balanced backgrounds divide exactly in Fourier space. Otherwise the
/// drift term is handled by residual correction with the flat inverse as
/// preconditioner.
pub fn solve_poisson(rhs: &ScalarField, bg: &Background, tol: f64) -> Result<ScalarField> {
    rhs.ensure_finite("poisson rhs")?;
    let mean = fields::integrate(rhs);
    if mean.abs() > 1e-10 {
        return Err(Error::NonZeroMean { mean });
    }
    let mut u = fields::inverse_laplacian(rhs);
    if bg.balanced {
        return Ok(u);
    }
    let mut residual = rhs.sub(&chern_laplacian(&u, bg));
    let mut res_norm = residual.max_abs();
    let mut best = res_norm;
    let mut stalled = 0;
    for _ in 0..POISSON_MAX_ITERATIONS {
        if res_norm <= tol {
            return Ok(u);
        }
        let correction = fields::inverse_laplacian(&residual);
        u.axpy(1.0, &correction);
        let m = fields::integrate(&u);
        u = u.shift(-m);
        residual = rhs.sub(&chern_laplacian(&u, bg));
        res_norm = residual.max_abs();
        if res_norm < 0.9 * best {
            best = res_norm;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= 20 {
                break;
            }
        }
    }
    if res_norm <= tol {
        return Ok(u);
    }
    Err(Error::NoConvergence {
        what: "poisson solve",
        iterations: POISSON_MAX_ITERATIONS,
        residual: res_norm,
    })
}

/// The special initial datum `h` with `Δ^{Ch} h = S_base - λ` and
/// `∫ exp(2h/n) dμ = 1`; its curvature is `λ exp(-2h/n)`.
pub fn canonical_initial(bg: &Background) -> Result<ScalarField> {
    let rhs = bg.s_base.shift(-bg.lambda());
    let h = normalize_conformal(&solve_poisson(&rhs, bg, 1e-11)?)?;
    if bg.lambda() > 0.0 {
        let s = chern_scalar(&h, bg)?;
        if s.min() <= 0.0 {
            return Err(Error::Precondition(format!(
                "canonical initial curvature not positive (min {})",
                s.min()
            )));
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn unit(points: usize) -> Arc<TorusGrid> {
        TorusGrid::unit(1, points).unwrap()
    }

    fn swirl_torsion(g: &Arc<TorusGrid>) -> CovectorField {
        let t0 = ScalarField::from_fn(g, |x| (2.0 * PI * x[1]).sin());
        CovectorField::new(g, vec![t0, ScalarField::zeros(g)]).unwrap()
    }

    #[test]
    fn balanced_chern_laplacian_is_flat_laplacian_bitwise() {
        let g = unit(16);
        let bg = Background::constant(&g, 1.0);
        let f = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).sin() * x[1].cos());
        assert_eq!(chern_laplacian(&f, &bg).values(), fields::laplacian(&f).values());
        assert!(bg.is_balanced());
    }

    #[test]
    fn constant_has_zero_chern_laplacian_with_torsion() {
        let g = unit(16);
        let bg = Background::new(ScalarField::zeros(&g), Some(swirl_torsion(&g))).unwrap();
        assert!(!bg.is_balanced());
        assert!(chern_laplacian(&ScalarField::constant(&g, 2.0), &bg).max_abs() < 1e-12);
    }

    #[test]
    fn divergent_torsion_is_rejected() {
        let g = unit(16);
        let t0 = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).sin());
        let theta = CovectorField::new(&g, vec![t0, ScalarField::zeros(&g)]).unwrap();
        let err = Background::new(ScalarField::zeros(&g), Some(theta)).unwrap_err();
        assert!(matches!(err, Error::InadmissibleTorsion { .. }));
    }

    #[test]
    fn chern_scalar_at_zero_is_base_bitwise() {
        let g = unit(8);
        let s = ScalarField::from_fn(&g, |x| -1.0 + 0.5 * (2.0 * PI * x[0]).sin());
        let bg = Background::balanced(s.clone());
        assert_eq!(chern_scalar(&ScalarField::zeros(&g), &bg).unwrap().values(), s.values());
    }

    #[test]
    fn chern_scalar_of_constant() {
        let g = unit(8);
        let s = ScalarField::from_fn(&g, |x| 2.0 + (2.0 * PI * x[1]).cos());
        let bg = Background::balanced(s.clone());
        let out = chern_scalar(&ScalarField::constant(&g, 0.7), &bg).unwrap();
        assert!(out.max_abs_diff(&s.scale((-1.4f64).exp())) < 1e-14);
    }

    #[test]
    fn chern_scalar_guards_overflow() {
        let g = unit(8);
        let bg = Background::constant(&g, 1.0);
        let err = chern_scalar(&ScalarField::constant(&g, 251.0), &bg).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn total_scalar_of_oscillating_base() {
        let g = unit(16);
        let s = ScalarField::from_fn(&g, |x| {
            -1.0 + 0.5 * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos()
        });
        let bg = Background::balanced(s);
        assert!((total_scalar(&bg) + 1.0).abs() < 1e-14);
        assert!((total_scalar(&Background::constant(&g, 3.5)) - 3.5).abs() < 1e-14);
    }

    #[test]
    fn normalize_examples() {
        let g = unit(16);
        assert!(normalize_conformal(&ScalarField::zeros(&g)).unwrap().max_abs() < 1e-15);
        assert!(normalize_conformal(&ScalarField::constant(&g, -3.0)).unwrap().max_abs() < 1e-14);
        let f = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).sin());
        let nf = normalize_conformal(&f).unwrap();
        assert!((conformal_mass(&nf, 1) - 1.0).abs() < 1e-12);
        // shift is the stated constant
        let mass: f64 = f.values().iter().map(|v| (2.0 * v).exp()).sum::<f64>() / g.len() as f64;
        let c = -0.5 * mass.ln();
        assert!(nf.sub(&f).values().iter().all(|d| (d - c).abs() < 1e-13));
    }

    #[test]
    fn poisson_inverts_eigenfunction() {
        let g = unit(16);
        let bg = Background::constant(&g, 0.0);
        let rhs = ScalarField::from_fn(&g, |x| -4.0 * PI * PI * (2.0 * PI * x[0]).cos());
        let u = solve_poisson(&rhs, &bg, 1e-12).unwrap();
        let expect = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).cos());
        assert!(u.max_abs_diff(&expect) < 1e-13);
        assert!(solve_poisson(&ScalarField::zeros(&g), &bg, 1e-12).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn poisson_rejects_nonzero_mean() {
        let g = unit(8);
        let bg = Background::constant(&g, 0.0);
        let err = solve_poisson(&ScalarField::constant(&g, 1e-6), &bg, 1e-10).unwrap_err();
        assert!(matches!(err, Error::NonZeroMean { .. }));
    }

    #[test]
    fn poisson_with_torsion_meets_tolerance() {
        let g = unit(32);
        let bg = Background::new(ScalarField::zeros(&g), Some(swirl_torsion(&g))).unwrap();
        let f = normalize_conformal(&ScalarField::from_fn(&g, |x| 0.3 * (2.0 * PI * x[0]).sin())).unwrap();
        let rhs = f.map(|v| (2.0 * v).exp() - 1.0);
        let u = solve_poisson(&rhs, &bg, 1e-10).unwrap();
        assert!(chern_laplacian(&u, &bg).max_abs_diff(&rhs) <= 1e-10);
        assert!(fields::integrate(&u).abs() < 1e-14);
    }

    #[test]
    fn canonical_initial_of_constant_base_is_zero() {
        let g = unit(8);
        let h = canonical_initial(&Background::constant(&g, 2.0)).unwrap();
        assert!(h.max_abs() < 1e-15);
    }

    #[test]
    fn canonical_initial_has_positive_curvature() {
        let g = unit(32);
        let bg = Background::balanced(ScalarField::from_fn(&g, |x| 1.0 + (2.0 * PI * x[0]).sin()));
        let h = canonical_initial(&bg).unwrap();
        assert!((conformal_mass(&h, 1) - 1.0).abs() < 1e-12);
        let s = chern_scalar(&h, &bg).unwrap();
        assert!(s.min() > 0.0);
        let expect = h.map(|v| (-2.0 * v).exp());
        assert!(s.max_abs_diff(&expect) < 1e-11);
    }

    #[test]
    fn torsion_drift_against_finite_differences() {
        // Δ cos(2πx₁) - ∂₁cos(2πx₁)·sin(2πx₂), second-order differences.
        let err = |n: usize| {
            let g = unit(n);
            let bg = Background::new(ScalarField::zeros(&g), Some(swirl_torsion(&g))).unwrap();
            let f = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).cos());
            let h = 1.0 / n as f64;
            let fd = ScalarField::from_fn(&g, |x| {
                let c = |a: f64| (2.0 * PI * a).cos();
                let lap = (c(x[0] + h) - 2.0 * c(x[0]) + c(x[0] - h)) / (h * h);
                let d1 = (c(x[0] + h) - c(x[0] - h)) / (2.0 * h);
                lap - d1 * (2.0 * PI * x[1]).sin()
            });
            chern_laplacian(&f, &bg).max_abs_diff(&fd)
        };
        let (e1, e2) = (err(16), err(32));
        assert!(e2 < 1.0);
        assert!((e1 / e2).log2() > 1.9, "{e1} {e2}");
    }

    #[test]
    fn small_mode_curvature_by_composition() {
        let g = unit(32);
        let bg = Background::constant(&g, 0.0);
        let eps = 0.1;
        let f = ScalarField::from_fn(&g, |x| eps * (2.0 * PI * x[0]).cos());
        let s = chern_scalar(&f, &bg).unwrap();
        let expect = ScalarField::from_fn(&g, |x| {
            let c = (2.0 * PI * x[0]).cos();
            (-2.0 * eps * c).exp() * 4.0 * PI * PI * eps * c
        });
        assert!(s.max_abs_diff(&expect) < 1e-11);
    }

    #[test]
    fn total_scalar_matches_independent_sum() {
        let g = TorusGrid::new(1, vec![1.0, 2.0], vec![16, 24]).unwrap();
        let s = ScalarField::random_band_limited(&g, 4, 10, 3).shift(0.25);
        let bg = Background::balanced(s.clone());
        let mut sorted: Vec<f64> = s.values().to_vec();
        sorted.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        let oracle = sorted.iter().sum::<f64>() / g.len() as f64;
        assert!((total_scalar(&bg) - oracle).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn conformal_shift_scales_curvature(seed in any::<u64>(), c in -3.0f64..3.0) {
            let g = TorusGrid::unit(1, 16).unwrap();
            let bg = Background::new(
                ScalarField::random_band_limited(&g, 3, 5, seed ^ 7),
                Some(swirl_torsion(&g)),
            ).unwrap();
            let f = ScalarField::random_band_limited(&g, 3, 5, seed).scale(0.3);
            let a = chern_scalar(&f.shift(c), &bg).unwrap();
            let b = chern_scalar(&f, &bg).unwrap().scale((-2.0 * c).exp());
            prop_assert!(a.max_abs_diff(&b) <= 1e-12 * (1.0 + b.max_abs()));
        }

        #[test]
        fn chern_laplacian_integrates_to_zero(seed in any::<u64>()) {
            let g = TorusGrid::unit(1, 16).unwrap();
            let bg = Background::new(ScalarField::zeros(&g), Some(swirl_torsion(&g))).unwrap();
            let f = ScalarField::random_band_limited(&g, 4, 6, seed);
            let total = fields::integrate(&chern_laplacian(&f, &bg));
            prop_assert!(total.abs() <= 1e-8 * (1.0 + f.max_abs()));
        }
    }
}
