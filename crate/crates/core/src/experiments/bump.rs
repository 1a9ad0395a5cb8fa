//! Radial Lipschitz bumps that drive the energy to `-∞` for `n ≥ 2`.
//!
//! `f_r = c_r` on `B_r`, linear in `|x|` on the annulus `B_{2r} \ B_r`, and
//! `log r` outside `B_{2r}`; `c_r` is fixed by `∫ exp(2f_r/n) dμ = 1`.
//! On a flat torus with `2r` below half the shortest period, geodesic balls
//! are Euclidean, so every integral reduces to a one-dimensional radial one.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{self, ScalarField, TorusGrid};
use crate::geometry::Background;

/// Normalization tolerance for the bisection on `c_r`.
pub const MASS_TOL: f64 = 1e-10;

/// Volume of the unit ball in `R^{2n}`: `π^n / n!`.
pub fn unit_ball_volume(n: usize) -> f64 {
    let mut v = 1.0;
    for k in 1..=n {
        v *= std::f64::consts::PI / k as f64;
    }
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpProfile {
    pub r: f64,
    pub c_r: f64,
    /// Grid index of the center.
    pub center: Vec<usize>,
    pub n: usize,
    /// `log r`, the value outside `B_{2r}`.
    pub outer_value: f64,
}

impl BumpProfile {
    /// `-n² log r - (n/2) log Vol(B_1)`, the a priori upper bound on `c_r`.
    pub fn plateau_bound(&self) -> f64 {
        let n = self.n as f64;
        -n * n * self.r.ln() - 0.5 * n * unit_ball_volume(self.n).ln()
    }

    /// Profile value at distance `rho` from the center.
    pub fn value_at(&self, rho: f64) -> f64 {
        profile_value(self.r, self.c_r, rho)
    }

    /// Constant gradient magnitude on the annulus.
    pub fn slope(&self) -> f64 {
        (self.c_r - self.outer_value) / self.r
    }
}

fn profile_value(r: f64, c: f64, rho: f64) -> f64 {
    if rho <= r {
        c
    } else if rho >= 2.0 * r {
        r.ln()
    } else {
        (r.ln() - c) * (rho / r - 1.0) + c
    }
}

/// Composite Gauss-Legendre rule on `[a, b]`.
struct Quadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Quadrature {
    fn gauss_legendre(order: usize) -> Self {
        let mut nodes = vec![0.0; order];
        let mut weights = vec![0.0; order];
        let m = order as f64;
        for i in 0..order {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre(order, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre(order, x);
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        Quadrature { nodes, weights }
    }

    fn integrate(&self, a: f64, b: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
        let h = (b - a) / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let lo = a + p as f64 * h;
            let mid = lo + 0.5 * h;
            let mut s = 0.0;
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                s += w * f(mid + 0.5 * h * x);
            }
            total += 0.5 * h * s;
        }
        total
    }
}

/// Legendre polynomial `P_n(x)` and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Exact radial integrals of the bump on a unit-volume flat torus.
pub struct RadialOracle {
    n: usize,
    ball: f64,
    quad: Quadrature,
    panels: usize,
}

impl RadialOracle {
    pub fn new(n: usize) -> Self {
        RadialOracle {
            n,
            ball: unit_ball_volume(n),
            quad: Quadrature::gauss_legendre(12),
            panels: 256,
        }
    }

    /// `Vol(B_ρ) = C ρ^{2n}`
    pub fn ball_volume(&self, rho: f64) -> f64 {
        self.ball * rho.powi(2 * self.n as i32)
    }

    /// `∫_{B_{2r} \ B_r} g(ρ) dμ = ∫ g(ρ) 2n C ρ^{2n-1} dρ`
    fn annulus_integral(&self, r: f64, g: impl Fn(f64) -> f64) -> f64 {
        let dim = 2 * self.n;
        let shell = dim as f64 * self.ball;
        self.quad
            .integrate(r, 2.0 * r, self.panels, |rho| g(rho) * shell * rho.powi(dim as i32 - 1))
    }

    /// `∫ exp(2 f_{r,c} / n) dμ`
    pub fn mass(&self, r: f64, c: f64) -> f64 {
        let n = self.n as f64;
        let inner = (2.0 * c / n).exp() * self.ball_volume(r);
        let annulus = self.annulus_integral(r, |rho| (2.0 * profile_value(r, c, rho) / n).exp());
        let outer = (2.0 * r.ln() / n).exp() * (1.0 - self.ball_volume(2.0 * r));
        inner + annulus + outer
    }

    /// `∫ f_{r,c} dμ`
    pub fn mean(&self, r: f64, c: f64) -> f64 {
        let inner = c * self.ball_volume(r);
        let annulus = self.annulus_integral(r, |rho| profile_value(r, c, rho));
        let outer = r.ln() * (1.0 - self.ball_volume(2.0 * r));
        inner + annulus + outer
    }

    /// `½∫|df|² dμ`: the gradient is radial with magnitude `(c - log r)/r` on the annulus.
    pub fn dirichlet(&self, r: f64, c: f64) -> f64 {
        let slope = (c - r.ln()) / r;
        0.5 * slope * slope * (self.ball_volume(2.0 * r) - self.ball_volume(r))
    }

    /// `F(f_r)` for constant base curvature `λ`.
    pub fn energy(&self, r: f64, c: f64, lambda: f64) -> f64 {
        self.dirichlet(r, c) + lambda * self.mean(r, c)
    }

    /// Plateau value with unit mass, by bisection on the increasing map `c ↦ mass`.
    pub fn solve_plateau(&self, r: f64) -> Result<f64> {
        let n = self.n as f64;
        // f ≡ log r has mass r^{2/n} < 1; the upper end puts unit mass in B_r alone.
        let mut lo = r.ln();
        let mut hi = -0.5 * n * self.ball_volume(r).ln();
        if !(self.mass(r, lo) < 1.0 && self.mass(r, hi) >= 1.0) {
            return Err(Error::Precondition(format!("cannot bracket the plateau value for r = {r}")));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let m = self.mass(r, mid);
            if (m - 1.0).abs() <= 0.1 * MASS_TOL {
                return Ok(mid);
            }
            if m < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
                break;
            }
        }
        let c = 0.5 * (lo + hi);
        let m = self.mass(r, c);
        if (m - 1.0).abs() <= MASS_TOL {
            Ok(c)
        } else {
            Err(Error::NoConvergence {
                what: "plateau bisection",
                iterations: 200,
                residual: (m - 1.0).abs(),
            })
        }
    }
}

fn check_fits(r: f64, grid: &TorusGrid) -> Result<()> {
    let limit = grid.periods().iter().copied().fold(f64::INFINITY, f64::min) / 2.0;
    if !(r > 0.0 && 2.0 * r < limit) {
        return Err(Error::BumpDoesNotFit { r, limit });
    }
    Ok(())
}

/// Bump profile with radius `r` centred at grid index `center`.
pub fn bump_profile(r: f64, center: &[usize], grid: &TorusGrid) -> Result<BumpProfile> {
    check_fits(r, grid)?;
    if center.len() != grid.real_dim() || center.iter().zip(grid.resolution()).any(|(c, n)| c >= n) {
        return Err(Error::Precondition(format!("center {center:?} is not a grid index")));
    }
    let n = grid.complex_dim();
    let c_r = RadialOracle::new(n).solve_plateau(r)?;
    Ok(BumpProfile {
        r,
        c_r,
        center: center.to_vec(),
        n,
        outer_value: r.ln(),
    })
}

fn check_resolution(profile: &BumpProfile, grid: &TorusGrid) -> Result<()> {
    for axis in 0..grid.real_dim() {
        let cells = profile.r / grid.spacing(axis);
        if cells < 4.0 - 1e-9 {
            return Err(Error::ResolutionTooCoarse {
                r: profile.r,
                axis,
                cells,
            });
        }
    }
    Ok(())
}

/// Field of periodic Euclidean distances to the profile centre.
fn sample_radial(profile: &BumpProfile, grid: &Arc<TorusGrid>, g: impl Fn(f64) -> f64) -> ScalarField {
    let centre: Vec<f64> = profile
        .center
        .iter()
        .enumerate()
        .map(|(a, &j)| j as f64 * grid.spacing(a))
        .collect();
    let periods = grid.periods().to_vec();
    ScalarField::from_fn(grid, |x| {
        let rho2: f64 = x
            .iter()
            .zip(&centre)
            .zip(&periods)
            .map(|((xi, ci), l)| {
                let d = (xi - ci).abs() % l;
                d.min(l - d).powi(2)
            })
            .sum();
        g(rho2.sqrt())
    })
}

/// Samples the profile on the grid using the periodic Euclidean distance.
pub fn materialize(profile: &BumpProfile, grid: &Arc<TorusGrid>) -> Result<ScalarField> {
    check_resolution(profile, grid)?;
    Ok(sample_radial(profile, grid, |rho| profile.value_at(rho)))
}

/// `F(f_r)` by nodal quadrature of the exact `|df_r|²` plus `∫ s_base f_r`.
///
/// The profile is only Lipschitz, so spectral differentiation of the sampled
/// field rings at the two kinks. Nodes sitting on a kink get half the slope.
pub fn grid_energy(profile: &BumpProfile, bg: &Background) -> Result<f64> {
    if !bg.is_balanced() {
        return Err(Error::NotBalanced);
    }
    let grid = bg.grid();
    check_resolution(profile, grid)?;
    let (r, slope2) = (profile.r, profile.slope().powi(2));
    let eps = 1e-12 * r;
    let grad_sq = sample_radial(profile, grid, |rho| {
        if rho > r + eps && rho < 2.0 * r - eps {
            slope2
        } else if (rho - r).abs() <= eps || (rho - 2.0 * r).abs() <= eps {
            0.5 * slope2
        } else {
            0.0
        }
    });
    let field = materialize(profile, grid)?;
    Ok(0.5 * fields::integrate(&grad_sq) + fields::integrate_product(bg.s_base(), &field))
}

/// Builds the profile and its grid field.
pub fn bump_family(r: f64, center: &[usize], bg: &Background) -> Result<(BumpProfile, ScalarField)> {
    let profile = bump_profile(r, center, bg.grid())?;
    let field = materialize(&profile, bg.grid())?;
    Ok((profile, field))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub r: f64,
    pub c_r: f64,
    pub c_r_bound: f64,
    /// Radial mass at the solved plateau value.
    pub mass: f64,
    /// `F(f_r)` from the radial oracle (constant base curvature only).
    pub energy_radial: Option<f64>,
    /// `F(f_r)` by grid quadrature when the grid resolves the annulus.
    pub energy_grid: Option<f64>,
    /// `(λ/2) log r`
    pub reference: f64,
    /// `F(f_r) / ((λ/2) log r)`, preferring the radial value.
    pub ratio: f64,
}

/// Evaluates the bump energies for every radius in `radii`.
pub fn unboundedness_sweep(radii: &[f64], bg: &Background) -> Result<Vec<SweepRow>> {
    if !bg.is_balanced() {
        return Err(Error::NotBalanced);
    }
    let grid = bg.grid();
    let n = grid.complex_dim();
    let lambda = bg.lambda();
    if n < 2 {
        return Err(Error::Precondition("the bump family needs complex dimension n >= 2".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::Precondition(format!("total curvature must be positive, got {lambda}")));
    }
    for &r in radii {
        check_fits(r, grid)?;
    }
    let s = bg.s_base();
    let constant_base = s.max() - s.min() <= 1e-12 * (1.0 + lambda.abs());
    let centre = vec![0usize; grid.real_dim()];

    radii
        .par_iter()
        .map(|&r| {
            let oracle = RadialOracle::new(n);
            let profile = bump_profile(r, &centre, grid)?;
            let energy_radial = constant_base.then(|| oracle.energy(r, profile.c_r, lambda));
            let energy_grid = match grid_energy(&profile, bg) {
                Ok(e) => Some(e),
                Err(Error::ResolutionTooCoarse { .. }) => None,
                Err(e) => return Err(e),
            };
            let reference = 0.5 * lambda * r.ln();
            let value = energy_radial.or(energy_grid).unwrap_or(f64::NAN);
            Ok(SweepRow {
                r,
                c_r: profile.c_r,
                c_r_bound: profile.plateau_bound(),
                mass: oracle.mass(r, profile.c_r),
                energy_radial,
                energy_grid,
                reference,
                ratio: value / reference,
            })
        })
        .collect()
}
