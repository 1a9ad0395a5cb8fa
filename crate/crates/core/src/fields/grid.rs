use std::f64::consts::PI;
use std::cell::RefCell;
use std::fmt;

use std::sync::Arc;

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Uniform periodic grid on the flat torus `R^{2n} / (L_1 Z x ... x L_{2n} Z)`.
///
/// Quadrature weights are normalized so the torus has unit total measure.
/// The grid owns its FFT plans and precomputed spectral symbols, so it is
/// always handled through an `Arc` and shared by every field living on it.
pub struct TorusGrid {
    complex_dim: usize,
    periods: Vec<f64>,
    resolution: Vec<usize>,
    len: usize,
    cell_volume: f64,
    plan: SpectralPlan,
}

impl TorusGrid {
    pub fn new(complex_dim: usize, periods: Vec<f64>, resolution: Vec<usize>) -> Result<Arc<Self>> {
        if complex_dim == 0 {
            return Err(Error::InvalidGrid("complex dimension must be positive".into()));
        }
        let dim = 2 * complex_dim;
        if periods.len() != dim || resolution.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} periods and resolutions, got {} and {}",
                periods.len(),
                resolution.len()
            )));
        }
        if let Some(l) = periods.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidGrid(format!("period {l} is not a positive real")));
        }
        if let Some(n) = resolution.iter().find(|n| **n < 4 || **n % 2 != 0) {
            return Err(Error::InvalidGrid(format!("resolution {n} must be even and >= 4")));
        }
        let len = resolution.iter().product();
        let cell_volume = 1.0 / len as f64;
        let plan = SpectralPlan::new(&periods, &resolution);
        Ok(Arc::new(TorusGrid {
            complex_dim,
            periods,
            resolution,
            len,
            cell_volume,
            plan,
        }))
    }

    /// Unit torus `[0,1)^{2n}` with `points` samples per axis.
    pub fn unit(complex_dim: usize, points: usize) -> Result<Arc<Self>> {
        Self::new(complex_dim, vec![1.0; 2 * complex_dim], vec![points; 2 * complex_dim])
    }

    pub fn complex_dim(&self) -> usize {
        self.complex_dim
    }

    /// Number of real coordinates, `2n`.
    pub fn real_dim(&self) -> usize {
        2 * self.complex_dim
    }

    pub fn periods(&self) -> &[f64] {
        &self.periods
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Normalized measure of one cell: `prod(L_i/N_i) / prod(L_i)`.
    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    /// Grid spacing along `axis`.
    pub fn spacing(&self, axis: usize) -> f64 {
        self.periods[axis] / self.resolution[axis] as f64
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.real_dim())
            .map(|a| self.spacing(a))
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest non-zero eigenvalue of `-Δ` resolved by the grid.
    pub fn first_eigenvalue(&self) -> f64 {
        self.periods
            .iter()
            .map(|l| (2.0 * PI / l).powi(2))
            .fold(f64::INFINITY, f64::min)
    }

    /// Multi-index of the flat (row-major, axis 0 outermost) index.
    pub fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        for axis in (0..self.real_dim()).rev() {
            let n = self.resolution[axis];
            out[axis] = flat % n;
            flat /= n;
        }
    }

    /// Physical coordinates of grid point `flat`.
    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut idx = vec![0; self.real_dim()];
        self.unravel(flat, &mut idx);
        idx.iter()
            .enumerate()
            .map(|(a, &j)| j as f64 * self.spacing(a))
            .collect()
    }

    /// Two grids are compatible when they describe the same lattice.
    pub fn same_as(&self, other: &TorusGrid) -> bool {
        std::ptr::eq(self, other)
            || (self.complex_dim == other.complex_dim
                && self.resolution == other.resolution
                && self.periods == other.periods)
    }

    pub(crate) fn plan(&self) -> &SpectralPlan {
        &self.plan
    }
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid")
            .field("complex_dim", &self.complex_dim)
            .field("periods", &self.periods)
            .field("resolution", &self.resolution)
            .finish()
    }
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        self.same_as(other)
    }
}

/// FFT plans plus per-mode symbols for the half-complex layout.
///
/// Spectra are stored with shape `[N_1, ..., N_{d-1}, N_d/2 + 1]`, row-major:
/// a real-to-complex transform along the last (contiguous) axis followed by
/// complex transforms along the remaining axes.
pub(crate) struct SpectralPlan {
    pub(crate) spec_shape: Vec<usize>,
    pub(crate) spec_len: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
    /// Angular wavenumber `2πk/L` per axis and spectral index.
    pub(crate) wavenumbers: Vec<Vec<f64>>,
    /// Whether the spectral index along an axis is the Nyquist mode.
    pub(crate) nyquist: Vec<Vec<bool>>,
    /// `-|ξ|²` per spectral mode.
    pub(crate) laplace_symbol: Vec<f64>,
    /// `|k_i| / (N_i/2)` maximum over axes, for the 2/3 dealiasing rule.
    pub(crate) max_relative_k: Vec<f64>,
    /// `laplace_symbol` permuted to the layout seen by `multiply_lines`.
    laplace_lines: Vec<f64>,
}

impl SpectralPlan {
    fn new(periods: &[f64], resolution: &[usize]) -> Self {
        let d = resolution.len();
        let last = resolution[d - 1];
        let mut spec_shape = resolution.to_vec();
        spec_shape[d - 1] = last / 2 + 1;
        let spec_len = spec_shape.iter().product();

        let mut real_planner = RealFftPlanner::<f64>::new();
        let r2c = real_planner.plan_fft_forward(last);
        let c2r = real_planner.plan_fft_inverse(last);
        let mut planner = FftPlanner::<f64>::new();
        let forward = resolution[..d - 1]
            .iter()
            .map(|&n| planner.plan_fft_forward(n))
            .collect();
        let inverse = resolution[..d - 1]
            .iter()
            .map(|&n| planner.plan_fft_inverse(n))
            .collect();

        let mut wavenumbers: Vec<Vec<f64>> = Vec::with_capacity(d);
        let mut nyquist: Vec<Vec<bool>> = Vec::with_capacity(d);
        let mut relative: Vec<Vec<f64>> = Vec::with_capacity(d);
        for axis in 0..d {
            let n = resolution[axis];
            let scale = 2.0 * PI / periods[axis];
            let ks: Vec<i64> = (0..spec_shape[axis])
                .map(|j| {
                    if axis == d - 1 || j <= n / 2 {
                        j as i64
                    } else {
                        j as i64 - n as i64
                    }
                })
                .collect();
            wavenumbers.push(ks.iter().map(|&k| scale * k as f64).collect());
            nyquist.push(ks.iter().map(|&k| k.unsigned_abs() as usize == n / 2).collect());
            relative.push(ks.iter().map(|&k| k.abs() as f64 / (n / 2) as f64).collect::<Vec<_>>());
        }

        let mut laplace_symbol = vec![0.0; spec_len];
        let mut max_relative_k = vec![0.0; spec_len];
        let mut idx = vec![0usize; d];
        for m in 0..spec_len {
            let mut rem = m;
            for axis in (0..d).rev() {
                idx[axis] = rem % spec_shape[axis];
                rem /= spec_shape[axis];
            }
            let mut xi2 = 0.0;
            let mut kmax: f64 = 0.0;
            for axis in 0..d {
                xi2 += wavenumbers[axis][idx[axis]].powi(2);
                kmax = kmax.max(relative[axis][idx[axis]]);
            }
            laplace_symbol[m] = -xi2;
            max_relative_k[m] = kmax;
        }

        let n = spec_shape[d - 2];
        let inner = spec_shape[d - 1];
        let laplace_lines = (0..spec_len)
            .map(|m| {
                let (line, k) = (m / n, m % n);
                let (o, i) = (line / inner, line % inner);
                laplace_symbol[o * n * inner + k * inner + i]
            })
            .collect();

        SpectralPlan {
            laplace_lines,
            spec_shape,
            spec_len,
            r2c,
            c2r,
            forward,
            inverse,
            wavenumbers,
            nyquist,
            laplace_symbol,
            max_relative_k,
        }
    }

    /// Spectral multi-index of flat spectral index `m`.
    pub(crate) fn spec_index(&self, mut m: usize, out: &mut [usize]) {
        for axis in (0..self.spec_shape.len()).rev() {
            out[axis] = m % self.spec_shape[axis];
            m /= self.spec_shape[axis];
        }
    }

    /// Unnormalized forward transform of real grid values.
    pub(crate) fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let d = self.spec_shape.len();
        let n_last = self.r2c.len();
        let m_last = self.spec_shape[d - 1];
        let rows = values.len() / n_last;
        let mut spec = vec![Complex64::new(0.0, 0.0); self.spec_len];
        let mut input = self.r2c.make_input_vec();
        let mut scratch = self.r2c.make_scratch_vec();
        for (row, out) in values.chunks_exact(n_last).zip(spec.chunks_exact_mut(m_last)) {
            input.copy_from_slice(row);
            self.r2c
                .process_with_scratch(&mut input, out, &mut scratch)
                .expect("r2c buffer sizes are fixed by the plan");
        }
        debug_assert_eq!(rows * m_last, self.spec_len);
        for axis in 0..d - 1 {
            self.strided_pass(&mut spec, axis, &self.forward[axis]);
        }
        spec
    }

    /// Inverse transform including the `1/len` normalization.
    pub(crate) fn inverse(&self, mut spec: Vec<Complex64>, real_len: usize) -> Vec<f64> {
        let d = self.spec_shape.len();
        for axis in 0..d - 1 {
            self.strided_pass(&mut spec, axis, &self.inverse[axis]);
        }
        let n_last = self.c2r.len();
        let m_last = self.spec_shape[d - 1];
        let mut values = vec![0.0; real_len];
        let mut scratch = self.c2r.make_scratch_vec();
        let norm = 1.0 / real_len as f64;
        for (row, out) in spec.chunks_exact_mut(m_last).zip(values.chunks_exact_mut(n_last)) {
            // The DC and Nyquist bins of a real signal are real.
            row[0].im = 0.0;
            row[m_last - 1].im = 0.0;
            self.c2r
                .process_with_scratch(row, out, &mut scratch)
                .expect("c2r buffer sizes are fixed by the plan");
        }
        for v in &mut values {
            *v *= norm;
        }
        values
    }

    /// Applies the real Fourier multiplier `symbol` (indexed by flat spectral
    /// index) to `values`, writing the result to `out`.
    ///
    /// Equivalent to `inverse(forward(values) * symbol)` but the last complex
    /// axis is multiplied in its transposed layout, which saves a pair of
    /// transposes.
    pub(crate) fn multiply_real(&self, values: &[f64], symbol: impl Fn(usize) -> f64, out: &mut [f64]) {
        let d = self.spec_shape.len();
        let n = self.spec_shape[d - 2];
        let inner = self.spec_shape[d - 1];
        self.multiply_lines(values, out, |lines| {
            for (line_index, line) in lines.chunks_exact_mut(n).enumerate() {
                let (o, i) = (line_index / inner, line_index % inner);
                for (k, c) in line.iter_mut().enumerate() {
                    *c *= symbol(o * n * inner + k * inner + i);
                }
            }
        });
    }

    /// Laplacian of `values` into `out`.
    pub(crate) fn laplacian(&self, values: &[f64], out: &mut [f64]) {
        self.multiply_lines(values, out, |lines| {
            for (c, &s) in lines.iter_mut().zip(&self.laplace_lines) {
                *c *= s;
            }
        });
    }

    /// Shared transform pipeline; `apply` sees the spectrum in the layout
    /// where the last complex axis is contiguous (`[outer, inner, n]`).
    fn multiply_lines(&self, values: &[f64], out: &mut [f64], apply: impl FnOnce(&mut [Complex64])) {
        let d = self.spec_shape.len();
        let n_last = self.r2c.len();
        let m_last = self.spec_shape[d - 1];
        SPEC_BUFFER.with(|cell| {
            let (spec, row_in, row_scratch) = &mut *cell.borrow_mut();
            spec.resize(self.spec_len, Complex64::new(0.0, 0.0));
            row_in.resize(n_last, 0.0);
            let scratch_len = self.r2c.get_scratch_len().max(self.c2r.get_scratch_len());
            row_scratch.resize(scratch_len, Complex64::new(0.0, 0.0));
            for (row, o) in values.chunks_exact(n_last).zip(spec.chunks_exact_mut(m_last)) {
                row_in.copy_from_slice(row);
                self.r2c
                    .process_with_scratch(row_in, o, &mut row_scratch[..self.r2c.get_scratch_len()])
                    .expect("r2c buffer sizes are fixed by the plan");
            }
            for axis in 0..d - 2 {
                self.strided_pass(spec, axis, &self.forward[axis]);
            }

            let axis = d - 2;
            let n = self.spec_shape[axis];
            let inner = m_last;
            let outer: usize = self.spec_shape[..axis].iter().product();
            PASS_BUFFERS.with(|cell| {
                let (lines, scratch) = &mut *cell.borrow_mut();
                lines.resize(self.spec_len, Complex64::new(0.0, 0.0));
                let need = self.forward[axis]
                    .get_inplace_scratch_len()
                    .max(self.inverse[axis].get_inplace_scratch_len());
                scratch.resize(need, Complex64::new(0.0, 0.0));
                let lines = &mut lines[..self.spec_len];
                for o in 0..outer {
                    let range = o * n * inner..(o + 1) * n * inner;
                    transpose(&spec[range.clone()], &mut lines[range], n, inner);
                }
                self.forward[axis].process_with_scratch(lines, scratch);
                apply(lines);
                self.inverse[axis].process_with_scratch(lines, scratch);
                for o in 0..outer {
                    let range = o * n * inner..(o + 1) * n * inner;
                    transpose(&lines[range.clone()], &mut spec[range], inner, n);
                }
            });

            for axis in (0..d - 2).rev() {
                self.strided_pass(spec, axis, &self.inverse[axis]);
            }
            let norm = 1.0 / values.len() as f64;
            for (row, o) in spec.chunks_exact_mut(m_last).zip(out.chunks_exact_mut(n_last)) {
                row[0].im = 0.0;
                row[m_last - 1].im = 0.0;
                self.c2r
                    .process_with_scratch(row, o, &mut row_scratch[..self.c2r.get_scratch_len()])
                    .expect("c2r buffer sizes are fixed by the plan");
                for v in o.iter_mut() {
                    *v *= norm;
                }
            }
        });
    }

    fn strided_pass(&self, spec: &mut [Complex64], axis: usize, fft: &Arc<dyn Fft<f64>>) {
        let n = self.spec_shape[axis];
        let inner: usize = self.spec_shape[axis + 1..].iter().product();
        let outer: usize = self.spec_shape[..axis].iter().product();
        PASS_BUFFERS.with(|cell| {
            let (lines, scratch) = &mut *cell.borrow_mut();
            lines.resize(spec.len(), Complex64::new(0.0, 0.0));
            scratch.resize(fft.get_inplace_scratch_len(), Complex64::new(0.0, 0.0));
            for o in 0..outer {
                let range = o * n * inner..(o + 1) * n * inner;
                transpose(&spec[range.clone()], &mut lines[range], n, inner);
            }
            fft.process_with_scratch(&mut lines[..spec.len()], scratch);
            for o in 0..outer {
                let range = o * n * inner..(o + 1) * n * inner;
                transpose(&lines[range.clone()], &mut spec[range], inner, n);
            }
        });
    }
}

/// Writes the `cols × rows` transpose of the row-major `rows × cols` block `src`.
fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    transpose::transpose(src, dst, cols, rows);
}

thread_local! {
    static SPEC_BUFFER: RefCell<(Vec<Complex64>, Vec<f64>, Vec<Complex64>)> =
        const { RefCell::new((Vec::new(), Vec::new(), Vec::new())) };
    static PASS_BUFFERS: RefCell<(Vec<Complex64>, Vec<Complex64>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_odd_or_small_resolution() {
        assert!(TorusGrid::new(1, vec![1.0, 1.0], vec![6, 5]).is_err());
        assert!(TorusGrid::new(1, vec![1.0, 1.0], vec![2, 8]).is_err());
        assert!(TorusGrid::new(1, vec![1.0, -1.0], vec![8, 8]).is_err());
        assert!(TorusGrid::new(1, vec![1.0], vec![8]).is_err());
        assert!(TorusGrid::new(0, vec![], vec![]).is_err());
    }

    #[test]
    fn cells_sum_to_unit_volume() {
        let g = TorusGrid::new(1, vec![2.0, 0.5], vec![12, 6]).unwrap();
        let total: f64 = (0..g.len()).map(|_| g.cell_volume()).sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn unravel_is_row_major_axis_zero_outermost() {
        let g = TorusGrid::new(1, vec![1.0, 1.0], vec![4, 6]).unwrap();
        let mut idx = [0; 2];
        g.unravel(6 * 2 + 5, &mut idx);
        assert_eq!(idx, [2, 5]);
        let p = g.point(6 * 2 + 5);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn anisotropic_round_trip() {
        let g = TorusGrid::new(1, vec![1.0, 3.0], vec![8, 12]).unwrap();
        let values: Vec<f64> = (0..g.len()).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let back = g.plan().inverse(g.plan().forward(&values), g.len());
        for (a, b) in values.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
