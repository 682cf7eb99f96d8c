//! Convolutional synthesis operator and its spectral quadratic solve.
//!
//! All convolutions are circular on the operator's grid. Filters are embedded
//! with their center tap at the origin, so an impulse in map `k` at `(r, c)`
//! synthesizes a copy of filter `k` centered at `(r, c)`.

use ndarray::{Array2, Zip};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use super::bank::{dirac, FeatureMaps, FilterBank};
use super::fft::Fft2;
use crate::error::{Error, Result};

/// Diagonal entries below this are lifted to it in the per-bin solve.
pub const SINGULAR_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct CscOperator {
    fft: Fft2,
    /// One spectrum per channel, row-major bins; the offset channel is last.
    spectra: Vec<Vec<Complex64>>,
    /// `|G_x|^2 + |G_y|^2` of the circular forward-difference gradient.
    grad_sq: Vec<f64>,
    has_offset: bool,
}

/// Output of [`CscOperator::spectral_solve`].
#[derive(Debug, Clone)]
pub struct SpectralSolution {
    pub maps: FeatureMaps,
    /// The operator applied to `maps`.
    pub synthesis: Array2<f64>,
    /// Bins whose diagonal needed the `SINGULAR_EPS` guard.
    pub regularized_bins: usize,
}

impl CscOperator {
    /// Builds the operator for `P d_k` on an `height x width` grid, appending
    /// the Dirac offset channel when `with_offset` is set.
    pub fn new(
        bank: &FilterBank,
        psf: Option<&Array2<f64>>,
        height: usize,
        width: usize,
        with_offset: bool,
    ) -> Result<Self> {
        Self::from_filters(bank.filters(), psf, height, width, with_offset)
    }

    /// Like [`CscOperator::new`] but from raw filters (no norm constraint).
    pub fn from_filters(
        filters: &[Array2<f64>],
        psf: Option<&Array2<f64>>,
        height: usize,
        width: usize,
        with_offset: bool,
    ) -> Result<Self> {
        if filters.is_empty() {
            return Err(Error::param("operator needs at least one filter"));
        }
        let fft = Fft2::new(height, width);
        let psf_spec = match psf {
            Some(p) => Some(fft.forward_real(&embed(p, height, width)?)),
            None => None,
        };
        let mut kernels: Vec<Array2<f64>> = filters.to_vec();
        if with_offset {
            kernels.push(dirac(filters[0].nrows()));
        }
        let spectra = kernels
            .iter()
            .map(|f| {
                let mut s = fft.forward_real(&embed(f, height, width)?);
                if let Some(p) = &psf_spec {
                    s.iter_mut().zip(p).for_each(|(a, b)| *a *= b);
                }
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            fft,
            spectra,
            grad_sq: gradient_spectrum(height, width),
            has_offset: with_offset,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.fft.shape()
    }

    /// Total channel count, offset included.
    pub fn channels(&self) -> usize {
        self.spectra.len()
    }

    pub fn has_offset(&self) -> bool {
        self.has_offset
    }

    pub fn spectra(&self) -> &[Vec<Complex64>] {
        &self.spectra
    }

    pub fn fft(&self) -> &Fft2 {
        &self.fft
    }

    fn check_maps(&self, n: usize, dim: (usize, usize)) -> Result<()> {
        if n != self.channels() || dim != self.shape() {
            return Err(Error::Dimension(format!(
                "{n} maps of {dim:?} for an operator with {} channels on {:?}",
                self.channels(),
                self.shape()
            )));
        }
        Ok(())
    }

    fn forward_all(&self, maps: &[Array2<f64>]) -> Vec<Vec<Complex64>> {
        maps.par_iter().map(|m| self.fft.forward_real(m)).collect()
    }

    fn inverse_all(&self, spectra: Vec<Vec<Complex64>>) -> Vec<Array2<f64>> {
        spectra
            .into_par_iter()
            .map(|s| self.fft.inverse_real(s))
            .collect()
    }

    /// `sum_k (P d_k) * z_k`.
    pub fn synthesize(&self, z: &FeatureMaps) -> Result<Array2<f64>> {
        self.check_maps(z.len(), z.dim())?;
        let spectra = self.forward_all(z.maps());
        Ok(self.fft.inverse_real(self.apply_spectra(&spectra)))
    }

    /// Applies the operator to map spectra, returning the image spectrum.
    pub fn apply_spectra(&self, z_hat: &[Vec<Complex64>]) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); self.fft.len()];
        for (a, z) in self.spectra.iter().zip(z_hat) {
            out.iter_mut()
                .zip(a.iter().zip(z))
                .for_each(|(o, (a, z))| *o += a * z);
        }
        out
    }

    /// Adjoint: correlation of the image with every `P d_k`.
    pub fn adjoint(&self, img: &Array2<f64>) -> Result<FeatureMaps> {
        if img.dim() != self.shape() {
            return Err(Error::Dimension("adjoint input shape".into()));
        }
        let x = self.fft.forward_real(img);
        let spectra: Vec<Vec<Complex64>> = self
            .spectra
            .iter()
            .map(|a| a.iter().zip(&x).map(|(a, x)| a.conj() * x).collect())
            .collect();
        FeatureMaps::new(self.inverse_all(spectra), self.has_offset)
    }

    /// Minimizes
    /// `rho/2 (||D y - data_rhs||^2 + ||y - map_rhs||^2) + lambda_s ||grad y_off||^2`
    /// exactly, one diagonal-plus-rank-one system per frequency bin
    /// (Sherman-Morrison).
    pub fn spectral_solve(
        &self,
        data_rhs: &Array2<f64>,
        map_rhs: &[Array2<f64>],
        lambda_s: f64,
        rho: f64,
    ) -> Result<SpectralSolution> {
        if data_rhs.dim() != self.shape() {
            return Err(Error::Dimension("data right-hand side shape".into()));
        }
        self.check_maps(map_rhs.len(), map_rhs[0].dim())?;
        if !(rho > 0.0) || !(lambda_s >= 0.0) {
            return Err(Error::param(format!("rho {rho} must be > 0 and lambda_s {lambda_s} >= 0")));
        }
        let b1 = self.fft.forward_real(data_rhs);
        let mut x = self.forward_all(map_rhs);
        let n = self.fft.len();
        let last = self.channels() - 1;

        let mut regularized_bins = 0;
        let diag_offset: Vec<f64> = if self.has_offset {
            self.grad_sq
                .iter()
                .map(|g| {
                    let d = rho + 2.0 * lambda_s * g;
                    if d < SINGULAR_EPS {
                        regularized_bins += 1;
                        SINGULAR_EPS
                    } else {
                        d
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        let diag_sparse = rho.max(SINGULAR_EPS);
        let inv_diag = |k: usize, i: usize| -> f64 {
            if self.has_offset && k == last {
                1.0 / diag_offset[i]
            } else {
                1.0 / diag_sparse
            }
        };

        // r_k = rho (conj(a_k) b1 + b2_k), stored in place of b2_k
        for (a, xk) in self.spectra.iter().zip(x.iter_mut()) {
            for i in 0..n {
                xk[i] = rho * (a[i].conj() * b1[i] + xk[i]);
            }
        }
        let mut s = vec![Complex64::default(); n];
        let mut t = vec![0.0f64; n];
        for (k, (a, xk)) in self.spectra.iter().zip(&x).enumerate() {
            for i in 0..n {
                let inv = inv_diag(k, i);
                s[i] += a[i] * xk[i] * inv;
                t[i] += a[i].norm_sqr() * inv;
            }
        }
        let coef: Vec<Complex64> = s
            .iter()
            .zip(&t)
            .map(|(s, t)| s * (rho / (1.0 + rho * t)))
            .collect();
        let mut synth = vec![Complex64::default(); n];
        for (k, (a, xk)) in self.spectra.iter().zip(x.iter_mut()).enumerate() {
            for i in 0..n {
                let v = (xk[i] - a[i].conj() * coef[i]) * inv_diag(k, i);
                xk[i] = v;
                synth[i] += a[i] * v;
            }
        }
        let maps = FeatureMaps::new(self.inverse_all(x), self.has_offset)?;
        Ok(SpectralSolution {
            maps,
            synthesis: self.fft.inverse_real(synth),
            regularized_bins,
        })
    }
}

/// Places a small odd kernel on a circular grid with its center at `(0, 0)`.
pub fn embed(kernel: &Array2<f64>, height: usize, width: usize) -> Result<Array2<f64>> {
    let (kh, kw) = kernel.dim();
    if kh > height || kw > width {
        return Err(Error::Dimension(format!(
            "{kh}x{kw} kernel does not fit a {height}x{width} grid"
        )));
    }
    let (ch, cw) = (kh / 2, kw / 2);
    let mut out = Array2::zeros((height, width));
    for ((i, j), &v) in kernel.indexed_iter() {
        let r = (i + height - ch) % height;
        let c = (j + width - cw) % width;
        out[[r, c]] += v;
    }
    Ok(out)
}

fn gradient_spectrum(height: usize, width: usize) -> Vec<f64> {
    let tau = 2.0 * std::f64::consts::PI;
    let gy: Vec<f64> = (0..height)
        .map(|k| 2.0 - 2.0 * (tau * k as f64 / height as f64).cos())
        .collect();
    let gx: Vec<f64> = (0..width)
        .map(|k| 2.0 - 2.0 * (tau * k as f64 / width as f64).cos())
        .collect();
    let mut out = Vec::with_capacity(height * width);
    for y in &gy {
        out.extend(gx.iter().map(|x| x + y));
    }
    out
}

/// Squared norm of the circular forward-difference gradient.
pub fn gradient_energy(a: &Array2<f64>) -> f64 {
    let (h, w) = a.dim();
    let mut acc = 0.0;
    for r in 0..h {
        for c in 0..w {
            let v = a[[r, c]];
            let dx = a[[r, (c + 1) % w]] - v;
            let dy = a[[(r + 1) % h, c]] - v;
            acc += dx * dx + dy * dy;
        }
    }
    acc
}

/// `1/2 ||y - W D z||^2 + beta sum_k ||z_k||_1 + lambda_s ||grad z_off||^2`,
/// with `W` the per-pixel data weights (mask times reliability).
pub fn objective(
    op: &CscOperator,
    observed: &Array2<f64>,
    weights: &Array2<f64>,
    z: &FeatureMaps,
    beta: f64,
    lambda_s: f64,
) -> Result<f64> {
    let synth = op.synthesize(z)?;
    Ok(objective_with_synthesis(&synth, observed, weights, z, beta, lambda_s))
}

pub(crate) fn objective_with_synthesis(
    synth: &Array2<f64>,
    observed: &Array2<f64>,
    weights: &Array2<f64>,
    z: &FeatureMaps,
    beta: f64,
    lambda_s: f64,
) -> f64 {
    let mut data = 0.0;
    Zip::from(synth)
        .and(observed)
        .and(weights)
        .for_each(|&s, &y, &w| data += (y - w * s).powi(2));
    let smooth = z.offset().map_or(0.0, gradient_energy);
    0.5 * data + beta * z.l1_norm() + lambda_s * smooth
}

/// Synthesis without PSF: `sum_k d_k * z_k` (plus the offset map if present).
pub fn synthesize(bank: &FilterBank, z: &FeatureMaps) -> Result<Array2<f64>> {
    let (h, w) = z.dim();
    CscOperator::new(bank, None, h, w, z.has_offset())?.synthesize(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::gaussian_kernel;

    fn bank3() -> FilterBank {
        let f = Array2::from_shape_vec((3, 3), vec![0.1, 0.2, 0.0, -0.3, 0.5, 0.1, 0.0, 0.2, -0.4]).unwrap();
        FilterBank::new(vec![f]).unwrap()
    }

    #[test]
    fn zero_maps_synthesize_zero() {
        let z = FeatureMaps::zeros(2, 8, 8, true);
        assert!(synthesize(&bank3(), &z).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_reproduces_filter() {
        let bank = bank3();
        let mut z = FeatureMaps::zeros(1, 7, 9, false);
        z.maps_mut()[0][[0, 4]] = 1.0;
        let out = synthesize(&bank, &z).unwrap();
        let f = &bank.filters()[0];
        for ((i, j), &v) in f.indexed_iter() {
            let r = (i + 7 - 1) % 7;
            let c = 4 + j - 1;
            assert!((out[[r, c]] - v).abs() < 1e-12);
        }
        assert!((out.sum() - f.sum()).abs() < 1e-12);
    }

    #[test]
    fn psf_spectra_multiply() {
        let bank = bank3();
        let psf = gaussian_kernel(5, 0.5);
        let op = CscOperator::new(&bank, Some(&psf), 8, 8, true).unwrap();
        let mut z = FeatureMaps::zeros(2, 8, 8, true);
        z.maps_mut()[1][[3, 3]] = 1.0;
        let out = op.synthesize(&z).unwrap();
        // the offset channel's filter becomes the PSF itself
        for ((i, j), &v) in psf.indexed_iter() {
            assert!((out[[1 + i, 1 + j]] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_filter_solve_by_hand() {
        // D = I and one channel: rho/2(|y - b1|^2 + |y - b2|^2) -> y = (b1 + b2) / 2
        let bank = FilterBank::new(vec![dirac(1)]).unwrap();
        let op = CscOperator::new(&bank, None, 4, 4, false).unwrap();
        let b1 = Array2::from_shape_fn((4, 4), |(r, c)| (r * 4 + c) as f64);
        let b2 = Array2::from_elem((4, 4), 2.0);
        let sol = op.spectral_solve(&b1, std::slice::from_ref(&b2), 0.0, 1.0).unwrap();
        for ((idx, &v), &a) in sol.maps.maps()[0].indexed_iter().zip(b1.iter()) {
            assert!((v - (a + 2.0) / 2.0).abs() < 1e-10, "{idx:?}");
        }
        assert_eq!(sol.regularized_bins, 0);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let op = CscOperator::new(&bank3(), None, 8, 8, true).unwrap();
        assert!(op.synthesize(&FeatureMaps::zeros(1, 8, 8, false)).is_err());
        assert!(op.synthesize(&FeatureMaps::zeros(2, 8, 9, true)).is_err());
        assert!(CscOperator::new(&bank3(), None, 2, 8, true).is_err());
        let b = Array2::zeros((8, 8));
        assert!(op.spectral_solve(&b, &[b.clone(), b.clone()], 0.0, 0.0).is_err());
    }

    #[test]
    fn gradient_energy_of_ramp() {
        // circular ramp 0..4 along x: three unit steps and one wrap of -3
        let a = Array2::from_shape_fn((1, 4), |(_, c)| c as f64);
        assert_eq!(gradient_energy(&a), 3.0 + 9.0);
    }
}
