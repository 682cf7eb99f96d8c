//! Filter-bank learning on contrast-normalized images.
//!
//! Alternates a coefficient step (the reconstruction ADMM with unit weights
//! and no offset channel) and a filter step (an inner ADMM whose quadratic
//! update is solved per frequency bin and whose constraint step crops each
//! filter to its support and scales it into the unit ball).

use nalgebra::DMatrix;
use ndarray::{s, Array2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::engine::{embed, CscOperator, FeatureMaps, FilterBank, Fft2};
use crate::error::{Error, Result};
use crate::masks::PRNG_NAME;
use crate::raster::{gaussian_blur, pad_reflect, smooth_size};
use crate::reconstruct::{admm, SolverConfig};

pub const DEFAULT_NORM_SIGMA: f64 = 8.0;
pub const DEFAULT_NORM_EPS: f64 = 1e-2;

/// `(img - G*img) / max(sqrt(G*(img - G*img)^2), eps)` with `G` a Gaussian
/// blur of width `sigma`.
pub fn local_contrast_normalize(img: &Array2<f64>, sigma: f64, eps: f64) -> Array2<f64> {
    let centered = img - &gaussian_blur(img, sigma);
    let var = gaussian_blur(&centered.mapv(|v| v * v), sigma);
    Zip::from(&centered)
        .and(&var)
        .map_collect(|&c, &v| c / v.max(0.0).sqrt().max(eps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub sigma: f64,
    pub eps: f64,
}

impl Default for NormalizationParams {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_NORM_SIGMA,
            eps: DEFAULT_NORM_EPS,
        }
    }
}

/// Grayscale training images, already normalized.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    images: Vec<Array2<f64>>,
    params: Option<NormalizationParams>,
}

impl TrainingSet {
    /// Contrast-normalizes each raw image.
    pub fn normalized(raw: &[Array2<f64>], params: NormalizationParams) -> Self {
        Self {
            images: raw
                .iter()
                .map(|im| local_contrast_normalize(im, params.sigma, params.eps))
                .collect(),
            params: Some(params),
        }
    }

    /// Uses the images as given.
    pub fn from_prepared(images: Vec<Array2<f64>>) -> Self {
        Self { images, params: None }
    }

    pub fn images(&self) -> &[Array2<f64>] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn params(&self) -> Option<NormalizationParams> {
        self.params
    }

    /// Non-overlapping `tile x tile` crops (clamped to the smallest image side).
    pub fn tiles(&self, tile: usize) -> Vec<Array2<f64>> {
        let side = self
            .images
            .iter()
            .map(|im| im.nrows().min(im.ncols()))
            .min()
            .unwrap_or(0)
            .min(tile);
        let mut out = Vec::new();
        if side == 0 {
            return out;
        }
        for im in &self.images {
            for r in (0..=im.nrows() - side).step_by(side) {
                for c in (0..=im.ncols() - side).step_by(side) {
                    out.push(im.slice(s![r..r + side, c..c + side]).to_owned());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnConfig {
    pub k: usize,
    pub size: usize,
    pub beta: f64,
    pub outer_iters: usize,
    /// ADMM iterations per coefficient step.
    pub z_iters: usize,
    /// ADMM iterations per filter step.
    pub d_iters: usize,
    pub rho_z: f64,
    pub rho_d: f64,
    pub tile: usize,
    pub seed: u64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            k: 100,
            size: 11,
            beta: 0.2,
            outer_iters: 15,
            z_iters: 10,
            d_iters: 10,
            rho_z: 10.0,
            rho_d: 50.0,
            tile: 64,
            seed: 0,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::param("k must be positive"));
        }
        if self.size % 2 == 0 || self.size == 0 {
            return Err(Error::param(format!("filter size {} must be odd", self.size)));
        }
        if self.outer_iters == 0 || self.z_iters == 0 || self.d_iters == 0 {
            return Err(Error::param("iteration counts must be positive"));
        }
        if !(self.beta >= 0.0 && self.rho_z > 0.0 && self.rho_d > 0.0) {
            return Err(Error::param("beta must be >= 0 and penalties > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LearnOutcome {
    /// Filters from the outer iteration with the lowest objective.
    pub bank: FilterBank,
    /// Training objective after each outer iteration.
    pub objective: Vec<f64>,
}

/// Scales a filter into the unit ball; filters already inside are unchanged.
pub fn project_unit_ball(d: &Array2<f64>) -> Array2<f64> {
    let norm2: f64 = d.iter().map(|v| v * v).sum();
    if norm2 <= 1.0 {
        d.clone()
    } else {
        d / norm2.sqrt()
    }
}

/// Reads the `size x size` support centered at the origin of a circular grid.
fn extract_support(full: &Array2<f64>, size: usize) -> Array2<f64> {
    let (h, w) = full.dim();
    let c = size / 2;
    Array2::from_shape_fn((size, size), |(i, j)| {
        full[[(i + h - c) % h, (j + w - c) % w]]
    })
}

fn random_filters(k: usize, size: usize, seed: u64) -> Vec<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| {
            let f = Array2::from_shape_simple_fn((size, size), || StandardNormal.sample(&mut rng));
            let n = f.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
            f / n
        })
        .collect()
}

/// Filter step state: spatial full-grid duals per filter.
struct FilterStep<'a> {
    fft: &'a Fft2,
    size: usize,
    k: usize,
    n: usize,
    rho: f64,
}

impl FilterStep<'_> {
    /// Runs `iters` constrained least-squares iterations given bin-major
    /// coefficient spectra `zb[bin][i * k + kk]` and data spectra
    /// `xb[bin][i]`. Returns the projected filters.
    fn solve(
        &self,
        zb: &[Vec<Complex64>],
        xb: &[Vec<Complex64>],
        filters: &mut Vec<Array2<f64>>,
        duals: &mut [Array2<f64>],
        iters: usize,
    ) -> Result<()> {
        let (k, n, rho) = (self.k, self.n, self.rho);
        let (gh, gw) = self.fft.shape();
        let bins = self.fft.len();

        // per-bin Cholesky factor of rho I + Z Z^H and the right-hand side Z^H x
        let factors: Vec<(nalgebra::Cholesky<Complex64, nalgebra::Dyn>, Vec<Complex64>)> = (0..bins)
            .into_par_iter()
            .map(|b| {
                let z = DMatrix::from_row_slice(n, k, &zb[b]);
                let mut a = &z * z.adjoint();
                for i in 0..n {
                    a[(i, i)] += Complex64::new(rho, 0.0);
                }
                let chol = a.cholesky().expect("rho I + Z Z^H is positive definite");
                let x = nalgebra::DVector::from_column_slice(&xb[b]);
                let zx = z.adjoint() * x;
                (chol, zx.as_slice().to_vec())
            })
            .collect();

        for _ in 0..iters {
            // target spectra w = FFT(v - u) with v the current projected filters
            let w_hat: Vec<Vec<Complex64>> = filters
                .par_iter()
                .zip(duals.par_iter())
                .map(|(f, u)| {
                    let v = embed(f, gh, gw).expect("filter fits grid");
                    self.fft.forward_real(&(v - u))
                })
                .collect();
            // d_hat per bin: (Z^H Z + rho I)^-1 (Z^H x + rho w)
            let mut d_hat = vec![vec![Complex64::default(); bins]; k];
            let per_bin: Vec<Vec<Complex64>> = (0..bins)
                .into_par_iter()
                .map(|b| {
                    let (chol, zx) = &factors[b];
                    let z = DMatrix::from_row_slice(n, k, &zb[b]);
                    let rhs = nalgebra::DVector::from_iterator(k, (0..k).map(|kk| zx[kk] + w_hat[kk][b] * rho));
                    let t = chol.solve(&(&z * &rhs));
                    let d = (rhs - z.adjoint() * t) / Complex64::new(rho, 0.0);
                    d.as_slice().to_vec()
                })
                .collect();
            for (b, d) in per_bin.into_iter().enumerate() {
                for kk in 0..k {
                    d_hat[kk][b] = d[kk];
                }
            }
            // projection and dual update
            let updated: Vec<(Array2<f64>, Array2<f64>)> = d_hat
                .into_par_iter()
                .zip(duals.par_iter())
                .map(|(dh, u)| {
                    let d = self.fft.inverse_real(dh);
                    let v_full = &d + u;
                    let v = project_unit_ball(&extract_support(&v_full, self.size));
                    let v_embedded = embed(&v, gh, gw).expect("filter fits grid");
                    let u_new = u + &d - &v_embedded;
                    (v, u_new)
                })
                .collect();
            for (kk, (v, u)) in updated.into_iter().enumerate() {
                filters[kk] = v;
                duals[kk] = u;
            }
        }
        Ok(())
    }
}

/// Objective `1/2 sum_i ||x_i - D z_i||^2 + beta sum ||z||_1` from spectra
/// (Parseval) and spatial maps.
fn training_objective(
    fft: &Fft2,
    filters: &[Array2<f64>],
    zb: &[Vec<Complex64>],
    xb: &[Vec<Complex64>],
    l1: f64,
    beta: f64,
) -> f64 {
    let (gh, gw) = fft.shape();
    let k = filters.len();
    let d_hat: Vec<Vec<Complex64>> = filters
        .iter()
        .map(|f| fft.forward_real(&embed(f, gh, gw).expect("filter fits grid")))
        .collect();
    let mut data = 0.0;
    for (b, (z, x)) in zb.iter().zip(xb).enumerate() {
        for (i, xi) in x.iter().enumerate() {
            let s: Complex64 = (0..k).map(|kk| z[i * k + kk] * d_hat[kk][b]).sum();
            data += (xi - s).norm_sqr();
        }
    }
    0.5 * data / fft.len() as f64 + beta * l1
}

/// Learns `cfg.k` filters of size `cfg.size` from the training set.
pub fn learn_filters(train: &TrainingSet, cfg: &LearnConfig) -> Result<LearnOutcome> {
    cfg.validate()?;
    let min_side = 4 * cfg.size;
    if train.is_empty() {
        return Err(Error::param("training set is empty"));
    }
    if let Some(im) = train.images().iter().find(|im| im.nrows() < min_side || im.ncols() < min_side) {
        return Err(Error::Dimension(format!(
            "training image {}x{} is smaller than {min_side}x{min_side}",
            im.ncols(),
            im.nrows()
        )));
    }
    let tiles = train.tiles(cfg.tile.max(min_side));
    let side = tiles[0].nrows();
    let pad = cfg.size / 2;
    let g = smooth_size(side + 2 * pad);
    let padded: Vec<Array2<f64>> = tiles.iter().map(|t| pad_reflect(t, pad, pad, g, g)).collect();
    let n = padded.len();
    let k = cfg.k;
    let fft = Fft2::new(g, g);
    let bins = fft.len();
    let ones = Array2::<f64>::ones((g, g));

    let mut xb = vec![vec![Complex64::default(); n]; bins];
    for (i, x) in padded.iter().enumerate() {
        for (b, v) in fft.forward_real(x).into_iter().enumerate() {
            xb[b][i] = v;
        }
    }

    let mut filters = random_filters(k, cfg.size, cfg.seed);
    let mut duals = vec![Array2::<f64>::zeros((g, g)); k];
    let mut maps: Vec<FeatureMaps> = (0..n).map(|_| FeatureMaps::zeros(k, g, g, false)).collect();
    let z_cfg = SolverConfig {
        beta: cfg.beta,
        lambda_s: 0.0,
        rho: cfg.rho_z,
        max_iters: cfg.z_iters,
        tol_primal: 0.0,
        tol_dual: 0.0,
        log_objective: false,
        ..Default::default()
    };
    let step = FilterStep {
        fft: &fft,
        size: cfg.size,
        k,
        n,
        rho: cfg.rho_d,
    };

    let mut objective = Vec::with_capacity(cfg.outer_iters);
    let mut best: Option<(usize, Vec<Array2<f64>>)> = None;
    let mut zb = vec![vec![Complex64::default(); n * k]; bins];
    for outer in 0..cfg.outer_iters {
        let op = CscOperator::from_filters(&filters, None, g, g, false)?;
        maps = maps
            .into_iter()
            .zip(&padded)
            .map(|(init, x)| admm(&op, x, &ones, None, init, &z_cfg).map(|o| o.maps))
            .collect::<Result<_>>()?;
        let l1: f64 = maps.iter().map(|m| m.l1_norm()).sum();
        for (i, m) in maps.iter().enumerate() {
            let spectra: Vec<Vec<Complex64>> = m.maps().par_iter().map(|z| fft.forward_real(z)).collect();
            for (kk, sp) in spectra.into_iter().enumerate() {
                for (b, v) in sp.into_iter().enumerate() {
                    zb[b][i * k + kk] = v;
                }
            }
        }
        step.solve(&zb, &xb, &mut filters, &mut duals, cfg.d_iters)?;
        let obj = training_objective(&fft, &filters, &zb, &xb, l1, cfg.beta);
        if !obj.is_finite() {
            return Err(Error::NonFinite { iteration: outer + 1 });
        }
        log::debug!("learning outer iteration {}: objective {obj:.6}", outer + 1);
        if best.is_none() || objective.iter().all(|&o| obj < o) {
            best = Some((outer + 1, filters.clone()));
        }
        objective.push(obj);
    }
    let (selected, filters) = best.expect("at least one outer iteration");

    let provenance = serde_json::json!({
        "k": k,
        "size": cfg.size,
        "beta": cfg.beta,
        "outer_iters": cfg.outer_iters,
        "z_iters": cfg.z_iters,
        "d_iters": cfg.d_iters,
        "tile": side,
        "tiles": n,
        "seed": cfg.seed,
        "prng": PRNG_NAME,
        "normalization": train.params(),
        "objective": objective,
        "selected_iteration": selected,
    });
    Ok(LearnOutcome {
        bank: FilterBank::new(filters)?.with_provenance(provenance),
        objective,
    })
}
