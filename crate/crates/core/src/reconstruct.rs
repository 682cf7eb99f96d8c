//! HDR recovery by convolutional sparse coding with a smooth offset channel.
//!
//! The objective
//! `1/2 ||y - W D z||^2 + beta sum_k ||z_k||_1 + lambda_s ||grad z_off||^2`
//! is split as `K = [D; I]` and solved by scaled-form ADMM: an exact spectral
//! solve for the maps, a pixelwise masked-data proximal step plus a soft
//! threshold on the sparse maps, and dual ascent.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::capture::CodedLdrImage;
use crate::engine::{
    objective_with_synthesis, prox_masked_data, soft_threshold, CscOperator, FeatureMaps,
    FilterBank,
};
use crate::error::{Error, Result};
use crate::imagery::RadianceImage;
use crate::raster::{crop, gaussian_blur, pad_reflect, smooth_size};

pub const DEFAULT_BETA: f64 = 1.5e-5;
pub const DEFAULT_LAMBDA_S: f64 = 0.5e-5;

const NORMALIZED_LEVELS: usize = 1;
const OFFSET_CG_TOL: f64 = 1e-8;
const MIN_SUPPORT_SAMPLES: f64 = 2.0;

/// How the offset map is seeded before the first iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OffsetInit {
    /// `blur(y / max(e, eps))` over all pixels.
    Plain,
    /// `blur(r y / max(e, eps)) / blur(r)` with `r` the reliability raster.
    /// The blur widens by octaves until about two reliable samples fall
    /// under the kernel; [`OffsetInit::Plain`] is the last resort.
    Normalized,
    /// The [`OffsetInit::Normalized`] seed refined by conjugate gradients on
    /// the objective restricted to the offset map.
    #[default]
    Solve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub beta: f64,
    pub lambda_s: f64,
    pub rho: f64,
    pub max_iters: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub log_objective: bool,
    /// Residual-balancing penalty updates.
    pub adaptive_rho: bool,
    pub offset_sigma: f64,
    pub offset_eps: f64,
    pub offset_init: OffsetInit,
    /// Conjugate-gradient budget for [`OffsetInit::Solve`].
    pub offset_cg_iters: usize,
    /// Keep the synthesis of clipped pixels inside the interval their
    /// codes imply (below the noise floor, or above the saturation level).
    pub clip_constraints: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            lambda_s: DEFAULT_LAMBDA_S,
            rho: 1.0,
            max_iters: 100,
            tol_primal: 1e-4,
            tol_dual: 1e-4,
            log_objective: true,
            adaptive_rho: false,
            offset_sigma: 1.5,
            offset_eps: 1e-3,
            offset_init: OffsetInit::Solve,
            offset_cg_iters: 1000,
            clip_constraints: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.lambda_s >= 0.0) {
            return Err(Error::param("beta and lambda_s must be >= 0"));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::param("rho must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters must be >= 1"));
        }
        if !(self.offset_eps > 0.0) || !(self.offset_sigma >= 0.0) {
            return Err(Error::param("offset_eps must be > 0 and offset_sigma >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    /// NaN when objective logging is off.
    pub objective: f64,
    pub r_primal: f64,
    pub r_dual: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverTrace {
    pub rows: Vec<TraceRow>,
    pub converged: bool,
    pub initial_objective: f64,
    pub final_objective: f64,
    /// Frequency bins lifted by the singular-diagonal guard, summed over
    /// iterations.
    pub regularized_bins: usize,
}

impl SolverTrace {
    pub fn iterations(&self) -> usize {
        self.rows.len()
    }

    /// CSV with header `iter,objective,r_primal,r_dual,seconds`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| Error::format("csv", e.to_string());
        w.write_record(["iter", "objective", "r_primal", "r_dual", "seconds"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.serialize((r.iter, r.objective, r.r_primal, r.r_dual, r.seconds))
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::format("csv", e.to_string()))
    }
}

/// Result of one ADMM run on the operator grid.
#[derive(Debug, Clone)]
pub struct AdmmOutcome {
    /// Proximal-side maps: sparse maps are exactly soft-thresholded.
    pub maps: FeatureMaps,
    /// Operator applied to `maps`.
    pub synthesis: Array2<f64>,
    pub trace: SolverTrace,
}

fn sum_sq(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

fn diff_sq(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let mut acc = 0.0;
    Zip::from(a).and(b).for_each(|x, y| acc += (x - y) * (x - y));
    acc
}

/// Per-pixel box on the synthesis, for pixels without data.
#[derive(Debug, Clone)]
pub struct SynthesisBounds {
    pub lower: Array2<f64>,
    pub upper: Array2<f64>,
}

impl SynthesisBounds {
    /// Converts sensor-side intervals to synthesis units by dividing by the
    /// mask; pixels with zero transmissivity or data weight stay free.
    pub fn from_sensor(lower: &Array2<f64>, upper: &Array2<f64>, mask: &Array2<f64>, weights: &Array2<f64>) -> Self {
        let free = |e: f64, w: f64| e <= 0.0 || w != 0.0;
        let lower = Zip::from(lower)
            .and(mask)
            .and(weights)
            .map_collect(|&l, &e, &w| if free(e, w) { f64::NEG_INFINITY } else { l / e });
        let upper = Zip::from(upper)
            .and(mask)
            .and(weights)
            .map_collect(|&u, &e, &w| if free(e, w) { f64::INFINITY } else { u / e });
        Self { lower, upper }
    }

    fn project(&self, a: &mut Array2<f64>) {
        Zip::from(a)
            .and(&self.lower)
            .and(&self.upper)
            .for_each(|v, &l, &u| *v = v.max(l).min(u));
    }
}

/// Minimizes the weighted CSC objective on the operator's grid starting from
/// `init` (split variables start at `K init`, duals at zero). With `bounds`,
/// the synthesis of data-free pixels is also confined to the given box.
pub fn admm(
    op: &CscOperator,
    observed: &Array2<f64>,
    weights: &Array2<f64>,
    bounds: Option<&SynthesisBounds>,
    init: FeatureMaps,
    cfg: &SolverConfig,
) -> Result<AdmmOutcome> {
    cfg.validate()?;
    if observed.dim() != op.shape() || weights.dim() != op.shape() {
        return Err(Error::Dimension("observation and operator grid differ".into()));
    }
    if bounds.is_some_and(|b| b.lower.dim() != op.shape() || b.upper.dim() != op.shape()) {
        return Err(Error::Dimension("bounds and operator grid differ".into()));
    }
    let start = Instant::now();
    let has_offset = init.has_offset();
    let n_maps = init.len();
    let sparse = n_maps - usize::from(has_offset);

    let mut z1 = op.synthesize(&init)?;
    let initial_objective = objective_with_synthesis(&z1, observed, weights, &init, cfg.beta, cfg.lambda_s);
    let mut z2 = init.into_maps();
    let mut u1 = Array2::<f64>::zeros(op.shape());
    let mut u2 = vec![Array2::<f64>::zeros(op.shape()); n_maps];
    let mut rho = cfg.rho;
    let mut trace = SolverTrace {
        initial_objective,
        ..Default::default()
    };

    for iter in 1..=cfg.max_iters {
        // quadratic step on K y ~ z - u
        let b1 = &z1 - &u1;
        let b2: Vec<Array2<f64>> = z2.iter().zip(&u2).map(|(z, u)| z - u).collect();
        let sol = op.spectral_solve(&b1, &b2, cfg.lambda_s, rho)?;
        trace.regularized_bins += sol.regularized_bins;
        let dy = sol.synthesis;
        let y = sol.maps;

        // proximal steps
        let mut z1_next = prox_masked_data(&(&dy + &u1), observed, weights, rho);
        if let Some(b) = bounds {
            b.project(&mut z1_next);
        }
        let z1_prev = std::mem::replace(&mut z1, z1_next);
        let thresh = cfg.beta / rho;
        let mut z_change = diff_sq(&z1, &z1_prev);
        let mut z_norm = sum_sq(&z1);
        let mut primal = 0.0;
        let mut ky_norm = sum_sq(&dy);
        for (k, ((yk, uk), zk)) in y.maps().iter().zip(u2.iter_mut()).zip(z2.iter_mut()).enumerate() {
            let threshold = if k < sparse { thresh } else { 0.0 };
            Zip::from(&mut *zk).and(yk).and(&mut *uk).for_each(|z, &yv, u| {
                let v = yv + *u;
                let zn = soft_threshold(v, threshold);
                z_change += (zn - *z) * (zn - *z);
                z_norm += zn * zn;
                ky_norm += yv * yv;
                let r = yv - zn;
                primal += r * r;
                *z = zn;
                *u += r;
            });
        }
        Zip::from(&mut u1).and(&dy).and(&z1).for_each(|u, &d, &z| {
            let r = d - z;
            primal += r * r;
            *u += r;
        });

        let scale = ky_norm.max(z_norm).sqrt().max(f64::MIN_POSITIVE);
        let r_primal = primal.sqrt() / scale;
        let r_dual = z_change.sqrt() / z_norm.sqrt().max(f64::MIN_POSITIVE);
        let objective = if cfg.log_objective {
            objective_with_synthesis(&dy, observed, weights, &y, cfg.beta, cfg.lambda_s)
        } else {
            f64::NAN
        };
        if !r_primal.is_finite() || !r_dual.is_finite() || (cfg.log_objective && !objective.is_finite()) {
            return Err(Error::NonFinite { iteration: iter });
        }
        trace.rows.push(TraceRow {
            iter,
            objective,
            r_primal,
            r_dual,
            seconds: start.elapsed().as_secs_f64(),
        });
        if r_primal < cfg.tol_primal && r_dual < cfg.tol_dual {
            trace.converged = true;
            break;
        }
        if cfg.adaptive_rho {
            // absolute residuals: primal ||Ky - z||, dual rho ||z - z_prev||
            let (rp, rd) = (primal.sqrt(), rho * z_change.sqrt());
            let factor = if rp > 10.0 * rd {
                2.0
            } else if rd > 10.0 * rp {
                0.5
            } else {
                1.0
            };
            if factor != 1.0 {
                rho *= factor;
                u1 /= factor;
                u2.iter_mut().for_each(|u| *u /= factor);
            }
        }
    }

    let maps = FeatureMaps::new(z2, has_offset)?;
    let synthesis = op.synthesize(&maps)?;
    trace.final_objective = objective_with_synthesis(&synthesis, observed, weights, &maps, cfg.beta, cfg.lambda_s);
    Ok(AdmmOutcome {
        maps,
        synthesis,
        trace,
    })
}

/// Offset seed from raw rasters (all in window-normalized units).
pub fn offset_seed(
    measurement: &Array2<f64>,
    mask: &Array2<f64>,
    reliability: &Array2<f64>,
    cfg: &SolverConfig,
) -> Array2<f64> {
    let ratio = Zip::from(measurement)
        .and(mask)
        .map_collect(|&y, &e| y / e.max(cfg.offset_eps));
    let plain = gaussian_blur(&ratio, cfg.offset_sigma);
    match cfg.offset_init {
        OffsetInit::Plain => plain,
        OffsetInit::Normalized | OffsetInit::Solve => {
            let weighted = &ratio * reliability;
            let mut out = plain;
            let mut pending = Array2::from_elem(ratio.dim(), true);
            let mut sigma = cfg.offset_sigma.max(0.5);
            for level in 0..NORMALIZED_LEVELS {
                let num = gaussian_blur(&weighted, sigma);
                let den = gaussian_blur(reliability, sigma);
                let need = if level + 1 == NORMALIZED_LEVELS {
                    1e-3
                } else {
                    MIN_SUPPORT_SAMPLES / (2.0 * std::f64::consts::PI * sigma * sigma)
                };
                Zip::from(&mut out)
                    .and(&mut pending)
                    .and(&num)
                    .and(&den)
                    .for_each(|o, p, &n, &d| {
                        if *p && d >= need {
                            *o = n / d;
                            *p = false;
                        }
                    });
                sigma *= 2.0;
            }
            out
        }
    }
}

/// Minimizes `1/2 ||y - W P o||^2 + lambda ||grad o||^2` over the offset map
/// `o` alone by Jacobi-preconditioned conjugate gradients from `start`.
/// `P` is the operator's offset synthesis (the PSF, or identity).
pub fn solve_offset(
    op: &CscOperator,
    observed: &Array2<f64>,
    weights: &Array2<f64>,
    start: Array2<f64>,
    lambda: f64,
    max_iters: usize,
) -> Array2<f64> {
    let fft = op.fft();
    let p_hat = &op.spectra()[op.channels() - 1];
    let (h, w) = op.shape();
    let filter = |a: &Array2<f64>, adjoint: bool| {
        let mut x = fft.forward_real(a);
        x.iter_mut()
            .zip(p_hat)
            .for_each(|(x, p)| *x *= if adjoint { p.conj() } else { *p });
        fft.inverse_real(x)
    };
    // grad^T grad with periodic forward differences
    let laplacian = |a: &Array2<f64>| {
        Array2::from_shape_fn((h, w), |(r, c)| {
            4.0 * a[[r, c]]
                - a[[(r + 1) % h, c]]
                - a[[(r + h - 1) % h, c]]
                - a[[r, (c + 1) % w]]
                - a[[r, (c + w - 1) % w]]
        })
    };
    let w2 = weights * weights;
    let apply = |o: &Array2<f64>| filter(&(&filter(o, false) * &w2), true) + laplacian(o) * (2.0 * lambda);
    let gain = p_hat.iter().map(|p| p.norm_sqr()).sum::<f64>() / p_hat.len() as f64;
    let diag = w2.mapv(|v| v * gain + 8.0 * lambda + 1e-12);
    let rhs = filter(&(observed * weights), true);
    let target = OFFSET_CG_TOL * sum_sq(&rhs).sqrt().max(f64::MIN_POSITIVE);

    let mut x = start;
    let mut r = &rhs - &apply(&x);
    let mut z = &r / &diag;
    let mut dir = z.clone();
    let mut rz = (&r * &z).sum();
    for _ in 0..max_iters {
        if sum_sq(&r).sqrt() <= target {
            break;
        }
        let ad = apply(&dir);
        let curvature = (&dir * &ad).sum();
        if !(curvature > 0.0) {
            break;
        }
        let alpha = rz / curvature;
        x.scaled_add(alpha, &dir);
        r.scaled_add(-alpha, &ad);
        z = &r / &diag;
        let rz_next = (&r * &z).sum();
        dir = &z + &(dir * (rz_next / rz));
        rz = rz_next;
    }
    x
}

/// Offset seed for one channel of a capture, in units of the window ceiling.
pub fn init_offset(coded: &CodedLdrImage, channel: usize, cfg: &SolverConfig) -> Array2<f64> {
    offset_seed(
        &coded.measurement(channel),
        coded.mask.values(),
        &coded.reliability_plane(channel),
        cfg,
    )
}

/// A reconstruction of every channel of one capture.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// Relative radiance in the units of the capture's metering window.
    pub radiance: RadianceImage,
    /// Per-channel feature maps cropped to the image.
    pub maps: Vec<FeatureMaps>,
    pub traces: Vec<SolverTrace>,
}

impl Reconstruction {
    pub fn converged(&self) -> bool {
        self.traces.iter().all(|t| t.converged)
    }

    /// Active sparse coefficients summed over channels.
    pub fn active_count(&self, threshold: f64) -> usize {
        self.maps.iter().map(|m| m.active_count(threshold)).sum()
    }
}

/// Operators for one image size, reusable across channels and frames.
pub struct Reconstructor<'a> {
    bank: &'a FilterBank,
    cfg: SolverConfig,
    height: usize,
    width: usize,
    pad: usize,
    grid: (usize, usize),
    op: CscOperator,
    /// Latent synthesis without the PSF; `None` when the PSF is a delta.
    latent: Option<CscOperator>,
}

impl<'a> Reconstructor<'a> {
    pub fn new(bank: &'a FilterBank, psf: &crate::capture::PsfSpec, height: usize, width: usize, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let pad = bank.size();
        let grid = (smooth_size(height + 2 * pad), smooth_size(width + 2 * pad));
        let (op, latent) = if psf.is_delta() {
            (CscOperator::new(bank, None, grid.0, grid.1, true)?, None)
        } else {
            let kernel = psf.kernel()?;
            (
                CscOperator::new(bank, Some(&kernel), grid.0, grid.1, true)?,
                Some(CscOperator::new(bank, None, grid.0, grid.1, true)?),
            )
        };
        Ok(Self {
            bank,
            cfg: cfg.clone(),
            height,
            width,
            pad,
            grid,
            op,
            latent,
        })
    }

    fn padded(&self, a: &Array2<f64>) -> Array2<f64> {
        pad_reflect(a, self.pad, self.pad, self.grid.0, self.grid.1)
    }

    fn cropped(&self, a: &Array2<f64>) -> Array2<f64> {
        crop(a, self.pad, self.pad, self.height, self.width)
    }

    pub fn run(&self, coded: &CodedLdrImage) -> Result<Reconstruction> {
        if coded.height() != self.height || coded.width() != self.width {
            return Err(Error::Dimension(format!(
                "capture {}x{} for a {}x{} reconstructor",
                coded.width(),
                coded.height(),
                self.width,
                self.height
            )));
        }
        let mask = self.padded(coded.mask.values());
        let mut planes = Vec::with_capacity(coded.channels());
        let mut maps = Vec::with_capacity(coded.channels());
        let mut traces = Vec::with_capacity(coded.channels());
        for ch in 0..coded.channels() {
            let rel = self.padded(&coded.reliability_plane(ch));
            let meas = self.padded(&coded.measurement(ch));
            let weights = &mask * &rel;
            let observed = &meas * &rel;
            let mut init = FeatureMaps::zeros(self.bank.k() + 1, self.grid.0, self.grid.1, true);
            let last = init.len() - 1;
            let mut seed = offset_seed(&meas, &mask, &rel, &self.cfg);
            if self.cfg.offset_init == OffsetInit::Solve {
                seed = solve_offset(&self.op, &observed, &weights, seed, self.cfg.lambda_s, self.cfg.offset_cg_iters);
            }
            init.maps_mut()[last] = seed;
            let bounds = self.cfg.clip_constraints.then(|| {
                let (lower, upper) = coded.clip_bounds(ch);
                SynthesisBounds::from_sensor(&self.padded(&lower), &self.padded(&upper), &mask, &weights)
            });
            let out = admm(&self.op, &observed, &weights, bounds.as_ref(), init, &self.cfg)?;
            let latent = match &self.latent {
                Some(op) => op.synthesize(&out.maps)?,
                None => out.synthesis,
            };
            planes.push(self.cropped(&latent).mapv(|v| (v * coded.ceiling).max(0.0)));
            let cropped: Vec<Array2<f64>> = out.maps.maps().iter().map(|m| self.cropped(m)).collect();
            maps.push(FeatureMaps::new(cropped, true)?);
            traces.push(out.trace);
        }
        Ok(Reconstruction {
            radiance: RadianceImage::from_channels(&planes)?,
            maps,
            traces,
        })
    }
}

pub fn reconstruct_hdr(coded: &CodedLdrImage, bank: &FilterBank, cfg: &SolverConfig) -> Result<Reconstruction> {
    Reconstructor::new(bank, &coded.psf, coded.height(), coded.width(), cfg)?.run(coded)
}

/// Independent per-frame reconstruction; frames must share size, mask and PSF.
pub fn reconstruct_video(frames: &[CodedLdrImage], bank: &FilterBank, cfg: &SolverConfig) -> Result<Vec<Reconstruction>> {
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    for (i, f) in frames.iter().enumerate() {
        if f.width() != first.width() || f.height() != first.height() || f.channels() != first.channels() {
            return Err(Error::Dimension(format!("frame {i} differs in size from frame 0")));
        }
        if f.mask.values() != first.mask.values() || f.psf != first.psf {
            return Err(Error::param(format!("frame {i} uses a different mask or PSF")));
        }
    }
    let rec = Reconstructor::new(bank, &first.psf, first.height(), first.width(), cfg)?;
    frames.iter().map(|f| rec.run(f)).collect()
}
