//! Per-pixel exposure masks (the diagonal of the coding operator).
//!
//! Random generators draw from ChaCha8 seeded with `seed_from_u64`, in
//! row-major pixel order, so a mask is reproducible from its sidecar alone.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{load_hdr, save_hdr, RadianceImage};

/// Name of the PRNG recorded in mask metadata.
pub const PRNG_NAME: &str = "chacha8";

/// Four exposures two stops apart; `e4 / e1 = 2^6`.
pub const DEFAULT_FOUR_LEVELS: [f64; 4] = [0.015625, 0.0625, 0.25, 1.0];

/// `e_high / e_low = 8`, as in dual ISO 100/800 capture.
pub const DEFAULT_INTERLEAVED: (f64, f64) = (0.125, 1.0);

pub const DEFAULT_GAUSSIAN: (f64, f64) = (0.6, 0.1);

pub const DEFAULT_BINARY_P_ON: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Binary,
    Gaussian,
    Uniform,
    FourExposure,
    FixedPattern,
    Interleaved,
}

impl MaskKind {
    pub const ALL: [MaskKind; 6] = [
        MaskKind::Binary,
        MaskKind::Gaussian,
        MaskKind::Uniform,
        MaskKind::FourExposure,
        MaskKind::FixedPattern,
        MaskKind::Interleaved,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MaskKind::Binary => "binary",
            MaskKind::Gaussian => "gaussian",
            MaskKind::Uniform => "uniform",
            MaskKind::FourExposure => "four_exposure",
            MaskKind::FixedPattern => "fixed_pattern",
            MaskKind::Interleaved => "interleaved",
        }
    }
}

impl std::str::FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MaskKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::param(format!("unknown mask kind {s:?}")))
    }
}

impl std::fmt::Display for MaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Generator parameters, serialized into the mask sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskSpec {
    Binary { p_on: f64 },
    Gaussian { mean: f64, stddev: f64 },
    Uniform,
    FourExposure { levels: [f64; 4] },
    FixedPattern { levels: [f64; 4] },
    Interleaved { e_low: f64, e_high: f64 },
}

impl MaskSpec {
    /// Default parameters for a kind.
    pub fn default_for(kind: MaskKind) -> Self {
        match kind {
            MaskKind::Binary => MaskSpec::Binary {
                p_on: DEFAULT_BINARY_P_ON,
            },
            MaskKind::Gaussian => MaskSpec::Gaussian {
                mean: DEFAULT_GAUSSIAN.0,
                stddev: DEFAULT_GAUSSIAN.1,
            },
            MaskKind::Uniform => MaskSpec::Uniform,
            MaskKind::FourExposure => MaskSpec::FourExposure {
                levels: DEFAULT_FOUR_LEVELS,
            },
            MaskKind::FixedPattern => MaskSpec::FixedPattern {
                levels: DEFAULT_FOUR_LEVELS,
            },
            MaskKind::Interleaved => MaskSpec::Interleaved {
                e_low: DEFAULT_INTERLEAVED.0,
                e_high: DEFAULT_INTERLEAVED.1,
            },
        }
    }

    pub fn kind(&self) -> MaskKind {
        match self {
            MaskSpec::Binary { .. } => MaskKind::Binary,
            MaskSpec::Gaussian { .. } => MaskKind::Gaussian,
            MaskSpec::Uniform => MaskKind::Uniform,
            MaskSpec::FourExposure { .. } => MaskKind::FourExposure,
            MaskSpec::FixedPattern { .. } => MaskKind::FixedPattern,
            MaskSpec::Interleaved { .. } => MaskKind::Interleaved,
        }
    }

    /// Runs the matching generator.
    pub fn generate(&self, width: usize, height: usize, seed: u64) -> Result<ExposureMask> {
        match *self {
            MaskSpec::Binary { p_on } => gen_binary(width, height, p_on, seed),
            MaskSpec::Gaussian { mean, stddev } => gen_gaussian(width, height, mean, stddev, seed),
            MaskSpec::Uniform => gen_uniform(width, height, seed),
            MaskSpec::FourExposure { levels } => gen_four_exposure(width, height, levels, seed),
            MaskSpec::FixedPattern { levels } => gen_fixed_pattern(width, height, levels),
            MaskSpec::Interleaved { e_low, e_high } => gen_interleaved(width, height, e_low, e_high),
        }
    }
}

/// Sidecar metadata written next to the mask raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskMetadata {
    pub kind: MaskKind,
    pub parameters: MaskSpec,
    pub seed: Option<u64>,
    pub prng: Option<String>,
    pub width: usize,
    pub height: usize,
}

/// Per-pixel transmissivity in `[0, 1]`, indexed `[row, col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureMask {
    values: Array2<f64>,
    spec: MaskSpec,
    seed: Option<u64>,
}

impl ExposureMask {
    /// Wraps an existing raster; values must lie in `[0, 1]`.
    pub fn from_values(values: Array2<f64>, spec: MaskSpec, seed: Option<u64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Dimension("empty mask".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::param(format!("mask value {v} outside [0, 1]")));
        }
        Ok(Self { values, spec, seed })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn kind(&self) -> MaskKind {
        self.spec.kind()
    }

    pub fn spec(&self) -> &MaskSpec {
        &self.spec
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn metadata(&self) -> MaskMetadata {
        MaskMetadata {
            kind: self.kind(),
            parameters: self.spec.clone(),
            seed: self.seed,
            prng: self.seed.map(|_| PRNG_NAME.to_string()),
            width: self.width(),
            height: self.height(),
        }
    }

    /// Writes a 1-channel PFM and a `.json` sidecar beside it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let img = RadianceImage::from_array(&self.values)?;
        save_hdr(&img, path)?;
        let sidecar = path.with_extension("json");
        let json = serde_json::to_string_pretty(&self.metadata())?;
        fs::write(&sidecar, json).map_err(|e| Error::io(sidecar, e))
    }

    /// Reads a mask written by [`ExposureMask::save`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = load_hdr(path)?;
        if img.channels() != 1 {
            return Err(Error::format("mask", "mask raster must have one channel"));
        }
        let sidecar = path.with_extension("json");
        let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let meta: MaskMetadata = serde_json::from_str(&text)?;
        if meta.width != img.width() || meta.height != img.height() {
            return Err(Error::Dimension("mask sidecar disagrees with raster".into()));
        }
        Self::from_values(img.channel(0), meta.parameters, meta.seed)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Dimension(format!("empty mask {width}x{height}")));
    }
    Ok(())
}

pub fn gen_binary(width: usize, height: usize, p_on: f64, seed: u64) -> Result<ExposureMask> {
    check_dims(width, height)?;
    if !(p_on > 0.0 && p_on < 1.0) {
        return Err(Error::param(format!("binary p_on {p_on} must lie in (0, 1)")));
    }
    let mut rng = rng(seed);
    let values = Array2::from_shape_simple_fn((height, width), || {
        if rng.random::<f64>() < p_on {
            1.0
        } else {
            0.0
        }
    });
    ExposureMask::from_values(values, MaskSpec::Binary { p_on }, Some(seed))
}

/// Normal samples clamped to `[0, 1]`; `stddev` is a standard deviation.
pub fn gen_gaussian(
    width: usize,
    height: usize,
    mean: f64,
    stddev: f64,
    seed: u64,
) -> Result<ExposureMask> {
    check_dims(width, height)?;
    if !(mean > 0.0 && mean < 1.0) || !(stddev > 0.0 && stddev.is_finite()) {
        return Err(Error::param(format!(
            "gaussian mask needs mean in (0, 1) and stddev > 0, got {mean}, {stddev}"
        )));
    }
    let normal = Normal::new(mean, stddev).map_err(|e| Error::param(e.to_string()))?;
    let mut rng = rng(seed);
    let values =
        Array2::from_shape_simple_fn((height, width), || normal.sample(&mut rng).clamp(0.0, 1.0));
    ExposureMask::from_values(values, MaskSpec::Gaussian { mean, stddev }, Some(seed))
}

pub fn gen_uniform(width: usize, height: usize, seed: u64) -> Result<ExposureMask> {
    check_dims(width, height)?;
    let mut rng = rng(seed);
    let values = Array2::from_shape_simple_fn((height, width), || rng.random::<f64>());
    ExposureMask::from_values(values, MaskSpec::Uniform, Some(seed))
}

fn check_levels(levels: &[f64; 4]) -> Result<()> {
    if levels.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
        return Err(Error::param(format!("exposure levels {levels:?} must lie in (0, 1]")));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param(format!(
            "exposure levels {levels:?} must be strictly ascending"
        )));
    }
    Ok(())
}

/// Each pixel takes one of four levels uniformly at random.
pub fn gen_four_exposure(
    width: usize,
    height: usize,
    levels: [f64; 4],
    seed: u64,
) -> Result<ExposureMask> {
    check_dims(width, height)?;
    check_levels(&levels)?;
    let mut rng = rng(seed);
    let values =
        Array2::from_shape_simple_fn((height, width), || levels[rng.random_range(0..4usize)]);
    ExposureMask::from_values(values, MaskSpec::FourExposure { levels }, Some(seed))
}

/// Repeats `[[e1, e2], [e3, e4]]` over the raster.
pub fn gen_fixed_pattern(width: usize, height: usize, levels: [f64; 4]) -> Result<ExposureMask> {
    check_dims(width, height)?;
    check_levels(&levels)?;
    let values = Array2::from_shape_fn((height, width), |(r, c)| levels[2 * (r % 2) + (c % 2)]);
    ExposureMask::from_values(values, MaskSpec::FixedPattern { levels }, None)
}

/// Even rows get `e_high`, odd rows `e_low`.
pub fn gen_interleaved(width: usize, height: usize, e_low: f64, e_high: f64) -> Result<ExposureMask> {
    check_dims(width, height)?;
    if !(e_low > 0.0 && e_low < e_high && e_high <= 1.0) {
        return Err(Error::param(format!(
            "interleaved mask needs 0 < e_low < e_high <= 1, got {e_low}, {e_high}"
        )));
    }
    let values =
        Array2::from_shape_fn((height, width), |(r, _)| if r % 2 == 0 { e_high } else { e_low });
    ExposureMask::from_values(values, MaskSpec::Interleaved { e_low, e_high }, None)
}
