//! Coded single-shot capture simulation and the reliability raster.
//!
//! Pipeline per channel: PSF convolution (reflective boundary), per-pixel
//! multiplication by the exposure mask, metering of the sensor window
//! `[floor, floor * sensor_dr]`, clamping, normalization to `[0, 1]`, camera
//! response, and round-half-up quantization.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{load_hdr, load_png, save_hdr, save_png, LdrImage, RadianceImage};
use crate::masks::ExposureMask;
use crate::raster::{convolve_reflect, gaussian_kernel};

pub const DEFAULT_SENSOR_DR: f64 = 1000.0;
pub const DEFAULT_LOW_THRESH: u8 = 2;
pub const DEFAULT_HIGH_THRESH: u8 = 253;

/// Optical point spread function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PsfSpec {
    Delta,
    Gaussian { size: usize, sigma: f64 },
    Kernel { size: usize, taps: Vec<f64> },
}

impl Default for PsfSpec {
    fn default() -> Self {
        PsfSpec::Gaussian {
            size: 5,
            sigma: 0.5,
        }
    }
}

impl PsfSpec {
    /// Kernel taps; validated non-negative and summing to one.
    pub fn kernel(&self) -> Result<Array2<f64>> {
        let k = match self {
            PsfSpec::Delta => gaussian_kernel(1, 0.0),
            PsfSpec::Gaussian { size, sigma } => {
                if size % 2 == 0 || *sigma < 0.0 {
                    return Err(Error::param(format!(
                        "gaussian psf needs odd size and sigma >= 0, got {size}, {sigma}"
                    )));
                }
                gaussian_kernel(*size, *sigma)
            }
            PsfSpec::Kernel { size, taps } => {
                if size % 2 == 0 || taps.len() != size * size {
                    return Err(Error::param("psf taps must form an odd square kernel"));
                }
                Array2::from_shape_vec((*size, *size), taps.clone())
                    .map_err(|e| Error::param(e.to_string()))?
            }
        };
        if k.iter().any(|&v| v < 0.0 || !v.is_finite()) || (k.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::param("psf entries must be >= 0 and sum to 1"));
        }
        Ok(k)
    }

    pub fn is_delta(&self) -> bool {
        match self {
            PsfSpec::Delta => true,
            PsfSpec::Gaussian { size, sigma } => *size == 1 || *sigma == 0.0,
            PsfSpec::Kernel { size, .. } => *size == 1,
        }
    }
}

/// Camera response applied to window-normalized values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Crf {
    Linear,
    /// `t -> t^(1/gamma)`.
    Gamma { gamma: f64 },
}

impl Default for Crf {
    fn default() -> Self {
        Crf::Linear
    }
}

impl Crf {
    pub fn apply(self, t: f64) -> f64 {
        match self {
            Crf::Linear => t,
            Crf::Gamma { gamma } => t.powf(1.0 / gamma),
        }
    }

    pub fn invert(self, u: f64) -> f64 {
        match self {
            Crf::Linear => u,
            Crf::Gamma { gamma } => u.powf(gamma),
        }
    }

    fn validate(self) -> Result<()> {
        match self {
            Crf::Gamma { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                Err(Error::param(format!("gamma {gamma} must be positive")))
            }
            _ => Ok(()),
        }
    }
}

impl std::str::FromStr for Crf {
    type Err = Error;

    /// `linear`, `gamma` (2.2) or `gamma:<value>`.
    fn from_str(s: &str) -> Result<Self> {
        let crf = match s.split_once(':') {
            None if s == "linear" => Crf::Linear,
            None if s == "gamma" => Crf::Gamma { gamma: 2.2 },
            Some(("gamma", g)) => Crf::Gamma {
                gamma: g.parse().map_err(|_| Error::param(format!("bad gamma {g:?}")))?,
            },
            _ => return Err(Error::param(format!("unknown camera response {s:?}"))),
        };
        crf.validate()?;
        Ok(crf)
    }
}

/// How the sensor window is placed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metering {
    /// Minimize the number of saturated plus under-exposed samples.
    #[default]
    MinimizeClipped,
    /// Use a fixed window floor.
    Fixed { floor: f64 },
}

/// Additive Gaussian read noise, standard deviation in window units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadNoise {
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureConfig {
    pub psf: PsfSpec,
    pub sensor_dr: f64,
    pub crf: Crf,
    pub quantization_bits: u32,
    pub metering: Metering,
    pub read_noise: Option<ReadNoise>,
    pub low_thresh: u8,
    pub high_thresh: u8,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self {
            psf: PsfSpec::default(),
            sensor_dr: DEFAULT_SENSOR_DR,
            crf: Crf::Linear,
            quantization_bits: 8,
            metering: Metering::MinimizeClipped,
            read_noise: None,
            low_thresh: DEFAULT_LOW_THRESH,
            high_thresh: DEFAULT_HIGH_THRESH,
        }
    }
}

impl CaptureConfig {
    pub fn validate(&self) -> Result<()> {
        self.psf.kernel()?;
        self.crf.validate()?;
        if !(self.sensor_dr > 1.0 && self.sensor_dr.is_finite()) {
            return Err(Error::param(format!("sensor_dr {} must exceed 1", self.sensor_dr)));
        }
        if !(1..=8).contains(&self.quantization_bits) {
            return Err(Error::param("quantization_bits must be in 1..=8"));
        }
        if self.low_thresh >= self.high_thresh {
            return Err(Error::param("reliability thresholds out of order"));
        }
        if let Metering::Fixed { floor } = self.metering {
            if !(floor > 0.0 && floor.is_finite()) {
                return Err(Error::param("fixed metering floor must be positive"));
            }
        }
        Ok(())
    }

    fn levels(&self) -> f64 {
        ((1u32 << self.quantization_bits) - 1) as f64
    }
}

/// A quantized coded capture together with everything needed to invert it.
#[derive(Debug, Clone, PartialEq)]
pub struct CodedLdrImage {
    pub ldr: LdrImage,
    pub mask: ExposureMask,
    /// Radiance mapped to code 0.
    pub floor: f64,
    /// Radiance mapped to the top code; `ceiling = floor * sensor_dr`.
    pub ceiling: f64,
    pub crf: Crf,
    pub psf: PsfSpec,
    pub quantization_bits: u32,
    pub sensor_dr: f64,
    /// 1 where the sample is trusted, 0 where saturated or under-exposed;
    /// same channel layout as `ldr`.
    pub reliability: RadianceImage,
    pub low_thresh: u8,
    pub high_thresh: u8,
}

impl CodedLdrImage {
    pub fn width(&self) -> usize {
        self.ldr.width()
    }

    pub fn height(&self) -> usize {
        self.ldr.height()
    }

    pub fn channels(&self) -> usize {
        self.ldr.channels()
    }

    fn levels(&self) -> f64 {
        ((1u32 << self.quantization_bits) - 1) as f64
    }

    /// Linearized measurement of one channel divided by the window ceiling.
    pub fn measurement(&self, channel: usize) -> Array2<f64> {
        let levels = self.levels();
        let span = (self.ceiling - self.floor) / self.ceiling;
        let lo = self.floor / self.ceiling;
        Array2::from_shape_fn((self.height(), self.width()), |(r, c)| {
            let code = self.ldr.get(r, c, channel) as f64;
            lo + self.crf.invert(code / levels) * span
        })
    }

    /// Per-pixel data weights: mask transmissivity times reliability.
    pub fn data_weights(&self, channel: usize) -> Array2<f64> {
        let rel = self.reliability.channel(channel);
        let mut w = self.mask.values().clone();
        Zip::from(&mut w).and(&rel).for_each(|w, &m| *w *= m);
        w
    }

    /// Interval known to hold each pixel's window-normalized sensor value.
    /// Clipped pixels get the quantization cell of their code, open toward
    /// the clipped side; reliable pixels are unbounded.
    pub fn clip_bounds(&self, channel: usize) -> (Array2<f64>, Array2<f64>) {
        let levels = self.levels();
        let span = (self.ceiling - self.floor) / self.ceiling;
        let lo = self.floor / self.ceiling;
        let level = |code: f64| lo + self.crf.invert((code / levels).clamp(0.0, 1.0)) * span;
        let dim = (self.height(), self.width());
        let mut lower = Array2::from_elem(dim, f64::NEG_INFINITY);
        let mut upper = Array2::from_elem(dim, f64::INFINITY);
        for r in 0..dim.0 {
            for c in 0..dim.1 {
                let code = self.ldr.get(r, c, channel);
                if code <= self.low_thresh {
                    lower[[r, c]] = 0.0;
                    upper[[r, c]] = level(code as f64 + 0.5);
                } else if code >= self.high_thresh {
                    lower[[r, c]] = level(code as f64 - 0.5);
                }
            }
        }
        (lower, upper)
    }

    pub fn reliability_plane(&self, channel: usize) -> Array2<f64> {
        self.reliability.channel(channel)
    }

    /// Writes `<stem>.json` metadata next to `<stem>.png`,
    /// `<stem>.reliability.pfm` and `<stem>.mask.pfm`.
    pub fn save(&self, json_path: impl AsRef<Path>) -> Result<()> {
        let json_path = json_path.as_ref();
        let files = CaptureFiles::for_json(json_path);
        save_png(&self.ldr, &files.ldr)?;
        save_hdr(&self.reliability, &files.reliability)?;
        self.mask.save(&files.mask)?;
        let meta = CaptureMetadata {
            width: self.width(),
            height: self.height(),
            channels: self.channels(),
            floor: self.floor,
            ceiling: self.ceiling,
            crf: self.crf,
            psf: self.psf.clone(),
            quantization_bits: self.quantization_bits,
            sensor_dr: self.sensor_dr,
            low_thresh: self.low_thresh,
            high_thresh: self.high_thresh,
            ldr: file_name(&files.ldr),
            reliability: file_name(&files.reliability),
            mask: file_name(&files.mask),
        };
        fs::write(json_path, serde_json::to_string_pretty(&meta)?)
            .map_err(|e| Error::io(json_path, e))
    }

    pub fn load(json_path: impl AsRef<Path>) -> Result<Self> {
        let json_path = json_path.as_ref();
        let text = fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
        let meta: CaptureMetadata = serde_json::from_str(&text)?;
        let dir = json_path.parent().unwrap_or(Path::new("."));
        let ldr = load_png(dir.join(&meta.ldr))?;
        let reliability = load_hdr(dir.join(&meta.reliability))?;
        let mask = ExposureMask::load(dir.join(&meta.mask))?;
        if ldr.width() != meta.width
            || ldr.height() != meta.height
            || ldr.channels() != meta.channels
            || reliability.width() != meta.width
            || reliability.height() != meta.height
            || mask.width() != meta.width
            || mask.height() != meta.height
        {
            return Err(Error::Dimension("capture files disagree with metadata".into()));
        }
        Ok(Self {
            ldr,
            mask,
            floor: meta.floor,
            ceiling: meta.ceiling,
            crf: meta.crf,
            psf: meta.psf,
            quantization_bits: meta.quantization_bits,
            sensor_dr: meta.sensor_dr,
            reliability,
            low_thresh: meta.low_thresh,
            high_thresh: meta.high_thresh,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CaptureMetadata {
    width: usize,
    height: usize,
    channels: usize,
    floor: f64,
    ceiling: f64,
    crf: Crf,
    psf: PsfSpec,
    quantization_bits: u32,
    sensor_dr: f64,
    low_thresh: u8,
    high_thresh: u8,
    ldr: String,
    reliability: String,
    mask: String,
}

struct CaptureFiles {
    ldr: PathBuf,
    reliability: PathBuf,
    mask: PathBuf,
}

impl CaptureFiles {
    fn for_json(json: &Path) -> Self {
        let stem = json.with_extension("");
        let with = |suffix: &str| {
            let mut s = stem.clone().into_os_string();
            s.push(suffix);
            PathBuf::from(s)
        };
        Self {
            ldr: with(".png"),
            reliability: with(".reliability.pfm"),
            mask: with(".mask.pfm"),
        }
    }
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Number of samples outside `[floor, ceiling]`.
pub fn clipped_count(values: &[f64], floor: f64, ceiling: f64) -> usize {
    values.iter().filter(|&&v| v < floor || v > ceiling).count()
}

/// Picks the window `[floor, floor * sensor_dr]` clipping the fewest samples.
/// Candidate floors are the distinct positive sample values; ties go to the
/// smallest floor.
pub fn meter_values(values: &[f64], sensor_dr: f64) -> Result<(f64, f64)> {
    if !(sensor_dr > 1.0) {
        return Err(Error::param("sensor_dr must exceed 1"));
    }
    let mut sorted: Vec<f64> = values.to_vec();
    if sorted.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::param("metering input must be finite and non-negative"));
    }
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let first_positive = sorted.partition_point(|&v| v <= 0.0);
    if first_positive == n {
        return Err(Error::EmptyScene);
    }
    let mut best: Option<(usize, f64)> = None;
    let mut upper = first_positive;
    let mut i = first_positive;
    while i < n {
        let floor = sorted[i];
        let ceiling = floor * sensor_dr;
        while upper < n && sorted[upper] <= ceiling {
            upper += 1;
        }
        let clipped = i + (n - upper);
        if best.is_none_or(|(c, _)| clipped < c) {
            best = Some((clipped, floor));
        }
        while i < n && sorted[i] == floor {
            i += 1;
        }
    }
    let (_, floor) = best.expect("at least one positive sample");
    Ok((floor, floor * sensor_dr))
}

/// Meters all samples of an (already masked) radiance image.
pub fn meter(scene_masked: &RadianceImage, sensor_dr: f64) -> Result<(f64, f64)> {
    let values: Vec<f64> = scene_masked.data().iter().map(|&v| v as f64).collect();
    meter_values(&values, sensor_dr)
}

/// 0 where a code is at or below `low` or at or above `high`, else 1.
pub fn reliability_mask(ldr: &LdrImage, low: u8, high: u8) -> RadianceImage {
    let data = ldr
        .data()
        .iter()
        .map(|&c| if c <= low || c >= high { 0.0 } else { 1.0 })
        .collect();
    RadianceImage::new(ldr.width(), ldr.height(), ldr.channels(), data)
        .expect("same layout as a valid LDR image")
}

/// Mask-modulated, PSF-blurred scene: one raster per channel.
pub fn modulate(scene: &RadianceImage, mask: &ExposureMask, psf: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
    if scene.width() != mask.width() || scene.height() != mask.height() {
        return Err(Error::Dimension(format!(
            "scene {}x{} vs mask {}x{}",
            scene.width(),
            scene.height(),
            mask.width(),
            mask.height()
        )));
    }
    Ok(scene
        .planes()
        .iter()
        .map(|plane| convolve_reflect(plane, psf) * mask.values())
        .collect())
}

pub fn simulate_capture(
    scene: &RadianceImage,
    mask: &ExposureMask,
    cfg: &CaptureConfig,
) -> Result<CodedLdrImage> {
    cfg.validate()?;
    let psf = cfg.psf.kernel()?;
    let mut planes = modulate(scene, mask, &psf)?;

    let (floor, ceiling) = match cfg.metering {
        Metering::MinimizeClipped => {
            let values: Vec<f64> = planes.iter().flat_map(|p| p.iter().copied()).collect();
            meter_values(&values, cfg.sensor_dr)?
        }
        Metering::Fixed { floor } => (floor, floor * cfg.sensor_dr),
    };
    let span = ceiling - floor;

    if let Some(noise) = cfg.read_noise {
        let normal = Normal::new(0.0, noise.sigma * span).map_err(|e| Error::param(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        for plane in &mut planes {
            plane.mapv_inplace(|v| v + normal.sample(&mut rng));
        }
    }

    let levels = cfg.levels();
    let (h, w, channels) = (scene.height(), scene.width(), scene.channels());
    let mut codes = vec![0u8; w * h * channels];
    for (ch, plane) in planes.iter().enumerate() {
        for ((r, c), &v) in plane.indexed_iter() {
            let t = ((v - floor) / span).clamp(0.0, 1.0);
            let code = (levels * cfg.crf.apply(t) + 0.5).floor().clamp(0.0, levels);
            codes[(r * w + c) * channels + ch] = code as u8;
        }
    }
    let ldr = LdrImage::new(w, h, channels, codes)?;
    let reliability = reliability_mask(&ldr, cfg.low_thresh, cfg.high_thresh);
    Ok(CodedLdrImage {
        ldr,
        mask: mask.clone(),
        floor,
        ceiling,
        crf: cfg.crf,
        psf: cfg.psf.clone(),
        quantization_bits: cfg.quantization_bits,
        sensor_dr: cfg.sensor_dr,
        reliability,
        low_thresh: cfg.low_thresh,
        high_thresh: cfg.high_thresh,
    })
}

/// Inverts quantization, response and normalization back to radiance within
/// the metered window.
pub fn linearize(coded: &CodedLdrImage) -> RadianceImage {
    let planes: Vec<Array2<f64>> = (0..coded.channels())
        .map(|c| coded.measurement(c) * coded.ceiling)
        .collect();
    RadianceImage::from_channels(&planes).expect("measurement planes share a shape")
}
