//! Image containers, luminance, display tonemapping and file I/O.
//!
//! Radiance rasters store `f32` samples interleaved per pixel in row-major
//! order. Reductions are accumulated in `f64`.

mod pfm;
mod png_io;
mod rgbe;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub use pfm::{read_pfm, write_pfm};
pub(crate) use pfm::{read_pfm_samples, write_pfm_samples};
pub use png_io::{load_png, read_png, save_png, write_png};
pub use rgbe::{read_rgbe, rgbe_to_rgb, rgb_to_rgbe, write_rgbe};

/// Rec.709 luminance weights for linear RGB.
pub const LUMA_WEIGHTS: [f64; 3] = [0.2126, 0.7152, 0.0722];

/// Relative radiance raster with 1 or 3 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl RadianceImage {
    /// Builds an image, rejecting negative or non-finite samples.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        check_layout(width, height, channels, data.len())?;
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::InvalidPixel { index, value });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    /// Single-channel image from a row-major `f64` raster. Negative values are
    /// clamped to zero.
    pub fn from_array(array: &Array2<f64>) -> Result<Self> {
        Self::from_channels(std::slice::from_ref(array))
    }

    /// Interleaves per-channel rasters (all the same shape) into one image.
    /// Negative values are clamped to zero.
    pub fn from_channels(planes: &[Array2<f64>]) -> Result<Self> {
        let channels = planes.len();
        if channels != 1 && channels != 3 {
            return Err(Error::param(format!("{channels} channels; expected 1 or 3")));
        }
        let (height, width) = planes[0].dim();
        if planes.iter().any(|p| p.dim() != (height, width)) {
            return Err(Error::Dimension("channel planes differ in shape".into()));
        }
        let mut data = Vec::with_capacity(width * height * channels);
        for r in 0..height {
            for c in 0..width {
                for plane in planes {
                    data.push(plane[[r, c]].max(0.0) as f32);
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    /// Extracts one channel as an `f64` raster indexed `[row, col]`.
    pub fn channel(&self, channel: usize) -> Array2<f64> {
        assert!(channel < self.channels, "channel {channel} out of range");
        Array2::from_shape_fn((self.height, self.width), |(r, c)| {
            self.get(r, c, channel) as f64
        })
    }

    pub fn planes(&self) -> Vec<Array2<f64>> {
        (0..self.channels).map(|c| self.channel(c)).collect()
    }

    /// Multiplies every sample by a non-negative factor.
    pub fn scaled(&self, factor: f64) -> Self {
        assert!(factor >= 0.0 && factor.is_finite());
        Self {
            data: self.data.iter().map(|&v| (v as f64 * factor) as f32).collect(),
            ..self.clone()
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }
}

/// 8-bit display or sensor image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LdrImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl LdrImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        check_layout(width, height, channels, data.len())?;
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> u8 {
        self.data[(row * self.width + col) * self.channels + channel]
    }
}

fn check_layout(width: usize, height: usize, channels: usize, len: usize) -> Result<()> {
    if channels != 1 && channels != 3 {
        return Err(Error::param(format!("{channels} channels; expected 1 or 3")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Dimension(format!("empty image {width}x{height}")));
    }
    if len != width * height * channels {
        return Err(Error::Dimension(format!(
            "{len} samples for a {width}x{height}x{channels} image"
        )));
    }
    Ok(())
}

/// Loads a `.pfm` or Radiance `.hdr` file, chosen by extension.
pub fn load_hdr(path: impl AsRef<Path>) -> Result<RadianceImage> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    match extension(path).as_deref() {
        Some("pfm") => read_pfm(&mut reader),
        Some("hdr") | Some("pic") | Some("rgbe") => read_rgbe(&mut reader),
        _ => Err(Error::format(
            "hdr",
            format!("unrecognised extension on {}", path.display()),
        )),
    }
}

/// Writes run-length encoded RGBE for `.hdr`/`.pic`/`.rgbe` paths and a
/// little-endian PFM otherwise.
pub fn save_hdr(img: &RadianceImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    match extension(path).as_deref() {
        Some("hdr") | Some("pic") | Some("rgbe") => write_rgbe(img, &mut writer, true),
        _ => write_pfm(img, &mut writer),
    }
    .map_err(|e| Error::io(path, e))?;
    writer.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

/// Per-pixel Rec.709 luminance. Single-channel images are returned unchanged.
pub fn luminance(img: &RadianceImage) -> RadianceImage {
    if img.channels == 1 {
        return img.clone();
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|px| {
            px.iter()
                .zip(LUMA_WEIGHTS)
                .map(|(&v, w)| v as f64 * w)
                .sum::<f64>() as f32
        })
        .collect();
    RadianceImage {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
    }
}

/// Luminance as an `f64` raster.
pub fn luminance_array(img: &RadianceImage) -> Array2<f64> {
    luminance(img).channel(0)
}

/// Global display operator: scale by the 99.9th luminance percentile, compress
/// with `v / (1 + v)`, apply a 1/2.2 gamma and quantize to 8 bits.
pub fn tonemap_display(img: &RadianceImage) -> LdrImage {
    let mut lum: Vec<f32> = luminance(img).data;
    lum.sort_by(f32::total_cmp);
    let n = lum.len();
    let rank = ((0.999 * n as f64).ceil() as usize).clamp(1, n) - 1;
    let mut white = lum[rank] as f64;
    if white <= 0.0 {
        white = lum[n - 1] as f64;
    }
    let data = img
        .data
        .iter()
        .map(|&v| {
            if white <= 0.0 {
                return 0;
            }
            let s = v as f64 / white;
            let compressed = s / (1.0 + s);
            (255.0 * compressed.powf(1.0 / 2.2) + 0.5).floor().clamp(0.0, 255.0) as u8
        })
        .collect();
    LdrImage {
        width: img.width,
        height: img.height,
        channels: img.channels,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_negative_and_nan_with_index() {
        let err = RadianceImage::new(2, 1, 1, vec![0.5, -1.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidPixel { index: 1, .. }));
        let err = RadianceImage::new(1, 1, 3, vec![0.0, f32::NAN, 1.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidPixel { index: 1, .. }));
        assert!(RadianceImage::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(RadianceImage::new(1, 1, 2, vec![0.0; 2]).is_err());
    }

    #[test]
    fn luminance_weights() {
        let gray = RadianceImage::new(1, 1, 3, vec![0.5, 0.5, 0.5]).unwrap();
        assert!((luminance(&gray).data()[0] - 0.5).abs() < 1e-7);
        let red = RadianceImage::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(luminance(&red).data()[0], 0.2126);
        let mono = RadianceImage::new(2, 1, 1, vec![0.25, 4.0]).unwrap();
        assert_eq!(luminance(&mono), mono);
    }

    #[test]
    fn luminance_matches_dot_product() {
        let px = [0.731f32, 2.25, 0.0137];
        let img = RadianceImage::new(1, 1, 3, px.to_vec()).unwrap();
        let expected = 0.2126 * px[0] as f64 + 0.7152 * px[1] as f64 + 0.0722 * px[2] as f64;
        assert!((luminance(&img).data()[0] as f64 - expected).abs() < 1e-6 * expected);
    }

    #[test]
    fn tonemap_degenerate_inputs() {
        let zero = RadianceImage::zeros(4, 3, 3);
        assert!(tonemap_display(&zero).data().iter().all(|&c| c == 0));
        let flat = RadianceImage::new(3, 3, 1, vec![7.5; 9]).unwrap();
        let out = tonemap_display(&flat);
        assert!(out.data().iter().all(|&c| c == out.data()[0]));
        // s = 1 -> 0.5^(1/2.2)
        assert_eq!(out.data()[0], (255.0 * 0.5f64.powf(1.0 / 2.2) + 0.5).floor() as u8);
    }

    proptest! {
        #[test]
        fn luminance_is_linear(
            x in prop::collection::vec(0.0f32..10.0, 12),
            y in prop::collection::vec(0.0f32..10.0, 12),
            a in 0.0f32..4.0,
            b in 0.0f32..4.0,
        ) {
            let xi = RadianceImage::new(2, 2, 3, x.clone()).unwrap();
            let yi = RadianceImage::new(2, 2, 3, y.clone()).unwrap();
            let mix: Vec<f32> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = luminance(&RadianceImage::new(2, 2, 3, mix).unwrap());
            let (lx, ly) = (luminance(&xi), luminance(&yi));
            for i in 0..4 {
                let rhs = a as f64 * lx.data()[i] as f64 + b as f64 * ly.data()[i] as f64;
                let got = lhs.data()[i] as f64;
                prop_assert!((got - rhs).abs() <= 1e-6 * rhs.abs().max(1.0));
            }
        }

        #[test]
        fn tonemap_is_monotone_on_ramps(
            start in 0.0f32..1.0,
            steps in prop::collection::vec(0.0f32..3.0, 2..40),
        ) {
            let mut ramp = vec![start];
            for s in &steps {
                let last = *ramp.last().unwrap();
                ramp.push(last + s);
            }
            let img = RadianceImage::new(ramp.len(), 1, 1, ramp).unwrap();
            let out = tonemap_display(&img);
            prop_assert!(out.data().windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
