//! Evaluation against ground truth: scale alignment, PSNR, SSIM, false-color
//! stop maps and scanline profiles.

use std::io::Write;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::imagery::{luminance_array, LdrImage, RadianceImage};
use crate::raster::gaussian_blur;

const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, &x, &y| acc + x * y)
}

fn check_same(rec: &RadianceImage, gt: &RadianceImage) -> Result<()> {
    if rec.width() != gt.width() || rec.height() != gt.height() {
        return Err(Error::Dimension(format!(
            "{}x{} reconstruction against {}x{} reference",
            rec.width(),
            rec.height(),
            gt.width(),
            gt.height()
        )));
    }
    Ok(())
}

/// Least-squares gain `<rec, gt> / <rec, rec>` on luminance.
pub fn align_scale(rec: &RadianceImage, gt: &RadianceImage) -> Result<f64> {
    check_same(rec, gt)?;
    align_scale_arrays(&luminance_array(rec), &luminance_array(gt))
}

pub fn align_scale_arrays(rec: &Array2<f64>, gt: &Array2<f64>) -> Result<f64> {
    let rr = dot(rec, rec);
    if rr == 0.0 {
        return Err(Error::param("cannot align an all-zero reconstruction"));
    }
    Ok(dot(rec, gt) / rr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Peak {
    /// Maximum reference luminance.
    #[default]
    ReferenceMax,
    Fixed(f64),
}

/// `10 log10(peak^2 / mse)` on luminance; `f64::INFINITY` when the images match.
pub fn psnr(rec: &RadianceImage, gt: &RadianceImage, peak: Peak) -> Result<f64> {
    check_same(rec, gt)?;
    Ok(psnr_arrays(&luminance_array(rec), &luminance_array(gt), peak))
}

pub fn psnr_arrays(rec: &Array2<f64>, gt: &Array2<f64>, peak: Peak) -> f64 {
    let mse = Zip::from(rec).and(gt).fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b)) / rec.len() as f64;
    if mse == 0.0 {
        return f64::INFINITY;
    }
    let peak = match peak {
        Peak::ReferenceMax => gt.fold(f64::NEG_INFINITY, |m, &v| m.max(v)),
        Peak::Fixed(p) => p,
    };
    10.0 * (peak * peak / mse).log10()
}

/// Mean SSIM and the per-pixel `1 - SSIM` map of two single-channel rasters
/// on unit dynamic range, with an 11x11 Gaussian window.
pub fn ssim_map(rec: &Array2<f64>, gt: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if rec.dim() != gt.dim() {
        return Err(Error::Dimension(format!("{:?} against {:?}", rec.dim(), gt.dim())));
    }
    let blur = |a: &Array2<f64>| gaussian_blur(a, SSIM_SIGMA);
    let mu_x = blur(rec);
    let mu_y = blur(gt);
    let xx = blur(&(rec * rec));
    let yy = blur(&(gt * gt));
    let xy = blur(&(rec * gt));
    let mut map = Array2::zeros(rec.dim());
    Zip::from(&mut map)
        .and(&mu_x)
        .and(&mu_y)
        .and(&xx)
        .and(&yy)
        .and(&xy)
        .for_each(|m, &mx, &my, &sxx, &syy, &sxy| {
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            let s = ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
            *m = 1.0 - s;
        });
    let mean = 1.0 - map.mean().unwrap_or(0.0);
    Ok((mean, map))
}

fn ramp_color(t: f64) -> [u8; 3] {
    // blue, cyan, green, yellow, red
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 1.0],
        [0.0, 1.0, 1.0],
        [0.0, 1.0, 0.0],
        [1.0, 1.0, 0.0],
        [1.0, 0.0, 0.0],
    ];
    let x = t.clamp(0.0, 1.0) * 4.0;
    let i = (x.floor() as usize).min(3);
    let f = x - i as f64;
    let mut out = [0u8; 3];
    for (ch, o) in out.iter_mut().enumerate() {
        let v = STOPS[i][ch] * (1.0 - f) + STOPS[i + 1][ch] * f;
        *o = (v * 255.0).round() as u8;
    }
    out
}

/// Whole-stop false-color rendering of log2 luminance.
///
/// Each pixel falls in bin `floor(log2 L)`, clamped to `[lo, hi]`; bins are
/// spread evenly along a blue-cyan-green-yellow-red ramp. Without explicit
/// bounds they are taken from the image. Returns the rendering and the bounds.
pub fn false_color_stops(img: &RadianceImage, bounds: Option<(i32, i32)>) -> (LdrImage, (i32, i32)) {
    let lum = luminance_array(img);
    let min_pos = lum.iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
    let fill = if min_pos.is_finite() { min_pos / 2.0 } else { 1.0 };
    let stops = lum.mapv(|v| (if v > 0.0 { v } else { fill }).log2().floor() as i32);
    let (lo, hi) = bounds.unwrap_or_else(|| {
        let lo = stops.iter().copied().min().unwrap_or(0);
        let hi = stops.iter().copied().max().unwrap_or(0);
        (lo, hi)
    });
    let span = (hi - lo).max(1) as f64;
    let data = stops
        .iter()
        .flat_map(|&s| ramp_color((s.clamp(lo, hi) - lo) as f64 / span))
        .collect();
    let ldr = LdrImage::new(img.width(), img.height(), 3, data).expect("layout matches source image");
    (ldr, (lo, hi))
}

/// Grayscale rendering of an error map scaled so `scale` maps to white.
pub fn error_map_image(map: &Array2<f64>, scale: f64) -> LdrImage {
    let (h, w) = map.dim();
    let data = map
        .iter()
        .map(|&v| ((v / scale).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    LdrImage::new(w, h, 1, data).expect("layout matches map")
}

/// Luminance of `row` divided by the row maximum; an all-zero row stays zero.
pub fn scanline_profile(img: &RadianceImage, row: usize) -> Result<Vec<f64>> {
    if row >= img.height() {
        return Err(Error::param(format!("row {row} outside {} rows", img.height())));
    }
    let lum = luminance_array(img);
    let line: Vec<f64> = lum.row(row).to_vec();
    let max = line.iter().copied().fold(0.0, f64::max);
    Ok(if max > 0.0 {
        line.iter().map(|v| v / max).collect()
    } else {
        vec![0.0; line.len()]
    })
}

pub fn write_scanline_csv<W: Write>(writer: W, gt: &[f64], rec: &[f64]) -> Result<()> {
    if gt.len() != rec.len() {
        return Err(Error::Dimension(format!("scanlines of {} and {} samples", gt.len(), rec.len())));
    }
    let mut out = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::format("csv", e.to_string());
    out.write_record(["x", "gt", "rec"]).map_err(io)?;
    for (x, (g, r)) in gt.iter().zip(rec).enumerate() {
        out.write_record([x.to_string(), g.to_string(), r.to_string()]).map_err(io)?;
    }
    out.flush().map_err(|e| Error::format("csv", e.to_string()))
}

fn finite_or_inf<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    }
}

fn number_or_inf<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
    }
}

/// Summary of one reconstruction against its reference. An exact match
/// serializes `psnr_db` as the string `"inf"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(serialize_with = "finite_or_inf", deserialize_with = "number_or_inf")]
    pub psnr_db: f64,
    pub ssim_mean: f64,
    pub scale_applied: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error_map: Option<String>,
}

/// Aligns `rec` to `gt` by a least-squares gain, then measures luminance
/// PSNR and SSIM (both rasters divided by the reference maximum).
/// Also returns the `1 - SSIM` map.
pub fn evaluate(rec: &RadianceImage, gt: &RadianceImage) -> Result<(EvalReport, Array2<f64>)> {
    check_same(rec, gt)?;
    let (lr, lg) = (luminance_array(rec), luminance_array(gt));
    let scale = align_scale_arrays(&lr, &lg)?;
    let aligned = &lr * scale;
    let psnr_db = psnr_arrays(&aligned, &lg, Peak::ReferenceMax);
    let peak = lg.fold(0.0f64, |m, &v| m.max(v));
    if !(peak > 0.0) {
        return Err(Error::param("reference has no positive luminance"));
    }
    let (ssim_mean, map) = ssim_map(&(aligned / peak), &(&lg / peak))?;
    Ok((
        EvalReport {
            psnr_db,
            ssim_mean,
            scale_applied: scale,
            error_map: None,
        },
        map,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(h: usize, w: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((h, w), |_| rng.random_range(0.01..1.0))
    }

    fn img(a: &Array2<f64>) -> RadianceImage {
        RadianceImage::from_array(a).unwrap()
    }

    #[test]
    fn align_scale_examples() {
        let gt = img(&random(8, 9, 1));
        assert!((align_scale(&gt, &gt).unwrap() - 1.0).abs() < 1e-12);
        assert!((align_scale(&gt.scaled(0.5), &gt).unwrap() - 2.0).abs() < 1e-6);
        let rec = img(&random(8, 9, 2));
        let (mut num, mut den) = (0.0, 0.0);
        for r in 0..8 {
            for c in 0..9 {
                let (a, b) = (rec.get(r, c, 0) as f64, gt.get(r, c, 0) as f64);
                num += a * b;
                den += a * a;
            }
        }
        assert!((align_scale(&rec, &gt).unwrap() - num / den).abs() < 1e-12);
        assert!(align_scale(&img(&Array2::zeros((8, 9))), &gt).is_err());
    }

    #[test]
    fn psnr_examples() {
        let gt = random(6, 7, 3);
        assert_eq!(psnr_arrays(&gt, &gt, Peak::ReferenceMax), f64::INFINITY);
        let mut unit = gt.clone();
        unit[[0, 0]] = 1.0;
        let shifted = &unit + 0.1;
        assert!((psnr_arrays(&shifted, &unit, Peak::ReferenceMax) - 20.0).abs() < 1e-9);

        let rec = random(6, 7, 4);
        let mut sq = 0.0;
        let mut peak = 0.0f64;
        for r in 0..6 {
            for c in 0..7 {
                sq += (rec[[r, c]] - gt[[r, c]]).powi(2);
                peak = peak.max(gt[[r, c]]);
            }
        }
        let oracle = 10.0 * (peak * peak / (sq / 42.0)).log10();
        assert!((psnr_arrays(&rec, &gt, Peak::ReferenceMax) - oracle).abs() < 1e-9);
    }

    #[test]
    fn ssim_identity_and_constants() {
        let a = random(16, 16, 5);
        let (mean, map) = ssim_map(&a, &a).unwrap();
        assert!((mean - 1.0).abs() < 1e-12);
        assert!(map.iter().all(|v| v.abs() < 1e-12));

        let (x, y) = (0.3, 0.7);
        let (mean, _) = ssim_map(&Array2::from_elem((12, 12), x), &Array2::from_elem((12, 12), y)).unwrap();
        let expected = (2.0 * x * y + SSIM_C1) / (x * x + y * y + SSIM_C1) * (SSIM_C2 / SSIM_C2);
        assert!((mean - expected).abs() < 1e-9);
    }

    #[test]
    fn false_color_bins() {
        let a = Array2::from_shape_fn((1, 3), |(_, c)| [4.0, 8.0, 8.5][c]);
        let (ldr, (lo, hi)) = false_color_stops(&img(&a), None);
        assert_eq!((lo, hi), (2, 3));
        let px = |c: usize| [ldr.get(0, c, 0), ldr.get(0, c, 1), ldr.get(0, c, 2)];
        assert_ne!(px(0), px(1));
        assert_eq!(px(1), px(2));

        let (flat, _) = false_color_stops(&img(&Array2::from_elem((4, 4), 3.0)), None);
        assert!(flat.data().chunks(3).all(|p| p == &flat.data()[..3]));

        let ramp = Array2::from_shape_fn((2, 160), |(_, c)| (c as f64 / 10.0).exp2());
        let (ldr, _) = false_color_stops(&img(&ramp), None);
        let mut colors: Vec<[u8; 3]> = (0..160).map(|c| [ldr.get(0, c, 0), ldr.get(0, c, 1), ldr.get(0, c, 2)]).collect();
        colors.dedup();
        assert_eq!(colors.len(), 16);
    }

    #[test]
    fn scanline_examples() {
        let a = Array2::from_elem((3, 5), 2.5);
        assert!(scanline_profile(&img(&a), 1).unwrap().iter().all(|&v| v == 1.0));
        let b = random(4, 9, 6);
        let line = scanline_profile(&img(&b), 2).unwrap();
        let raw: Vec<f64> = (0..9).map(|c| img(&b).get(2, c, 0) as f64).collect();
        let max = raw.iter().copied().fold(0.0, f64::max);
        for (got, v) in line.iter().zip(&raw) {
            assert!((got - v / max).abs() < 1e-15);
        }
        assert!(line.contains(&1.0));
        let zero = Array2::zeros((2, 4));
        assert!(scanline_profile(&img(&zero), 0).unwrap().iter().all(|&v| v == 0.0));
        assert!(scanline_profile(&img(&zero), 2).is_err());
    }

    #[test]
    fn scanline_csv_layout() {
        let mut buf = Vec::new();
        write_scanline_csv(&mut buf, &[1.0, 0.5], &[0.9, 0.4]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x,gt,rec\n0,1,0.9\n1,0.5,0.4\n");
    }

    #[test]
    fn report_serializes_infinite_psnr() {
        let gt = img(&random(12, 12, 7));
        let (report, _) = evaluate(&gt, &gt).unwrap();
        assert_eq!(report.psnr_db, f64::INFINITY);
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"psnr_db\":\"inf\""));
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    proptest! {
        #[test]
        fn psnr_is_scale_invariant_after_alignment(seed in 0u64..1000, k in 0.01f64..100.0) {
            let gt = img(&random(8, 8, seed));
            let rec = img(&random(8, 8, seed + 1));
            let (a, _) = evaluate(&rec, &gt).unwrap();
            let (b, _) = evaluate(&rec.scaled(k), &gt).unwrap();
            prop_assert!((a.psnr_db - b.psnr_db).abs() <= 1e-5 * a.psnr_db.abs());
        }

        #[test]
        fn ssim_bounded_and_symmetric(seed in 0u64..1000) {
            let (a, b) = (random(12, 12, seed), random(12, 12, seed + 7));
            let (ab, map) = ssim_map(&a, &b).unwrap();
            let (ba, _) = ssim_map(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(map.iter().all(|&m| (0.0..=2.0).contains(&m)));
        }

        #[test]
        fn false_color_shifts_with_scale(seed in 0u64..1000, shift in -5i32..5) {
            let a = random(6, 6, seed).mapv(|v| v * 64.0);
            let (base, (lo, hi)) = false_color_stops(&img(&a), None);
            let scaled = img(&a).scaled((shift as f64).exp2());
            let (moved, bounds) = false_color_stops(&scaled, None);
            prop_assert_eq!(bounds, (lo + shift, hi + shift));
            prop_assert_eq!(base.data(), moved.data());
        }
    }
}
