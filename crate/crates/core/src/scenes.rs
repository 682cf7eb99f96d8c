//! Procedural test scenes, so experiments need no external downloads.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::imagery::RadianceImage;

/// Linear ramp from 0 outside to 1 inside over `width` pixels around a
/// signed distance of zero.
fn smooth_edge(signed_dist: f64, width: f64) -> f64 {
    if width <= 0.0 {
        return if signed_dist <= 0.0 { 1.0 } else { 0.0 };
    }
    let t = (0.5 - signed_dist / width).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Synthetic high-dynamic-range test scene spanning `stops` stops.
///
/// A horizontal log-radiance ramp, a panel of vertical bars with hard step
/// edges and a disk "light source" whose radiance falls off from `2^stops`
/// at the center to a quarter of that at the rim. The darkest value is 1.
pub fn synthetic_hdr(width: usize, height: usize, stops: f64) -> RadianceImage {
    let (w, h) = (width as f64, height as f64);
    let ramp_stops = 0.3 * stops;
    let (bar_lo, bar_hi) = (0.1 * stops, 0.5 * stops);
    let (cy, cx) = ((0.68 * h).round(), (0.62 * w).round());
    let radius = 0.125 * w.min(h);
    let panel_rows = (0.125 * h, 0.44 * h);
    let panel_cols = (0.09 * w, 0.91 * w);
    let bar = (w / 10.0).max(2.0);
    let peak = stops.exp2();
    let a = Array2::from_shape_fn((height, width), |(r, c)| {
        let (y, x) = (r as f64, c as f64);
        let mut log2 = ramp_stops * x / (w - 1.0).max(1.0);
        if (panel_rows.0..panel_rows.1).contains(&y) && (panel_cols.0..panel_cols.1).contains(&x) {
            let k = ((x - panel_cols.0) / bar) as usize;
            log2 = if k % 2 == 0 { bar_hi } else { bar_lo };
        }
        let dist = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt();
        let inside = smooth_edge(dist - radius, 1.5);
        let lamp = peak * (1.0 - 0.75 * (dist / radius).min(1.0).powi(2));
        let base = log2.exp2();
        base + inside * (lamp - base)
    });
    RadianceImage::from_array(&a).expect("finite positive scene")
}

/// Two flat regions separated by a vertical edge at the center column;
/// the right side is `2^stops` times brighter. A gentle vertical ramp keeps
/// both sides from being perfectly constant.
pub fn step_edge(width: usize, height: usize, stops: f64) -> RadianceImage {
    let a = Array2::from_shape_fn((height, width), |(r, c)| {
        let shade = 1.0 + 0.25 * r as f64 / height.max(1) as f64;
        if c >= width / 2 {
            shade * stops.exp2()
        } else {
            shade
        }
    });
    RadianceImage::from_array(&a).expect("finite positive scene")
}

/// Dead-leaves texture: occluding disks with log-uniform radii and uniform
/// gray levels in `[0.05, 1]`, a standard proxy for natural-image statistics.
pub fn dead_leaves(width: usize, height: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Array2::from_elem((height, width), f64::NAN);
    let mut uncovered = width * height;
    let (rmin, rmax) = (2.0f64, 0.25 * width.min(height) as f64);
    let mut attempts = 0;
    while uncovered > 0 && attempts < 20_000 {
        attempts += 1;
        let radius = (rng.random_range(rmin.ln()..rmax.ln())).exp();
        let cy = rng.random_range(-radius..height as f64 + radius);
        let cx = rng.random_range(-radius..width as f64 + radius);
        let value = rng.random_range(0.05..1.0);
        let r0 = (cy - radius).floor().max(0.0) as usize;
        let r1 = ((cy + radius).ceil().max(0.0) as usize).min(height);
        let c0 = (cx - radius).floor().max(0.0) as usize;
        let c1 = ((cx + radius).ceil().max(0.0) as usize).min(width);
        for r in r0..r1 {
            for c in c0..c1 {
                let inside = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2) <= radius * radius;
                if inside && img[[r, c]].is_nan() {
                    img[[r, c]] = value;
                    uncovered -= 1;
                }
            }
        }
    }
    img.mapv_inplace(|v| if v.is_nan() { 0.5 } else { v });
    img
}

/// Frames of a bright square moving horizontally over a log ramp, one frame
/// per entry of `offsets` (pixels from the left edge).
pub fn moving_square(width: usize, height: usize, side: usize, offsets: &[usize], stops: f64) -> Result<Vec<RadianceImage>> {
    offsets
        .iter()
        .map(|&dx| {
            let top = (height.saturating_sub(side)) / 2;
            let a = Array2::from_shape_fn((height, width), |(r, c)| {
                let inside = (top..top + side).contains(&r) && (dx..dx + side).contains(&c);
                if inside {
                    stops.exp2()
                } else {
                    (0.3 * stops * c as f64 / width.max(2) as f64).exp2()
                }
            });
            RadianceImage::from_array(&a)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_scene_spans_requested_stops() {
        let s = synthetic_hdr(128, 128, 10.0);
        let (lo, hi) = s
            .data()
            .iter()
            .fold((f32::MAX, f32::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        assert_eq!(lo, 1.0);
        assert_eq!(hi, 1024.0);
    }

    #[test]
    fn step_edge_contrast() {
        let s = step_edge(32, 8, 6.0);
        assert_eq!(s.get(0, 16, 0) / s.get(0, 15, 0), 64.0);
    }

    #[test]
    fn dead_leaves_deterministic_and_covered() {
        let a = dead_leaves(48, 40, 5);
        assert_eq!(a, dead_leaves(48, 40, 5));
        assert_ne!(a, dead_leaves(48, 40, 6));
        assert!(a.iter().all(|v| (0.05..=1.0).contains(v)));
    }

    #[test]
    fn moving_square_frames() {
        let f = moving_square(32, 32, 8, &[4, 12], 8.0).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[0].get(16, 5, 0), 256.0);
        assert!(f[1].get(16, 5, 0) < 256.0);
    }
}
