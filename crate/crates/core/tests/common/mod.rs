#![allow(dead_code)]

use csc_hdr::engine::{embed, CscOperator, FeatureMaps, Fft2};
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Unit-norm 5x5 oriented Gabor-like kernel.
pub fn planted_kernel() -> Array2<f64> {
    let k = Array2::from_shape_fn((5, 5), |(r, c)| {
        let (y, x) = (r as f64 - 2.0, c as f64 - 2.0);
        (-(x * x + y * y) / 4.0).exp() * (1.3 * x + 0.4 * y).cos()
    });
    let n = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    k / n
}

/// 64x64 image of random signed impulses circularly convolved with `kernel`.
pub fn planted_image(kernel: &Array2<f64>, seed: u64) -> Array2<f64> {
    let n = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = Array2::<f64>::zeros((n, n));
    for _ in 0..60 {
        let (r, c) = (rng.random_range(0..n), rng.random_range(0..n));
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        z[[r, c]] = sign * rng.random_range(1.0..2.0);
    }
    let fft = Fft2::new(n, n);
    let kh = fft.forward_real(&embed(kernel, n, n).unwrap());
    let zh = fft.forward_real(&z);
    fft.inverse_real(kh.iter().zip(&zh).map(|(a, b)| a * b).collect())
}

/// Largest |normalized cross-correlation| over all circular shifts.
pub fn max_circular_ncc(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let (h, w) = a.dim();
    let norm = |x: &Array2<f64>| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let denom = norm(a) * norm(b);
    let mut best: f64 = 0.0;
    for dy in 0..h {
        for dx in 0..w {
            let s: f64 = a
                .indexed_iter()
                .map(|((r, c), v)| v * b[[(r + dy) % h, (c + dx) % w]])
                .sum();
            best = best.max((s / denom).abs());
        }
    }
    best
}

/// Luminance PSNR after least-squares gain alignment, peak = reference max.
pub fn aligned_psnr(rec: &Array2<f64>, gt: &Array2<f64>) -> f64 {
    let gain = (rec * gt).sum() / (rec * rec).sum();
    let mse = gt.iter().zip(rec).map(|(g, r)| (g - gain * r).powi(2)).sum::<f64>() / gt.len() as f64;
    let peak = gt.fold(0.0f64, |a, &b| a.max(b));
    10.0 * (peak * peak / mse).log10()
}

pub fn random_array(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Array2<f64> {
    Array2::from_shape_fn((h, w), |_| rng.random_range(-1.0..1.0))
}

pub fn random_psf(rng: &mut ChaCha8Rng) -> Array2<f64> {
    let k = Array2::from_shape_fn((3, 3), |_| rng.random_range(0.0..1.0));
    let s = k.sum();
    k / s
}

/// Dense matrix of the operator: column `c * n + p` is the synthesis of an
/// impulse at pixel `p` of channel `c`.
pub fn dense_operator(op: &CscOperator) -> DMatrix<f64> {
    let (h, w) = op.shape();
    let n = h * w;
    let ch = op.channels();
    let mut a = DMatrix::zeros(n, ch * n);
    for c in 0..ch {
        for p in 0..n {
            let mut z = FeatureMaps::zeros(ch, h, w, op.has_offset());
            z.maps_mut()[c][[p / w, p % w]] = 1.0;
            let s = op.synthesize(&z).unwrap();
            for (q, v) in s.iter().enumerate() {
                a[(q, c * n + p)] = *v;
            }
        }
    }
    a
}

/// Circular forward differences, stacked x then y.
pub fn dense_gradient(h: usize, w: usize) -> DMatrix<f64> {
    let n = h * w;
    let mut g = DMatrix::zeros(2 * n, n);
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            g[(p, p)] -= 1.0;
            g[(p, r * w + (c + 1) % w)] += 1.0;
            g[(n + p, p)] -= 1.0;
            g[(n + p, ((r + 1) % h) * w + c)] += 1.0;
        }
    }
    g
}

pub fn flatten(a: &Array2<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len(), a.iter().copied())
}

/// Minimizes `f` over `[lo, hi]` by a coarse grid followed by successively
/// finer grids around the best point.
pub fn grid_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let (mut lo, mut hi) = (lo, hi);
    let mut best = lo;
    for _ in 0..6 {
        let steps = 2000;
        let dx = (hi - lo) / steps as f64;
        best = (0..=steps)
            .map(|i| lo + i as f64 * dx)
            .min_by(|a, b| f(*a).total_cmp(&f(*b)))
            .unwrap();
        lo = best - 2.0 * dx;
        hi = best + 2.0 * dx;
    }
    best
}

/// Circular convolution evaluated directly in the pixel domain.
pub fn circular_convolve(map: &Array2<f64>, kernel: &Array2<f64>) -> Array2<f64> {
    let (h, w) = map.dim();
    let (kh, kw) = kernel.dim();
    let (ch, cw) = (kh as isize / 2, kw as isize / 2);
    Array2::from_shape_fn((h, w), |(r, c)| {
        let mut acc = 0.0;
        for i in 0..kh {
            for j in 0..kw {
                let rr = (r as isize - (i as isize - ch)).rem_euclid(h as isize) as usize;
                let cc = (c as isize - (j as isize - cw)).rem_euclid(w as isize) as usize;
                acc += kernel[[i, j]] * map[[rr, cc]];
            }
        }
        acc
    })
}

pub fn full_conv(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (ah, aw) = a.dim();
    let (bh, bw) = b.dim();
    let mut out = Array2::zeros((ah + bh - 1, aw + bw - 1));
    for ((i, j), &x) in a.indexed_iter() {
        for ((k, l), &y) in b.indexed_iter() {
            out[[i + k, j + l]] += x * y;
        }
    }
    out
}

/// Smallest clip count over every window whose floor or ceiling sits on a sample.
pub fn exhaustive_best(values: &[f64], dr: f64) -> usize {
    values
        .iter()
        .flat_map(|&v| [v, v / dr])
        .filter(|&f| f > 0.0)
        .map(|f| values.iter().filter(|&&v| v < f || v > f * dr).count())
        .min()
        .unwrap()
}

/// Reflect-padded centered convolution, written independently of the library.
pub fn blur(a: &Array2<f64>, k: &Array2<f64>) -> Array2<f64> {
    let (h, w) = a.dim();
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
        }
        i as usize
    };
    let (kh, kw) = k.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        let mut acc = 0.0;
        for i in 0..kh {
            for j in 0..kw {
                let rr = reflect(r as isize + kh as isize / 2 - i as isize, h);
                let cc = reflect(c as isize + kw as isize / 2 - j as isize, w);
                acc += k[[i, j]] * a[[rr, cc]];
            }
        }
        acc
    })
}

pub fn gaussian(size: usize, sigma: f64) -> Array2<f64> {
    let c = (size / 2) as f64;
    let k = Array2::from_shape_fn((size, size), |(i, j)| {
        (-((i as f64 - c).powi(2) + (j as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()
    });
    let s = k.sum();
    k / s
}
