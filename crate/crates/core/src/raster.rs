//! Small raster helpers shared across modules: reflective padding, cropping,
//! Gaussian kernels and spatial convolution.

use ndarray::{s, Array2};

/// Maps any integer index onto `0..n` by symmetric reflection
/// (`... c b a | a b c ... x y z | z y x ...`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Pads by reflection: `top`/`left` rows and columns before, the rest after,
/// so the result has shape `(out_h, out_w)`.
pub fn pad_reflect(a: &Array2<f64>, top: usize, left: usize, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = a.dim();
    assert!(out_h >= h + top && out_w >= w + left);
    Array2::from_shape_fn((out_h, out_w), |(r, c)| {
        a[[
            reflect_index(r as isize - top as isize, h),
            reflect_index(c as isize - left as isize, w),
        ]]
    })
}

pub fn crop(a: &Array2<f64>, top: usize, left: usize, h: usize, w: usize) -> Array2<f64> {
    a.slice(s![top..top + h, left..left + w]).to_owned()
}

/// Smallest integer `>= n` whose only prime factors are 2, 3 and 5.
pub fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Normalized 1-D Gaussian taps with radius `ceil(3 sigma)`.
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Normalized `size x size` Gaussian kernel.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Array2<f64> {
    assert!(size % 2 == 1, "kernel size must be odd");
    let c = (size / 2) as f64;
    let mut k = Array2::from_shape_fn((size, size), |(r, col)| {
        let (dy, dx) = (r as f64 - c, col as f64 - c);
        if sigma > 0.0 {
            (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
        } else if dx == 0.0 && dy == 0.0 {
            1.0
        } else {
            0.0
        }
    });
    let sum = k.sum();
    k.mapv_inplace(|v| v / sum);
    k
}

/// Separable Gaussian blur with reflective boundaries.
pub fn gaussian_blur(a: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return a.clone();
    }
    let taps = gaussian_taps(sigma);
    let radius = (taps.len() / 2) as isize;
    let (h, w) = a.dim();
    let horiz: Array2<f64> = Array2::from_shape_fn((h, w), |(r, c)| {
        taps.iter()
            .enumerate()
            .map(|(i, t)| t * a[[r, reflect_index(c as isize + i as isize - radius, w)]])
            .sum::<f64>()
    });
    Array2::from_shape_fn((h, w), |(r, c)| {
        taps.iter()
            .enumerate()
            .map(|(i, t)| t * horiz[[reflect_index(r as isize + i as isize - radius, h), c]])
            .sum::<f64>()
    })
}

/// Centered 2-D convolution with reflective boundaries. The kernel is flipped,
/// so a kernel with a single off-center tap shifts the image toward that tap's
/// mirror position.
pub fn convolve_reflect(a: &Array2<f64>, kernel: &Array2<f64>) -> Array2<f64> {
    let (h, w) = a.dim();
    let (kh, kw) = kernel.dim();
    let (cy, cx) = ((kh / 2) as isize, (kw / 2) as isize);
    Array2::from_shape_fn((h, w), |(r, c)| {
        let mut acc = 0.0;
        for ((i, j), &k) in kernel.indexed_iter() {
            if k == 0.0 {
                continue;
            }
            let rr = reflect_index(r as isize - (i as isize - cy), h);
            let cc = reflect_index(c as isize - (j as isize - cx), w);
            acc += k * a[[rr, cc]];
        }
        acc
    })
}
