//! Proximal operators used by the ADMM updates.

use ndarray::{Array2, Zip};

/// Soft threshold `sign(v) * max(|v| - t, 0)`.
#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Elementwise soft threshold of a raster.
pub fn prox_l1(v: &Array2<f64>, t: f64) -> Array2<f64> {
    assert!(t >= 0.0, "threshold must be non-negative");
    v.mapv(|x| soft_threshold(x, t))
}

/// Scalar minimizer of `1/2 (w x - y)^2 + rho/2 (x - v)^2`.
#[inline]
pub fn masked_data_scalar(v: f64, y: f64, w: f64, rho: f64) -> f64 {
    if w == 0.0 {
        v
    } else {
        (rho * v + w * y) / (rho + w * w)
    }
}

/// Proximal map of the diagonally weighted data term `1/2 ||y - W x||^2`
/// with penalty `rho`, evaluated pixelwise.
pub fn prox_masked_data(v: &Array2<f64>, y: &Array2<f64>, weights: &Array2<f64>, rho: f64) -> Array2<f64> {
    assert!(rho > 0.0, "rho must be positive");
    let mut out = Array2::zeros(v.dim());
    Zip::from(&mut out)
        .and(v)
        .and(y)
        .and(weights)
        .for_each(|o, &v, &y, &w| *o = masked_data_scalar(v, y, w, rho));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(1.5, 1.0), 0.5);
        assert_eq!(soft_threshold(-0.3, 1.0), 0.0);
        assert_eq!(soft_threshold(-2.5, 1.0), -1.5);
        let v = Array2::from_shape_vec((1, 3), vec![0.7, -4.0, 0.0]).unwrap();
        assert_eq!(prox_l1(&v, 0.0), v);
    }

    #[test]
    fn masked_data_limits() {
        let v = Array2::from_elem((2, 2), 0.3);
        let y = Array2::from_elem((2, 2), 0.9);
        let zero = Array2::zeros((2, 2));
        assert_eq!(prox_masked_data(&v, &y, &zero, 1.0), v);
        let ones = Array2::ones((2, 2));
        let hard = prox_masked_data(&v, &y, &ones, 1e-12);
        assert!(hard.iter().all(|x| (x - 0.9).abs() < 1e-9));
    }

    proptest! {
        #[test]
        fn prox_l1_is_nonexpansive(
            u in prop::collection::vec(-5.0f64..5.0, 16),
            v in prop::collection::vec(-5.0f64..5.0, 16),
            t in 0.0f64..3.0,
        ) {
            let d_in: f64 = u.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum();
            let d_out: f64 = u
                .iter()
                .zip(&v)
                .map(|(a, b)| (soft_threshold(*a, t) - soft_threshold(*b, t)).powi(2))
                .sum();
            prop_assert!(d_out <= d_in + 1e-12);
        }
    }
}
