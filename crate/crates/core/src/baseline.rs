//! Patch-based sparse reconstruction: each overlapping patch is coded by
//! orthogonal matching pursuit over a fixed dictionary and the patch
//! estimates are averaged.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capture::CodedLdrImage;
use crate::error::{Error, Result};
use crate::imagery::RadianceImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DictionaryKind {
    Dct,
    LearnedExternal,
}

/// Unit-norm patch atoms stored as the columns of a `side^2 x count` matrix,
/// patch pixels in row-major order.
#[derive(Debug, Clone)]
pub struct PatchDictionary {
    side: usize,
    atoms: DMatrix<f64>,
    kind: DictionaryKind,
}

impl PatchDictionary {
    /// Wraps externally supplied atoms; columns are normalized.
    pub fn from_atoms(side: usize, mut atoms: DMatrix<f64>) -> Result<Self> {
        if atoms.nrows() != side * side || atoms.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "{}x{} atom matrix for {side}x{side} patches",
                atoms.nrows(),
                atoms.ncols()
            )));
        }
        for mut col in atoms.column_iter_mut() {
            let n = col.norm();
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::param("dictionary atoms must be finite and nonzero"));
            }
            col /= n;
        }
        Ok(Self {
            side,
            atoms,
            kind: DictionaryKind::LearnedExternal,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.ncols() == 0
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn kind(&self) -> DictionaryKind {
        self.kind
    }
}

/// Overcomplete 2-D DCT: outer products of `round(sqrt(overcompleteness) * side)`
/// sampled 1-D cosines `cos(pi k (i + 1/2) / m)`, normalized. Atom 0 is DC.
pub fn build_dct_dictionary(side: usize, overcompleteness: f64) -> Result<PatchDictionary> {
    if side < 4 {
        return Err(Error::param("atom size must be >= 4"));
    }
    if !(overcompleteness >= 1.0 && overcompleteness.is_finite()) {
        return Err(Error::param("overcompleteness must be >= 1"));
    }
    let m = (overcompleteness.sqrt() * side as f64).round() as usize;
    let basis = DMatrix::from_fn(side, m, |i, k| {
        (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / m as f64).cos()
    });
    let n = side * side;
    let mut atoms = DMatrix::zeros(n, m * m);
    for a in 0..m {
        for b in 0..m {
            let col = a * m + b;
            for r in 0..side {
                for c in 0..side {
                    atoms[(r * side + c, col)] = basis[(r, a)] * basis[(c, b)];
                }
            }
        }
    }
    let mut dict = PatchDictionary::from_atoms(side, atoms)?;
    dict.kind = DictionaryKind::Dct;
    Ok(dict)
}

/// Result of one pursuit.
#[derive(Debug, Clone)]
pub struct OmpSolution {
    pub coefficients: DVector<f64>,
    /// Selected atom indices in selection order.
    pub support: Vec<usize>,
    /// Residual norm before the first and after every selection.
    pub residuals: Vec<f64>,
    /// Every sensing weight was zero; nothing could be fit.
    pub unobserved: bool,
}

/// Greedy orthogonal matching pursuit for `y ~ diag(phi) A s`.
///
/// Atoms are scored by `|<r, phi a_k>| / ||phi a_k||`; ties go to the lowest
/// index. Stops once the residual norm is `<= epsilon`, the support reaches
/// `max_sparsity`, or no remaining atom correlates with the residual.
pub fn omp_solve(
    y: &DVector<f64>,
    phi: &DVector<f64>,
    dict: &PatchDictionary,
    epsilon: f64,
    max_sparsity: usize,
) -> Result<OmpSolution> {
    let atoms = dict.atoms();
    if y.len() != atoms.nrows() || phi.len() != atoms.nrows() {
        return Err(Error::Dimension(format!(
            "patch of {} samples, sensing of {}, atoms of {}",
            y.len(),
            phi.len(),
            atoms.nrows()
        )));
    }
    if !(epsilon >= 0.0) || max_sparsity == 0 {
        return Err(Error::param("omp needs epsilon >= 0 and max_sparsity >= 1"));
    }
    let mut coefficients = DVector::zeros(atoms.ncols());
    if phi.iter().all(|&p| p == 0.0) {
        return Ok(OmpSolution {
            coefficients,
            support: Vec::new(),
            residuals: vec![0.0],
            unobserved: true,
        });
    }
    let target = y.component_mul(&phi.map(|p| if p != 0.0 { 1.0 } else { 0.0 }));
    let sensed = DMatrix::from_fn(atoms.nrows(), atoms.ncols(), |i, k| phi[i] * atoms[(i, k)]);
    let norms: Vec<f64> = sensed.column_iter().map(|c| c.norm()).collect();
    let observed = phi.iter().filter(|&&p| p != 0.0).count();
    let budget = max_sparsity.min(observed);

    let mut residual = target.clone();
    let mut residuals = vec![residual.norm()];
    let mut support: Vec<usize> = Vec::new();
    let mut solution = DVector::zeros(0);
    while residual.norm() > epsilon && support.len() < budget {
        let corr = sensed.tr_mul(&residual);
        let mut best: Option<(usize, f64)> = None;
        for (k, &n) in norms.iter().enumerate() {
            if n <= 1e-12 || support.contains(&k) {
                continue;
            }
            let score = corr[k].abs() / n;
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((k, score));
            }
        }
        let Some((pick, score)) = best else { break };
        if score <= 1e-14 * residual.norm().max(1.0) {
            break;
        }
        support.push(pick);
        let sub = DMatrix::from_fn(sensed.nrows(), support.len(), |i, j| sensed[(i, support[j])]);
        let Some(s) = least_squares(&sub, &target) else {
            support.pop();
            break;
        };
        let next = &target - &sub * &s;
        // a numerically degenerate pick cannot be allowed to raise the residual
        if next.norm() > residual.norm() {
            support.pop();
            break;
        }
        residual = next;
        solution = s;
        residuals.push(residual.norm());
    }
    for (j, &k) in support.iter().enumerate() {
        coefficients[k] = solution[j];
    }
    Ok(OmpSolution {
        coefficients,
        support,
        residuals,
        unobserved: false,
    })
}

fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let gram = a.tr_mul(a);
    let rhs = a.tr_mul(b);
    if let Some(ch) = gram.clone().cholesky() {
        return Some(ch.solve(&rhs));
    }
    a.clone().svd(true, true).solve(b, 1e-12).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OmpConfig {
    pub atom_size: usize,
    pub overcompleteness: f64,
    pub stride: usize,
    /// Residual bound per observed sample; the patch bound is this times
    /// the square root of the observed count.
    pub epsilon: f64,
    pub max_sparsity: usize,
}

impl Default for OmpConfig {
    fn default() -> Self {
        Self {
            atom_size: 11,
            overcompleteness: 4.0,
            stride: 2,
            // rms of uniform 8-bit quantization error in window units
            epsilon: 1.0 / (255.0 * 12f64.sqrt()),
            max_sparsity: 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PatchReconstruction {
    pub radiance: RadianceImage,
    /// 1 where no observed patch covered the pixel.
    pub flagged: Array2<u8>,
    pub unobserved_patches: usize,
    pub total_patches: usize,
}

/// Patch origins along one axis: every `stride`, plus the last position.
fn origins(len: usize, side: usize, stride: usize) -> Vec<usize> {
    let last = len - side;
    let mut v: Vec<usize> = (0..=last).step_by(stride).collect();
    if *v.last().unwrap() != last {
        v.push(last);
    }
    v
}

/// Reconstructs every channel patch by patch; overlapping estimates are
/// averaged with uniform weights. The PSF is not modeled.
pub fn patch_reconstruct(coded: &CodedLdrImage, dict: &PatchDictionary, cfg: &OmpConfig) -> Result<PatchReconstruction> {
    let side = dict.side();
    let (h, w) = (coded.height(), coded.width());
    if side > h || side > w {
        return Err(Error::Dimension(format!("{side}x{side} patches on a {w}x{h} image")));
    }
    if cfg.stride == 0 {
        return Err(Error::param("stride must be >= 1"));
    }
    let positions: Vec<(usize, usize)> = origins(h, side, cfg.stride)
        .into_iter()
        .flat_map(|r| origins(w, side, cfg.stride).into_iter().map(move |c| (r, c)))
        .collect();
    let mut planes = Vec::with_capacity(coded.channels());
    let mut flagged = Array2::zeros((h, w));
    let mut unobserved_patches = 0;
    for ch in 0..coded.channels() {
        let meas = coded.measurement(ch);
        let weights = coded.data_weights(ch);
        let patches: Vec<Result<(usize, usize, Option<DVector<f64>>)>> = positions
            .par_iter()
            .map(|&(r0, c0)| {
                let y = DVector::from_fn(side * side, |i, _| meas[[r0 + i / side, c0 + i % side]]);
                let phi = DVector::from_fn(side * side, |i, _| weights[[r0 + i / side, c0 + i % side]]);
                let observed = phi.iter().filter(|&&p| p != 0.0).count() as f64;
                let sol = omp_solve(&y, &phi, dict, cfg.epsilon * observed.sqrt(), cfg.max_sparsity)?;
                Ok((r0, c0, (!sol.unobserved).then(|| dict.atoms() * &sol.coefficients)))
            })
            .collect();
        let mut sum = Array2::<f64>::zeros((h, w));
        let mut count = Array2::<f64>::zeros((h, w));
        for p in patches {
            let (r0, c0, est) = p?;
            let Some(est) = est else {
                unobserved_patches += 1;
                continue;
            };
            for i in 0..side * side {
                sum[[r0 + i / side, c0 + i % side]] += est[i];
                count[[r0 + i / side, c0 + i % side]] += 1.0;
            }
        }
        let plane = Array2::from_shape_fn((h, w), |(r, c)| {
            if count[[r, c]] > 0.0 {
                (sum[[r, c]] / count[[r, c]] * coded.ceiling).max(0.0)
            } else {
                flagged[[r, c]] = 1;
                0.0
            }
        });
        planes.push(plane);
    }
    Ok(PatchReconstruction {
        radiance: RadianceImage::from_channels(&planes)?,
        flagged,
        unobserved_patches,
        total_patches: positions.len() * coded.channels(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::{simulate_capture, CaptureConfig, Metering};
    use crate::masks::{ExposureMask, MaskSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn orthonormal(n: usize, seed: u64) -> PatchDictionary {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n * n, n * n, |_, _| rng.random_range(-1.0..1.0));
        let q = m.qr().q();
        PatchDictionary::from_atoms(n, q).unwrap()
    }

    #[test]
    fn dct_atoms_are_unit_norm_and_counted() {
        let d = build_dct_dictionary(6, 4.0).unwrap();
        assert_eq!(d.len(), 12 * 12);
        assert_eq!(d.kind(), DictionaryKind::Dct);
        for c in d.atoms().column_iter() {
            assert!((c.norm() - 1.0).abs() < 1e-9);
        }
        let dc = d.atoms().column(0);
        assert!(dc.iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-12));
        assert!(build_dct_dictionary(3, 4.0).is_err());
    }

    #[test]
    fn single_atom_signal() {
        let d = orthonormal(4, 1);
        let y = d.atoms().column(3) * 2.0;
        let phi = DVector::from_element(16, 1.0);
        let sol = omp_solve(&y.into(), &phi, &d, 1e-9, 5).unwrap();
        assert_eq!(sol.support, vec![3]);
        assert!((sol.coefficients[3] - 2.0).abs() < 1e-9);
        assert_eq!(sol.coefficients.iter().filter(|v| v.abs() > 1e-9).count(), 1);
    }

    #[test]
    fn loose_epsilon_gives_zero() {
        let d = orthonormal(4, 2);
        let y = DVector::from_fn(16, |i, _| (i as f64).sin());
        let phi = DVector::from_element(16, 1.0);
        let sol = omp_solve(&y, &phi, &d, y.norm(), 5).unwrap();
        assert!(sol.support.is_empty());
        assert!(sol.coefficients.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exact_three_sparse_recovery() {
        let d = orthonormal(5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let mut truth = DVector::zeros(25);
            let mut idx = Vec::new();
            while idx.len() < 3 {
                let k = rng.random_range(0..25);
                if !idx.contains(&k) {
                    idx.push(k);
                    truth[k] = rng.random_range(0.5..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                }
            }
            let y = d.atoms() * &truth;
            let sol = omp_solve(&y, &DVector::from_element(25, 1.0), &d, 1e-10, 10).unwrap();
            let mut got = sol.support.clone();
            got.sort();
            idx.sort();
            assert_eq!(got, idx);
            assert!((sol.coefficients - truth).norm() < 1e-8);
        }
    }

    #[test]
    fn fully_masked_patch_is_flagged() {
        let d = orthonormal(4, 4);
        let sol = omp_solve(&DVector::from_element(16, 1.0), &DVector::zeros(16), &d, 0.0, 4).unwrap();
        assert!(sol.unobserved);
        assert!(sol.coefficients.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_never_increases() {
        let d = build_dct_dictionary(5, 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let y = DVector::from_fn(25, |_, _| rng.random_range(0.0..1.0));
            let phi = DVector::from_fn(25, |_, _| [0.0, 0.3, 1.0][rng.random_range(0..3)]);
            let sol = omp_solve(&y, &phi, &d, 0.0, 25).unwrap();
            assert!(sol.residuals.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        }
    }

    fn capture(scene: &Array2<f64>, mask: Array2<f64>, floor: f64) -> CodedLdrImage {
        let mask = ExposureMask::from_values(mask, MaskSpec::Uniform, None).unwrap();
        let cfg = CaptureConfig {
            metering: Metering::Fixed { floor },
            ..Default::default()
        };
        simulate_capture(&RadianceImage::from_array(scene).unwrap(), &mask, &cfg).unwrap()
    }

    #[test]
    fn complete_dictionary_reproduces_unmasked_input() {
        let scene = Array2::from_shape_fn((12, 14), |(r, c)| 1.0 + ((r * 5 + c * 3) % 7) as f64);
        let coded = capture(&scene, Array2::ones((12, 14)), 8.0 / 900.0);
        let cfg = OmpConfig {
            atom_size: 4,
            epsilon: 0.0,
            max_sparsity: 16,
            ..Default::default()
        };
        let dict = build_dct_dictionary(4, 1.0).unwrap();
        let rec = patch_reconstruct(&coded, &dict, &cfg).unwrap();
        let expected = coded.measurement(0) * coded.ceiling;
        let got = rec.radiance.channel(0);
        for (a, b) in got.iter().zip(expected.iter()) {
            assert!((a - b).abs() <= 1e-5 * b.abs(), "{a} vs {b}");
        }
        assert!(rec.flagged.iter().all(|&f| f == 0));
    }

    #[test]
    fn saturated_image_is_all_flagged() {
        let scene = Array2::from_elem((10, 10), 50.0);
        let coded = capture(&scene, Array2::ones((10, 10)), 0.01);
        let dict = build_dct_dictionary(4, 1.0).unwrap();
        let rec = patch_reconstruct(&coded, &dict, &OmpConfig::default()).unwrap();
        assert!(rec.flagged.iter().all(|&f| f == 1));
        assert_eq!(rec.unobserved_patches, rec.total_patches);
    }

    #[test]
    fn merge_is_a_convex_combination() {
        let scene = Array2::from_shape_fn((12, 12), |(r, c)| 1.0 + (r * c % 5) as f64);
        let mask = Array2::from_shape_fn((12, 12), |(r, c)| [0.25, 1.0][(r + c) % 2]);
        let coded = capture(&scene, mask, 5.0 / 900.0);
        let side = 5;
        let dict = build_dct_dictionary(side, 4.0).unwrap();
        let cfg = OmpConfig {
            atom_size: side,
            stride: 3,
            ..Default::default()
        };
        let rec = patch_reconstruct(&coded, &dict, &cfg).unwrap();
        // recompute each patch estimate independently and bound every pixel
        let meas = coded.measurement(0);
        let weights = coded.data_weights(0);
        let mut lo = Array2::from_elem((12, 12), f64::INFINITY);
        let mut hi = Array2::from_elem((12, 12), f64::NEG_INFINITY);
        for &r0 in &origins(12, side, 3) {
            for &c0 in &origins(12, side, 3) {
                let y = DVector::from_fn(side * side, |i, _| meas[[r0 + i / side, c0 + i % side]]);
                let phi = DVector::from_fn(side * side, |i, _| weights[[r0 + i / side, c0 + i % side]]);
                let n = phi.iter().filter(|&&p| p != 0.0).count() as f64;
                let sol = omp_solve(&y, &phi, &dict, cfg.epsilon * n.sqrt(), cfg.max_sparsity).unwrap();
                let est = dict.atoms() * sol.coefficients * coded.ceiling;
                for i in 0..side * side {
                    let (r, c) = (r0 + i / side, c0 + i % side);
                    lo[[r, c]] = lo[[r, c]].min(est[i]);
                    hi[[r, c]] = hi[[r, c]].max(est[i]);
                }
            }
        }
        let got = rec.radiance.channel(0);
        for ((g, l), h) in got.iter().zip(lo.iter()).zip(hi.iter()) {
            let tol = 1e-4 * h.abs().max(1.0);
            assert!(*g >= l.max(0.0) - tol && *g <= h.max(0.0) + tol);
        }
    }
}
