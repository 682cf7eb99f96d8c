mod common;

use csc_hdr::capture::{clipped_count, linearize, meter, meter_values, simulate_capture, Crf, Metering, PsfSpec};
use csc_hdr::masks::MaskSpec;
use csc_hdr::{CaptureConfig, MaskKind, RadianceImage};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{blur, exhaustive_best, gaussian};

fn log_uniform_image(rng: &mut ChaCha8Rng, w: usize, h: usize, stops: f64) -> RadianceImage {
    let data = (0..w * h).map(|_| rng.random_range(0.0..stops).exp2() as f32).collect();
    RadianceImage::new(w, h, 1, data).unwrap()
}

#[test]
fn meter_matches_exhaustive_breakpoint_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (i, &(w, h)) in [(1, 1), (3, 5), (8, 8), (17, 9), (32, 32), (64, 64)].iter().enumerate() {
        for stops in [4.0, 12.0, 20.0] {
            let mut img = log_uniform_image(&mut rng, w, h, stops);
            if i % 2 == 1 {
                // a few dark zeros and a bright cluster
                let mut data = img.data().to_vec();
                for v in data.iter_mut().step_by(7) {
                    *v = 0.0;
                }
                for v in data.iter_mut().skip(3).step_by(11) {
                    *v *= 4096.0;
                }
                img = RadianceImage::new(w, h, 1, data).unwrap();
            }
            let values: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
            if values.iter().all(|&v| v == 0.0) {
                continue;
            }
            for dr in [16.0, 1000.0] {
                let (floor, ceiling) = meter(&img, dr).unwrap();
                assert_eq!(ceiling, floor * dr);
                assert_eq!(
                    clipped_count(&values, floor, ceiling),
                    exhaustive_best(&values, dr),
                    "{w}x{h}, {stops} stops, dr {dr}"
                );
            }
        }
    }
}

#[test]
fn metering_ties_pick_lowest_floor() {
    let vals = [1.0, 2.0, 100.0, 200.0];
    let (floor, _) = meter_values(&vals, 10.0).unwrap();
    assert_eq!(floor, 1.0);
}

#[test]
fn linearized_capture_matches_forward_model_within_half_step() {
    let (w, h) = (48, 40);
    let scene = csc_hdr::scenes::synthetic_hdr(w, h, 10.0);
    for (kind, crf, psf) in [
        (MaskKind::FourExposure, Crf::Linear, PsfSpec::default()),
        (MaskKind::Uniform, Crf::Linear, PsfSpec::Delta),
        (MaskKind::Gaussian, Crf::Gamma { gamma: 2.2 }, PsfSpec::Gaussian { size: 5, sigma: 1.0 }),
    ] {
        let mask = MaskSpec::default_for(kind).generate(w, h, 3).unwrap();
        let cfg = CaptureConfig {
            psf: psf.clone(),
            crf,
            ..CaptureConfig::default()
        };
        let coded = simulate_capture(&scene, &mask, &cfg).unwrap();
        let kernel = match psf {
            PsfSpec::Delta => Array2::ones((1, 1)),
            PsfSpec::Gaussian { size, sigma } => gaussian(size, sigma),
            PsfSpec::Kernel { .. } => unreachable!(),
        };
        let model = blur(&scene.channel(0), &kernel) * mask.values();
        let lin = linearize(&coded).channel(0);
        let rel = coded.reliability.channel(0);
        let span = coded.ceiling - coded.floor;
        let mut checked = 0;
        for ((r, c), &m) in model.indexed_iter() {
            if rel[[r, c]] == 0.0 {
                continue;
            }
            checked += 1;
            // compare in code units, where one step is 1
            let t_model = crf.apply((m - coded.floor) / span) * 255.0;
            let t_lin = crf.apply((lin[[r, c]] - coded.floor) / span) * 255.0;
            assert!(
                (t_model - t_lin).abs() <= 0.5 + 1e-6,
                "{kind:?} ({r},{c}): {t_model} vs {t_lin}"
            );
        }
        assert!(checked > w * h / 4, "{kind:?}: only {checked} reliable pixels");
    }
}

#[test]
fn fixed_metering_window() {
    let scene = csc_hdr::scenes::synthetic_hdr(16, 16, 6.0);
    let mask = MaskSpec::Uniform.generate(16, 16, 0).unwrap();
    let cfg = CaptureConfig {
        metering: Metering::Fixed { floor: 0.5 },
        ..CaptureConfig::default()
    };
    let coded = simulate_capture(&scene, &mask, &cfg).unwrap();
    assert_eq!((coded.floor, coded.ceiling), (0.5, 500.0));
}
