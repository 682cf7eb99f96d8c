use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use csc_hdr::baseline::{build_dct_dictionary, patch_reconstruct, OmpConfig};
use csc_hdr::capture::{simulate_capture, Crf, Metering, PsfSpec, ReadNoise};
use csc_hdr::imagery::{load_hdr, load_png, luminance_array, save_hdr, save_png};
use csc_hdr::learning::{learn_filters, LearnConfig, NormalizationParams, TrainingSet};
use csc_hdr::masks::{
    MaskKind, MaskSpec, DEFAULT_BINARY_P_ON, DEFAULT_FOUR_LEVELS, DEFAULT_GAUSSIAN, DEFAULT_INTERLEAVED,
};
use csc_hdr::metrics::{error_map_image, evaluate, false_color_stops, scanline_profile, write_scanline_csv};
use csc_hdr::reconstruct::{reconstruct_video, OffsetInit, Reconstructor, SolverTrace};
use csc_hdr::{CaptureConfig, CodedLdrImage, ExposureMask, FilterBank, RadianceImage, SolverConfig};
use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde_json::json;

use crate::provenance;
use crate::{
    BaselineArgs, CliError, CliResult, EvalArgs, KindArg, LearnArgs, MaskgenArgs, ReconstructArgs, SimulateArgs,
    SolverFlags,
};

impl From<KindArg> for MaskKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Binary => MaskKind::Binary,
            KindArg::Gaussian => MaskKind::Gaussian,
            KindArg::Uniform => MaskKind::Uniform,
            KindArg::FourExposure => MaskKind::FourExposure,
            KindArg::FixedPattern => MaskKind::FixedPattern,
            KindArg::Interleaved => MaskKind::Interleaved,
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))
}

fn create_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

pub fn mask_spec(args: &MaskgenArgs) -> CliResult<MaskSpec> {
    let levels = |v: &Option<Vec<f64>>| -> CliResult<[f64; 4]> {
        match v {
            None => Ok(DEFAULT_FOUR_LEVELS),
            Some(l) => l
                .as_slice()
                .try_into()
                .map_err(|_| CliError::usage("--levels takes exactly four values")),
        }
    };
    Ok(match args.kind {
        KindArg::Binary => MaskSpec::Binary {
            p_on: args.p_on.unwrap_or(DEFAULT_BINARY_P_ON),
        },
        KindArg::Gaussian => MaskSpec::Gaussian {
            mean: args.mean.unwrap_or(DEFAULT_GAUSSIAN.0),
            stddev: args.stddev.unwrap_or(DEFAULT_GAUSSIAN.1),
        },
        KindArg::Uniform => MaskSpec::Uniform,
        KindArg::FourExposure => MaskSpec::FourExposure {
            levels: levels(&args.levels)?,
        },
        KindArg::FixedPattern => MaskSpec::FixedPattern {
            levels: levels(&args.levels)?,
        },
        KindArg::Interleaved => MaskSpec::Interleaved {
            e_low: args.e_low.unwrap_or(DEFAULT_INTERLEAVED.0),
            e_high: args.e_high.unwrap_or(DEFAULT_INTERLEAVED.1),
        },
    })
}

pub fn maskgen(args: &MaskgenArgs) -> CliResult<()> {
    let spec = mask_spec(args)?;
    let mask = spec.generate(args.width, args.height, args.seed)?;
    create_parent(&args.out)?;
    mask.save(&args.out)?;
    let config = json!({ "spec": spec, "width": args.width, "height": args.height, "seed": args.seed });
    provenance::record(&args.out, "maskgen", &config, &[])
}

fn capture_config(args: &SimulateArgs) -> CliResult<CaptureConfig> {
    let mut cfg: CaptureConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => CaptureConfig::default(),
    };
    if let Some(kind) = &args.psf {
        cfg.psf = match kind.as_str() {
            "delta" => PsfSpec::Delta,
            "gaussian" => PsfSpec::default(),
            other => return Err(CliError::usage(format!("unknown psf {other:?}; expected delta or gaussian"))),
        };
    }
    if let PsfSpec::Gaussian { size, sigma } = &mut cfg.psf {
        *size = args.psf_size.unwrap_or(*size);
        *sigma = args.psf_sigma.unwrap_or(*sigma);
    }
    if let Some(dr) = args.sensor_dr {
        cfg.sensor_dr = dr;
    }
    if let Some(crf) = &args.crf {
        cfg.crf = crf.parse::<Crf>()?;
    }
    if let Some(floor) = args.floor {
        cfg.metering = Metering::Fixed { floor };
    }
    if let Some(sigma) = args.noise_sigma {
        cfg.read_noise = Some(ReadNoise {
            sigma,
            seed: args.noise_seed,
        });
    }
    cfg.validate()?;
    Ok(cfg)
}

fn stem_path(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}"))
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let cfg = capture_config(args)?;
    let scene = match &args.scene {
        Some(p) => load_hdr(p)?,
        None => csc_hdr::scenes::synthetic_hdr(args.width, args.height, args.stops),
    };
    let mask = match &args.mask {
        Some(p) => ExposureMask::load(p)?,
        None => MaskSpec::default_for(args.mask_kind.into()).generate(scene.width(), scene.height(), args.mask_seed)?,
    };
    let coded = simulate_capture(&scene, &mask, &cfg)?;
    create_parent(&args.out)?;
    coded.save(&args.out)?;
    if args.synthetic {
        save_hdr(&scene, stem_path(&args.out, ".scene.pfm"))?;
    }
    let mut inputs: Vec<PathBuf> = args.scene.iter().cloned().collect();
    inputs.extend(args.mask.iter().cloned());
    let config = json!({
        "capture": cfg,
        "scene": args.scene.as_ref().map(|p| p.display().to_string()),
        "synthetic": args.synthetic.then(|| json!({ "width": args.width, "height": args.height, "stops": args.stops })),
        "mask": mask.metadata(),
        "floor": coded.floor,
        "ceiling": coded.ceiling,
    });
    provenance::record(&args.out, "simulate", &config, &inputs)
}

/// Grayscale training image from an 8-bit PNG (scaled to [0, 1]) or an HDR file.
fn training_image(path: &Path) -> CliResult<Array2<f64>> {
    let ext = path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase());
    if ext.as_deref() == Some("png") {
        let ldr = load_png(path)?;
        let planes: Vec<Array2<f64>> = (0..ldr.channels())
            .map(|ch| Array2::from_shape_fn((ldr.height(), ldr.width()), |(r, c)| ldr.get(r, c, ch) as f64 / 255.0))
            .collect();
        Ok(luminance_array(&RadianceImage::from_channels(&planes)?))
    } else {
        Ok(luminance_array(&load_hdr(path)?))
    }
}

pub fn learn(args: &LearnArgs) -> CliResult<()> {
    let mut cfg: LearnConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => LearnConfig::default(),
    };
    cfg.k = args.k.unwrap_or(cfg.k);
    cfg.size = args.size.unwrap_or(cfg.size);
    cfg.beta = args.beta.unwrap_or(cfg.beta);
    cfg.outer_iters = args.outer_iters.unwrap_or(cfg.outer_iters);
    cfg.tile = args.tile.unwrap_or(cfg.tile);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.validate()?;
    let raw: Vec<Array2<f64>> = match args.dead_leaves {
        Some(n) => (0..n as u64)
            .map(|i| csc_hdr::scenes::dead_leaves(args.dead_leaves_size, args.dead_leaves_size, args.dead_leaves_seed + i))
            .collect(),
        None => args.images.iter().map(|p| training_image(p)).collect::<CliResult<_>>()?,
    };
    let norm = NormalizationParams {
        sigma: args.lcn_sigma,
        eps: args.lcn_eps,
    };
    let train = TrainingSet::normalized(&raw, norm);
    let outcome = learn_filters(&train, &cfg)?;
    log::info!("training objective {:?}", outcome.objective);
    let mut provenance = outcome.bank.provenance().clone();
    if let (Some(n), Some(obj)) = (args.dead_leaves, provenance.as_object_mut()) {
        obj.insert(
            "training_data".into(),
            json!({ "dead_leaves": n, "size": args.dead_leaves_size, "first_seed": args.dead_leaves_seed }),
        );
    }
    create_parent(&args.out)?;
    outcome.bank.with_provenance(provenance).save(&args.out)?;
    let config = json!({
        "learn": cfg,
        "normalization": norm,
        "dead_leaves": args.dead_leaves.map(|n| json!({ "count": n, "size": args.dead_leaves_size, "first_seed": args.dead_leaves_seed })),
    });
    provenance::record(&args.out, "learn", &config, &args.images)
}

pub fn solver_config(flags: &SolverFlags) -> CliResult<SolverConfig> {
    let mut cfg: SolverConfig = match &flags.config {
        Some(p) => read_json(p)?,
        None => SolverConfig::default(),
    };
    cfg.beta = flags.beta.unwrap_or(cfg.beta);
    cfg.lambda_s = flags.lambda_s.unwrap_or(cfg.lambda_s);
    cfg.rho = flags.rho.unwrap_or(cfg.rho);
    cfg.max_iters = flags.max_iters.unwrap_or(cfg.max_iters);
    if let Some(t) = flags.tol {
        cfg.tol_primal = t;
        cfg.tol_dual = t;
    }
    cfg.adaptive_rho |= flags.adaptive_rho;
    if flags.no_clip_constraints {
        cfg.clip_constraints = false;
    }
    if let Some(init) = &flags.offset_init {
        cfg.offset_init = match init.as_str() {
            "solve" => OffsetInit::Solve,
            "normalized" => OffsetInit::Normalized,
            "plain" => OffsetInit::Plain,
            other => return Err(CliError::usage(format!("unknown offset init {other:?}"))),
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_bank(path: Option<&Path>) -> CliResult<FilterBank> {
    match path {
        Some(p) => Ok(FilterBank::load(p)?),
        None => Ok(FilterBank::bundled()),
    }
}

fn load_captures(paths: &[PathBuf]) -> CliResult<Vec<CodedLdrImage>> {
    paths.iter().map(|p| Ok(CodedLdrImage::load(p)?)).collect()
}

fn write_trace(trace: &SolverTrace, path: &Path) -> CliResult<()> {
    create_parent(path)?;
    let file = File::create(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(trace.write_csv(BufWriter::new(file))?)
}

fn frame_path(dir: &Path, i: usize, ext: &str) -> PathBuf {
    dir.join(format!("frame_{i:04}.{ext}"))
}

pub fn reconstruct(args: &ReconstructArgs) -> CliResult<()> {
    let cfg = solver_config(&args.solver)?;
    let bank = load_bank(args.solver.bank.as_deref())?;
    let captures = load_captures(&args.capture)?;
    if let [coded] = captures.as_slice() {
        let rec = Reconstructor::new(&bank, &coded.psf, coded.height(), coded.width(), &cfg)?.run(coded)?;
        if !rec.converged() {
            log::warn!("solver stopped at the iteration limit before reaching tolerance");
        }
        create_parent(&args.out)?;
        save_hdr(&rec.radiance, &args.out)?;
        if let Some(t) = &args.trace {
            write_trace(&rec.traces[0], t)?;
        }
    } else {
        let recs = reconstruct_video(&captures, &bank, &cfg)?;
        create_dir(&args.out)?;
        for (i, rec) in recs.iter().enumerate() {
            save_hdr(&rec.radiance, frame_path(&args.out, i, "pfm"))?;
            if let Some(dir) = &args.trace {
                create_dir(dir)?;
                write_trace(&rec.traces[0], &frame_path(dir, i, "csv"))?;
            }
        }
    }
    let mut inputs = args.capture.clone();
    inputs.extend(args.solver.bank.iter().cloned());
    let config = json!({
        "solver": cfg,
        "bank": args.solver.bank.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "bundled".into()),
        "captures": args.capture.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    });
    provenance::record(&args.out, "reconstruct", &config, &inputs)
}

pub fn baseline(args: &BaselineArgs) -> CliResult<()> {
    let defaults = OmpConfig::default();
    let cfg = OmpConfig {
        atom_size: args.atom_size.unwrap_or(defaults.atom_size),
        overcompleteness: args.overcompleteness.unwrap_or(defaults.overcompleteness),
        stride: args.stride.unwrap_or(defaults.stride),
        epsilon: args.epsilon.unwrap_or(defaults.epsilon),
        max_sparsity: args.max_sparsity.unwrap_or(defaults.max_sparsity),
    };
    let dict = build_dct_dictionary(cfg.atom_size, cfg.overcompleteness)?;
    let captures = load_captures(&args.capture)?;
    let video = captures.len() > 1;
    if video {
        create_dir(&args.out)?;
    } else {
        create_parent(&args.out)?;
    }
    for (i, coded) in captures.iter().enumerate() {
        let rec = patch_reconstruct(coded, &dict, &cfg)?;
        if rec.unobserved_patches > 0 {
            log::warn!("{} of {} patches had no usable samples", rec.unobserved_patches, rec.total_patches);
        }
        let out = if video { frame_path(&args.out, i, "pfm") } else { args.out.clone() };
        save_hdr(&rec.radiance, out)?;
    }
    let config = json!({ "method": "omp", "omp": cfg });
    provenance::record(&args.out, "baseline", &config, &args.capture)
}

pub fn eval(args: &EvalArgs) -> CliResult<()> {
    let rec = load_hdr(&args.rec)?;
    let gt = load_hdr(&args.gt)?;
    let row = args.row.unwrap_or(gt.height() / 2);
    let files = evaluate_to_dir(&rec, &gt, &args.out_dir, row)?;
    let config = json!({ "row": row, "outputs": files });
    provenance::record(&args.out_dir, "eval", &config, &[args.rec.clone(), args.gt.clone()])
}

/// Writes report.json, error_map.png, false-color renderings and the
/// scanline CSV into `dir`; returns the file names.
pub fn evaluate_to_dir(rec: &RadianceImage, gt: &RadianceImage, dir: &Path, row: usize) -> CliResult<Vec<String>> {
    let (mut report, ssim_err) = evaluate(rec, gt)?;
    create_dir(dir)?;
    save_png(&error_map_image(&ssim_err, 1.0), dir.join("error_map.png"))?;
    report.error_map = Some("error_map.png".into());
    let aligned = rec.scaled(report.scale_applied);
    let (gt_colors, bounds) = false_color_stops(gt, None);
    let (rec_colors, _) = false_color_stops(&aligned, Some(bounds));
    save_png(&gt_colors, dir.join("false_color_gt.png"))?;
    save_png(&rec_colors, dir.join("false_color_rec.png"))?;
    let file = File::create(dir.join("scanline.csv")).map_err(|e| CliError::input(e.to_string()))?;
    write_scanline_csv(BufWriter::new(file), &scanline_profile(gt, row)?, &scanline_profile(&aligned, row)?)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)
        .map_err(|e| CliError::input(e.to_string()))?;
    Ok(["report.json", "error_map.png", "false_color_gt.png", "false_color_rec.png", "scanline.csv"]
        .map(String::from)
        .to_vec())
}
