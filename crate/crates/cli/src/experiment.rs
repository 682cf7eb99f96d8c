use std::fs;
use std::path::{Path, PathBuf};

use csc_hdr::capture::simulate_capture;
use csc_hdr::imagery::{load_hdr, save_hdr};
use csc_hdr::masks::MaskKind;
use csc_hdr::reconstruct::Reconstructor;
use csc_hdr::{CaptureConfig, FilterBank, MaskSpec, RadianceImage, SolverConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::commands::{evaluate_to_dir, load_bank, read_json};
use crate::{provenance, CliError, CliResult, SweepArgs};

/// Built-in scene parameters, used when a scene entry is `"synthetic"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticScene {
    pub width: usize,
    pub height: usize,
    pub stops: f64,
}

impl Default for SyntheticScene {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            stops: 10.0,
        }
    }
}

/// Values to sweep; an empty axis keeps the base setting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepAxes {
    pub mask_kinds: Vec<MaskKind>,
    pub betas: Vec<f64>,
    /// Brightest over darkest transmissivity; applies to four_exposure,
    /// fixed_pattern and interleaved masks.
    pub exposure_ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// HDR files, or `"synthetic"` for the built-in scene.
    pub scenes: Vec<String>,
    pub synthetic: SyntheticScene,
    pub mask: MaskSpec,
    pub mask_seed: u64,
    pub capture: CaptureConfig,
    pub solver: SolverConfig,
    /// Filter bank path; the bundled bank when absent.
    pub bank: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Coefficients with larger magnitude count as active.
    pub active_threshold: f64,
    pub sweep: SweepAxes,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenes: vec!["synthetic".into()],
            synthetic: SyntheticScene::default(),
            mask: MaskSpec::default_for(MaskKind::FourExposure),
            mask_seed: 7,
            capture: CaptureConfig::default(),
            solver: SolverConfig::default(),
            bank: None,
            output_dir: PathBuf::from("sweep"),
            active_threshold: 1e-6,
            sweep: SweepAxes::default(),
        }
    }
}

/// One point of the cross-product.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub scene: String,
    pub mask: MaskSpec,
    pub beta: f64,
    pub exposure_ratio: Option<f64>,
}

impl Cell {
    fn dir_name(&self, index: usize) -> String {
        let scene = Path::new(&self.scene)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scene".into());
        let mut name = format!("{index:03}_{scene}_{}_beta{:e}", self.mask.kind().name(), self.beta);
        if let Some(r) = self.exposure_ratio {
            name.push_str(&format!("_ratio{r}"));
        }
        name
    }
}

/// Mask spec whose brightest-to-darkest transmissivity ratio is `ratio`.
pub fn with_exposure_ratio(spec: &MaskSpec, ratio: f64) -> CliResult<MaskSpec> {
    if !(ratio >= 1.0 && ratio.is_finite()) {
        return Err(CliError::usage(format!("exposure ratio {ratio} must be >= 1")));
    }
    let levels = || std::array::from_fn(|i| ratio.powf((i as f64 - 3.0) / 3.0));
    match spec {
        MaskSpec::FourExposure { .. } => Ok(MaskSpec::FourExposure { levels: levels() }),
        MaskSpec::FixedPattern { .. } => Ok(MaskSpec::FixedPattern { levels: levels() }),
        MaskSpec::Interleaved { e_high, .. } => Ok(MaskSpec::Interleaved {
            e_low: e_high / ratio,
            e_high: *e_high,
        }),
        other => Err(CliError::usage(format!(
            "exposure ratio does not apply to {} masks",
            other.kind().name()
        ))),
    }
}

pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let masks: Vec<MaskSpec> = if cfg.sweep.mask_kinds.is_empty() {
        vec![cfg.mask.clone()]
    } else {
        cfg.sweep
            .mask_kinds
            .iter()
            .map(|&k| if k == cfg.mask.kind() { cfg.mask.clone() } else { MaskSpec::default_for(k) })
            .collect()
    };
    let betas = if cfg.sweep.betas.is_empty() {
        vec![cfg.solver.beta]
    } else {
        cfg.sweep.betas.clone()
    };
    let ratios: Vec<Option<f64>> = if cfg.sweep.exposure_ratios.is_empty() {
        vec![None]
    } else {
        cfg.sweep.exposure_ratios.iter().copied().map(Some).collect()
    };
    let mut out = Vec::new();
    for scene in &cfg.scenes {
        for mask in &masks {
            for &beta in &betas {
                for &exposure_ratio in &ratios {
                    out.push(Cell {
                        scene: scene.clone(),
                        mask: mask.clone(),
                        beta,
                        exposure_ratio,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub dir: String,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub active: Option<usize>,
    pub status: String,
}

fn load_scene(cfg: &ExperimentConfig, scene: &str) -> CliResult<RadianceImage> {
    if scene == "synthetic" {
        let s = &cfg.synthetic;
        Ok(csc_hdr::scenes::synthetic_hdr(s.width, s.height, s.stops))
    } else {
        Ok(load_hdr(scene)?)
    }
}

fn run_cell(cfg: &ExperimentConfig, bank: &FilterBank, cell: &Cell, dir: &Path) -> CliResult<(f64, f64, usize)> {
    let mask_spec = match cell.exposure_ratio {
        Some(r) => with_exposure_ratio(&cell.mask, r)?,
        None => cell.mask.clone(),
    };
    let scene = load_scene(cfg, &cell.scene)?;
    let mask = mask_spec.generate(scene.width(), scene.height(), cfg.mask_seed)?;
    let coded = simulate_capture(&scene, &mask, &cfg.capture)?;
    let solver = SolverConfig {
        beta: cell.beta,
        ..cfg.solver.clone()
    };
    let rec = Reconstructor::new(bank, &coded.psf, coded.height(), coded.width(), &solver)?.run(&coded)?;
    fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    let rec_path = dir.join("rec.pfm");
    save_hdr(&rec.radiance, &rec_path)?;
    // Evaluate against the scene in the capture's window units.
    let gt = scene.scaled(1.0 / coded.ceiling);
    evaluate_to_dir(&rec.radiance, &gt, dir, gt.height() / 2)?;
    let report: serde_json::Value = read_json(&dir.join("report.json"))?;
    let active = rec.active_count(cfg.active_threshold);
    let config = json!({
        "experiment": cfg,
        "cell": cell,
        "mask": mask_spec,
        "solver": solver,
    });
    let inputs: Vec<PathBuf> = (cell.scene != "synthetic")
        .then(|| PathBuf::from(&cell.scene))
        .into_iter()
        .chain(cfg.bank.iter().cloned())
        .collect();
    provenance::record(&rec_path, "sweep", &config, &inputs)?;
    let psnr = match &report["psnr_db"] {
        serde_json::Value::Number(n) => n.as_f64().unwrap_or(f64::NAN),
        _ => f64::INFINITY,
    };
    let ssim = report["ssim_mean"].as_f64().unwrap_or(f64::NAN);
    Ok((psnr, ssim, active))
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::input(format!("csv: {e}"))
}

pub fn run_sweep(cfg: &ExperimentConfig, jobs: usize) -> CliResult<Vec<(Cell, CellResult)>> {
    cfg.solver.validate()?;
    cfg.capture.validate()?;
    if cfg.scenes.is_empty() {
        return Err(CliError::usage("experiment lists no scenes"));
    }
    let bank = load_bank(cfg.bank.as_deref())?;
    let cells = cells(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::input(e.to_string()))?;
    let results: Vec<(Cell, CellResult)> = pool.install(|| {
        use rayon::prelude::*;
        cells
            .par_iter()
            .enumerate()
            .map(|(i, cell)| {
                let name = cell.dir_name(i);
                let outcome = run_cell(cfg, &bank, cell, &cfg.output_dir.join(&name));
                let result = match outcome {
                    Ok((psnr, ssim, active)) => CellResult {
                        dir: name,
                        psnr_db: Some(psnr),
                        ssim: Some(ssim),
                        active: Some(active),
                        status: "ok".into(),
                    },
                    Err(e) => {
                        log::warn!("cell {name} failed: {}", e.message);
                        CellResult {
                            dir: name,
                            psnr_db: None,
                            ssim: None,
                            active: None,
                            status: format!("error: {}", e.message),
                        }
                    }
                };
                (cell.clone(), result)
            })
            .collect()
    });
    Ok(results)
}

pub fn write_table(path: &Path, rows: &[(Cell, CellResult)]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record([
        "cell", "scene", "mask_kind", "beta", "exposure_ratio", "psnr_db", "ssim", "active", "status",
    ])
    .map_err(csv_error)?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for (cell, r) in rows {
        w.write_record([
            r.dir.clone(),
            cell.scene.clone(),
            cell.mask.kind().name().to_string(),
            format!("{:e}", cell.beta),
            opt(cell.exposure_ratio.map(|v| v.to_string())),
            opt(r.psnr_db.map(|v| format!("{v:.4}"))),
            opt(r.ssim.map(|v| format!("{v:.6}"))),
            opt(r.active.map(|v| v.to_string())),
            r.status.clone(),
        ])
        .map_err(csv_error)?;
    }
    w.flush().map_err(|e| CliError::input(e.to_string()))
}

pub fn sweep(args: &SweepArgs) -> CliResult<()> {
    let mut cfg: ExperimentConfig = read_json(&args.config)?;
    if let Some(dir) = &args.out_dir {
        cfg.output_dir = dir.clone();
    }
    fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::input(format!("{}: {e}", cfg.output_dir.display())))?;
    let rows = run_sweep(&cfg, args.jobs)?;
    write_table(&cfg.output_dir.join("results.csv"), &rows)?;
    let failed = rows.iter().filter(|(_, r)| r.status != "ok").count();
    if failed > 0 {
        log::warn!("{failed} of {} cells failed", rows.len());
    }
    provenance::record(&cfg.output_dir, "sweep", &cfg, &[args.config.clone()])
}
