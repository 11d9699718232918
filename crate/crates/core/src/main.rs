use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sdfocc::autodiff::gradcheck_csv;
use sdfocc::config::RunConfig;
use sdfocc::evaluation::{extract_occupancy, frame_depth_metrics, miou, occ_metrics, DepthMetrics, OccGrid};
use sdfocc::field::{load_field, AnyField};
use sdfocc::fit::{fit, gradcheck, FitOptions, CONFIG_FILE, FIELD_FILE};
use sdfocc::geometry::{Camera, Vec3};
use sdfocc::renderer::{render_view, RenderModes, DEFAULT_SAMPLES};
use sdfocc::scenes::{read_cameras, write_dataset, write_pfm, write_ppm, Dataset, SceneConfig};
use sdfocc::{Error, Result};

/// Gradient-check tolerance on the maximum relative error.
const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "sdfocc", version, about = "SDF occupancy reconstruction from posed image sequences")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic dataset from a scene description.
    Synth { scene: PathBuf, out: PathBuf },
    /// Fit a field to a dataset.
    Fit {
        config: PathBuf,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many total steps.
        #[arg(long)]
        stop_at: Option<usize>,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Occupancy IoU, precision, recall and mIoU against a ground-truth grid.
    EvalOcc {
        ckpt: PathBuf,
        gt: PathBuf,
        /// Restrict counts to the grid's visibility mask.
        #[arg(long)]
        mask: bool,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Depth metrics on the held-out frames of a dataset.
    EvalDepth {
        ckpt: PathBuf,
        dataset: PathBuf,
        #[arg(long)]
        median_scale: bool,
        /// Evaluate every n-th pixel.
        #[arg(long, default_value_t = 1)]
        subsample: usize,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Render depth (PFM) and color (PPM) for every camera in a camera file.
    RenderNovel {
        ckpt: PathBuf,
        cameras: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        offset_y: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        offset_x: f64,
        /// Yaw offset in degrees.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        yaw: f64,
        #[arg(long, default_value = "novel")]
        out: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Compare analytic and finite-difference gradients on a coarse grid.
    Gradcheck {
        config: PathBuf,
        #[arg(long)]
        f64: bool,
    },
}

/// Field file for a checkpoint argument that may be a run directory.
fn field_path(ckpt: &Path) -> PathBuf {
    if ckpt.is_dir() {
        ckpt.join(FIELD_FILE)
    } else {
        ckpt.to_path_buf()
    }
}

/// Sample count: explicit, else the run config stored beside the checkpoint.
fn samples_for(ckpt: &Path, explicit: Option<usize>) -> Result<usize> {
    if let Some(m) = explicit {
        return Ok(m);
    }
    let dir = field_path(ckpt).parent().map(Path::to_path_buf).unwrap_or_default();
    let cfg = dir.join(CONFIG_FILE);
    if cfg.is_file() {
        Ok(RunConfig::load(&cfg)?.samples)
    } else {
        Ok(DEFAULT_SAMPLES)
    }
}

fn run_id(ckpt: &Path, explicit: Option<String>) -> String {
    explicit.unwrap_or_else(|| {
        let p = field_path(ckpt);
        p.parent()
            .and_then(|d| d.file_name())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into())
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Synth { scene, out } => {
            let cfg = SceneConfig::load(&scene)?;
            let ds = write_dataset(&cfg, &out)?;
            eprintln!("wrote {} frames to {}", ds.frames.len(), out.display());
        }
        Cmd::Fit { config, resume, stop_at, quiet } => {
            let cfg = RunConfig::load(&config)?;
            let per_epoch = cfg.optim.steps_per_epoch;
            let s = fit(&cfg, FitOptions { resume, stop_at }, &mut |log| {
                if !quiet && (log.step + 1) % per_epoch == 0 {
                    eprintln!("epoch {} step {} loss {:.6} lr {:.3e} valid {:.3}", log.epoch, log.step + 1, log.report.total, log.lr, log.valid_fraction);
                }
            })?;
            eprintln!("steps {}..{} done, output in {}", s.start_step, s.end_step, s.output.display());
        }
        Cmd::EvalOcc { ckpt, gt, mask, run_id: id } => {
            let field: AnyField<f64> = load_field(&field_path(&ckpt))?;
            let gt_grid = OccGrid::load(&gt)?;
            let pred = extract_occupancy(&field, &gt_grid.spec);
            let m = occ_metrics(&pred, &gt_grid, mask)?;
            let classes = gt_grid.labels.iter().copied().max().unwrap_or(0) as usize;
            let mi = miou(&pred, &gt_grid, classes.max(1), mask)?;
            println!("run_id,iou,precision,recall,miou,tp,fp,fn");
            println!("{},{:.6},{:.6},{:.6},{:.6},{},{},{}", run_id(&ckpt, id), m.iou, m.precision, m.recall, mi, m.tp, m.fp, m.fn_);
        }
        Cmd::EvalDepth { ckpt, dataset, median_scale, subsample, samples, run_id: id } => {
            let field: AnyField<f64> = load_field(&field_path(&ckpt))?;
            let ds = Dataset::load(&dataset)?;
            let m = samples_for(&ckpt, samples)?;
            let frames = ds.test_indices();
            if frames.is_empty() {
                return Err(Error::Config(format!("{} has no held-out frames", dataset.display())));
            }
            let d = frame_depth_metrics(&field, &ds, &frames, m, subsample, median_scale)?;
            println!("run_id,{}", DepthMetrics::CSV_HEADER);
            println!("{},{}", run_id(&ckpt, id), d.csv());
        }
        Cmd::RenderNovel { ckpt, cameras, offset_y, offset_x, yaw, out, samples } => {
            let field: AnyField<f64> = load_field(&field_path(&ckpt))?;
            let m = samples_for(&ckpt, samples)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            for (id, cam) in read_cameras(&cameras)? {
                let pose = cam.pose.offset(Vec3([offset_x, offset_y, 0.0]), yaw.to_radians());
                let view = render_view(&field, &Camera { intrinsics: cam.intrinsics, pose }, m, RenderModes::COLOR_DEPTH)?;
                write_pfm(&out.join(format!("{id:03}.pfm")), &view.depth)?;
                write_ppm(&out.join(format!("{id:03}.ppm")), &view.color)?;
            }
            eprintln!("rendered into {}", out.display());
        }
        Cmd::Gradcheck { config, f64 } => {
            let cfg = RunConfig::load(&config)?;
            let rows = gradcheck(&cfg, f64)?;
            print!("{}", gradcheck_csv(&rows));
            let worst = rows.iter().map(|r| r.rel_err).fold(0.0, f64::max);
            eprintln!("{} parameters, max rel err {worst:.3e}", rows.len());
            if !(worst < GRADCHECK_TOL) {
                return Err(Error::numeric("gradcheck", format!("max rel err {worst:.3e} exceeds {GRADCHECK_TOL:e}")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
