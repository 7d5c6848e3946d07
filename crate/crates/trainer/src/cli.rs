//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 runtime
//! failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint;
use crate::config::Config;
use crate::data::{condition, TrainingData};
use crate::error::{Error, Result};
use crate::gradcheck::run_suite;
use crate::ops::{self, Split};
use crate::train::{LossRecord, Trainer};

#[derive(Debug, Parser)]
#[command(name = "headfield", about = "Train and drive a neural head avatar", version)]
struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the configured dataset directory.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset (to --out, else the configured data_dir).
    Synth,
    /// Run one training stage.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..=2))]
        stage: u32,
        /// Checkpoint to continue from; stage 2 defaults to OUT/stage1.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Overrides the configured iteration count of the stage.
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Render every frame of a split.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Drive the avatar with a parameter file, one frame per row.
    Reenact {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Rows of expression coefficients followed by six pose values.
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 0)]
        camera: usize,
    },
    /// Marching cubes of the canonical density.
    ExtractMesh {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long, default_value_t = 5.0)]
        iso: f64,
        /// Dataset frame whose conditioning drives the planes.
        #[arg(long)]
        frame: Option<usize>,
    },
    /// Metrics against ground truth.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Finite-difference checks of all differentiable operations.
    Gradcheck,
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(Error::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write(p: &Path, text: &str) -> Result<()> {
    std::fs::write(p, text).map_err(|e| Error::io(p, e))
}

fn split_arg(s: &str) -> Result<Split> {
    Split::parse(s).ok_or_else(|| Error::Usage(format!("--split must be train or test, got `{s}`")))
}

fn open_checkpoint(path: &Path, data: &Option<PathBuf>) -> Result<Trainer> {
    if !path.exists() {
        return Err(Error::Usage(format!("checkpoint {} does not exist", path.display())));
    }
    let mut tr = checkpoint::load(path)?;
    if let Some(d) = data {
        tr.avatar.cfg.data_dir = d.clone();
    }
    Ok(tr)
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.data {
        cfg.data_dir = d.clone();
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    match cli.cmd {
        Command::Synth => {
            let root = cli.out.clone().unwrap_or_else(|| cfg.data_dir.clone());
            faceproxy::synth_dataset(&cfg.synth(), cfg.seed, &root)?;
            eprintln!("dataset written to {}", root.display());
        }
        Command::Train { stage, checkpoint, iters } => train(&cfg, &out, stage, checkpoint, iters, &cli.data)?,
        Command::Render { checkpoint, split } => {
            let split = split_arg(&split)?;
            let tr = open_checkpoint(&checkpoint, &cli.data)?;
            let data = TrainingData::load(&tr.avatar.cfg)?;
            let dir = out.join("render");
            mkdir(&dir)?;
            let frames = if split == Split::Train { &data.train } else { &data.test };
            for f in frames {
                let gamma = ops::frame_gamma(&tr, f);
                for (c, view) in f.views.iter().enumerate() {
                    let p = ops::predict(&tr, &gamma, &f.cond, &f.pose, &view.camera)?;
                    ops::save_png(&p.rgb, &dir.join(format!("frame{}_cam{c}.png", f.index)))?;
                    ops::save_png(&p.mask, &dir.join(format!("mask{}_cam{c}.png", f.index)))?;
                }
            }
            eprintln!("{} frames rendered to {}", frames.len(), dir.display());
        }
        Command::Reenact { checkpoint, params, camera } => {
            let tr = open_checkpoint(&checkpoint, &cli.data)?;
            let root = &tr.avatar.cfg.data_dir;
            let model = faceproxy::BlendshapeModel::read(&root.join("model.bin"))?;
            let cams = faceproxy::read_cameras(&root.join("cameras.txt"))?;
            let cam = cams
                .get(camera)
                .ok_or_else(|| Error::Usage(format!("camera {camera} of {}", cams.len())))?;
            let text = std::fs::read_to_string(&params).map_err(|e| Error::io(&params, e))?;
            let rows = ops::parse_driving(&text, model.num_expressions(), &params)?;
            let dir = out.join("reenact");
            mkdir(&dir)?;
            for (i, p) in ops::reenact(&tr, &model, &rows, cam)?.iter().enumerate() {
                ops::save_png(&p.rgb, &dir.join(format!("frame{i:04}.png")))?;
            }
            eprintln!("{} frames written to {}", rows.len(), dir.display());
        }
        Command::ExtractMesh {
            checkpoint,
            resolution,
            iso,
            frame,
        } => {
            let tr = open_checkpoint(&checkpoint, &cli.data)?;
            let data = TrainingData::load(&tr.avatar.cfg)?;
            let index = frame.unwrap_or(data.dataset.train[0]);
            let rec = data
                .dataset
                .frames
                .get(index)
                .ok_or_else(|| Error::Usage(format!("frame {index} of {}", data.dataset.frames.len())))?;
            let cond = condition(&tr.avatar.cfg, &data.dataset.model, &rec.delta, &rec.pose)?;
            let mesh = ops::extract_mesh(&tr, &tr.avatar.mean_gamma(), &cond, resolution, iso)?;
            mkdir(&out)?;
            let p = out.join("mesh.obj");
            mesh.write_obj(&p).map_err(|e| Error::io(&p, e))?;
            eprintln!("{} vertices, {} triangles -> {}", mesh.vertices.len(), mesh.triangles.len(), p.display());
        }
        Command::Eval { checkpoint, split } => {
            let split = split_arg(&split)?;
            let tr = open_checkpoint(&checkpoint, &cli.data)?;
            let data = TrainingData::load(&tr.avatar.cfg)?;
            let report = ops::evaluate(&tr, &data, split)?;
            mkdir(&out)?;
            report.write(&out)?;
            println!(
                "{} split: PSNR {:.3} dB, mask IoU {:.4}, perceptual_lite {:.5}",
                split.name(),
                report.mean_psnr,
                report.mean_iou,
                report.mean_perceptual
            );
        }
        Command::Gradcheck => {
            let results = run_suite();
            for r in &results {
                println!("{}", r.line());
            }
            let failed = results.iter().filter(|r| !r.passed()).count();
            if failed > 0 {
                return Err(Error::Diff(diffcore::DiffError::Contract(format!("{failed} gradient checks failed"))));
            }
            println!("all {} gradient checks passed", results.len());
        }
    }
    Ok(())
}

fn train(
    cfg: &Config,
    out: &Path,
    stage: u32,
    checkpoint: Option<PathBuf>,
    iters: Option<usize>,
    data_override: &Option<PathBuf>,
) -> Result<()> {
    let mut tr = match (stage, checkpoint) {
        (_, Some(p)) => open_checkpoint(&p, data_override)?,
        (2, None) => {
            let p = out.join("stage1.ckpt");
            if !p.exists() {
                return Err(Error::Usage(format!(
                    "stage 2 needs a stage-1 checkpoint; none at {} (pass --checkpoint)",
                    p.display()
                )));
            }
            open_checkpoint(&p, data_override)?
        }
        _ => {
            let data = TrainingData::load(cfg)?;
            Trainer::for_data(cfg, &data)?
        }
    };
    if stage == 2 && tr.stage < 1 {
        return Err(Error::Usage("stage 2 needs a checkpoint that completed stage 1".into()));
    }
    let data = TrainingData::load(&tr.avatar.cfg)?;
    mkdir(out)?;
    tr.dump_dir = Some(out.to_path_buf());
    let n = iters.unwrap_or(if stage == 1 {
        tr.cfg().stage1_iters
    } else {
        tr.cfg().stage2_iters
    });
    write(&out.join("config.txt"), &tr.cfg().to_text())?;
    let every = tr.cfg().log_every.max(1) as u64;
    let mut log = format!("{}\n", LossRecord::HEADER);
    tr.run(&data, stage, n, |r| {
        log.push_str(&r.tsv());
        log.push('\n');
        if r.iteration % every == 0 {
            eprintln!("stage {} iter {:6}  loss {:.6}", r.stage, r.iteration, r.total);
        }
    })?;
    write(&out.join(format!("losses_stage{stage}.tsv")), &log)?;
    let p = out.join(format!("stage{stage}.ckpt"));
    checkpoint::save(&tr, &p)?;
    eprintln!("checkpoint written to {}", p.display());
    Ok(())
}
