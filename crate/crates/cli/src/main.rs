mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};

use sen2sharp::compare::{compare_methods, rows_to_csv};
use sen2sharp::fusion::{self, forward_sr, sharpen_scene, train_with_progress};
use sen2sharp::metrics::evaluate;
use sen2sharp::net::{decode_checkpoint, encode_checkpoint, FusionModel};
use sen2sharp::preview::rgb_preview;
use sen2sharp::raster::{encode_raster, load_raster, RasterStack, Scene};
use sen2sharp::synth::{synth_scene, SynthConfig};
use sen2sharp::wald::{self, make_reduced_scene, ReducedScene};

use config::RunConfig;

const Z_DOWN: &str = "z_down.msr";
const X_DOWN: &str = "x_down.msr";
const REFERENCE: &str = "reference.msr";
const MODEL: &str = "model.fmc";
const HISTORY: &str = "history.csv";
const FUSED: &str = "fused.msr";
const FUSED_REDUCED: &str = "fused_reduced.msr";
const REPORT_JSON: &str = "report.json";
const REPORT_CSV: &str = "report.csv";
const COMPARE_CSV: &str = "compare.csv";
const THREADS_ENV: &str = "SEN2SHARP_THREADS";

#[derive(Parser)]
#[command(name = "sen2sharp", version, about = "Sentinel-2 20 m band super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `wald.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scene to `io.input_z` and `io.input_x`.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Side of the 10 m grid in pixels.
        #[arg(long, default_value_t = 512)]
        size: usize,
    },
    /// Build the reduced-resolution training pair in `io.output`.
    Degrade {
        #[command(flatten)]
        common: Common,
    },
    /// Train on the degraded pair; writes the checkpoint and history.csv.
    Train {
        #[command(flatten)]
        common: Common,
        /// Checkpoint path (default: `<output>/model.fmc`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Super-resolve the input scene with a trained checkpoint.
    Sharpen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Tile side in pixels; 0 processes the scene in one piece.
        #[arg(long, default_value_t = fusion::DEFAULT_TILE)]
        tile: usize,
        #[arg(long, default_value_t = fusion::DEFAULT_OVERLAP)]
        overlap: usize,
        /// Write an 8-bit false-colour PNG of the result.
        #[arg(long)]
        preview: Option<PathBuf>,
        /// Sharpen the degraded pair instead, for scoring against reference.msr.
        #[arg(long)]
        reduced: bool,
    },
    /// Score a fused product against a reference.
    Evaluate {
        #[command(flatten)]
        common: Common,
        fused: PathBuf,
        reference: PathBuf,
    },
    /// Score every baseline and checkpoint on the degraded pair.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Repeat to add ablation rows (default: `<output>/model.fmc`).
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
    },
}

/// Files written by a command; removed again unless the command succeeds.
struct Outputs {
    written: Vec<PathBuf>,
    done: bool,
}

impl Outputs {
    fn new() -> Self {
        Self {
            written: Vec::new(),
            done: false,
        }
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        self.written.push(path.to_path_buf());
        fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
    }

    fn raster(&mut self, path: &Path, stack: &RasterStack) -> Result<()> {
        self.write(path, &encode_raster(stack)?)
    }

    fn commit(mut self) {
        self.done = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.done {
            for p in &self.written {
                let _ = fs::remove_file(p);
            }
        }
    }
}

fn require(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("missing input file {}", path.display());
    }
    Ok(())
}

fn read_raster(path: &Path) -> Result<RasterStack> {
    load_raster(path).with_context(|| format!("loading {}", path.display()))
}

fn read_checkpoint(path: &Path) -> Result<FusionModel> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let (model, _) = decode_checkpoint(&bytes).with_context(|| format!("loading {}", path.display()))?;
    Ok(model)
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.wald.seed = seed;
    }
    Ok(cfg)
}

fn load_scene(cfg: &RunConfig) -> Result<Scene> {
    require(&cfg.io.input_z)?;
    require(&cfg.io.input_x)?;
    Ok(Scene::new(read_raster(&cfg.io.input_z)?, read_raster(&cfg.io.input_x)?)?)
}

fn load_reduced(cfg: &RunConfig) -> Result<ReducedScene> {
    let paths = [cfg.out(Z_DOWN), cfg.out(X_DOWN), cfg.out(REFERENCE)];
    for p in &paths {
        require(p).context("run `degrade` first")?;
    }
    let rs = ReducedScene {
        z_down: read_raster(&paths[0])?,
        x_down: read_raster(&paths[1])?,
        reference: read_raster(&paths[2])?,
    };
    let (w, h) = (rs.reference.width(), rs.reference.height());
    if (rs.z_down.width(), rs.z_down.height()) != (w, h)
        || (2 * rs.x_down.width(), 2 * rs.x_down.height()) != (w, h)
    {
        bail!("degraded files in {} are inconsistent", cfg.io.output.display());
    }
    Ok(rs)
}

fn cmd_synth(cfg: &RunConfig, size: usize) -> Result<()> {
    let s = synth_scene(&SynthConfig {
        width: size,
        height: size,
        seed: cfg.wald.seed,
        ..SynthConfig::default()
    })?;
    let mut out = Outputs::new();
    out.raster(&cfg.io.input_z, &s.scene.z)?;
    out.raster(&cfg.io.input_x, &s.scene.x)?;
    out.commit();
    println!(
        "wrote {} and {}",
        cfg.io.input_z.display(),
        cfg.io.input_x.display()
    );
    Ok(())
}

fn cmd_degrade(cfg: &RunConfig) -> Result<()> {
    let scene = load_scene(cfg)?;
    let rs = make_reduced_scene(&scene, &cfg.wald.gains)?;
    let mut out = Outputs::new();
    out.raster(&cfg.out(Z_DOWN), &rs.z_down)?;
    out.raster(&cfg.out(X_DOWN), &rs.x_down)?;
    out.raster(&cfg.out(REFERENCE), &rs.reference)?;
    out.commit();
    println!(
        "reduced pair {}x{} written to {}",
        rs.reference.width(),
        rs.reference.height(),
        cfg.io.output.display()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, checkpoint: Option<PathBuf>) -> Result<()> {
    let tc = cfg.train_config();
    let rs = load_reduced(cfg)?;
    let ds = wald::extract_patches(&rs, tc.patch, tc.stride, tc.flags, &tc.hpf_kernel()?)?;
    let ds = wald::split_dataset(ds, tc.val_fraction, tc.seed)?;
    eprintln!(
        "{} patches ({} train, {} validation), {} input channels",
        ds.len(),
        ds.train.len(),
        ds.validation.len(),
        tc.flags.input_channels()
    );
    let (model, _, history) = train_with_progress(&ds, &tc, |r| {
        let val = r.val_loss.map(|v| format!("{:.6}", v)).unwrap_or_else(|| "-".into());
        eprintln!(
            "epoch {:>4}/{} train {:.6} val {} ({:.2} s)",
            r.epoch, tc.epochs, r.train_loss, val, r.seconds
        );
    })?;

    let path = checkpoint.unwrap_or_else(|| cfg.out(MODEL));
    let mut out = Outputs::new();
    out.write(&path, &encode_checkpoint(&model, None)?)?;
    out.write(&cfg.out(HISTORY), history.to_csv().as_bytes())?;
    out.commit();
    match history.final_val_loss() {
        Some(v) => println!("final validation loss {}", v),
        None => println!("final training loss {}", history.epochs.last().map_or(f64::NAN, |r| r.train_loss)),
    }
    Ok(())
}

fn cmd_sharpen(
    cfg: &RunConfig,
    checkpoint: Option<PathBuf>,
    tile: usize,
    overlap: usize,
    preview: Option<PathBuf>,
    reduced: bool,
) -> Result<()> {
    let ckpt = checkpoint.unwrap_or_else(|| cfg.out(MODEL));
    require(&ckpt)?;
    let (scene, target) = if reduced {
        let rs = load_reduced(cfg)?;
        (Scene::new(rs.z_down, rs.x_down)?, cfg.out(FUSED_REDUCED))
    } else {
        (load_scene(cfg)?, cfg.out(FUSED))
    };
    let model = read_checkpoint(&ckpt)?;
    model.check_flags(cfg.model.flags)?;
    let kernel = wald::hpf_kernel(cfg.wald.hpf_gain)?;
    let fused = if tile == 0 {
        forward_sr(&model, Some(&scene.z), &scene.x, &kernel)?
    } else {
        sharpen_scene(&model, &scene, tile, overlap, &kernel)?
    };

    let mut out = Outputs::new();
    out.raster(&target, &fused)?;
    if let Some(p) = preview {
        let rgb = rgb_preview(&fused, &cfg.io.preview_bands)?;
        let mut png = Vec::new();
        PngEncoder::new(&mut png).write_image(
            &rgb,
            fused.width() as u32,
            fused.height() as u32,
            ExtendedColorType::Rgb8,
        )?;
        out.write(&p, &png)?;
    }
    out.commit();
    println!(
        "fused {}x{} written to {}",
        fused.width(),
        fused.height(),
        target.display()
    );
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, fused: &Path, reference: &Path) -> Result<()> {
    require(fused)?;
    require(reference)?;
    let report = evaluate(&read_raster(fused)?, &read_raster(reference)?, &cfg.metrics)?;
    let method = fused
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "fused".into());
    let json = serde_json::to_string_pretty(&report)?;
    let csv = format!("{}\n{}\n", report.csv_header(), report.csv_row(&method));
    let mut out = Outputs::new();
    out.write(&cfg.out(REPORT_JSON), json.as_bytes())?;
    out.write(&cfg.out(REPORT_CSV), csv.as_bytes())?;
    out.commit();
    println!("{}", json);
    Ok(())
}

fn cmd_compare(cfg: &RunConfig, checkpoints: Vec<PathBuf>) -> Result<()> {
    let paths = if checkpoints.is_empty() {
        vec![cfg.out(MODEL)]
    } else {
        checkpoints
    };
    for p in &paths {
        require(p)?;
    }
    let rs = load_reduced(cfg)?;
    let mut models: Vec<(String, FusionModel)> = Vec::new();
    for p in &paths {
        let model = read_checkpoint(p)?;
        let base = model.flags.label().to_string();
        let mut label = base.clone();
        let mut k = 2;
        while models.iter().any(|(l, _)| *l == label) {
            label = format!("{} #{}", base, k);
            k += 1;
        }
        models.push((label, model));
    }
    let rows = compare_methods(
        &rs.z_down,
        &rs.x_down,
        &rs.reference,
        &models,
        &wald::hpf_kernel(cfg.wald.hpf_gain)?,
        &cfg.metrics,
    )?;
    let mut out = Outputs::new();
    out.write(&cfg.out(COMPARE_CSV), rows_to_csv(&rows).as_bytes())?;
    out.commit();
    println!("{:<32} {:>8} {:>8} {:>8}", "method", "Q", "ERGAS", "HCC");
    for r in &rows {
        println!(
            "{:<32} {:>8.4} {:>8.4} {:>8.4}",
            r.method, r.report.q_mean, r.report.ergas, r.report.hcc_mean
        );
    }
    Ok(())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .with_context(|| format!("{} must be a positive integer, got {:?}", THREADS_ENV, v))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Synth { common, size } => cmd_synth(&load_config(&common)?, size),
        Command::Degrade { common } => cmd_degrade(&load_config(&common)?),
        Command::Train { common, checkpoint } => cmd_train(&load_config(&common)?, checkpoint),
        Command::Sharpen {
            common,
            checkpoint,
            tile,
            overlap,
            preview,
            reduced,
        } => cmd_sharpen(&load_config(&common)?, checkpoint, tile, overlap, preview, reduced),
        Command::Evaluate {
            common,
            fused,
            reference,
        } => cmd_evaluate(&load_config(&common)?, &fused, &reference),
        Command::Compare { common, checkpoint } => cmd_compare(&load_config(&common)?, checkpoint),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::FAILURE
        }
    }
}

