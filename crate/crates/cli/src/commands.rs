use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;

use fogsplat_core::io::{
    load_checkpoint, load_images, load_scene, read_pfm, read_png, save_checkpoint, save_scene, write_pfm, write_png,
    CameraRecord,
};
use fogsplat_core::optim::{evaluate, Preset, TrainConfig, TrainView, Trainer};
use fogsplat_core::raster::{render as render_maps, RenderMode, RenderOptions};
use fogsplat_core::synth::{sample_scene_params, synthesize_fog};
use fogsplat_core::toy::{init_from_points, toy_scene, ToyConfig};
use fogsplat_core::{Error, ImagePlane};

use crate::CliError;

fn parse_rgb(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected R,G,B, got '{s}'"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        let v: f64 = p.trim().parse().map_err(|_| format!("'{p}' is not a number"))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(format!("atmospheric light channels must lie in [0, 1], got {v}"));
        }
        *o = v;
    }
    Ok(out)
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    Ok(())
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| {
        CliError::Core(Error::Io {
            path: path.into(),
            source: e,
        })
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Directory of clear PNG images.
    #[arg(long)]
    clear: PathBuf,
    /// Directory of PFM depth maps named like the images.
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Scattering coefficient; sampled from the seed when omitted.
    #[arg(long)]
    beta: Option<f64>,
    /// Atmospheric light; sampled from the seed when omitted.
    #[arg(long = "A", value_parser = parse_rgb)]
    light: Option<[f64; 3]>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct SynthManifest {
    seed: u64,
    beta: f64,
    #[serde(rename = "A")]
    light: [f64; 3],
    images: Vec<String>,
}

fn sorted_entries(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, CliError> {
    let rd = std::fs::read_dir(dir).map_err(io_err(dir))?;
    let mut files = Vec::new();
    for entry in rd {
        let p = entry.map_err(io_err(dir))?.path();
        if p.extension().and_then(|e| e.to_str()) == Some(ext) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    if let Some(b) = a.beta {
        if !(b >= 0.0 && b.is_finite()) {
            return Err(CliError::Usage(format!("--beta must be a finite value >= 0, got {b}")));
        }
    }
    let sampled = sample_scene_params(a.seed);
    let beta = a.beta.unwrap_or(sampled.beta);
    let light = a.light.unwrap_or(sampled.light);
    let images = sorted_entries(&a.clear, "png")?;
    if images.is_empty() {
        return Err(Error::Data {
            path: a.clear.clone(),
            message: "no PNG images found".into(),
        }
        .into());
    }
    create_dir(&a.out.join("images"))?;
    create_dir(&a.out.join("transmission"))?;
    let mut names = Vec::new();
    for img_path in images {
        let stem = img_path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let clear = read_png(&img_path)?;
        let depth_path = a.depth.join(format!("{stem}.pfm"));
        if !depth_path.exists() {
            return Err(Error::Data {
                path: depth_path,
                message: format!("missing depth map for '{stem}'"),
            }
            .into());
        }
        let depth = read_pfm(&depth_path)?;
        let (hazy, t) = synthesize_fog(&clear, &depth, beta, light)?;
        write_png(&a.out.join("images").join(format!("{stem}.png")), &hazy)?;
        write_pfm(&a.out.join("transmission").join(format!("{stem}.pfm")), &t)?;
        names.push(stem);
    }
    let manifest = SynthManifest {
        seed: a.seed,
        beta,
        light,
        images: names,
    };
    let path = a.out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(io_err(&path))?;
    log::info!("synthesized {} images with beta {beta}, A {light:?}", manifest.images.len());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LossName {
    Dcp,
    Bcp,
    Depth,
    Dweighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    Synthetic,
    Real,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    iters: usize,
    #[arg(long, value_enum, default_value = "synthetic")]
    preset: PresetArg,
    /// Use `exp(−βd)` directly instead of squashing it through a logistic.
    #[arg(long)]
    no_sigmoid: bool,
    #[arg(long = "disable-loss", value_enum)]
    disable_loss: Vec<LossName>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Fit the foggy views without any fog model.
    #[arg(long)]
    no_fog: bool,
    /// Starting β learning rate; it still decays by 10× over the run.
    #[arg(long)]
    beta_lr: Option<f64>,
    /// L2 penalty weight on β.
    #[arg(long, default_value_t = 0.0)]
    beta_l2: f64,
    /// Evaluate the Laplacian smoothness term on the prior map.
    #[arg(long)]
    literal_smoothness: bool,
    /// Write an extra checkpoint every N iterations.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long, default_value_t = 0)]
    sh_degree: usize,
    #[arg(long)]
    no_densify: bool,
    /// Write each view's prior transmission maps under `OUT/priors/`.
    #[arg(long)]
    dump_priors: bool,
}

fn build_config(a: &TrainArgs) -> Result<TrainConfig, CliError> {
    let preset = match a.preset {
        PresetArg::Synthetic => Preset::Synthetic,
        PresetArg::Real => Preset::Real,
    };
    let mut cfg = TrainConfig::preset(preset);
    if a.iters == 0 {
        return Err(CliError::Usage("--iters must be positive".into()));
    }
    cfg.iterations = a.iters;
    cfg.seed = a.seed;
    cfg.use_sigmoid = !a.no_sigmoid;
    cfg.fog_enabled = !a.no_fog;
    cfg.literal_smoothness = a.literal_smoothness;
    cfg.beta_l2 = a.beta_l2;
    cfg.checkpoint_every = a.checkpoint_every;
    cfg.densify.enabled = !a.no_densify;
    if let Some(lr) = a.beta_lr {
        cfg.lr.beta_start = lr;
        cfg.lr.beta_end = lr / 10.0;
    }
    for l in &a.disable_loss {
        match l {
            LossName::Dcp => cfg.flags.dcp = false,
            LossName::Bcp => cfg.flags.bcp = false,
            LossName::Depth => cfg.flags.depth = false,
            LossName::Dweighted => cfg.flags.depth_weighted = false,
        }
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let cfg = build_config(&a)?;
    let bundle = load_scene(&a.scene)?;
    let init = init_from_points(&bundle.points, a.sh_degree)?;
    let views = bundle
        .views
        .iter()
        .map(|v| TrainView::new(v.camera.clone(), v.image.clone(), v.depth.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let records: Vec<CameraRecord> = bundle
        .views
        .iter()
        .map(|v| CameraRecord::from_camera(v.name.clone(), &v.camera))
        .collect();
    create_dir(&a.out)?;
    let log_path = a.out.join("loss.jsonl");
    let mut log_file = BufWriter::new(File::create(&log_path).map_err(io_err(&log_path))?);

    let mut trainer = Trainer::new(init, views, cfg)?;
    if a.dump_priors {
        let dir = a.out.join("priors");
        create_dir(&dir)?;
        for (v, name) in trainer.views.iter().zip(records.iter().map(|r| &r.name)) {
            if let Some(p) = v.priors() {
                write_pfm(&dir.join(format!("{name}_dcp.pfm")), &p.t_dcp)?;
                write_pfm(&dir.join(format!("{name}_bcp.pfm")), &p.t_bcp)?;
            }
        }
    }
    log::info!(
        "training {} Gaussians on {} views for {} iterations",
        trainer.cloud.len(),
        trainer.views.len(),
        trainer.config.iterations
    );
    let out_dir = a.out.clone();
    let result = trainer.run(|t, report| {
        let line = serde_json::to_string(report).map_err(|e| Error::Data {
            path: log_path.clone(),
            message: e.to_string(),
        })?;
        writeln!(log_file, "{line}").map_err(|e| Error::Io {
            path: log_path.clone(),
            source: e,
        })?;
        let it = t.state.iteration;
        if it % 100 == 0 || it == t.config.iterations {
            log::info!(
                "iteration {it}: loss {:.5}, beta {:.6}, A {:?}, {} Gaussians",
                report.total,
                t.fog.beta_weight,
                t.fog.atmospheric_light(),
                t.cloud.len()
            );
        }
        if let Some(k) = t.config.checkpoint_every {
            if it % k == 0 && it < t.config.iterations {
                let p = out_dir.join(format!("checkpoint_{it:06}.ply"));
                save_checkpoint(&p, &t.cloud, &t.fog, &t.config, it, &records)?;
            }
        }
        Ok(())
    });
    log_file.flush().map_err(io_err(&log_path))?;
    if let Err(e) = result {
        if let Error::Numerical(msg) = &e {
            let p = a.out.join("abort.txt");
            let _ = std::fs::write(&p, format!("{msg}\n"));
        }
        return Err(e.into());
    }
    let ckpt = a.out.join("checkpoint.ply");
    save_checkpoint(
        &ckpt,
        &trainer.cloud,
        &trainer.fog,
        &trainer.config,
        trainer.state.iteration,
        &records,
    )?;
    log::info!("wrote {}", ckpt.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Foggy,
    Clear,
    Transmission,
    Depth,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    camera: usize,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Output file; `.pfm` stores transmission or depth as raw floats.
    #[arg(long)]
    out: PathBuf,
}

fn normalized(map: &ImagePlane) -> ImagePlane {
    let (lo, hi) = map.min_max();
    if hi > lo {
        map.map(|v| (v - lo) / (hi - lo))
    } else {
        map.map(|_| 0.0)
    }
}

pub fn render(a: RenderArgs) -> Result<(), CliError> {
    let ck = load_checkpoint(&a.ckpt)?;
    let cameras = ck.cameras()?;
    let cam = cameras.get(a.camera).ok_or_else(|| {
        CliError::Usage(format!("camera {} out of range (checkpoint has {})", a.camera, cameras.len()))
    })?;
    let mode = match a.mode {
        ModeArg::Foggy => RenderMode::Foggy,
        ModeArg::Clear => RenderMode::Clear,
        ModeArg::Transmission => RenderMode::Transmission,
        ModeArg::Depth => RenderMode::Depth,
    };
    let fog = ck.config.fog_enabled.then_some(&ck.fog);
    if fog.is_none() && matches!(mode, RenderMode::Foggy | RenderMode::Transmission) {
        return Err(Error::Data {
            path: a.ckpt.clone(),
            message: "checkpoint was trained without a fog model".into(),
        }
        .into());
    }
    let opts = RenderOptions {
        background: ck.config.background,
        ..RenderOptions::default()
    };
    let out = render_maps(&ck.cloud, cam, fog, mode, &opts)?;
    let pfm = a.out.extension().and_then(|e| e.to_str()) == Some("pfm");
    match mode {
        RenderMode::Foggy | RenderMode::Clear => write_png(&a.out, &out.color)?,
        RenderMode::Transmission if pfm => write_pfm(&a.out, &out.transmission)?,
        RenderMode::Transmission => write_png(&a.out, &out.transmission)?,
        RenderMode::Depth if pfm => write_pfm(&a.out, &out.depth)?,
        RenderMode::Depth => write_png(&a.out, &normalized(&out.depth))?,
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    /// Directory of ground-truth clear images named like the scene's views.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Ignore this many border pixels.
    #[arg(long, default_value_t = 0)]
    crop: usize,
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let ck = load_checkpoint(&a.ckpt)?;
    let bundle = load_scene(&a.scene)?;
    let names: Vec<String> = bundle.views.iter().map(|v| v.name.clone()).collect();
    let gt = load_images(&a.gt, &names)?;
    let gt: Vec<Option<ImagePlane>> = gt.into_iter().map(Some).collect();
    let opts = RenderOptions {
        background: ck.config.background,
        ..RenderOptions::default()
    };
    let report = evaluate(&ck.cloud, &bundle.cameras(), &gt, a.crop, &opts)?;
    let mut text = String::from("view\tpsnr\tssim\n");
    for v in &report.views {
        text.push_str(&format!("{}\t{:.6}\t{:.6}\n", names[v.view], v.psnr, v.ssim));
    }
    text.push_str(&format!("mean\t{:.6}\t{:.6}\n", report.mean_psnr, report.mean_ssim));
    std::fs::write(&a.out, text).map_err(io_err(&a.out))?;
    log::info!("mean PSNR {:.3} dB, SSIM {:.4}", report.mean_psnr, report.mean_ssim);
    Ok(())
}

#[derive(Args, Debug)]
pub struct ToyArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    grid: usize,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 12)]
    views: usize,
    #[arg(long, default_value_t = 0.8)]
    beta: f64,
    #[arg(long = "A", value_parser = parse_rgb, default_value = "0.8,0.8,0.8")]
    light: [f64; 3],
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn toy(a: ToyArgs) -> Result<(), CliError> {
    let cfg = ToyConfig {
        grid: a.grid,
        width: a.size,
        height: a.size,
        n_views: a.views,
        beta: a.beta,
        light: a.light,
        seed: a.seed,
        ..ToyConfig::default()
    };
    let scene = toy_scene(&cfg)?;
    save_scene(&a.out, &scene.bundle())?;
    Ok(())
}
