use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use focalholo::bench::{self, BenchConfig, MetricReport, Scenario};
use focalholo::container;
use focalholo::dataset_gen::{self, generate_focal_surface, in_focus_restoration, quantize_depth, synthetic_scene, RgbdSample};
use focalholo::focal_model::{self, model_forward, ModelParams};
use focalholo::holo_opt::{self, FocalSurfaceTargetSet, MultiplaneTarget, OptimizeResult, Variant};
use focalholo::imageio;
use focalholo::metrics;
use focalholo::wave_optics::{build_asm_kernel, intensity, phase_to_field, propagate, Propagator};
use focalholo::{PhaseHologram, ReconstructionTarget, Tensor3};

use crate::settings::Settings;

pub struct Ctx {
    pub settings: Settings,
    pub out_dir: PathBuf,
}

impl Ctx {
    fn out(&self, name: impl AsRef<Path>) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir).with_context(|| format!("creating {}", self.out_dir.display()))?;
        Ok(self.out_dir.join(name))
    }

    fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let p = self.out(name)?;
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }
}

fn load_hologram(path: &Path, ctx: &Ctx) -> Result<PhaseHologram> {
    let h = PhaseHologram::new(imageio::load_pfm(path)?).with_context(|| format!("loading hologram {}", path.display()))?;
    let o = &ctx.settings.optical;
    ensure!(
        h.height() == o.height && h.width() == o.width,
        "hologram is {}x{}, config expects {}x{}",
        h.height(),
        h.width(),
        o.height,
        o.width
    );
    Ok(h)
}

fn load_model(path: &Path, ctx: &Ctx) -> Result<ModelParams> {
    let m = container::load_checkpoint(path).with_context(|| format!("loading model {}", path.display()))?;
    let (mc, o) = (m.config(), &ctx.settings.optical);
    ensure!(
        mc.height == o.height && mc.width == o.width,
        "model is {}x{}, config expects {}x{}",
        mc.height,
        mc.width,
        o.height,
        o.width
    );
    Ok(m)
}

/// Intensity to `[0, 1]` by the image maximum, then display gamma 2.2.
fn display(img: &Tensor3) -> Tensor3 {
    let peak = img.max_abs().max(f64::MIN_POSITIVE);
    img.map(|v| (v / peak).max(0.0).powf(1.0 / 2.2))
}

fn save_image_pair(ctx: &Ctx, stem: &str, img: &Tensor3) -> Result<()> {
    imageio::save_pfm(ctx.out(format!("{stem}.pfm"))?, img)?;
    imageio::save_png(ctx.out(format!("{stem}.png"))?, &display(img))?;
    Ok(())
}

fn save_hologram(ctx: &Ctx, h: &PhaseHologram) -> Result<()> {
    imageio::save_pfm(ctx.out("hologram.pfm")?, h.phase())?;
    for (c, name) in ["r", "g", "b"].iter().enumerate() {
        let vis = imageio::phase_visualization(h.channel(c), h.height(), h.width())?;
        imageio::save_png(ctx.out(format!("phase_{name}.png"))?, &vis)?;
    }
    Ok(())
}

pub fn propagate_cmd(ctx: &Ctx, hologram: &Path, distance_mm: f64, save_kernels: bool) -> Result<()> {
    let o = &ctx.settings.optical;
    let h = load_hologram(hologram, ctx)?;
    let mut img = Tensor3::zeros(3, o.height, o.width);
    let mut re = Tensor3::zeros(3, o.height, o.width);
    let mut im = Tensor3::zeros(3, o.height, o.width);
    for c in 0..3 {
        let kernel = build_asm_kernel(o, c, distance_mm)?;
        if save_kernels {
            container::save_kernel(ctx.out(format!("kernel_{c}.bin"))?, &kernel)?;
        }
        let field = propagate(&phase_to_field(&h, c, o)?, &kernel)?;
        img.channel_mut(c).copy_from_slice(intensity(&field).as_slice());
        for (p, z) in field.data().iter().enumerate() {
            re.channel_mut(c)[p] = z.re;
            im.channel_mut(c)[p] = z.im;
        }
    }
    save_image_pair(ctx, "intensity", &img)?;
    imageio::save_pfm(ctx.out("field_re.pfm")?, &re)?;
    imageio::save_pfm(ctx.out("field_im.pfm")?, &im)?;
    println!("propagated {} by {distance_mm} mm: 3 ASM passes", hologram.display());
    println!("wrote intensity.pfm, intensity.png, field_re.pfm, field_im.pfm to {}", ctx.out_dir.display());
    Ok(())
}

pub fn reconstruct_volume_cmd(ctx: &Ctx, hologram: &Path) -> Result<()> {
    let o = &ctx.settings.optical;
    let h = load_hologram(hologram, ctx)?;
    let t0 = Instant::now();
    let propagator = Propagator::new(o)?;
    let planes = propagator.reconstruct_volume(&h)?;
    let secs = t0.elapsed().as_secs_f64();
    let mut csv = String::from("plane,distance_mm,mean_intensity\n");
    for (j, img) in planes.iter().enumerate() {
        save_image_pair(ctx, &format!("plane_{j}"), img)?;
        writeln!(csv, "{j},{},{:.6}", o.plane_distance_mm(j), img.mean())?;
    }
    ctx.write_text("volume.csv", &csv)?;
    println!(
        "reconstructed {} planes: {} ASM passes, {secs:.3} s",
        planes.len(),
        propagator.passes()
    );
    Ok(())
}

fn scene(ctx: &Ctx, rgb: Option<&Path>, depth: Option<&Path>) -> Result<RgbdSample> {
    let o = &ctx.settings.optical;
    let s = match (rgb, depth) {
        (Some(r), Some(d)) => RgbdSample::new(imageio::load_png(r)?, imageio::load_pfm(d)?)
            .with_context(|| format!("loading RGB-D pair {} + {}", r.display(), d.display()))?,
        (None, None) => synthetic_scene(o.height, o.width, ctx.settings.seed),
        _ => bail!("--rgb and --depth must be given together"),
    };
    ensure!(
        s.height() == o.height && s.width() == o.width,
        "scene is {}x{}, config expects {}x{}",
        s.height(),
        s.width(),
        o.height,
        o.width
    );
    Ok(s)
}

fn write_trace(ctx: &Ctx, r: &OptimizeResult) -> Result<()> {
    let mut csv = String::from("iteration,loss,passes\n");
    for (i, (l, p)) in r.losses.iter().zip(&r.passes).enumerate() {
        writeln!(csv, "{i},{l:.9e},{p}")?;
    }
    ctx.write_text("loss.csv", &csv)?;
    Ok(())
}

pub fn optimize_cmd(ctx: &Ctx, variant: Variant, rgb: Option<&Path>, depth: Option<&Path>, model: Option<&Path>) -> Result<()> {
    let s = &ctx.settings;
    let o = &s.optical;
    let sample = scene(ctx, rgb, depth)?;
    let levels = quantize_depth(&sample.depth, o.plane_count())?;
    let opt = holo_opt::OptimizeConfig { variant, ..s.optimize };
    let t0 = Instant::now();
    let (result, unit) = match variant {
        Variant::Multiplane => {
            let targets = MultiplaneTarget::new(vec![sample.rgb.clone(); o.plane_count()], levels)?;
            (holo_opt::optimize_multiplane(&targets, o, &opt)?, "ASM passes")
        }
        Variant::FocalSurface => {
            let model = load_model(model.context("--model is required for the focal_surface variant")?, ctx)?;
            ensure!(s.surfaces >= 1, "surfaces must be at least 1");
            let planes = vec![sample.rgb.clone(); o.plane_count()];
            let targets = (0..s.surfaces)
                .map(|k| {
                    let surface = generate_focal_surface(&levels, s.seed.wrapping_add(k as u64 + 1))?;
                    let (r, m) = in_focus_restoration(&planes, &surface, &levels)?;
                    ReconstructionTarget::new(r, surface, m)
                })
                .collect::<focalholo::Result<Vec<_>>>()?;
            let targets = FocalSurfaceTargetSet::new(targets)?;
            (holo_opt::optimize_focal_surface(&targets, &model, o, &opt)?, "model inferences")
        }
    };
    let secs = t0.elapsed().as_secs_f64();
    save_hologram(ctx, &result.hologram)?;
    write_trace(ctx, &result)?;
    let passes = result.passes.last().copied().unwrap_or(0);
    match result.losses.first().zip(result.losses.last()) {
        Some((a, b)) => println!("{} iterations, loss {a:.6} -> {b:.6}", result.losses.len()),
        None => println!("0 iterations: initial hologram written"),
    }
    println!("{passes} {unit}, {secs:.3} s (informational)");
    println!("wrote hologram.pfm, phase_[rgb].png, loss.csv to {}", ctx.out_dir.display());
    Ok(())
}

pub fn gen_dataset_cmd(ctx: &Ctx, input_dir: Option<&Path>, synthetic: Option<usize>) -> Result<()> {
    let s = &ctx.settings;
    let o = &s.optical;
    let samples = match (input_dir, synthetic) {
        (Some(d), None) => dataset_gen::load_rgbd_dir(d)?,
        (None, Some(n)) => {
            ensure!(n >= 1, "--synthetic needs at least one image");
            (0..n as u64).map(|i| synthetic_scene(o.height, o.width, s.seed.wrapping_add(i))).collect()
        }
        _ => bail!("give exactly one of --input-dir or --synthetic"),
    };
    let t0 = Instant::now();
    let records = dataset_gen::generate_dataset(&samples, &s.dataset, &ctx.out_dir)?;
    println!(
        "{} records ({} images x {} distances x {} surfaces), {} optimization iterations each, {:.2} s",
        records.len(),
        samples.len(),
        s.dataset.distances_mm.len(),
        s.dataset.surfaces_per_image,
        s.dataset.reduced_iterations(),
        t0.elapsed().as_secs_f64()
    );
    println!("wrote {}", ctx.out_dir.join(dataset_gen::MANIFEST).display());
    Ok(())
}

fn dataset_pairs(dir: &Path, distance_mm: f64) -> Result<Vec<(PhaseHologram, ReconstructionTarget)>> {
    let recs = dataset_gen::load_dataset(dir, Some(distance_mm)).with_context(|| format!("loading dataset {}", dir.display()))?;
    ensure!(!recs.is_empty(), "dataset {} has no records at {distance_mm} mm", dir.display());
    Ok(recs.into_iter().map(|r| (r.hologram, r.target)).collect())
}

pub fn train_cmd(ctx: &Ctx, dataset: &Path, distance_mm: f64, init: Option<&Path>) -> Result<()> {
    let s = &ctx.settings;
    let data = dataset_pairs(dataset, distance_mm)?;
    let params = match init {
        Some(p) => load_model(p, ctx)?,
        None => ModelParams::init(s.model, s.seed)?,
    };
    println!(
        "training on {} records, {} parameters, {} epochs",
        data.len(),
        params.parameter_count(),
        s.schedule.epochs
    );
    let every = (s.schedule.epochs / 10).max(1);
    let report = focal_model::train(&data, params, &s.schedule, |e, l| {
        if e % every == 0 || e + 1 == s.schedule.epochs {
            println!("epoch {e:>5}  loss {l:.6}");
        }
    })?;
    let mut csv = String::from("epoch,loss,lr\n");
    for (e, l) in report.epoch_losses.iter().enumerate() {
        writeln!(csv, "{e},{l:.9e},{:e}", s.schedule.lr_at(e))?;
    }
    ctx.write_text("train_loss.csv", &csv)?;
    container::save_checkpoint(ctx.out("model.ckpt")?, &report.params)?;
    println!("wrote model.ckpt and train_loss.csv to {}", ctx.out_dir.display());
    Ok(())
}

pub fn eval_cmd(ctx: &Ctx, dataset: &Path, model: &Path, distance_mm: f64) -> Result<()> {
    let data = dataset_pairs(dataset, distance_mm)?;
    let params = load_model(model, ctx)?;
    let mut csv = String::from("record,psnr_db,ssim,loss\n");
    let (mut sp, mut ss) = (0.0, 0.0);
    let t0 = Instant::now();
    for (i, (h, t)) in data.iter().enumerate() {
        let pred = model_forward(h, &t.surface, &params)?;
        let loss = focal_model::masked_l2_loss(&pred, &t.image, &t.mask, ctx.settings.optimize.alpha0, ctx.settings.optimize.alpha1)?;
        // peak-normalized by the target's maximum
        let peak = t.image.max_abs().max(f64::MIN_POSITIVE);
        let p = pred.map(|v| (v / peak).clamp(0.0, 1.0));
        let r = t.image.scaled(1.0 / peak);
        let (psnr, ssim) = (metrics::psnr(&p, &r, 1.0)?, metrics::ssim(&p, &r, 1.0)?);
        writeln!(csv, "{i},{psnr:.4},{ssim:.5},{loss:.9e}")?;
        sp += psnr;
        ss += ssim;
    }
    let n = data.len() as f64;
    ctx.write_text("eval.csv", &csv)?;
    let summary = format!(
        "records {}\nmean psnr {:.3} dB\nmean ssim {:.4}\nmodel inferences {}\nwall clock {:.3} s (informational)\n",
        data.len(),
        sp / n,
        ss / n,
        data.len(),
        t0.elapsed().as_secs_f64()
    );
    ctx.write_text("eval.txt", &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn bench_cmd(ctx: &Ctx, scenario: Scenario, model: Option<&Path>) -> Result<()> {
    let s = &ctx.settings;
    let model = model.map(|p| load_model(p, ctx)).transpose()?;
    let cfg = BenchConfig {
        optical: s.optical.clone(),
        iterations: s.optimize.iterations,
        surfaces: s.surfaces,
        lr: s.optimize.lr,
        seed: s.seed,
    };
    let report: MetricReport = bench::bench(scenario, &cfg, model.as_ref())?;
    let csv_path = ctx.out("bench.csv")?;
    let mut csv = if csv_path.exists() {
        fs::read_to_string(&csv_path).with_context(|| format!("reading {}", csv_path.display()))?
    } else {
        format!("{}\n", MetricReport::CSV_HEADER)
    };
    writeln!(csv, "{}", report.csv_row())?;
    fs::write(&csv_path, csv).with_context(|| format!("writing {}", csv_path.display()))?;
    println!("{report}");
    Ok(())
}
