//! Forward-operation and timing benchmarks.
//!
//! Pass counts are exact and hardware independent. Wall-clock times are
//! informational.

use std::time::Instant;

use crate::dataset_gen::{generate_focal_surface, in_focus_restoration, quantize_depth, synthetic_scene};
use crate::error::{ensure_arg, ensure_shape, Error, Result};
use crate::focal_model::{model_forward, ModelParams};
use crate::hologram::ReconstructionTarget;
use crate::holo_opt::{self, FocalSurfaceTargetSet, LearnedTransport, MultiplaneTarget, OptimizeConfig};
use crate::metrics;
use crate::tensor::Tensor3;
use crate::wave_optics::{OpticalConfig, Propagator};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    SimulateVolume,
    OptimizeMultiplane,
    OptimizeFocal,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simulate-volume" => Ok(Scenario::SimulateVolume),
            "optimize-multiplane" => Ok(Scenario::OptimizeMultiplane),
            "optimize-focal" => Ok(Scenario::OptimizeFocal),
            other => Err(Error::InvalidArgument(format!("unknown scenario {other:?}"))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::SimulateVolume => "simulate-volume",
            Scenario::OptimizeMultiplane => "optimize-multiplane",
            Scenario::OptimizeFocal => "optimize-focal",
        })
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub optical: OpticalConfig,
    pub iterations: usize,
    pub surfaces: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            optical: OpticalConfig::default(),
            iterations: 50,
            surfaces: 6,
            lr: OptimizeConfig::default().lr,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub scenario: Scenario,
    /// Quality of the scenario's output, where it has one.
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub asm_passes: u64,
    pub model_inferences: u64,
    pub iterations: usize,
    pub wall_clock_s: f64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "scenario,psnr_db,ssim,asm_passes,model_inferences,iterations,wall_clock_s";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{:.6}",
            self.scenario,
            opt(self.psnr),
            opt(self.ssim),
            self.asm_passes,
            self.model_inferences,
            self.iterations,
            self.wall_clock_s
        )
    }
}

impl std::fmt::Display for MetricReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "scenario          {}", self.scenario)?;
        if let Some(p) = self.psnr {
            writeln!(f, "psnr              {p:.3} dB")?;
        }
        if let Some(s) = self.ssim {
            writeln!(f, "ssim              {s:.4}")?;
        }
        writeln!(f, "asm passes        {}", self.asm_passes)?;
        writeln!(f, "model inferences  {}", self.model_inferences)?;
        writeln!(f, "iterations        {}", self.iterations)?;
        write!(f, "wall clock        {:.3} s (informational)", self.wall_clock_s)
    }
}

/// Synthetic scene with `count` random focal surfaces over its quantized depth.
pub fn synthetic_focal_targets(config: &OpticalConfig, count: usize, seed: u64) -> Result<FocalSurfaceTargetSet> {
    let scene = synthetic_scene(config.height, config.width, seed);
    let levels = quantize_depth(&scene.depth, config.plane_count())?;
    let planes = vec![scene.rgb.clone(); config.plane_count()];
    let targets = (0..count)
        .map(|k| {
            let surface = generate_focal_surface(&levels, seed.wrapping_add(k as u64 + 1))?;
            let (r, m) = in_focus_restoration(&planes, &surface, &levels)?;
            ReconstructionTarget::new(r, surface, m)
        })
        .collect::<Result<Vec<_>>>()?;
    FocalSurfaceTargetSet::new(targets)
}

/// Synthetic scene as a multiplane target over `config`'s planes.
pub fn synthetic_multiplane_target(config: &OpticalConfig, seed: u64) -> Result<MultiplaneTarget> {
    let scene = synthetic_scene(config.height, config.width, seed);
    let masks = quantize_depth(&scene.depth, config.plane_count())?;
    MultiplaneTarget::new(vec![scene.rgb; config.plane_count()], masks)
}

pub fn bench(scenario: Scenario, config: &BenchConfig, model: Option<&ModelParams>) -> Result<MetricReport> {
    let optical = &config.optical;
    optical.validate()?;
    let opt = OptimizeConfig {
        iterations: config.iterations,
        lr: config.lr,
        seed: config.seed,
        ..OptimizeConfig::default()
    };
    let need_model = || -> Result<&ModelParams> {
        let m = model.ok_or_else(|| Error::InvalidArgument(format!("{scenario} needs a model")))?;
        let mc = m.config();
        ensure_shape!(
            mc.height == optical.height && mc.width == optical.width,
            "model {}x{} vs optical config {}x{}",
            mc.height,
            mc.width,
            optical.height,
            optical.width
        );
        Ok(m)
    };
    let t0 = Instant::now();
    let report = match scenario {
        Scenario::SimulateVolume => {
            let propagator = Propagator::new(optical)?;
            let holo = holo_opt::init_phase(optical, config.seed);
            let planes = propagator.reconstruct_volume(&holo)?;
            let mut inferences = 0;
            let (mut psnr, mut ssim) = (None, None);
            if let Some(m) = model {
                need_model()?;
                let targets = synthetic_focal_targets(optical, 1, config.seed)?;
                let surface = &targets.targets[0].surface;
                let predicted = model_forward(&holo, surface, m)?;
                inferences = 1;
                let levels = quantize_depth(surface.depth(), optical.plane_count())?;
                let (exact, _) = in_focus_restoration(&planes, surface, &levels)?;
                let (p, q) = normalized(&predicted, &exact);
                psnr = Some(metrics::psnr(&p, &q, 1.0)?);
                ssim = Some(metrics::ssim(&p, &q, 1.0)?);
            }
            MetricReport {
                scenario,
                psnr,
                ssim,
                asm_passes: propagator.passes(),
                model_inferences: inferences,
                iterations: 0,
                wall_clock_s: 0.0,
            }
        }
        Scenario::OptimizeMultiplane => {
            let targets = synthetic_multiplane_target(optical, config.seed)?;
            let propagator = Propagator::new(optical)?;
            let r = holo_opt::optimize_multiplane_from(holo_opt::init_phase(optical, config.seed), &targets, &propagator, &opt)?;
            MetricReport {
                scenario,
                psnr: None,
                ssim: None,
                asm_passes: r.passes.last().copied().unwrap_or(0),
                model_inferences: 0,
                iterations: config.iterations,
                wall_clock_s: 0.0,
            }
        }
        Scenario::OptimizeFocal => {
            ensure_arg!(config.surfaces >= 1, "optimize-focal needs at least one surface");
            let m = need_model()?;
            let targets = synthetic_focal_targets(optical, config.surfaces, config.seed)?;
            let transport = LearnedTransport::new(m);
            let r = holo_opt::optimize_focal_surface_with(holo_opt::init_phase(optical, config.seed), &targets, &transport, &opt)?;
            MetricReport {
                scenario,
                psnr: None,
                ssim: None,
                asm_passes: 0,
                model_inferences: r.passes.last().copied().unwrap_or(0),
                iterations: config.iterations,
                wall_clock_s: 0.0,
            }
        }
    };
    Ok(MetricReport {
        wall_clock_s: t0.elapsed().as_secs_f64(),
        ..report
    })
}

/// Both images divided by the larger of their maxima, for peak-1 metrics.
fn normalized(a: &Tensor3, b: &Tensor3) -> (Tensor3, Tensor3) {
    let peak = a.max_abs().max(b.max_abs()).max(f64::MIN_POSITIVE);
    (a.scaled(1.0 / peak).map(|v| v.clamp(0.0, 1.0)), b.scaled(1.0 / peak))
}
