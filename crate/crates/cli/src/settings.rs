//! Run settings assembled from defaults, an optional `key = value` file and
//! command-line overrides.

use std::path::Path;

use anyhow::{bail, Context, Result};
use focalholo::config::KeyValueConfig;
use focalholo::dataset_gen::DatasetConfig;
use focalholo::focal_model::{ModelConfig, TrainSchedule};
use focalholo::holo_opt::OptimizeConfig;
use focalholo::optim::AdamConfig;
use focalholo::wave_optics::{evenly_spaced_planes, OpticalConfig};

pub const KEYS: &[&str] = &[
    "seed",
    "width",
    "height",
    "pixel_pitch_um",
    "wavelengths_nm",
    "planes_mm",
    "plane_count",
    "volume_depth_mm",
    "base_distance_mm",
    "band_limited",
    "padding",
    "iterations",
    "lr",
    "scale",
    "alpha0",
    "alpha1",
    "surfaces",
    "base_channels",
    "k",
    "epochs",
    "train_lr",
    "decay_every",
    "decay_factor",
    "distances_mm",
    "surfaces_per_image",
    "full_iterations",
    "reduced_fraction",
];

#[derive(Debug, Clone)]
pub struct Settings {
    pub seed: u64,
    pub optical: OpticalConfig,
    pub optimize: OptimizeConfig,
    pub surfaces: usize,
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
    pub dataset: DatasetConfig,
}

impl Settings {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let kv = match path {
            Some(p) => KeyValueConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
            None => KeyValueConfig::default(),
        };
        kv.reject_unknown(KEYS)?;
        let mut s = Self::from_kv(&kv)?;
        if let Some(seed) = seed {
            s.set_seed(seed);
        }
        Ok(s)
    }

    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.optimize.seed = seed;
        self.schedule.seed = seed;
        self.dataset.seed = seed;
    }

    fn from_kv(kv: &KeyValueConfig) -> Result<Self> {
        let base = OpticalConfig::default();
        let wavelengths_nm = match kv.get_list::<f64>("wavelengths_nm")? {
            None => base.wavelengths_nm,
            Some(v) if v.len() == 3 => [v[0], v[1], v[2]],
            Some(v) => bail!("wavelengths_nm needs 3 values, got {}", v.len()),
        };
        let volume_planes_mm = match kv.get_list::<f64>("planes_mm")? {
            Some(p) => p,
            None => evenly_spaced_planes(kv.get_or("plane_count", 6)?, kv.get_or("volume_depth_mm", 6.0)?),
        };
        let optical = OpticalConfig {
            wavelengths_nm,
            pixel_pitch_um: kv.get_or("pixel_pitch_um", base.pixel_pitch_um)?,
            width: kv.get_or("width", base.width)?,
            height: kv.get_or("height", base.height)?,
            volume_planes_mm,
            base_distance_mm: kv.get_or("base_distance_mm", base.base_distance_mm)?,
            band_limited: kv.get_or("band_limited", base.band_limited)?,
            padding: kv.get_or("padding", base.padding)?,
        };
        optical.validate()?;

        let seed = kv.get_or("seed", 0u64)?;
        let od = OptimizeConfig::default();
        let optimize = OptimizeConfig {
            iterations: kv.get_or("iterations", od.iterations)?,
            lr: kv.get_or("lr", od.lr)?,
            scale: kv.get_or("scale", od.scale)?,
            seed,
            alpha0: kv.get_or("alpha0", od.alpha0)?,
            alpha1: kv.get_or("alpha1", od.alpha1)?,
            variant: od.variant,
        };
        let md = ModelConfig::default();
        let model = ModelConfig {
            height: optical.height,
            width: optical.width,
            base_channels: kv.get_or("base_channels", md.base_channels)?,
            k: kv.get_or("k", md.k)?,
        };
        let td = TrainSchedule::default();
        let schedule = TrainSchedule {
            epochs: kv.get_or("epochs", td.epochs)?,
            adam: AdamConfig {
                lr: kv.get_or("train_lr", td.adam.lr)?,
                ..td.adam
            },
            decay_every: kv.get_or("decay_every", td.decay_every)?,
            decay_factor: kv.get_or("decay_factor", td.decay_factor)?,
            alpha0: optimize.alpha0,
            alpha1: optimize.alpha1,
            seed,
        };
        let dd = DatasetConfig::default();
        let dataset = DatasetConfig {
            optical: optical.clone(),
            distances_mm: kv.get_list("distances_mm")?.unwrap_or(dd.distances_mm),
            surfaces_per_image: kv.get_or("surfaces_per_image", dd.surfaces_per_image)?,
            full_iterations: kv.get_or("full_iterations", dd.full_iterations)?,
            reduced_fraction: kv.get_or("reduced_fraction", dd.reduced_fraction)?,
            lr: optimize.lr,
            seed,
        };
        Ok(Self {
            seed,
            optical,
            optimize,
            surfaces: kv.get_or("surfaces", 6)?,
            model,
            schedule,
            dataset,
        })
    }
}
