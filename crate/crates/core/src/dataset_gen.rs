//! Focal-surface training data from RGB-D images.
//!
//! Per image and base distance: a deliberately under-iterated multiplane
//! hologram, its reconstruction on every volume plane, then several random
//! focal surfaces each turned into an `(R, D, M)` triple by in-focus
//! restoration.

use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{ensure_arg, ensure_shape, Error, Result};
use crate::hologram::{is_binary, FocalSurface, PhaseHologram, ReconstructionTarget};
use crate::holo_opt::{self, MultiplaneTarget, OptimizeConfig};
use crate::imageio;
use crate::tensor::Tensor3;
use crate::wave_optics::{OpticalConfig, Propagator};

#[derive(Debug, Clone, PartialEq)]
pub struct RgbdSample {
    pub rgb: Tensor3,
    pub depth: Tensor3,
}

impl RgbdSample {
    pub fn new(rgb: Tensor3, depth: Tensor3) -> Result<Self> {
        ensure_shape!(rgb.channels() == 3, "rgb has {} channels", rgb.channels());
        ensure_shape!(
            depth.shape() == (1, rgb.height(), rgb.width()),
            "depth {:?} vs rgb {:?}",
            depth.shape(),
            rgb.shape()
        );
        let in_unit = |t: &Tensor3| t.as_slice().iter().all(|v| (0.0..=1.0).contains(v));
        ensure_arg!(in_unit(&rgb), "rgb values must lie in [0, 1]");
        ensure_arg!(in_unit(&depth), "depth values must lie in [0, 1]");
        Ok(Self { rgb, depth })
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    /// Reads `<stem>.png` (RGB) and `<stem>.pfm` (1-channel depth).
    pub fn load(stem: impl AsRef<Path>) -> Result<Self> {
        let stem = stem.as_ref();
        let rgb = imageio::load_png(stem.with_extension("png"))?;
        let depth = imageio::load_pfm(stem.with_extension("pfm"))?;
        ensure_shape!(rgb.channels() == 3, "{} is not an RGB image", stem.with_extension("png").display());
        Self::new(rgb, depth)
    }
}

/// Every `<stem>.png` with a matching `<stem>.pfm` in `dir`, sorted by name.
pub fn load_rgbd_dir(dir: impl AsRef<Path>) -> Result<Vec<RgbdSample>> {
    let dir = dir.as_ref();
    let mut stems = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e == "png") && p.with_extension("pfm").exists() {
            stems.push(p.with_extension(""));
        }
    }
    stems.sort();
    ensure_arg!(!stems.is_empty(), "no RGB-D pairs (name.png + name.pfm) in {}", dir.display());
    stems.iter().map(RgbdSample::load).collect()
}

/// Procedural RGB-D scene: a shaded backdrop with textured discs and
/// rectangles at random depths, nearer shapes painted over farther ones.
pub fn synthetic_scene(height: usize, width: usize, seed: u64) -> RgbdSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (height as f64, width as f64);
    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.15..0.6));
    let tilt: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.25..0.25));
    let mut rgb = Tensor3::from_fn(3, height, width, |c, y, x| {
        (base[c] + tilt[c] * (x as f64 / wf - 0.5) + 0.1 * (y as f64 / hf)).clamp(0.0, 1.0)
    });
    let back_depth = rng.gen_range(0.85..1.0);
    let mut depth = Tensor3::filled(1, height, width, back_depth);

    let count = rng.gen_range(3..7);
    // (depth, is disc, [cy, cx, ry, rx], color, [texture amplitude, frequency])
    type Shape = (f64, bool, [f64; 4], [f64; 3], [f64; 2]);
    let mut shapes: Vec<Shape> = (0..count)
        .map(|_| {
            let d = rng.gen_range(0.0..0.85);
            let disc = rng.gen_bool(0.5);
            let geom = [
                rng.gen_range(0.1..0.9) * hf,
                rng.gen_range(0.1..0.9) * wf,
                rng.gen_range(0.12..0.35) * hf,
                rng.gen_range(0.12..0.35) * wf,
            ];
            let color = std::array::from_fn(|_| rng.gen_range(0.05..0.95));
            let texture = [rng.gen_range(0.0..0.2), rng.gen_range(0.2..1.2)];
            (d, disc, geom, color, texture)
        })
        .collect();
    shapes.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (d, disc, [cy, cx, ry, rx], color, [amp, freq]) in shapes {
        for y in 0..height {
            for x in 0..width {
                let (dy, dx) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
                let inside = if disc { dy * dy + dx * dx <= 1.0 } else { dy.abs() <= 1.0 && dx.abs() <= 1.0 };
                if inside {
                    let t = amp * (freq * (x as f64 + 0.7 * y as f64)).sin();
                    for (c, &col) in color.iter().enumerate() {
                        rgb.set(c, y, x, (col + t).clamp(0.0, 1.0));
                    }
                    depth.set(0, y, x, d);
                }
            }
        }
    }
    RgbdSample::new(rgb, depth).expect("synthetic scene is in range")
}

/// Binary masks for depth bins `[j/n, (j+1)/n)`, the last bin closed at 1.
pub fn quantize_depth(depth: &Tensor3, n_levels: usize) -> Result<Vec<Tensor3>> {
    ensure_arg!(n_levels >= 1, "n_levels must be at least 1");
    ensure_shape!(depth.channels() == 1, "depth must have one channel");
    ensure_arg!(
        depth.as_slice().iter().all(|v| (0.0..=1.0).contains(v)),
        "depth values must lie in [0, 1]"
    );
    let (_, h, w) = depth.shape();
    let mut masks = vec![Tensor3::zeros(1, h, w); n_levels];
    for (p, &d) in depth.as_slice().iter().enumerate() {
        let level = ((d * n_levels as f64).floor() as usize).min(n_levels - 1);
        masks[level].as_mut_slice()[p] = 1.0;
    }
    Ok(masks)
}

fn check_partition(masks: &[Tensor3]) -> Result<(usize, usize)> {
    ensure_arg!(!masks.is_empty(), "no level masks");
    let (_, h, w) = masks[0].shape();
    for m in masks {
        ensure_shape!(m.shape() == (1, h, w), "level mask {:?} vs (1, {h}, {w})", m.shape());
        ensure_arg!(is_binary(m), "level masks must be binary");
    }
    for p in 0..h * w {
        let s: f64 = masks.iter().map(|m| m.as_slice()[p]).sum();
        ensure_arg!(s == 1.0, "level masks do not partition the image at pixel {p}");
    }
    Ok((h, w))
}

/// Level index of every pixel for partitioning masks.
fn levels_of(masks: &[Tensor3]) -> Vec<usize> {
    let n = masks[0].plane_len();
    (0..n)
        .map(|p| masks.iter().position(|m| m.as_slice()[p] == 1.0).expect("partition"))
        .collect()
}

/// 4-connected component labels of `levels`, numbered in raster order.
fn components(levels: &[usize], h: usize, w: usize) -> (Vec<usize>, usize) {
    const UNSET: usize = usize::MAX;
    let mut label = vec![UNSET; h * w];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if label[start] != UNSET {
            continue;
        }
        label[start] = next;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (y, x) = (p / w, p % w);
            let mut visit = |q: usize| {
                if label[q] == UNSET && levels[q] == levels[start] {
                    label[q] = next;
                    stack.push(q);
                }
            };
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
        }
        next += 1;
    }
    (label, next)
}

/// Assigns each connected region of each level mask a plane level drawn
/// uniformly from all levels.
pub fn generate_focal_surface(level_masks: &[Tensor3], seed: u64) -> Result<FocalSurface> {
    let (h, w) = check_partition(level_masks)?;
    let n = level_masks.len();
    let (label, count) = components(&levels_of(level_masks), h, w);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assigned: Vec<usize> = (0..count).map(|_| rng.gen_range(0..n)).collect();
    FocalSurface::from_levels(h, w, label.iter().map(|&l| assigned[l]).collect(), n)
}

/// Composes the per-pixel in-focus plane reconstruction into `R`; `M` marks
/// pixels whose surface level equals the scene's quantized depth level.
pub fn in_focus_restoration(
    plane_images: &[Tensor3],
    surface: &FocalSurface,
    scene_level_masks: &[Tensor3],
) -> Result<(Tensor3, Tensor3)> {
    ensure_shape!(
        plane_images.len() == surface.n_levels(),
        "{} plane images vs {} surface levels",
        plane_images.len(),
        surface.n_levels()
    );
    ensure_shape!(
        scene_level_masks.len() == surface.n_levels(),
        "{} scene masks vs {} surface levels",
        scene_level_masks.len(),
        surface.n_levels()
    );
    let (h, w) = check_partition(scene_level_masks)?;
    ensure_shape!(surface.height() == h && surface.width() == w, "surface size vs masks");
    let c = plane_images[0].channels();
    for img in plane_images {
        ensure_shape!(img.shape() == (c, h, w), "plane image {:?} vs ({c}, {h}, {w})", img.shape());
    }
    let scene = levels_of(scene_level_masks);
    let levels = surface.levels();
    let r = Tensor3::from_fn(c, h, w, |ch, y, x| plane_images[levels[y * w + x]].get(ch, y, x));
    let m = Tensor3::from_fn(1, h, w, |_, y, x| (levels[y * w + x] == scene[y * w + x]) as u8 as f64);
    Ok((r, m))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    /// Plane set and optics; `base_distance_mm` is replaced per distance.
    pub optical: OpticalConfig,
    pub distances_mm: Vec<f64>,
    pub surfaces_per_image: usize,
    /// Iterations of a standard-quality optimization.
    pub full_iterations: usize,
    /// Fraction of `full_iterations` actually run, to leave noise in.
    pub reduced_fraction: f64,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            optical: OpticalConfig {
                width: 96,
                height: 96,
                ..OpticalConfig::default()
            },
            distances_mm: vec![0.0, 10.0],
            surfaces_per_image: 5,
            full_iterations: 200,
            reduced_fraction: 0.2,
            lr: OptimizeConfig::default().lr,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn reduced_iterations(&self) -> usize {
        (self.full_iterations as f64 * self.reduced_fraction).round() as usize
    }

    pub fn record_count(&self, images: usize) -> usize {
        images * self.distances_mm.len() * self.surfaces_per_image
    }

    fn validate(&self) -> Result<()> {
        self.optical.validate()?;
        ensure_arg!(!self.distances_mm.is_empty(), "no propagation distances");
        ensure_arg!(self.surfaces_per_image >= 1, "surfaces_per_image must be at least 1");
        ensure_arg!(
            (0.0..=1.0).contains(&self.reduced_fraction),
            "reduced_fraction must lie in [0, 1]"
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    /// Paths are relative to the dataset directory.
    pub hologram: PathBuf,
    pub surface: PathBuf,
    pub target: PathBuf,
    pub mask: PathBuf,
    pub base_distance_mm: f64,
    pub seed: u64,
}

pub const MANIFEST: &str = "manifest.txt";

fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Writes the dataset under `out_dir` and returns its records in manifest
/// order (image, then distance, then surface).
pub fn generate_dataset(samples: &[RgbdSample], config: &DatasetConfig, out_dir: impl AsRef<Path>) -> Result<Vec<DatasetRecord>> {
    let out_dir = out_dir.as_ref();
    config.validate()?;
    ensure_arg!(!samples.is_empty(), "no RGB-D samples");
    let (h, w) = (config.optical.height, config.optical.width);
    for s in samples {
        ensure_shape!(
            s.height() == h && s.width() == w,
            "sample {}x{} vs config {h}x{w}",
            s.height(),
            s.width()
        );
    }
    let n_levels = config.optical.plane_count();
    let jobs: Vec<(usize, usize)> = (0..samples.len())
        .flat_map(|i| (0..config.distances_mm.len()).map(move |d| (i, d)))
        .collect();
    let per_job = jobs
        .par_iter()
        .map(|&(i, di)| {
            let distance = config.distances_mm[di];
            let optical = OpticalConfig {
                base_distance_mm: distance,
                ..config.optical.clone()
            };
            let sample = &samples[i];
            let job_seed = stream_seed(config.seed, (i * config.distances_mm.len() + di) as u64);
            let scene = quantize_depth(&sample.depth, n_levels)?;
            let targets = MultiplaneTarget::new(vec![sample.rgb.clone(); n_levels], scene.clone())?;
            let opt = OptimizeConfig {
                iterations: config.reduced_iterations(),
                lr: config.lr,
                seed: job_seed,
                ..OptimizeConfig::default()
            };
            let propagator = Propagator::new(&optical)?;
            let holo = holo_opt::optimize_multiplane_from(holo_opt::init_phase(&optical, job_seed), &targets, &propagator, &opt)?
                .hologram;
            let planes = propagator.reconstruct_volume(&holo)?;

            let stem = format!("s{i:04}_d{di}");
            let hologram = PathBuf::from("holograms").join(format!("{stem}.pfm"));
            imageio::save_pfm(out_dir.join(&hologram), holo.phase())?;
            let mut records = Vec::with_capacity(config.surfaces_per_image);
            for k in 0..config.surfaces_per_image {
                let seed = stream_seed(job_seed, k as u64 + 1);
                let surface = generate_focal_surface(&scene, seed)?;
                let (r, m) = in_focus_restoration(&planes, &surface, &scene)?;
                let name = format!("{stem}_f{k}");
                let rec = DatasetRecord {
                    hologram: hologram.clone(),
                    surface: PathBuf::from("surfaces").join(format!("{name}.pfm")),
                    target: PathBuf::from("targets").join(format!("{name}.pfm")),
                    mask: PathBuf::from("masks").join(format!("{name}.png")),
                    base_distance_mm: distance,
                    seed,
                };
                imageio::save_pfm(out_dir.join(&rec.surface), surface.depth())?;
                imageio::save_pfm(out_dir.join(&rec.target), &r)?;
                imageio::save_mask_png(out_dir.join(&rec.mask), &m)?;
                records.push(rec);
            }
            Ok(records)
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<DatasetRecord> = per_job.into_iter().flatten().collect();
    write_manifest(out_dir, n_levels, &records)?;
    Ok(records)
}

fn write_manifest(dir: &Path, n_levels: usize, records: &[DatasetRecord]) -> Result<()> {
    let mut text = format!("levels={n_levels}\n");
    for r in records {
        text.push_str(&format!(
            "hologram={} surface={} target={} mask={} distance_mm={} seed={}\n",
            r.hologram.display(),
            r.surface.display(),
            r.target.display(),
            r.mask.display(),
            r.base_distance_mm,
            r.seed
        ));
    }
    imageio::write_bytes(&dir.join(MANIFEST), text.as_bytes())
}

fn manifest_err(line: usize, message: String) -> Error {
    Error::Config { line, message }
}

/// Parses `manifest.txt`, returning the level count and the records.
pub fn read_manifest(dir: impl AsRef<Path>) -> Result<(usize, Vec<DatasetRecord>)> {
    let path = dir.as_ref().join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines().enumerate();
    let n_levels = match lines.next() {
        Some((_, l)) => l
            .strip_prefix("levels=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| manifest_err(1, format!("expected levels=<n>, got {l:?}")))?,
        None => return Err(manifest_err(1, "empty manifest".into())),
    };
    let mut records = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = std::collections::BTreeMap::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| manifest_err(i + 1, format!("bad field {tok:?}")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| manifest_err(i + 1, format!("missing {k}")));
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| manifest_err(i + 1, format!("bad {k}"))) };
        records.push(DatasetRecord {
            hologram: get("hologram")?.into(),
            surface: get("surface")?.into(),
            target: get("target")?.into(),
            mask: get("mask")?.into(),
            base_distance_mm: num("distance_mm")?,
            seed: get("seed")?.parse().map_err(|_| manifest_err(i + 1, "bad seed".into()))?,
        });
    }
    Ok((n_levels, records))
}

/// A record loaded from disk.
#[derive(Debug, Clone)]
pub struct LoadedRecord {
    pub hologram: PhaseHologram,
    pub target: ReconstructionTarget,
    pub base_distance_mm: f64,
}

/// Loads the records of a dataset directory, optionally only those at one
/// base distance.
pub fn load_dataset(dir: impl AsRef<Path>, distance_mm: Option<f64>) -> Result<Vec<LoadedRecord>> {
    let dir = dir.as_ref();
    let (n_levels, records) = read_manifest(dir)?;
    records
        .iter()
        .filter(|r| distance_mm.is_none_or(|d| r.base_distance_mm == d))
        .map(|r| {
            let hologram = PhaseHologram::new(imageio::load_pfm(dir.join(&r.hologram))?)?;
            let surface = FocalSurface::from_normalized(imageio::load_pfm(dir.join(&r.surface))?, n_levels)?;
            let image = imageio::load_pfm(dir.join(&r.target))?;
            let mask = imageio::load_png(dir.join(&r.mask))?;
            Ok(LoadedRecord {
                hologram,
                target: ReconstructionTarget::new(image, surface, mask)?,
                base_distance_mm: r.base_distance_mm,
            })
        })
        .collect()
}
