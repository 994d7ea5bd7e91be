//! Domain values shared by propagation, the learned model and the optimizers.

use crate::error::{ensure_arg, ensure_shape, Error, Result};
use crate::tensor::Tensor3;

/// Phase-only hologram: one phase channel (radians) per color primary.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseHologram {
    phase: Tensor3,
}

impl PhaseHologram {
    pub fn new(phase: Tensor3) -> Result<Self> {
        ensure_shape!(phase.channels() == 3, "hologram needs 3 channels, got {}", phase.channels());
        ensure_arg!(phase.all_finite(), "hologram phase contains non-finite values");
        Ok(Self { phase })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            phase: Tensor3::zeros(3, height, width),
        }
    }

    pub fn phase(&self) -> &Tensor3 {
        &self.phase
    }

    pub fn height(&self) -> usize {
        self.phase.height()
    }

    pub fn width(&self) -> usize {
        self.phase.width()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        self.phase.channel(c)
    }

    pub(crate) fn phase_mut(&mut self) -> &mut Tensor3 {
        &mut self.phase
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.phase
    }
}

/// Per-pixel focus depth drawn from a discrete set of `n_levels` plane depths.
///
/// Values are stored normalized: level `j` is `j / (n_levels - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FocalSurface {
    depth: Tensor3,
    levels: Vec<usize>,
    n_levels: usize,
}

impl FocalSurface {
    pub fn from_levels(height: usize, width: usize, levels: Vec<usize>, n_levels: usize) -> Result<Self> {
        ensure_arg!(n_levels >= 1, "focal surface needs at least one level");
        ensure_shape!(
            levels.len() == height * width,
            "{} levels for a {height}x{width} surface",
            levels.len()
        );
        if let Some(bad) = levels.iter().find(|&&l| l >= n_levels) {
            return Err(Error::InvalidArgument(format!(
                "level {bad} outside 0..{n_levels}"
            )));
        }
        let depth = Tensor3::from_vec(
            1,
            height,
            width,
            levels.iter().map(|&l| Self::level_value(l, n_levels)).collect(),
        )?;
        Ok(Self {
            depth,
            levels,
            n_levels,
        })
    }

    /// Rebuilds a surface from normalized depth values, rejecting any value
    /// that is not exactly one of the level values.
    pub fn from_normalized(depth: Tensor3, n_levels: usize) -> Result<Self> {
        ensure_shape!(depth.channels() == 1, "focal surface must have 1 channel");
        ensure_arg!(n_levels >= 1, "focal surface needs at least one level");
        let scale = (n_levels - 1) as f64;
        let mut levels = Vec::with_capacity(depth.len());
        for &v in depth.as_slice() {
            let l = (v * scale).round();
            ensure_arg!(
                (0.0..=scale).contains(&l) && (v * scale - l).abs() < 1e-6,
                "depth value {v} is not one of the {n_levels} plane depths"
            );
            levels.push(l as usize);
        }
        Self::from_levels(depth.height(), depth.width(), levels, n_levels)
    }

    pub fn constant(height: usize, width: usize, level: usize, n_levels: usize) -> Result<Self> {
        Self::from_levels(height, width, vec![level; height * width], n_levels)
    }

    pub fn level_value(level: usize, n_levels: usize) -> f64 {
        if n_levels <= 1 {
            0.0
        } else {
            level as f64 / (n_levels - 1) as f64
        }
    }

    pub fn depth(&self) -> &Tensor3 {
        &self.depth
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    pub fn width(&self) -> usize {
        self.depth.width()
    }
}

/// Target image `R'`, its focal surface `D` and the binary in-focus mask `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionTarget {
    pub image: Tensor3,
    pub surface: FocalSurface,
    pub mask: Tensor3,
}

impl ReconstructionTarget {
    pub fn new(image: Tensor3, surface: FocalSurface, mask: Tensor3) -> Result<Self> {
        ensure_shape!(
            image.height() == surface.height() && image.width() == surface.width(),
            "target image and surface sizes differ"
        );
        ensure_shape!(
            mask.shape() == (1, image.height(), image.width()),
            "mask must be 1x{}x{}",
            image.height(),
            image.width()
        );
        ensure_arg!(is_binary(&mask), "mask values must be exactly 0 or 1");
        Ok(Self {
            image,
            surface,
            mask,
        })
    }
}

pub fn is_binary(mask: &Tensor3) -> bool {
    mask.as_slice().iter().all(|&v| v == 0.0 || v == 1.0)
}
