//! The focal-surface light-transport network `F(H, D)`.
//!
//! Two U-Nets share four scales. The kernel generator reads the hologram and
//! the focal surface and emits one SV kernel set per scale through its SVF
//! heads (1×1 convolution + 3×3 average pooling); its bottleneck is a
//! single-head spatial attention block. The transport network reads only the
//! hologram; at every encoder scale a SAM concatenates an SV branch (all-ones
//! SI factor) with an SA branch (learned SI factor). A global-feature module
//! (global average pooling + per-channel affine modulation) and a decoder
//! with per-scale skip concatenation produce the 3-channel reconstruction.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use crate::error::{ensure_arg, ensure_shape, Error, Result};
use crate::hologram::{FocalSurface, PhaseHologram};
use crate::sac_ops::{sac_forward, sv_conv, FeatureMap, SIKernel, SVKernel};
use crate::tensor::Tensor3;

pub const SCALES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub base_channels: usize,
    pub k: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            base_channels: 8,
            k: 3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(
            self.height > 0 && self.width > 0 && self.height.is_multiple_of(8) && self.width.is_multiple_of(8),
            "model resolution {}x{} must be a positive multiple of 8",
            self.height,
            self.width
        );
        ensure_arg!(self.base_channels >= 1, "base channel count must be positive");
        ensure_arg!(self.k % 2 == 1, "kernel size {} must be odd", self.k);
        Ok(())
    }

    /// Feature channels per scale; also the SV kernels' input channels `c̃_i`.
    pub fn scale_channels(&self) -> [usize; SCALES] {
        let c = self.base_channels;
        [c, 2 * c, 4 * c, 4 * c]
    }

    pub fn scale_size(&self, i: usize) -> (usize, usize) {
        (self.height >> i, self.width >> i)
    }
}

/// Learnable tensors keyed by layer name, plus the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor3>,
    index: BTreeMap<String, usize>,
}

struct Init<'a> {
    rng: &'a mut ChaCha8Rng,
    names: Vec<String>,
    tensors: Vec<Tensor3>,
}

impl Init<'_> {
    /// Conv weight `(out, in, k²)` with He-uniform init and a zero bias.
    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, gain: f64) {
        let bound = gain * (6.0 / (c_in * k * k) as f64).sqrt();
        let w = Tensor3::from_fn(c_out, c_in, k * k, |_, _, _| self.rng.gen_range(-bound..bound));
        self.push(format!("{name}.w"), w);
        self.push(format!("{name}.b"), Tensor3::zeros(c_out, 1, 1));
    }

    fn push(&mut self, name: String, t: Tensor3) {
        self.names.push(name);
        self.tensors.push(t);
    }
}

impl ModelParams {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            rng: &mut rng,
            names: Vec::new(),
            tensors: Vec::new(),
        };
        let ch = config.scale_channels();
        let k = config.k;
        let c = config.base_channels;

        for i in 0..SCALES {
            let c_in = if i == 0 { 4 } else { ch[i - 1] };
            init.conv(&format!("gen.enc{i}.a"), c_in, ch[i], 3, 1.0);
            init.conv(&format!("gen.enc{i}.b"), ch[i], ch[i], 3, 1.0);
        }
        init.conv("gen.att.q", ch[3], c, 1, 1.0);
        init.conv("gen.att.k", ch[3], c, 1, 1.0);
        init.conv("gen.att.v", ch[3], ch[3], 1, 1.0);
        init.conv("gen.att.o", ch[3], ch[3], 1, 0.5);
        for i in (0..SCALES - 1).rev() {
            init.conv(&format!("gen.dec{i}"), ch[i + 1] + ch[i], ch[i], 3, 1.0);
        }
        for (i, &ci) in ch.iter().enumerate() {
            init.conv(&format!("gen.svf{i}"), ci, ci * k * k, 1, 0.5);
        }

        for i in 0..SCALES {
            let c_in = if i == 0 { 3 } else { ch[i - 1] + 1 };
            init.conv(&format!("tr.enc{i}"), c_in, ch[i], 3, 1.0);
            let bound = (3.0 / (ch[i] * k * k) as f64).sqrt();
            let w = Tensor3::from_fn(ch[i], ch[i], k * k, |_, _, _| init.rng.gen_range(-bound..bound));
            init.push(format!("tr.sam{i}.w"), w);
        }
        let g = ch[3] + 1;
        init.push("tr.glob.w".into(), Tensor3::zeros(2 * g, g, 1));
        init.push("tr.glob.b".into(), Tensor3::zeros(2 * g, 1, 1));
        for i in (0..SCALES - 1).rev() {
            let up = if i == SCALES - 2 { ch[i + 1] + 1 } else { ch[i + 1] };
            init.conv(&format!("tr.dec{i}"), up + ch[i] + 1, ch[i], 3, 1.0);
        }
        init.conv("tr.out", ch[0], 3, 3, 0.5);

        Self::from_named(config, init.names.into_iter().zip(init.tensors).collect())
    }

    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor3)>) -> Result<Self> {
        config.validate()?;
        let mut names = Vec::with_capacity(named.len());
        let mut tensors = Vec::with_capacity(named.len());
        let mut index = BTreeMap::new();
        for (i, (n, t)) in named.into_iter().enumerate() {
            ensure_arg!(t.all_finite(), "parameter {n} has non-finite values");
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate parameter {n}")));
            }
            names.push(n);
            tensors.push(t);
        }
        Ok(Self {
            config,
            names,
            tensors,
            index,
        })
    }

    pub fn config(&self) -> ModelConfig {
        self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor3] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor3] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor3> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor3::len).sum()
    }

    /// Checks that `other` has the same names and shapes (e.g. a loaded checkpoint).
    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.config == other.config
            && self.names == other.names
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.same_shape(b))
    }
}

/// The four SV kernel tensors `[V_0 .. V_3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SVKernelSet {
    pub kernels: Vec<SVKernel>,
}

impl SVKernelSet {
    pub fn counts(&self) -> Vec<usize> {
        self.kernels.iter().map(SVKernel::count).collect()
    }
}

/// Parameters bound as tape leaves.
pub(crate) struct BoundParams {
    vars: Vec<Var>,
    index: BTreeMap<String, usize>,
}

impl BoundParams {
    pub(crate) fn bind(tape: &mut Tape, params: &ModelParams) -> Self {
        let vars = params.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        Self {
            vars,
            index: params.index.clone(),
        }
    }

    pub(crate) fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn get(&self, name: &str) -> Var {
        self.vars[self.index[name]]
    }
}

fn conv(tape: &mut Tape, p: &BoundParams, name: &str, x: Var, k: usize) -> Result<Var> {
    tape.conv(x, p.get(&format!("{name}.w")), Some(p.get(&format!("{name}.b"))), k)
}

fn conv_act(tape: &mut Tape, p: &BoundParams, name: &str, x: Var, k: usize) -> Result<Var> {
    let y = conv(tape, p, name, x, k)?;
    Ok(tape.silu(y))
}

fn check_inputs(config: &ModelConfig, hologram: &PhaseHologram, surface: &FocalSurface) -> Result<()> {
    ensure_shape!(
        hologram.height() == config.height && hologram.width() == config.width,
        "hologram {}x{} vs model {}x{}",
        hologram.height(),
        hologram.width(),
        config.height,
        config.width
    );
    ensure_shape!(
        surface.height() == config.height && surface.width() == config.width,
        "focal surface {}x{} vs model {}x{}",
        surface.height(),
        surface.width(),
        config.height,
        config.width
    );
    Ok(())
}

/// Kernel-generator graph. `hologram` is a tape variable holding raw phase.
/// Returns pixel-major kernels `(1, n_i, c̃_i·k²)` per scale.
pub(crate) fn kernel_graph(
    tape: &mut Tape,
    p: &BoundParams,
    hologram: Var,
    surface: &FocalSurface,
) -> Result<Vec<Var>> {
    let h = tape.scale(hologram, 1.0 / PI);
    let d = tape.leaf(surface.depth().clone());
    let mut x = tape.concat(&[h, d])?;

    let mut skips = Vec::with_capacity(SCALES);
    for i in 0..SCALES {
        if i > 0 {
            x = tape.avg_pool2(x)?;
        }
        x = conv_act(tape, p, &format!("gen.enc{i}.a"), x, 3)?;
        x = conv_act(tape, p, &format!("gen.enc{i}.b"), x, 3)?;
        skips.push(x);
    }

    let q = conv(tape, p, "gen.att.q", x, 1)?;
    let kk = conv(tape, p, "gen.att.k", x, 1)?;
    let v = conv(tape, p, "gen.att.v", x, 1)?;
    let a = tape.attention(q, kk, v)?;
    let o = conv(tape, p, "gen.att.o", a, 1)?;
    let mut dec = tape.add(x, o)?;

    let mut decoded = [dec; SCALES];
    for i in (0..SCALES - 1).rev() {
        let up = tape.upsample2(dec);
        let cat = tape.concat(&[up, skips[i]])?;
        dec = conv_act(tape, p, &format!("gen.dec{i}"), cat, 3)?;
        decoded[i] = dec;
    }

    let mut kernels = Vec::with_capacity(SCALES);
    for (i, &feat) in decoded.iter().enumerate() {
        let head = conv(tape, p, &format!("gen.svf{i}"), feat, 1)?;
        let pooled = tape.box_filter3(head);
        kernels.push(tape.to_pixel_major(pooled));
    }
    Ok(kernels)
}

/// Transport graph: hologram in, 3-channel reconstruction out.
pub(crate) fn transport_graph(
    tape: &mut Tape,
    p: &BoundParams,
    config: &ModelConfig,
    hologram: Var,
    kernels: &[Var],
) -> Result<Var> {
    let k = config.k;
    let mut x = tape.scale(hologram, 1.0 / PI);
    let mut sams = Vec::with_capacity(SCALES);
    for (i, &v) in kernels.iter().enumerate() {
        if i > 0 {
            x = tape.avg_pool2(x)?;
        }
        let f = conv_act(tape, p, &format!("tr.enc{i}"), x, 3)?;
        let sv = tape.sac(f, v, None, k)?;
        let sa = tape.sac(f, v, Some(p.get(&format!("tr.sam{i}.w"))), k)?;
        x = tape.concat(&[sv, sa])?;
        sams.push(x);
    }

    let pooled = tape.global_avg(x);
    let coef = conv(tape, p, "tr.glob", pooled, 1)?;
    let mut dec = tape.modulate(x, coef)?;

    for i in (0..SCALES - 1).rev() {
        let up = tape.upsample2(dec);
        let cat = tape.concat(&[up, sams[i]])?;
        dec = conv_act(tape, p, &format!("tr.dec{i}"), cat, 3)?;
    }
    conv(tape, p, "tr.out", dec, 3)
}

/// Builds the full `F(H, D)` graph on `tape` and returns the output variable.
pub(crate) fn forward_graph(
    tape: &mut Tape,
    p: &BoundParams,
    config: &ModelConfig,
    hologram: Var,
    surface: &FocalSurface,
) -> Result<Var> {
    let kernels = kernel_graph(tape, p, hologram, surface)?;
    transport_graph(tape, p, config, hologram, &kernels)
}

/// Multi-scale SV kernels for `(hologram, surface)`.
pub fn generate_sv_kernels(hologram: &PhaseHologram, surface: &FocalSurface, params: &ModelParams) -> Result<SVKernelSet> {
    let config = params.config;
    check_inputs(&config, hologram, surface)?;
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params);
    let h = tape.leaf(hologram.phase().clone());
    let vars = kernel_graph(&mut tape, &bound, h, surface)?;
    let ch = config.scale_channels();
    let kernels = vars
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (hh, ww) = config.scale_size(i);
            SVKernel::new(hh, ww, ch[i], config.k, tape.value(v).as_slice().to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SVKernelSet { kernels })
}

/// Spatially adaptive module: `[sv_conv(f, V) ; sac_forward(f, V, W)]`.
pub fn sam_forward(features: &FeatureMap, v: &SVKernel, w_learned: &SIKernel) -> Result<FeatureMap> {
    ensure_shape!(
        features.height() == v.height() && features.width() == v.width(),
        "features {}x{} vs SV kernel scale {}x{}",
        features.height(),
        features.width(),
        v.height(),
        v.width()
    );
    let sv = sv_conv(features, v)?;
    let sa = sac_forward(features, v, w_learned)?;
    Tensor3::concat(&[&sv, &sa])
}

/// Reconstruction `R = F(H, D)` of shape `(3, h, w)`.
pub fn model_forward(hologram: &PhaseHologram, surface: &FocalSurface, params: &ModelParams) -> Result<Tensor3> {
    let config = params.config;
    check_inputs(&config, hologram, surface)?;
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params);
    let h = tape.leaf(hologram.phase().clone());
    let out = forward_graph(&mut tape, &bound, &config, h, surface)?;
    Ok(tape.value(out).clone())
}

pub(crate) fn check_model_inputs(params: &ModelParams, hologram: &PhaseHologram, surface: &FocalSurface) -> Result<()> {
    check_inputs(&params.config, hologram, surface)
}
