//! Phase-only hologram optimization.
//!
//! Multiplane: per color primary, `|exp(i H_p) ⊗ K_p|²` is compared with
//! `s · R_p` on every volume plane through the masked L2 loss. Gradients go
//! through the propagation analytically, using the conjugate transfer
//! function as the adjoint.
//!
//! Focal surface: `F(H, D)` is compared with `s · R` for every target
//! surface, all three color channels jointly, through a [`FocalTransport`].

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_arg, ensure_shape, Error, Result};
use crate::focal_model::{self, ModelParams, DEFAULT_ALPHA0, DEFAULT_ALPHA1};
use crate::hologram::{is_binary, PhaseHologram, ReconstructionTarget};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor3;
use crate::wave_optics::{phase_to_field, ComplexField, OpticalConfig, PassCounter, Propagator};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Multiplane,
    FocalSurface,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiplane" => Ok(Variant::Multiplane),
            "focal_surface" | "focal-surface" | "focal" => Ok(Variant::FocalSurface),
            other => Err(Error::InvalidArgument(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeConfig {
    pub iterations: usize,
    pub lr: f64,
    /// Intensity scaling factor `s` applied to the target.
    pub scale: f64,
    pub seed: u64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub variant: Variant,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            lr: 0.05,
            scale: 1.0,
            seed: 0,
            alpha0: DEFAULT_ALPHA0,
            alpha1: DEFAULT_ALPHA1,
            variant: Variant::Multiplane,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(self.lr.is_finite() && self.lr >= 0.0, "learning rate must be non-negative");
        ensure_arg!(self.scale.is_finite(), "intensity scale must be finite");
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Per-plane full-color target intensities and focus masks.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplaneTarget {
    pub images: Vec<Tensor3>,
    pub masks: Vec<Tensor3>,
}

impl MultiplaneTarget {
    pub fn new(images: Vec<Tensor3>, masks: Vec<Tensor3>) -> Result<Self> {
        ensure_shape!(images.len() == masks.len(), "{} images vs {} masks", images.len(), masks.len());
        ensure_arg!(!images.is_empty(), "multiplane target needs at least one plane");
        let (_, h, w) = images[0].shape();
        for (img, m) in images.iter().zip(&masks) {
            ensure_shape!(img.shape() == (3, h, w), "plane image {:?} vs (3, {h}, {w})", img.shape());
            ensure_shape!(m.shape() == (1, h, w), "plane mask {:?} vs (1, {h}, {w})", m.shape());
            ensure_arg!(is_binary(m), "plane masks must be binary");
        }
        Ok(Self { images, masks })
    }

    pub fn plane_count(&self) -> usize {
        self.images.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FocalSurfaceTargetSet {
    pub targets: Vec<ReconstructionTarget>,
}

impl FocalSurfaceTargetSet {
    pub fn new(targets: Vec<ReconstructionTarget>) -> Result<Self> {
        ensure_arg!(!targets.is_empty(), "focal-surface target set is empty");
        Ok(Self { targets })
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub hologram: PhaseHologram,
    /// Loss at each iteration, before that iteration's update.
    pub losses: Vec<f64>,
    /// Cumulative forward operations (propagations or model inferences)
    /// after each iteration.
    pub passes: Vec<u64>,
}

/// I.i.d. uniform phase in `[−π, π)`.
pub fn init_phase(config: &OpticalConfig, seed: u64) -> PhaseHologram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase = Tensor3::from_fn(3, config.height, config.width, |_, _, _| rng.gen_range(-PI..PI));
    PhaseHologram::new(phase).expect("uniform phase is finite")
}

/// Multiplane objective and its gradient with respect to all three phase
/// channels. Performs `3 × planes` counted propagations.
pub fn multiplane_loss_and_grad(
    hologram: &PhaseHologram,
    targets: &MultiplaneTarget,
    propagator: &Propagator,
    scale: f64,
    alpha0: f64,
    alpha1: f64,
) -> Result<(f64, Tensor3)> {
    let config = propagator.config();
    ensure_shape!(
        targets.plane_count() == config.plane_count(),
        "{} target planes vs {} volume planes",
        targets.plane_count(),
        config.plane_count()
    );
    ensure_shape!(
        hologram.height() == config.height && hologram.width() == config.width,
        "hologram size vs config"
    );
    ensure_shape!(
        targets.images[0].height() == config.height && targets.images[0].width() == config.width,
        "target size vs config"
    );
    let (h, w) = (config.height, config.width);
    let n = (3 * h * w) as f64;
    let plane = h * w;

    let mut loss = 0.0;
    let mut grad = Tensor3::zeros(3, h, w);
    for c in 0..3 {
        let field = phase_to_field(hologram, c, config)?;
        let mut back = vec![Complex64::default(); plane];
        for j in 0..config.plane_count() {
            let u = propagator.forward(&field, j, c)?;
            let target = targets.images[j].channel(c);
            let mask = targets.masks[j].as_slice();
            let mut g = Vec::with_capacity(plane);
            for (p, z) in u.data().iter().enumerate() {
                let wgt = alpha0 * mask[p] + alpha1 * (1.0 - mask[p]);
                let diff = z.norm_sqr() - scale * target[p];
                loss += wgt * diff * diff / n;
                g.push(z * (2.0 * wgt * diff / n));
            }
            let gf = ComplexField::new(w, h, u.wavelength_nm(), u.pixel_pitch_um(), g)?;
            let adj = propagator.adjoint(&gf, j, c)?;
            for (b, a) in back.iter_mut().zip(adj.data()) {
                *b += a;
            }
        }
        // dL/dφ = 2 Re(i · a · conj(q)), q = Σ_j P_jᴴ (dL/dI_j · u_j)
        for (d, (a, q)) in grad.channel_mut(c).iter_mut().zip(field.data().iter().zip(&back)) {
            *d = -2.0 * (a * q.conj()).im;
        }
    }
    Ok((loss, grad))
}

/// Adam on the phase channels against the multiplane objective.
pub fn optimize_multiplane(
    targets: &MultiplaneTarget,
    config: &OpticalConfig,
    opt: &OptimizeConfig,
) -> Result<OptimizeResult> {
    let propagator = Propagator::new(config)?;
    optimize_multiplane_from(init_phase(config, opt.seed), targets, &propagator, opt)
}

/// As [`optimize_multiplane`], from a given starting hologram and propagator.
pub fn optimize_multiplane_from(
    init: PhaseHologram,
    targets: &MultiplaneTarget,
    propagator: &Propagator,
    opt: &OptimizeConfig,
) -> Result<OptimizeResult> {
    opt.validate()?;
    let mut hologram = init;
    let mut adam = Adam::new(opt.adam(), [hologram.phase().len()]);
    let mut losses = Vec::with_capacity(opt.iterations);
    let mut passes = Vec::with_capacity(opt.iterations);
    let start = propagator.passes();
    for _ in 0..opt.iterations {
        let (loss, grad) = multiplane_loss_and_grad(&hologram, targets, propagator, opt.scale, opt.alpha0, opt.alpha1)?;
        adam.step(&mut [hologram.phase_mut().as_mut_slice()], &[Some(grad.as_slice())]);
        losses.push(loss);
        passes.push(propagator.passes() - start);
    }
    Ok(OptimizeResult {
        hologram,
        losses,
        passes,
    })
}

/// A differentiable map from hologram to the image seen on a focal surface.
pub trait FocalTransport {
    /// Masked L2 of the transported image against `scale · target.image`,
    /// and its gradient with respect to the hologram phase.
    fn loss_and_grad(
        &self,
        hologram: &PhaseHologram,
        target: &ReconstructionTarget,
        scale: f64,
        alpha0: f64,
        alpha1: f64,
    ) -> Result<(f64, Tensor3)>;

    /// Forward operations performed so far.
    fn forward_count(&self) -> u64;
}

/// The learned model `F(H, D)`; one counted inference per evaluation.
#[derive(Debug)]
pub struct LearnedTransport<'a> {
    params: &'a ModelParams,
    inferences: PassCounter,
}

impl<'a> LearnedTransport<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        Self {
            params,
            inferences: PassCounter::new(),
        }
    }
}

impl FocalTransport for LearnedTransport<'_> {
    fn loss_and_grad(
        &self,
        hologram: &PhaseHologram,
        target: &ReconstructionTarget,
        scale: f64,
        alpha0: f64,
        alpha1: f64,
    ) -> Result<(f64, Tensor3)> {
        let scaled = target.image.scaled(scale);
        let g = focal_model::loss_and_gradients(self.params, hologram, &target.surface, &scaled, &target.mask, alpha0, alpha1)?;
        self.inferences.add(1);
        Ok((g.loss, g.hologram))
    }

    fn forward_count(&self) -> u64 {
        self.inferences.get()
    }
}

/// Exact focal-surface transport by ASM: each pixel takes the full-color
/// intensity of the volume plane its surface level selects. Counts ASM passes.
#[derive(Debug)]
pub struct AsmFocalTransport<'a> {
    propagator: &'a Propagator,
}

impl<'a> AsmFocalTransport<'a> {
    pub fn new(propagator: &'a Propagator) -> Self {
        Self { propagator }
    }
}

impl FocalTransport for AsmFocalTransport<'_> {
    fn loss_and_grad(
        &self,
        hologram: &PhaseHologram,
        target: &ReconstructionTarget,
        scale: f64,
        alpha0: f64,
        alpha1: f64,
    ) -> Result<(f64, Tensor3)> {
        let config = self.propagator.config();
        let surface = &target.surface;
        ensure_shape!(
            surface.n_levels() == config.plane_count(),
            "surface has {} levels, volume has {} planes",
            surface.n_levels(),
            config.plane_count()
        );
        // each plane scores only the pixels the surface assigns to it
        let mut images = Vec::with_capacity(config.plane_count());
        let mut masks = Vec::with_capacity(config.plane_count());
        let mut selectors = Vec::with_capacity(config.plane_count());
        for j in 0..config.plane_count() {
            let sel: Vec<f64> = surface.levels().iter().map(|&l| if l == j { 1.0 } else { 0.0 }).collect();
            images.push(target.image.clone());
            masks.push(target.mask.clone());
            selectors.push(sel);
        }
        let (h, w) = (config.height, config.width);
        let n = (3 * h * w) as f64;
        let mut loss = 0.0;
        let mut grad = Tensor3::zeros(3, h, w);
        for c in 0..3 {
            let field = phase_to_field(hologram, c, config)?;
            let mut back = vec![Complex64::default(); h * w];
            for j in 0..config.plane_count() {
                if selectors[j].iter().all(|&s| s == 0.0) {
                    continue;
                }
                let u = self.propagator.forward(&field, j, c)?;
                let tgt = images[j].channel(c);
                let mask = masks[j].as_slice();
                let mut g = Vec::with_capacity(h * w);
                for (p, z) in u.data().iter().enumerate() {
                    let sel = selectors[j][p];
                    let wgt = sel * (alpha0 * mask[p] + alpha1 * (1.0 - mask[p]));
                    let diff = z.norm_sqr() - scale * tgt[p];
                    loss += wgt * diff * diff / n;
                    g.push(z * (2.0 * wgt * diff / n));
                }
                let gf = ComplexField::new(w, h, u.wavelength_nm(), u.pixel_pitch_um(), g)?;
                let adj = self.propagator.adjoint(&gf, j, c)?;
                for (b, a) in back.iter_mut().zip(adj.data()) {
                    *b += a;
                }
            }
            for (d, (a, q)) in grad.channel_mut(c).iter_mut().zip(field.data().iter().zip(&back)) {
                *d = -2.0 * (a * q.conj()).im;
            }
        }
        Ok((loss, grad))
    }

    fn forward_count(&self) -> u64 {
        self.propagator.passes()
    }
}

/// Adam on all three phase channels jointly against `Σ_targets L(F(H, D), sR)`.
pub fn optimize_focal_surface(
    targets: &FocalSurfaceTargetSet,
    model: &ModelParams,
    config: &OpticalConfig,
    opt: &OptimizeConfig,
) -> Result<OptimizeResult> {
    let mc = model.config();
    ensure_shape!(
        mc.height == config.height && mc.width == config.width,
        "model {}x{} vs optical config {}x{}",
        mc.height,
        mc.width,
        config.height,
        config.width
    );
    let transport = LearnedTransport::new(model);
    optimize_focal_surface_with(init_phase(config, opt.seed), targets, &transport, opt)
}

pub fn optimize_focal_surface_with(
    init: PhaseHologram,
    targets: &FocalSurfaceTargetSet,
    transport: &dyn FocalTransport,
    opt: &OptimizeConfig,
) -> Result<OptimizeResult> {
    opt.validate()?;
    let mut hologram = init;
    let mut adam = Adam::new(opt.adam(), [hologram.phase().len()]);
    let mut losses = Vec::with_capacity(opt.iterations);
    let mut passes = Vec::with_capacity(opt.iterations);
    let start = transport.forward_count();
    for _ in 0..opt.iterations {
        let (loss, grad) = focal_loss_and_grad(&hologram, targets, transport, opt)?;
        adam.step(&mut [hologram.phase_mut().as_mut_slice()], &[Some(grad.as_slice())]);
        losses.push(loss);
        passes.push(transport.forward_count() - start);
    }
    Ok(OptimizeResult {
        hologram,
        losses,
        passes,
    })
}

/// Summed focal-surface objective over every target, with its gradient.
pub fn focal_loss_and_grad(
    hologram: &PhaseHologram,
    targets: &FocalSurfaceTargetSet,
    transport: &dyn FocalTransport,
    opt: &OptimizeConfig,
) -> Result<(f64, Tensor3)> {
    let mut loss = 0.0;
    let mut grad = Tensor3::zeros(3, hologram.height(), hologram.width());
    for t in &targets.targets {
        let (l, g) = transport.loss_and_grad(hologram, t, opt.scale, opt.alpha0, opt.alpha1)?;
        loss += l;
        grad.as_mut_slice().iter_mut().zip(g.as_slice()).for_each(|(a, b)| *a += b);
    }
    Ok((loss, grad))
}

/// Summary of a loss trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStats {
    pub initial: f64,
    pub final_loss: f64,
    /// Steps where the loss strictly decreased.
    pub improvements: usize,
    /// Means of consecutive non-overlapping windows (a trailing partial window is dropped).
    pub window_means: Vec<f64>,
    /// Windows whose mean exceeds the previous window's mean.
    pub window_violations: usize,
}

impl TraceStats {
    /// Fraction of window-to-window transitions that did not increase.
    pub fn non_increasing_fraction(&self) -> f64 {
        let transitions = self.window_means.len().saturating_sub(1);
        if transitions == 0 {
            1.0
        } else {
            1.0 - self.window_violations as f64 / transitions as f64
        }
    }
}

pub fn loss_trace_stats(trace: &[f64], window: usize) -> Result<TraceStats> {
    ensure_arg!(!trace.is_empty(), "loss trace is empty");
    ensure_arg!(window >= 1, "window must be at least 1");
    let improvements = trace.windows(2).filter(|w| w[1] < w[0]).count();
    let window_means: Vec<f64> = trace
        .chunks_exact(window)
        .map(|c| c.iter().sum::<f64>() / window as f64)
        .collect();
    let window_violations = window_means.windows(2).filter(|w| w[1] > w[0]).count();
    Ok(TraceStats {
        initial: trace[0],
        final_loss: *trace.last().expect("non-empty"),
        improvements,
        window_means,
        window_violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hologram::FocalSurface;
    use crate::wave_optics::intensity;

    fn single_plane(n: usize, offset: f64) -> OpticalConfig {
        OpticalConfig {
            width: n,
            height: n,
            volume_planes_mm: vec![offset],
            ..OpticalConfig::default()
        }
    }

    fn blob_target(n: usize) -> Tensor3 {
        Tensor3::from_fn(3, n, n, |c, y, x| {
            let dy = y as f64 - n as f64 / 2.0;
            let dx = x as f64 - n as f64 / 2.0 + c as f64;
            (-(dx * dx + dy * dy) / (n as f64)).exp()
        })
    }

    #[test]
    fn init_phase_range_and_determinism() {
        let c = single_plane(16, 0.5);
        let a = init_phase(&c, 3);
        assert_eq!(a, init_phase(&c, 3));
        assert!(a.phase().as_slice().iter().all(|&p| (-PI..PI).contains(&p)));
        let b = init_phase(&c, 4);
        let differing = a.phase().as_slice().iter().zip(b.phase().as_slice()).filter(|(x, y)| x != y).count();
        assert!(differing as f64 >= 0.99 * a.phase().len() as f64);
    }

    #[test]
    fn zero_iterations_return_the_initial_hologram() {
        let c = single_plane(16, 0.5);
        let t = MultiplaneTarget::new(vec![blob_target(16)], vec![Tensor3::filled(1, 16, 16, 1.0)]).unwrap();
        let opt = OptimizeConfig { iterations: 0, seed: 9, ..Default::default() };
        let r = optimize_multiplane(&t, &c, &opt).unwrap();
        assert_eq!(r.hologram, init_phase(&c, 9));
        assert!(r.losses.is_empty());
    }

    #[test]
    fn multiplane_counts_three_passes_per_plane_per_iteration() {
        let mut c = single_plane(16, 0.5);
        c.volume_planes_mm = vec![-1.0, 0.0, 1.0];
        let planes = vec![blob_target(16); 3];
        let masks = vec![Tensor3::filled(1, 16, 16, 1.0); 3];
        let t = MultiplaneTarget::new(planes, masks).unwrap();
        let r = optimize_multiplane(&t, &c, &OptimizeConfig { iterations: 4, ..Default::default() }).unwrap();
        assert_eq!(r.passes, vec![9, 18, 27, 36]);
    }

    #[test]
    fn multiplane_gradient_matches_finite_differences() {
        let c = single_plane(8, 0.3);
        let prop = Propagator::new(&c).unwrap();
        let t = MultiplaneTarget::new(
            vec![blob_target(8)],
            vec![Tensor3::from_fn(1, 8, 8, |_, y, _| if y < 4 { 1.0 } else { 0.0 })],
        )
        .unwrap();
        let h = init_phase(&c, 1);
        let (_, g) = multiplane_loss_and_grad(&h, &t, &prop, 1.0, 1.0, 0.5).unwrap();
        let eps = 1e-6;
        for idx in 0..64 {
            let mut p = h.phase().clone();
            p.as_mut_slice()[idx] += eps;
            let mut m = h.phase().clone();
            m.as_mut_slice()[idx] -= eps;
            let lp = multiplane_loss_and_grad(&PhaseHologram::new(p).unwrap(), &t, &prop, 1.0, 1.0, 0.5).unwrap().0;
            let lm = multiplane_loss_and_grad(&PhaseHologram::new(m).unwrap(), &t, &prop, 1.0, 1.0, 0.5).unwrap().0;
            let fd = (lp - lm) / (2.0 * eps);
            let an = g.as_slice()[idx];
            assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-8), "{idx}: {fd} vs {an}");
        }
    }

    #[test]
    fn zero_distance_plane_cannot_change_phase_only_intensity() {
        let c = single_plane(16, 0.0);
        let h = init_phase(&c, 2);
        let prop = Propagator::new(&c).unwrap();
        let vol = prop.reconstruct_volume(&h).unwrap();
        assert!(vol[0].as_slice().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let t = MultiplaneTarget::new(vec![blob_target(16)], vec![Tensor3::filled(1, 16, 16, 1.0)]).unwrap();
        let (_, g) = multiplane_loss_and_grad(&h, &t, &prop, 1.0, 1.0, 0.5).unwrap();
        assert!(g.max_abs() < 1e-12);
    }

    #[test]
    fn asm_transport_equals_multiplane_at_a_single_plane() {
        let c = single_plane(16, 0.4);
        let prop = Propagator::new(&c).unwrap();
        let h = init_phase(&c, 5);
        let img = blob_target(16);
        let mask = Tensor3::from_fn(1, 16, 16, |_, _, x| if x % 3 == 0 { 1.0 } else { 0.0 });
        let (lm, gm) = multiplane_loss_and_grad(
            &h,
            &MultiplaneTarget::new(vec![img.clone()], vec![mask.clone()]).unwrap(),
            &prop,
            1.3,
            1.0,
            0.5,
        )
        .unwrap();
        let target = ReconstructionTarget::new(img, FocalSurface::constant(16, 16, 0, 1).unwrap(), mask).unwrap();
        let (lf, gf) = AsmFocalTransport::new(&prop).loss_and_grad(&h, &target, 1.3, 1.0, 0.5).unwrap();
        assert!((lm - lf).abs() <= 1e-10 * lm.abs());
        assert!(crate::tensor::relative_l2(gf.as_slice(), gm.as_slice()) <= 1e-10);
    }

    #[test]
    fn reconstruction_keeps_unit_amplitude_at_hologram_plane() {
        let c = single_plane(8, 0.4);
        let h = init_phase(&c, 1);
        for col in 0..3 {
            let f = phase_to_field(&h, col, &c).unwrap();
            assert!(intensity(&f).as_slice().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn trace_stats_examples() {
        let s = loss_trace_stats(&[2.0; 5], 1).unwrap();
        assert_eq!((s.initial, s.final_loss, s.improvements), (2.0, 2.0, 0));
        let s = loss_trace_stats(&[5.0, 4.0, 3.0, 2.0], 1).unwrap();
        assert_eq!(s.window_violations, 0);
        assert_eq!(s.improvements, 3);
        let s = loss_trace_stats(&[1.0, 0.5, 0.6, 0.4], 2).unwrap();
        assert_eq!(s.window_means, vec![0.75, 0.5]);
        assert_eq!(s.window_violations, 0);
        assert!(loss_trace_stats(&[], 2).is_err());
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("multiplane".parse::<Variant>().unwrap(), Variant::Multiplane);
        assert_eq!("focal_surface".parse::<Variant>().unwrap(), Variant::FocalSurface);
        assert!("planar".parse::<Variant>().is_err());
    }
}
