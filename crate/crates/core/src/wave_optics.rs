//! Scalar complex fields and band-limited angular-spectrum propagation.
//!
//! Units follow the optical bench: wavelengths in nm, pixel pitch in µm,
//! distances in mm. Internally everything is converted to metres.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{ensure_arg, ensure_shape, Result};
use crate::fft::{fft2, ifft2, signed_index};
use crate::hologram::PhaseHologram;
use crate::tensor::Tensor3;

const NM: f64 = 1e-9;
const UM: f64 = 1e-6;
const MM: f64 = 1e-3;

/// Display and volume geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalConfig {
    /// One wavelength per color primary, in red/green/blue order.
    pub wavelengths_nm: [f64; 3],
    pub pixel_pitch_um: f64,
    pub width: usize,
    pub height: usize,
    /// Plane offsets in mm, added to `base_distance_mm`.
    pub volume_planes_mm: Vec<f64>,
    pub base_distance_mm: f64,
    /// Apply the band-limit window to every kernel. Disable for plain ASM.
    pub band_limited: bool,
    /// Zero-padding factor of the propagation grid (1 = no padding).
    pub padding: usize,
}

impl Default for OpticalConfig {
    fn default() -> Self {
        Self {
            wavelengths_nm: [638.0, 520.0, 420.0],
            pixel_pitch_um: 3.74,
            width: 64,
            height: 64,
            volume_planes_mm: evenly_spaced_planes(6, 6.0),
            base_distance_mm: 0.0,
            band_limited: true,
            padding: 1,
        }
    }
}

/// `n` plane offsets at the centres of `n` equal slabs spanning `depth_mm`,
/// centred on zero.
pub fn evenly_spaced_planes(n: usize, depth_mm: f64) -> Vec<f64> {
    let step = depth_mm / n as f64;
    (0..n)
        .map(|j| -depth_mm / 2.0 + step * (j as f64 + 0.5))
        .collect()
}

impl OpticalConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(
            self.wavelengths_nm.iter().all(|&l| l.is_finite() && l > 0.0),
            "wavelengths must be positive, got {:?}",
            self.wavelengths_nm
        );
        ensure_arg!(
            self.pixel_pitch_um.is_finite() && self.pixel_pitch_um > 0.0,
            "pixel pitch must be positive"
        );
        ensure_arg!(!self.volume_planes_mm.is_empty(), "volume needs at least one plane");
        ensure_arg!(
            self.volume_planes_mm.windows(2).all(|w| w[0] < w[1]),
            "volume planes must be strictly increasing"
        );
        ensure_arg!(
            self.volume_planes_mm.iter().all(|d| d.is_finite()) && self.base_distance_mm.is_finite(),
            "plane distances must be finite"
        );
        ensure_arg!(
            self.width > 0 && self.height > 0 && self.width.is_multiple_of(8) && self.height.is_multiple_of(8),
            "resolution {}x{} must be a positive multiple of 8",
            self.width,
            self.height
        );
        ensure_arg!(self.padding >= 1, "padding factor must be at least 1");
        Ok(())
    }

    pub fn plane_count(&self) -> usize {
        self.volume_planes_mm.len()
    }

    /// Propagation distance of volume plane `j` from the hologram.
    pub fn plane_distance_mm(&self, j: usize) -> f64 {
        self.base_distance_mm + self.volume_planes_mm[j]
    }

    pub fn wavelength_nm(&self, color: usize) -> Result<f64> {
        ensure_arg!(color < 3, "color index {color} out of range 0..2");
        Ok(self.wavelengths_nm[color])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    width: usize,
    height: usize,
    wavelength_nm: f64,
    pixel_pitch_um: f64,
    data: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(
        width: usize,
        height: usize,
        wavelength_nm: f64,
        pixel_pitch_um: f64,
        data: Vec<Complex64>,
    ) -> Result<Self> {
        ensure_shape!(
            data.len() == width * height,
            "{} samples for a {width}x{height} field",
            data.len()
        );
        ensure_arg!(
            data.iter().all(|z| z.re.is_finite() && z.im.is_finite()),
            "field contains non-finite amplitudes"
        );
        ensure_arg!(wavelength_nm > 0.0 && pixel_pitch_um > 0.0, "non-positive wavelength or pitch");
        Ok(Self {
            width,
            height,
            wavelength_nm,
            pixel_pitch_um,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, wavelength_nm: f64, pixel_pitch_um: f64) -> Self {
        Self {
            width,
            height,
            wavelength_nm,
            pixel_pitch_um,
            data: vec![Complex64::default(); width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn wavelength_nm(&self) -> f64 {
        self.wavelength_nm
    }

    pub fn pixel_pitch_um(&self) -> f64 {
        self.pixel_pitch_um
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    fn with_data(&self, data: Vec<Complex64>) -> Self {
        Self {
            data,
            ..*self
        }
    }
}

/// Frequency-domain transfer function on a (possibly padded) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationKernel {
    pub(crate) width: usize,
    pub(crate) height: usize,
    pub(crate) distance_mm: f64,
    pub(crate) wavelength_nm: f64,
    pub(crate) pixel_pitch_um: f64,
    pub(crate) transfer: Vec<Complex64>,
    pub(crate) band_mask: Vec<bool>,
}

impl PropagationKernel {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn distance_mm(&self) -> f64 {
        self.distance_mm
    }

    pub fn wavelength_nm(&self) -> f64 {
        self.wavelength_nm
    }

    pub fn pixel_pitch_um(&self) -> f64 {
        self.pixel_pitch_um
    }

    pub fn transfer(&self) -> &[Complex64] {
        &self.transfer
    }

    pub fn band_mask(&self) -> &[bool] {
        &self.band_mask
    }

    /// Conjugate transfer function: the adjoint of [`propagate`] with `self`.
    pub fn adjoint(&self) -> Self {
        Self {
            distance_mm: -self.distance_mm,
            transfer: self.transfer.iter().map(|h| h.conj()).collect(),
            band_mask: self.band_mask.clone(),
            ..*self
        }
    }

    pub(crate) fn from_parts(
        width: usize,
        height: usize,
        distance_mm: f64,
        wavelength_nm: f64,
        pixel_pitch_um: f64,
        transfer: Vec<Complex64>,
        band_mask: Vec<bool>,
    ) -> Self {
        Self {
            width,
            height,
            distance_mm,
            wavelength_nm,
            pixel_pitch_um,
            transfer,
            band_mask,
        }
    }
}

/// Builds the ASM transfer function for `color_index` at `distance_mm`,
/// honouring the config's band-limit flag and padding factor.
pub fn build_asm_kernel(config: &OpticalConfig, color_index: usize, distance_mm: f64) -> Result<PropagationKernel> {
    let wavelength = config.wavelength_nm(color_index)?;
    asm_kernel(
        config.width * config.padding,
        config.height * config.padding,
        config.pixel_pitch_um,
        wavelength,
        distance_mm,
        config.band_limited,
    )
}

/// Transfer function `exp(i 2π z sqrt(1/λ² − fx² − fy²))` on a `width × height`
/// grid in FFT order. Evanescent frequencies are zeroed; with `band_limited`
/// the window `|f| < 1 / (λ sqrt((2 Δf z)² + 1))` is applied per axis.
pub fn asm_kernel(
    width: usize,
    height: usize,
    pixel_pitch_um: f64,
    wavelength_nm: f64,
    distance_mm: f64,
    band_limited: bool,
) -> Result<PropagationKernel> {
    ensure_arg!(distance_mm.is_finite(), "propagation distance must be finite, got {distance_mm}");
    ensure_arg!(wavelength_nm > 0.0 && pixel_pitch_um > 0.0, "non-positive wavelength or pitch");
    ensure_arg!(width > 0 && height > 0, "empty propagation grid");

    let n = width * height;
    if distance_mm == 0.0 {
        return Ok(PropagationKernel::from_parts(
            width,
            height,
            0.0,
            wavelength_nm,
            pixel_pitch_um,
            vec![Complex64::new(1.0, 0.0); n],
            vec![true; n],
        ));
    }

    let lambda = wavelength_nm * NM;
    let pitch = pixel_pitch_um * UM;
    let z = distance_mm * MM;
    let inv_l2 = 1.0 / (lambda * lambda);

    let df_x = 1.0 / (width as f64 * pitch);
    let df_y = 1.0 / (height as f64 * pitch);
    let limit = |df: f64| 1.0 / (lambda * ((2.0 * df * z).powi(2) + 1.0).sqrt());
    let (lim_x, lim_y) = (limit(df_x), limit(df_y));

    let mut transfer = Vec::with_capacity(n);
    let mut band_mask = Vec::with_capacity(n);
    for v in 0..height {
        let fy = signed_index(v, height) * df_y;
        for u in 0..width {
            let fx = signed_index(u, width) * df_x;
            let arg = inv_l2 - fx * fx - fy * fy;
            let inside = arg >= 0.0 && (!band_limited || (fx.abs() < lim_x && fy.abs() < lim_y));
            if inside {
                transfer.push(Complex64::from_polar(1.0, 2.0 * PI * z * arg.sqrt()));
            } else {
                transfer.push(Complex64::default());
            }
            band_mask.push(inside);
        }
    }
    Ok(PropagationKernel::from_parts(
        width,
        height,
        distance_mm,
        wavelength_nm,
        pixel_pitch_um,
        transfer,
        band_mask,
    ))
}

/// `ifft2(fft2(field) · transfer)`, zero-padding and cropping when the kernel
/// grid is an integer multiple of the field.
pub fn propagate(field: &ComplexField, kernel: &PropagationKernel) -> Result<ComplexField> {
    ensure_arg!(
        (field.wavelength_nm - kernel.wavelength_nm).abs() <= 1e-9 * kernel.wavelength_nm,
        "field wavelength {} nm vs kernel {} nm",
        field.wavelength_nm,
        kernel.wavelength_nm
    );
    let (w, h) = (field.width, field.height);
    let (kw, kh) = (kernel.width, kernel.height);
    ensure_shape!(
        kw >= w && kh >= h && kw % w == 0 && kh % h == 0 && kw / w == kh / h,
        "kernel grid {kw}x{kh} does not match field {w}x{h}"
    );

    if kw == w && kh == h {
        let mut buf = field.data.clone();
        apply_transfer(&mut buf, kernel);
        return Ok(field.with_data(buf));
    }

    let (ox, oy) = ((kw - w) / 2, (kh - h) / 2);
    let mut buf = vec![Complex64::default(); kw * kh];
    for y in 0..h {
        buf[(y + oy) * kw + ox..(y + oy) * kw + ox + w].copy_from_slice(&field.data[y * w..(y + 1) * w]);
    }
    apply_transfer(&mut buf, kernel);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        out.extend_from_slice(&buf[(y + oy) * kw + ox..(y + oy) * kw + ox + w]);
    }
    Ok(field.with_data(out))
}

fn apply_transfer(buf: &mut [Complex64], kernel: &PropagationKernel) {
    fft2(buf, kernel.width, kernel.height);
    for (v, t) in buf.iter_mut().zip(&kernel.transfer) {
        *v *= t;
    }
    ifft2(buf, kernel.width, kernel.height);
}

/// Unit-amplitude field `exp(i H_p)` for one hologram channel.
pub fn phase_to_field(hologram: &PhaseHologram, color_index: usize, config: &OpticalConfig) -> Result<ComplexField> {
    let wavelength = config.wavelength_nm(color_index)?;
    let data = hologram
        .channel(color_index)
        .iter()
        .map(|&p| Complex64::from_polar(1.0, p))
        .collect();
    ComplexField::new(
        hologram.width(),
        hologram.height(),
        wavelength,
        config.pixel_pitch_um,
        data,
    )
}

/// Per-pixel `|u|²` as a single-channel image.
pub fn intensity(field: &ComplexField) -> Tensor3 {
    let data = field.data.iter().map(|z| z.norm_sqr()).collect();
    Tensor3::from_vec(1, field.height, field.width, data).expect("field buffer matches its size")
}

/// Thread-safe count of forward propagation passes.
#[derive(Debug, Default)]
pub struct PassCounter(AtomicU64);

impl PassCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }
}

/// Precomputed kernels for every (color, plane) pair of a volume, with a
/// counter of forward passes performed through it.
#[derive(Debug)]
pub struct Propagator {
    config: OpticalConfig,
    kernels: Vec<[PropagationKernel; 3]>,
    adjoints: Vec<[PropagationKernel; 3]>,
    passes: PassCounter,
}

impl Propagator {
    pub fn new(config: &OpticalConfig) -> Result<Self> {
        config.validate()?;
        let kernels = (0..config.plane_count())
            .map(|j| {
                let d = config.plane_distance_mm(j);
                Ok([
                    build_asm_kernel(config, 0, d)?,
                    build_asm_kernel(config, 1, d)?,
                    build_asm_kernel(config, 2, d)?,
                ])
            })
            .collect::<Result<Vec<_>>>()?;
        let adjoints = kernels
            .iter()
            .map(|ks| [ks[0].adjoint(), ks[1].adjoint(), ks[2].adjoint()])
            .collect();
        Ok(Self {
            config: config.clone(),
            kernels,
            adjoints,
            passes: PassCounter::new(),
        })
    }

    pub fn config(&self) -> &OpticalConfig {
        &self.config
    }

    pub fn kernel(&self, plane: usize, color: usize) -> &PropagationKernel {
        &self.kernels[plane][color]
    }

    pub fn passes(&self) -> u64 {
        self.passes.get()
    }

    pub fn reset_passes(&self) {
        self.passes.reset();
    }

    /// Counted forward propagation of one color channel to one plane.
    pub fn forward(&self, field: &ComplexField, plane: usize, color: usize) -> Result<ComplexField> {
        let out = propagate(field, self.kernel(plane, color))?;
        self.passes.add(1);
        Ok(out)
    }

    /// Uncounted adjoint (conjugate-transpose) propagation, used by gradients.
    pub fn adjoint(&self, field: &ComplexField, plane: usize, color: usize) -> Result<ComplexField> {
        propagate(field, &self.adjoints[plane][color])
    }

    /// Full-color intensity at every plane: `3 × planes` counted passes.
    pub fn reconstruct_volume(&self, hologram: &PhaseHologram) -> Result<Vec<Tensor3>> {
        ensure_shape!(
            hologram.width() == self.config.width && hologram.height() == self.config.height,
            "hologram {}x{} vs config {}x{}",
            hologram.width(),
            hologram.height(),
            self.config.width,
            self.config.height
        );
        let fields = (0..3)
            .map(|c| phase_to_field(hologram, c, &self.config))
            .collect::<Result<Vec<_>>>()?;
        (0..self.config.plane_count())
            .into_par_iter()
            .map(|j| {
                let channels = (0..3)
                    .map(|c| self.forward(&fields[c], j, c).map(|f| intensity(&f)))
                    .collect::<Result<Vec<_>>>()?;
                Tensor3::concat(&channels.iter().collect::<Vec<_>>())
            })
            .collect()
    }
}

/// Reconstructs every volume plane; returns the images and the pass count.
pub fn reconstruct_volume(hologram: &PhaseHologram, config: &OpticalConfig) -> Result<(Vec<Tensor3>, u64)> {
    let prop = Propagator::new(config)?;
    let planes = prop.reconstruct_volume(hologram)?;
    Ok((planes, prop.passes()))
}
