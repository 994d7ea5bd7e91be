//! Spatially invariant (SI), spatially varying (SV) and spatially adaptive
//! (SA) convolution.
//!
//! All operators are stride-1 cross-correlations over a centred `k × k`
//! window with zero padding, so the output keeps the input's spatial size:
//!
//! ```text
//! out[c, y, x] = Σ_{c', i, j} K[c, y, x, c', i, j] · in[c', y + i − k/2, x + j − k/2]
//! ```
//!
//! SI: `K = W[c, c', i, j]`. SV: `K = V[y, x, c', i, j]` with one output
//! channel. SA: `K = V[y, x, c', i, j] · W[c, c', i, j]`, evaluated fused
//! without materializing the product. Summation order is fixed (`c'`, then
//! `i`, then `j`) so results are reproducible.

use rayon::prelude::*;

use crate::error::{ensure_arg, ensure_shape, Result};
use crate::tensor::Tensor3;

pub type FeatureMap = Tensor3;

/// Shared kernel `W`: `out_channels × in_channels × k × k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SIKernel {
    out_channels: usize,
    in_channels: usize,
    k: usize,
    data: Vec<f64>,
}

/// Per-pixel kernels `V` with a single output channel:
/// `height × width × in_channels × k × k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SVKernel {
    height: usize,
    width: usize,
    in_channels: usize,
    k: usize,
    data: Vec<f64>,
}

/// Materialized `A = V ⊙ W`: `out × height × width × in × k × k`. Test-scale only.
#[derive(Debug, Clone, PartialEq)]
pub struct SAKernel {
    out_channels: usize,
    height: usize,
    width: usize,
    in_channels: usize,
    k: usize,
    data: Vec<f64>,
}

fn check_k(k: usize) -> Result<()> {
    ensure_arg!(k % 2 == 1, "kernel size {k} must be odd");
    Ok(())
}

impl SIKernel {
    pub fn new(out_channels: usize, in_channels: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        check_k(k)?;
        ensure_shape!(
            data.len() == out_channels * in_channels * k * k,
            "{} values for a {out_channels}x{in_channels}x{k}x{k} SI kernel",
            data.len()
        );
        ensure_arg!(data.iter().all(|v| v.is_finite()), "SI kernel has non-finite values");
        Ok(Self {
            out_channels,
            in_channels,
            k,
            data,
        })
    }

    pub fn filled(out_channels: usize, in_channels: usize, k: usize, value: f64) -> Result<Self> {
        Self::new(out_channels, in_channels, k, vec![value; out_channels * in_channels * k * k])
    }

    /// `W[c, c', i, j] = δ(c, c') δ(i, j, centre)`.
    pub fn identity(channels: usize, k: usize) -> Result<Self> {
        let mut w = Self::filled(channels, channels, k, 0.0)?;
        for c in 0..channels {
            w.set(c, c, k / 2, k / 2, 1.0);
        }
        Ok(w)
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, ci: usize, i: usize, j: usize) -> f64 {
        self.data[((c * self.in_channels + ci) * self.k + i) * self.k + j]
    }

    #[inline]
    pub fn set(&mut self, c: usize, ci: usize, i: usize, j: usize, v: f64) {
        self.data[((c * self.in_channels + ci) * self.k + i) * self.k + j] = v;
    }
}

impl SVKernel {
    pub fn new(height: usize, width: usize, in_channels: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        check_k(k)?;
        ensure_shape!(
            data.len() == height * width * in_channels * k * k,
            "{} values for a {height}x{width}x{in_channels}x{k}x{k} SV kernel",
            data.len()
        );
        ensure_arg!(data.iter().all(|v| v.is_finite()), "SV kernel has non-finite values");
        Ok(Self {
            height,
            width,
            in_channels,
            k,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, in_channels: usize, k: usize, value: f64) -> Result<Self> {
        Self::new(height, width, in_channels, k, vec![value; height * width * in_channels * k * k])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of per-pixel kernels, `height · width`.
    pub fn count(&self) -> usize {
        self.height * self.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, ci: usize, i: usize, j: usize) -> f64 {
        self.data[(((y * self.width + x) * self.in_channels + ci) * self.k + i) * self.k + j]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, ci: usize, i: usize, j: usize, v: f64) {
        self.data[(((y * self.width + x) * self.in_channels + ci) * self.k + i) * self.k + j] = v;
    }
}

impl SAKernel {
    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize, ci: usize, i: usize, j: usize) -> f64 {
        let (h, w, n, k) = (self.height, self.width, self.in_channels, self.k);
        self.data[((((c * h + y) * w + x) * n + ci) * k + i) * k + j]
    }
}

/// Geometry shared by the raw kernels below.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvGeom {
    #[inline]
    fn hw(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    fn kk(&self) -> usize {
        self.k * self.k
    }

    /// Valid window rows `i` for output row `y` and the input row they touch.
    #[inline]
    fn taps(&self, pos: usize, len: usize) -> (usize, usize) {
        let r = self.k / 2;
        let lo = r.saturating_sub(pos);
        let hi = (len + r - pos).min(self.k);
        (lo, hi)
    }
}

/// Unfolds `input` into `(c_in·k², h·w)` columns; out-of-range taps are zero.
fn im2col(g: ConvGeom, input: &[f64]) -> Vec<f64> {
    let (hw, r) = (g.hw(), g.k / 2);
    let mut cols = vec![0.0; g.c_in * g.kk() * hw];
    for ci in 0..g.c_in {
        let src = &input[ci * hw..(ci + 1) * hw];
        for i in 0..g.k {
            for j in 0..g.k {
                let t = (ci * g.k + i) * g.k + j;
                let dst = &mut cols[t * hw..(t + 1) * hw];
                let (xlo, xhi) = col_range(j, r, g.w);
                if xlo >= xhi {
                    continue;
                }
                for y in 0..g.h {
                    let yy = y + i;
                    if yy < r || yy - r >= g.h {
                        continue;
                    }
                    let row = &src[(yy - r) * g.w..(yy - r + 1) * g.w];
                    dst[y * g.w + xlo..y * g.w + xhi].copy_from_slice(&row[xlo + j - r..xhi + j - r]);
                }
            }
        }
    }
    cols
}

/// Adds columns back onto the input grid (adjoint of [`im2col`]).
fn col2im(g: ConvGeom, cols: &[f64], out: &mut [f64]) {
    let (hw, r) = (g.hw(), g.k / 2);
    out.fill(0.0);
    for ci in 0..g.c_in {
        let dst = &mut out[ci * hw..(ci + 1) * hw];
        for i in 0..g.k {
            for j in 0..g.k {
                let t = (ci * g.k + i) * g.k + j;
                let src = &cols[t * hw..(t + 1) * hw];
                let (xlo, xhi) = col_range(j, r, g.w);
                if xlo >= xhi {
                    continue;
                }
                for y in 0..g.h {
                    let yy = y + i;
                    if yy < r || yy - r >= g.h {
                        continue;
                    }
                    let row = &mut dst[(yy - r) * g.w..(yy - r + 1) * g.w];
                    for (d, s) in row[xlo + j - r..xhi + j - r].iter_mut().zip(&src[y * g.w + xlo..y * g.w + xhi]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Output columns `x` for which tap `j` lands inside a row of width `w`.
#[inline]
fn col_range(j: usize, r: usize, w: usize) -> (usize, usize) {
    if j < r {
        ((r - j).min(w), w)
    } else {
        (0, w.saturating_sub(j - r))
    }
}

/// SI cross-correlation on raw buffers.
pub(crate) fn si_forward_raw(g: ConvGeom, input: &[f64], weight: &[f64], out: &mut [f64]) {
    let (hw, taps) = (g.hw(), g.c_in * g.kk());
    let cols = im2col(g, input);
    out.par_chunks_mut(hw).enumerate().for_each(|(c, plane)| {
        plane.fill(0.0);
        for (t, &wv) in weight[c * taps..(c + 1) * taps].iter().enumerate() {
            for (d, s) in plane.iter_mut().zip(&cols[t * hw..(t + 1) * hw]) {
                *d += wv * s;
            }
        }
    });
}

/// Gradients of the SI cross-correlation. Either output may be skipped.
pub(crate) fn si_backward_raw(
    g: ConvGeom,
    grad_out: &[f64],
    input: &[f64],
    weight: &[f64],
    grad_in: Option<&mut [f64]>,
    grad_w: Option<&mut [f64]>,
) {
    let (hw, taps) = (g.hw(), g.c_in * g.kk());
    if let Some(gw) = grad_w {
        let cols = im2col(g, input);
        gw.par_chunks_mut(taps).enumerate().for_each(|(c, gwc)| {
            let go = &grad_out[c * hw..(c + 1) * hw];
            for (t, d) in gwc.iter_mut().enumerate() {
                *d = go.iter().zip(&cols[t * hw..(t + 1) * hw]).map(|(a, b)| a * b).sum();
            }
        });
    }
    if let Some(gi) = grad_in {
        let mut gcols = vec![0.0; taps * hw];
        gcols.par_chunks_mut(hw).enumerate().for_each(|(t, dst)| {
            for c in 0..g.c_out {
                let wv = weight[c * taps + t];
                for (d, s) in dst.iter_mut().zip(&grad_out[c * hw..(c + 1) * hw]) {
                    *d += wv * s;
                }
            }
        });
        col2im(g, &gcols, gi);
    }
}

/// Zero-padded `c_in × k × k` neighbourhood of pixel `(y, x)`.
#[inline]
fn gather_patch(g: ConvGeom, input: &[f64], y: usize, x: usize, patch: &mut [f64]) {
    let (hw, r) = (g.hw(), g.k / 2);
    let (ilo, ihi) = g.taps(y, g.h);
    let (jlo, jhi) = g.taps(x, g.w);
    patch.fill(0.0);
    for ci in 0..g.c_in {
        for i in ilo..ihi {
            let base = ci * hw + (y + i - r) * g.w + x;
            for j in jlo..jhi {
                patch[(ci * g.k + i) * g.k + j] = input[base + j - r];
            }
        }
    }
}

/// Fused SA (or, with `weight = None`, SV) cross-correlation on raw buffers.
/// With `weight = None` the output has `g.c_out` identical channels.
pub(crate) fn sa_forward_raw(g: ConvGeom, input: &[f64], v: &[f64], weight: Option<&[f64]>, out: &mut [f64]) {
    let (hw, per_pix) = (g.hw(), g.c_in * g.kk());
    let mut pixel_major = vec![0.0; hw * g.c_out];
    pixel_major
        .par_chunks_mut(g.c_out)
        .enumerate()
        .for_each_init(
            || (vec![0.0; per_pix], vec![0.0; per_pix]),
            |(patch, vp), (p, dst)| {
                gather_patch(g, input, p / g.w, p % g.w, patch);
                let vk = &v[p * per_pix..(p + 1) * per_pix];
                for ((o, a), b) in vp.iter_mut().zip(vk).zip(patch.iter()) {
                    *o = a * b;
                }
                for (c, d) in dst.iter_mut().enumerate() {
                    *d = match weight {
                        Some(w) => w[c * per_pix..(c + 1) * per_pix].iter().zip(vp.iter()).map(|(a, b)| b * a).sum(),
                        None => vp.iter().sum(),
                    };
                }
            },
        );
    for (p, vals) in pixel_major.chunks_exact(g.c_out).enumerate() {
        for (c, &val) in vals.iter().enumerate() {
            out[c * hw + p] = val;
        }
    }
}

/// Gradients of the fused SA map with respect to input, `V` and `W`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sa_backward_raw(
    g: ConvGeom,
    grad_out: &[f64],
    input: &[f64],
    v: &[f64],
    weight: Option<&[f64]>,
    mut grad_in: Option<&mut [f64]>,
    mut grad_v: Option<&mut [f64]>,
    mut grad_w: Option<&mut [f64]>,
) {
    let (hw, r, per_pix) = (g.hw(), g.k / 2, g.c_in * g.kk());
    if let Some(gi) = grad_in.as_deref_mut() {
        gi.fill(0.0);
    }
    if let Some(gw) = grad_w.as_deref_mut() {
        gw.fill(0.0);
    }
    let mut patch = vec![0.0; per_pix];
    let mut back = vec![0.0; per_pix];
    let mut gout = vec![0.0; g.c_out];
    for p in 0..hw {
        let (y, x) = (p / g.w, p % g.w);
        for (c, o) in gout.iter_mut().enumerate() {
            *o = grad_out[c * hw + p];
        }
        gather_patch(g, input, y, x, &mut patch);
        let vk = &v[p * per_pix..(p + 1) * per_pix];

        // back[t] = Σ_c gout[c] · W[c, t]
        match weight {
            Some(w) => {
                back.fill(0.0);
                for (c, &go) in gout.iter().enumerate() {
                    for (b, wv) in back.iter_mut().zip(&w[c * per_pix..(c + 1) * per_pix]) {
                        *b += go * wv;
                    }
                }
            }
            None => back.fill(gout.iter().sum()),
        }

        if let (Some(gw), Some(_)) = (grad_w.as_deref_mut(), weight) {
            for (c, &go) in gout.iter().enumerate() {
                for ((d, a), b) in gw[c * per_pix..(c + 1) * per_pix].iter_mut().zip(vk).zip(patch.iter()) {
                    *d += go * (a * b);
                }
            }
        }
        if let Some(gv) = grad_v.as_deref_mut() {
            for ((d, b), s) in gv[p * per_pix..(p + 1) * per_pix].iter_mut().zip(back.iter()).zip(patch.iter()) {
                *d = b * s;
            }
        }
        if let Some(gi) = grad_in.as_deref_mut() {
            let (ilo, ihi) = g.taps(y, g.h);
            let (jlo, jhi) = g.taps(x, g.w);
            for ci in 0..g.c_in {
                for i in ilo..ihi {
                    let base = ci * hw + (y + i - r) * g.w + x;
                    for j in jlo..jhi {
                        let t = (ci * g.k + i) * g.k + j;
                        gi[base + j - r] += back[t] * vk[t];
                    }
                }
            }
        }
    }
}

/// Shared-kernel convolution.
pub fn si_conv(input: &FeatureMap, w: &SIKernel) -> Result<FeatureMap> {
    ensure_shape!(
        input.channels() == w.in_channels,
        "input has {} channels, kernel expects {}",
        input.channels(),
        w.in_channels
    );
    let g = ConvGeom {
        c_in: w.in_channels,
        c_out: w.out_channels,
        h: input.height(),
        w: input.width(),
        k: w.k,
    };
    let mut out = Tensor3::zeros(g.c_out, g.h, g.w);
    si_forward_raw(g, input.as_slice(), &w.data, out.as_mut_slice());
    Ok(out)
}

/// Elementwise product `A[c, y, x, ·] = V[y, x, ·] · W[c, ·]`.
pub fn compose_sa_kernel(v: &SVKernel, w: &SIKernel) -> Result<SAKernel> {
    ensure_shape!(
        v.in_channels == w.in_channels && v.k == w.k,
        "SV kernel ({} ch, k={}) and SI kernel ({} ch, k={}) disagree",
        v.in_channels,
        v.k,
        w.in_channels,
        w.k
    );
    let per_pix = v.in_channels * v.k * v.k;
    let mut data = Vec::with_capacity(w.out_channels * v.count() * per_pix);
    for c in 0..w.out_channels {
        let wc = &w.data[c * per_pix..(c + 1) * per_pix];
        for vp in v.data.chunks_exact(per_pix) {
            data.extend(vp.iter().zip(wc).map(|(a, b)| a * b));
        }
    }
    Ok(SAKernel {
        out_channels: w.out_channels,
        height: v.height,
        width: v.width,
        in_channels: v.in_channels,
        k: v.k,
        data,
    })
}

fn sa_geom(input: &FeatureMap, v: &SVKernel, c_out: usize) -> Result<ConvGeom> {
    ensure_shape!(
        input.height() == v.height && input.width() == v.width,
        "input {}x{} vs SV kernel grid {}x{}",
        input.height(),
        input.width(),
        v.height,
        v.width
    );
    ensure_shape!(
        input.channels() == v.in_channels,
        "input has {} channels, SV kernel expects {}",
        input.channels(),
        v.in_channels
    );
    Ok(ConvGeom {
        c_in: v.in_channels,
        c_out,
        h: v.height,
        w: v.width,
        k: v.k,
    })
}

/// Spatially adaptive convolution with the composed kernel `V ⊙ W`, fused.
pub fn sac_forward(input: &FeatureMap, v: &SVKernel, w: &SIKernel) -> Result<FeatureMap> {
    ensure_shape!(
        w.in_channels == v.in_channels && w.k == v.k,
        "SI kernel ({} ch, k={}) incompatible with SV kernel ({} ch, k={})",
        w.in_channels,
        w.k,
        v.in_channels,
        v.k
    );
    let g = sa_geom(input, v, w.out_channels)?;
    let mut out = Tensor3::zeros(g.c_out, g.h, g.w);
    sa_forward_raw(g, input.as_slice(), &v.data, Some(&w.data), out.as_mut_slice());
    Ok(out)
}

/// Spatially varying convolution: one output channel.
pub fn sv_conv(input: &FeatureMap, v: &SVKernel) -> Result<FeatureMap> {
    let g = sa_geom(input, v, 1)?;
    let mut out = Tensor3::zeros(1, g.h, g.w);
    sa_forward_raw(g, input.as_slice(), &v.data, None, out.as_mut_slice());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacGradients {
    pub input: FeatureMap,
    pub v: SVKernel,
    pub w: SIKernel,
}

/// Reverse-mode gradients of [`sac_forward`].
pub fn sac_backward(grad_output: &FeatureMap, input: &FeatureMap, v: &SVKernel, w: &SIKernel) -> Result<SacGradients> {
    let g = sa_geom(input, v, w.out_channels)?;
    ensure_shape!(
        w.in_channels == v.in_channels && w.k == v.k,
        "SI and SV kernels disagree"
    );
    ensure_shape!(
        grad_output.shape() == (g.c_out, g.h, g.w),
        "grad_output {:?} vs forward output {:?}",
        grad_output.shape(),
        (g.c_out, g.h, g.w)
    );
    let mut gi = Tensor3::zeros(g.c_in, g.h, g.w);
    let mut gv = vec![0.0; v.data.len()];
    let mut gw = vec![0.0; w.data.len()];
    sa_backward_raw(
        g,
        grad_output.as_slice(),
        input.as_slice(),
        &v.data,
        Some(&w.data),
        Some(gi.as_mut_slice()),
        Some(&mut gv),
        Some(&mut gw),
    );
    Ok(SacGradients {
        input: gi,
        v: SVKernel { data: gv, ..*v },
        w: SIKernel { data: gw, ..*w },
    })
}

/// Reference SA convolution by direct summation over a materialized kernel.
pub fn sa_conv_materialized(input: &FeatureMap, a: &SAKernel) -> Result<FeatureMap> {
    ensure_shape!(
        input.shape() == (a.in_channels, a.height, a.width),
        "input {:?} vs SA kernel input {:?}",
        input.shape(),
        (a.in_channels, a.height, a.width)
    );
    let r = (a.k / 2) as isize;
    let (h, w) = (a.height as isize, a.width as isize);
    Ok(Tensor3::from_fn(a.out_channels, a.height, a.width, |c, y, x| {
        let mut acc = 0.0;
        for ci in 0..a.in_channels {
            for i in 0..a.k {
                for j in 0..a.k {
                    let yy = y as isize + i as isize - r;
                    let xx = x as isize + j as isize - r;
                    if (0..h).contains(&yy) && (0..w).contains(&xx) {
                        acc += a.get(c, y, x, ci, i, j) * input.get(ci, yy as usize, xx as usize);
                    }
                }
            }
        }
        acc
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::relative_l2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn instance(seed: u64, c_in: usize, c_out: usize, h: usize, w: usize, k: usize) -> (FeatureMap, SVKernel, SIKernel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = Tensor3::from_vec(c_in, h, w, rand_vec(&mut rng, c_in * h * w)).unwrap();
        let v = SVKernel::new(h, w, c_in, k, rand_vec(&mut rng, h * w * c_in * k * k)).unwrap();
        let wk = SIKernel::new(c_out, c_in, k, rand_vec(&mut rng, c_out * c_in * k * k)).unwrap();
        (input, v, wk)
    }

    #[test]
    fn identity_si_kernel_is_identity() {
        let (input, _, _) = instance(1, 3, 3, 5, 6, 1);
        let out = si_conv(&input, &SIKernel::identity(3, 1).unwrap()).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn all_ones_3x3_counts_neighbours() {
        let input = Tensor3::filled(1, 3, 3, 1.0);
        let out = si_conv(&input, &SIKernel::filled(1, 1, 3, 1.0).unwrap()).unwrap();
        assert_eq!(out.get(0, 1, 1), 9.0);
        for (y, x) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(out.get(0, y, x), 4.0);
        }
        assert_eq!(out.get(0, 0, 1), 6.0);
    }

    #[test]
    fn offset_delta_shifts_by_one_column() {
        let input = Tensor3::from_fn(1, 4, 5, |_, y, x| (y * 10 + x) as f64);
        let mut w = SIKernel::filled(1, 1, 3, 0.0).unwrap();
        // offset (0, +1): row centre, column one to the right
        w.set(0, 0, 1, 2, 1.0);
        let out = si_conv(&input, &w).unwrap();
        for y in 0..4 {
            for x in 0..5 {
                let expected = if x + 1 < 5 { input.get(0, y, x + 1) } else { 0.0 };
                assert_eq!(out.get(0, y, x), expected);
            }
        }
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let input = Tensor3::zeros(2, 4, 4);
        assert!(si_conv(&input, &SIKernel::filled(1, 3, 3, 1.0).unwrap()).is_err());
        assert!(SIKernel::filled(1, 1, 2, 1.0).is_err());
        let v = SVKernel::filled(4, 4, 2, 3, 1.0).unwrap();
        assert!(sac_forward(&input, &v, &SIKernel::filled(1, 2, 1, 1.0).unwrap()).is_err());
        assert!(sv_conv(&Tensor3::zeros(2, 4, 5), &v).is_err());
    }

    #[test]
    fn compose_limits() {
        let (_, v, w) = instance(2, 2, 3, 4, 4, 3);
        let a = compose_sa_kernel(&v, &SIKernel::filled(3, 2, 3, 1.0).unwrap()).unwrap();
        let b = compose_sa_kernel(&SVKernel::filled(4, 4, 2, 3, 1.0).unwrap(), &w).unwrap();
        for c in 0..3 {
            for y in 0..4 {
                for x in 0..4 {
                    for ci in 0..2 {
                        for i in 0..3 {
                            for j in 0..3 {
                                assert_eq!(a.get(c, y, x, ci, i, j), v.get(y, x, ci, i, j));
                                assert_eq!(b.get(c, y, x, ci, i, j), w.get(c, ci, i, j));
                            }
                        }
                    }
                }
            }
        }
        let six = compose_sa_kernel(
            &SVKernel::filled(2, 2, 1, 3, 2.0).unwrap(),
            &SIKernel::filled(2, 1, 3, 3.0).unwrap(),
        )
        .unwrap();
        assert!(six.data.iter().all(|&x| x == 6.0));
        assert!(compose_sa_kernel(&v, &SIKernel::filled(3, 1, 3, 1.0).unwrap()).is_err());
    }

    #[test]
    fn sac_limits_match_sv_and_si() {
        let (input, v, w) = instance(3, 2, 3, 6, 5, 3);
        let ones_w = SIKernel::filled(1, 2, 3, 1.0).unwrap();
        assert_eq!(sac_forward(&input, &v, &ones_w).unwrap(), sv_conv(&input, &v).unwrap());
        let ones_v = SVKernel::filled(6, 5, 2, 3, 1.0).unwrap();
        let a = sac_forward(&input, &ones_v, &w).unwrap();
        let b = si_conv(&input, &w).unwrap();
        assert!(relative_l2(a.as_slice(), b.as_slice()) <= 1e-12);
    }

    #[test]
    fn fused_matches_materialized_oracle() {
        let (input, v, w) = instance(42, 2, 3, 8, 8, 3);
        let fused = sac_forward(&input, &v, &w).unwrap();
        let oracle = sa_conv_materialized(&input, &compose_sa_kernel(&v, &w).unwrap()).unwrap();
        assert!(relative_l2(fused.as_slice(), oracle.as_slice()) <= 1e-10);
    }

    #[test]
    fn sv_conv_examples() {
        let (input, _, _) = instance(5, 3, 1, 4, 4, 3);
        let zero = SVKernel::filled(4, 4, 3, 3, 0.0).unwrap();
        assert!(sv_conv(&input, &zero).unwrap().as_slice().iter().all(|&x| x == 0.0));

        let mut delta = SVKernel::filled(4, 4, 3, 3, 0.0).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                for ci in 0..3 {
                    delta.set(y, x, ci, 1, 1, 1.0);
                }
            }
        }
        let out = sv_conv(&input, &delta).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let s: f64 = (0..3).map(|c| input.get(c, y, x)).sum();
                assert!((out.get(0, y, x) - s).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn backward_of_zero_gradient_is_zero() {
        let (input, v, w) = instance(6, 2, 2, 4, 4, 3);
        let g = sac_backward(&Tensor3::zeros(2, 4, 4), &input, &v, &w).unwrap();
        assert!(g.input.as_slice().iter().all(|&x| x == 0.0));
        assert!(g.v.as_slice().iter().all(|&x| x == 0.0));
        assert!(g.w.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn scalar_backward_is_product_rule() {
        let input = Tensor3::filled(1, 1, 1, 0.7);
        let v = SVKernel::filled(1, 1, 1, 1, 1.5).unwrap();
        let w = SIKernel::filled(1, 1, 1, -2.0).unwrap();
        let g = sac_backward(&Tensor3::filled(1, 1, 1, 1.0), &input, &v, &w).unwrap();
        assert_eq!(g.input.as_slice(), &[1.5 * -2.0]);
        assert_eq!(g.v.as_slice(), &[-2.0 * 0.7]);
        assert_eq!(g.w.as_slice(), &[1.5 * 0.7]);
    }

    #[test]
    fn backward_shape_mismatch() {
        let (input, v, w) = instance(7, 2, 3, 4, 4, 3);
        assert!(sac_backward(&Tensor3::zeros(2, 4, 4), &input, &v, &w).is_err());
    }

    #[test]
    fn si_backward_matches_adjoint_identity() {
        // <si(x), g> == <x, si^T(g)> and <si_w(x), g> is linear in w
        let (input, _, w) = instance(8, 3, 2, 5, 7, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let go = Tensor3::from_vec(2, 5, 7, rand_vec(&mut rng, 70)).unwrap();
        let y = si_conv(&input, &w).unwrap();
        let lhs: f64 = y.as_slice().iter().zip(go.as_slice()).map(|(a, b)| a * b).sum();
        let g = ConvGeom { c_in: 3, c_out: 2, h: 5, w: 7, k: 3 };
        let mut gi = vec![0.0; input.len()];
        let mut gw = vec![0.0; w.as_slice().len()];
        si_backward_raw(g, go.as_slice(), input.as_slice(), w.as_slice(), Some(&mut gi), Some(&mut gw));
        let rhs: f64 = input.as_slice().iter().zip(&gi).map(|(a, b)| a * b).sum();
        let rhs_w: f64 = w.as_slice().iter().zip(&gw).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        assert!((lhs - rhs_w).abs() < 1e-10 * lhs.abs().max(1.0));
    }
}
