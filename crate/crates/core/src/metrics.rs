//! Image-quality metrics.

use crate::error::{ensure_arg, ensure_shape, Result};
use crate::tensor::Tensor3;

/// Reported for identical images instead of +∞.
pub const PSNR_CAP_DB: f64 = 100.0;

pub fn mse(a: &Tensor3, b: &Tensor3) -> Result<f64> {
    ensure_shape!(a.same_shape(b), "{:?} vs {:?}", a.shape(), b.shape());
    ensure_arg!(!a.is_empty(), "empty images");
    let s: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.len() as f64)
}

/// `10 log10(peak² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Tensor3, b: &Tensor3, peak: f64) -> Result<f64> {
    ensure_arg!(peak > 0.0, "peak must be positive");
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_CAP_DB))
}

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;

fn gaussian_taps() -> [f64; WINDOW] {
    let r = (WINDOW / 2) as f64;
    let mut t = [0.0; WINDOW];
    for (i, v) in t.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = t.iter().sum();
    t.iter_mut().for_each(|v| *v /= s);
    t
}

/// Separable Gaussian blur with edge replication, same size as the input.
fn blur(plane: &[f64], h: usize, w: usize, taps: &[f64; WINDOW]) -> Vec<f64> {
    let r = (WINDOW / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * plane[y * w + clamp(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * tmp[clamp(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Single-scale SSIM (11×11 Gaussian window, σ = 1.5, replicated borders),
/// averaged over pixels and channels.
pub fn ssim(a: &Tensor3, b: &Tensor3, peak: f64) -> Result<f64> {
    ensure_shape!(a.same_shape(b), "{:?} vs {:?}", a.shape(), b.shape());
    ensure_arg!(!a.is_empty(), "empty images");
    ensure_arg!(peak > 0.0, "peak must be positive");
    let (c, h, w) = a.shape();
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let taps = gaussian_taps();
    let mut total = 0.0;
    for ch in 0..c {
        let (pa, pb) = (a.channel(ch), b.channel(ch));
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
        let mu_a = blur(pa, h, w, &taps);
        let mu_b = blur(pb, h, w, &taps);
        let e_aa = blur(&prod(pa, pa), h, w, &taps);
        let e_bb = blur(&prod(pb, pb), h, w, &taps);
        let e_ab = blur(&prod(pa, pb), h, w, &taps);
        for p in 0..h * w {
            let (ma, mb) = (mu_a[p], mu_b[p]);
            let va = e_aa[p] - ma * ma;
            let vb = e_bb[p] - mb * mb;
            let cov = e_ab[p] - ma * mb;
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / a.len() as f64)
}
