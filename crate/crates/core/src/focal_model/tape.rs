//! Minimal reverse-mode autodiff over [`Tensor3`] values.
//!
//! Only the operators the focal-surface network needs are provided. Every
//! operator records its inputs; [`Tape::backward`] walks the tape in reverse
//! and accumulates gradients.

use crate::error::{ensure_shape, Result};
use crate::sac_ops::{sa_backward_raw, sa_forward_raw, si_backward_raw, si_forward_raw, ConvGeom};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, k: usize },
    Silu { x: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, s: f64 },
    AvgPool2 { x: Var },
    Upsample2 { x: Var },
    BoxFilter3 { x: Var },
    Concat { parts: Vec<Var> },
    /// `(T, h, w)` channel-major to pixel-major `(1, h·w, T)`.
    ToPixelMajor { x: Var },
    Sac { x: Var, v: Var, w: Option<Var>, k: usize },
    Attention { q: Var, k: Var, v: Var, weights: Vec<f64> },
    GlobalAvg { x: Var },
    Modulate { x: Var, s: Var },
    MaskedL2 { r: Var, target: Tensor3, mask: Tensor3, a0: f64, a1: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor3,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; `None` where nothing flowed.
#[derive(Debug)]
pub struct Gradients(Vec<Option<Tensor3>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor3> {
        self.0[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor3> {
        self.0[v.0].take()
    }
}

fn geom(c_in: usize, c_out: usize, h: usize, w: usize, k: usize) -> ConvGeom {
    ConvGeom { c_in, c_out, h, w, k }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-axis bilinear ×2 interpolation taps (half-pixel centres, clamped edges).
fn upsample_taps(n: usize) -> Vec<[(usize, f64); 2]> {
    (0..2 * n)
        .map(|o| {
            let m = o / 2;
            if o % 2 == 0 {
                [(m.saturating_sub(1), 0.25), (m, 0.75)]
            } else {
                [(m, 0.75), ((m + 1).min(n - 1), 0.25)]
            }
        })
        .collect()
}

fn box3(src: &Tensor3) -> Tensor3 {
    let (c, h, w) = src.shape();
    Tensor3::from_fn(c, h, w, |ch, y, x| {
        let mut acc = 0.0;
        for yy in y.saturating_sub(1)..(y + 2).min(h) {
            for xx in x.saturating_sub(1)..(x + 2).min(w) {
                acc += src.get(ch, yy, xx);
            }
        }
        acc / 9.0
    })
}

/// Masked L2 with per-pixel weight `a0·m + a1·(1 − m)`, averaged over all
/// elements. The single-channel mask broadcasts across image channels.
pub(crate) fn masked_l2_value(r: &Tensor3, target: &Tensor3, mask: &Tensor3, a0: f64, a1: f64) -> f64 {
    let plane = r.plane_len();
    let mut acc = 0.0;
    for (idx, (a, b)) in r.as_slice().iter().zip(target.as_slice()).enumerate() {
        let m = mask.as_slice()[idx % plane];
        let wgt = a0 * m + a1 * (1.0 - m);
        acc += wgt * (a - b) * (a - b);
    }
    acc / r.len() as f64
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor3, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor3 {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, t: Tensor3) -> Var {
        self.push(t, Op::Leaf)
    }

    /// SI convolution; `w` is `(c_out, c_in, k²)`, `b` is `(c_out, 1, 1)`.
    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, k: usize) -> Result<Var> {
        let (c_in, h, wd) = self.value(x).shape();
        let (c_out, wc_in, kk) = self.value(w).shape();
        ensure_shape!(wc_in == c_in && kk == k * k, "conv weight {:?} vs input channels {c_in}, k={k}", self.value(w).shape());
        let g = geom(c_in, c_out, h, wd, k);
        let mut out = Tensor3::zeros(c_out, h, wd);
        si_forward_raw(g, self.value(x).as_slice(), self.value(w).as_slice(), out.as_mut_slice());
        if let Some(b) = b {
            let bias = self.value(b);
            ensure_shape!(bias.len() == c_out, "bias length {} vs {c_out} outputs", bias.len());
            for c in 0..c_out {
                let bv = bias.as_slice()[c];
                out.channel_mut(c).iter_mut().for_each(|v| *v += bv);
            }
        }
        Ok(self.push(out, Op::Conv { x, w, b, k }))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * sigmoid(v));
        self.push(out, Op::Silu { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        ensure_shape!(self.value(a).same_shape(self.value(b)), "add of mismatched shapes");
        let data = self
            .value(a)
            .as_slice()
            .iter()
            .zip(self.value(b).as_slice())
            .map(|(p, q)| p + q)
            .collect();
        let (c, h, w) = self.value(a).shape();
        let out = Tensor3::from_vec(c, h, w, data)?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).scaled(s);
        self.push(out, Op::Scale { x, s })
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let (c, h, w) = src.shape();
        ensure_shape!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even size, got {h}x{w}");
        let out = Tensor3::from_fn(c, h / 2, w / 2, |ch, y, xx| {
            0.25 * (src.get(ch, 2 * y, 2 * xx)
                + src.get(ch, 2 * y, 2 * xx + 1)
                + src.get(ch, 2 * y + 1, 2 * xx)
                + src.get(ch, 2 * y + 1, 2 * xx + 1))
        });
        Ok(self.push(out, Op::AvgPool2 { x }))
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let (c, h, w) = src.shape();
        let ty = upsample_taps(h);
        let tx = upsample_taps(w);
        let out = Tensor3::from_fn(c, 2 * h, 2 * w, |ch, y, xx| {
            let mut acc = 0.0;
            for &(sy, wy) in &ty[y] {
                for &(sx, wx) in &tx[xx] {
                    acc += wy * wx * src.get(ch, sy, sx);
                }
            }
            acc
        });
        self.push(out, Op::Upsample2 { x })
    }

    /// 3×3 stride-1 average pooling with zero padding (always divides by 9).
    pub fn box_filter3(&mut self, x: Var) -> Var {
        let out = box3(self.value(x));
        self.push(out, Op::BoxFilter3 { x })
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor3> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor3::concat(&refs)?;
        Ok(self.push(out, Op::Concat { parts: parts.to_vec() }))
    }

    pub fn to_pixel_major(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let (t, h, w) = src.shape();
        let n = h * w;
        let mut data = vec![0.0; t * n];
        for c in 0..t {
            for (p, &v) in src.channel(c).iter().enumerate() {
                data[p * t + c] = v;
            }
        }
        let out = Tensor3::from_vec(1, n, t, data).expect("transpose preserves size");
        self.push(out, Op::ToPixelMajor { x })
    }

    /// Fused SA convolution of `x` with pixel-major SV kernels `v` and SI
    /// weight `w`; with `w = None` this is SV convolution (one channel).
    pub fn sac(&mut self, x: Var, v: Var, w: Option<Var>, k: usize) -> Result<Var> {
        let (c_in, h, wd) = self.value(x).shape();
        let per_pix = c_in * k * k;
        ensure_shape!(
            self.value(v).shape() == (1, h * wd, per_pix),
            "SV kernels {:?} vs expected (1, {}, {per_pix})",
            self.value(v).shape(),
            h * wd
        );
        let c_out = match w {
            Some(w) => {
                let ws = self.value(w).shape();
                ensure_shape!(ws.1 == c_in && ws.2 == k * k, "SAC weight {ws:?} vs input channels {c_in}");
                ws.0
            }
            None => 1,
        };
        let g = geom(c_in, c_out, h, wd, k);
        let mut out = Tensor3::zeros(c_out, h, wd);
        sa_forward_raw(
            g,
            self.value(x).as_slice(),
            self.value(v).as_slice(),
            w.map(|w| self.value(w).as_slice()),
            out.as_mut_slice(),
        );
        Ok(self.push(out, Op::Sac { x, v, w, k }))
    }

    /// Single-head attention over spatial positions:
    /// `out[:, p] = Σ_q softmax_q(q[:, p]·k[:, q] / √d) v[:, q]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let (d, h, w) = self.value(q).shape();
        ensure_shape!(self.value(k).shape() == (d, h, w), "attention key shape");
        let (dv, vh, vw) = self.value(v).shape();
        ensure_shape!((vh, vw) == (h, w), "attention value spatial size");
        let n = h * w;
        let scale = 1.0 / (d as f64).sqrt();
        let (qv, kv) = (self.value(q), self.value(k));
        let mut weights = vec![0.0; n * n];
        for p in 0..n {
            let row = &mut weights[p * n..(p + 1) * n];
            for (qq, s) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for c in 0..d {
                    acc += qv.channel(c)[p] * kv.channel(c)[qq];
                }
                *s = acc * scale;
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for s in row.iter_mut() {
                *s = (*s - max).exp();
                z += *s;
            }
            row.iter_mut().for_each(|s| *s /= z);
        }
        let vv = self.value(v);
        let mut out = Tensor3::zeros(dv, h, w);
        for c in 0..dv {
            let src = vv.channel(c);
            let dst = out.channel_mut(c);
            for p in 0..n {
                dst[p] = weights[p * n..(p + 1) * n].iter().zip(src).map(|(a, b)| a * b).sum();
            }
        }
        Ok(self.push(out, Op::Attention { q, k, v, weights }))
    }

    pub fn global_avg(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = (0..src.channels())
            .map(|c| src.channel(c).iter().sum::<f64>() / src.plane_len() as f64)
            .collect();
        let out = Tensor3::from_vec(src.channels(), 1, 1, data).expect("one value per channel");
        self.push(out, Op::GlobalAvg { x })
    }

    /// `out[c] = x[c] · (1 + s[c]) + s[C + c]` with `s` of shape `(2C, 1, 1)`.
    pub fn modulate(&mut self, x: Var, s: Var) -> Result<Var> {
        let c = self.value(x).channels();
        ensure_shape!(self.value(s).len() == 2 * c, "modulation needs {} coefficients", 2 * c);
        let sv = self.value(s).as_slice().to_vec();
        let mut out = self.value(x).clone();
        for ch in 0..c {
            let (g, b) = (sv[ch], sv[c + ch]);
            out.channel_mut(ch).iter_mut().for_each(|v| *v = *v * (1.0 + g) + b);
        }
        Ok(self.push(out, Op::Modulate { x, s }))
    }

    pub fn masked_l2(&mut self, r: Var, target: &Tensor3, mask: &Tensor3, a0: f64, a1: f64) -> Result<Var> {
        let rv = self.value(r);
        ensure_shape!(rv.same_shape(target), "prediction {:?} vs target {:?}", rv.shape(), target.shape());
        ensure_shape!(
            mask.shape() == (1, rv.height(), rv.width()),
            "mask {:?} vs image {:?}",
            mask.shape(),
            rv.shape()
        );
        let loss = masked_l2_value(rv, target, mask, a0, a1);
        let out = Tensor3::filled(1, 1, 1, loss);
        Ok(self.push(
            out,
            Op::MaskedL2 {
                r,
                target: target.clone(),
                mask: mask.clone(),
                a0,
                a1,
            },
        ))
    }

    /// Reverse sweep from `root`, seeded with `seed` (ones when `None`).
    pub fn backward(&self, root: Var, seed: Option<Tensor3>) -> Gradients {
        let mut grads: Vec<Option<Tensor3>> = vec![None; self.nodes.len()];
        let (c, h, w) = self.value(root).shape();
        grads[root.0] = Some(seed.unwrap_or_else(|| Tensor3::filled(c, h, w, 1.0)));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients(grads)
    }

    fn backprop_node(&self, idx: usize, g: &Tensor3, grads: &mut [Option<Tensor3>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, k } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (c_in, h, wd) = xv.shape();
                let gm = geom(c_in, wv.channels(), h, wd, *k);
                let mut gx = Tensor3::zeros(c_in, h, wd);
                let mut gw = Tensor3::zeros(wv.channels(), wv.height(), wv.width());
                si_backward_raw(
                    gm,
                    g.as_slice(),
                    xv.as_slice(),
                    wv.as_slice(),
                    Some(gx.as_mut_slice()),
                    Some(gw.as_mut_slice()),
                );
                accumulate(grads, *x, gx);
                accumulate(grads, *w, gw);
                if let Some(b) = b {
                    let data = (0..g.channels()).map(|c| g.channel(c).iter().sum()).collect();
                    let bv = self.value(*b);
                    let gb = Tensor3::from_vec(bv.channels(), bv.height(), bv.width(), data).expect("bias size");
                    accumulate(grads, *b, gb);
                }
            }
            Op::Silu { x } => {
                let xv = self.value(*x);
                let data = xv
                    .as_slice()
                    .iter()
                    .zip(g.as_slice())
                    .map(|(&v, &gv)| {
                        let s = sigmoid(v);
                        gv * s * (1.0 + v * (1.0 - s))
                    })
                    .collect();
                let (c, h, w) = xv.shape();
                accumulate(grads, *x, Tensor3::from_vec(c, h, w, data).expect("same size"));
            }
            Op::Add { a, b } => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Scale { x, s } => accumulate(grads, *x, g.scaled(*s)),
            Op::AvgPool2 { x } => {
                let (c, h, w) = self.value(*x).shape();
                let gx = Tensor3::from_fn(c, h, w, |ch, y, xx| 0.25 * g.get(ch, y / 2, xx / 2));
                accumulate(grads, *x, gx);
            }
            Op::Upsample2 { x } => {
                let (c, h, w) = self.value(*x).shape();
                let ty = upsample_taps(h);
                let tx = upsample_taps(w);
                let mut gx = Tensor3::zeros(c, h, w);
                for ch in 0..c {
                    for (oy, tapy) in ty.iter().enumerate() {
                        for (ox, tapx) in tx.iter().enumerate() {
                            let gv = g.get(ch, oy, ox);
                            for &(sy, wy) in tapy {
                                for &(sx, wx) in tapx {
                                    let cur = gx.get(ch, sy, sx);
                                    gx.set(ch, sy, sx, cur + wy * wx * gv);
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::BoxFilter3 { x } => accumulate(grads, *x, box3(g)),
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let (c, h, w) = self.value(p).shape();
                    let n = c * h * w;
                    let slice = g.as_slice()[offset..offset + n].to_vec();
                    offset += n;
                    accumulate(grads, p, Tensor3::from_vec(c, h, w, slice).expect("part size"));
                }
            }
            Op::ToPixelMajor { x } => {
                let (t, h, w) = self.value(*x).shape();
                let n = h * w;
                let mut gx = Tensor3::zeros(t, h, w);
                let gs = g.as_slice();
                for c in 0..t {
                    let dst = gx.channel_mut(c);
                    for (p, d) in dst.iter_mut().enumerate() {
                        *d = gs[p * t + c];
                    }
                }
                debug_assert_eq!(gs.len(), t * n);
                accumulate(grads, *x, gx);
            }
            Op::Sac { x, v, w, k } => {
                let xv = self.value(*x);
                let vv = self.value(*v);
                let (c_in, h, wd) = xv.shape();
                let gm = geom(c_in, g.channels(), h, wd, *k);
                let mut gx = Tensor3::zeros(c_in, h, wd);
                let mut gv = Tensor3::zeros(1, vv.height(), vv.width());
                let mut gw = w.map(|w| {
                    let s = self.value(w).shape();
                    Tensor3::zeros(s.0, s.1, s.2)
                });
                sa_backward_raw(
                    gm,
                    g.as_slice(),
                    xv.as_slice(),
                    vv.as_slice(),
                    w.map(|w| self.value(w).as_slice()),
                    Some(gx.as_mut_slice()),
                    Some(gv.as_mut_slice()),
                    gw.as_mut().map(|t| t.as_mut_slice()),
                );
                accumulate(grads, *x, gx);
                accumulate(grads, *v, gv);
                if let (Some(w), Some(gw)) = (w, gw) {
                    accumulate(grads, *w, gw);
                }
            }
            Op::Attention { q, k, v, weights } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let (d, h, w) = qv.shape();
                let dv = vv.channels();
                let n = h * w;
                let scale = 1.0 / (d as f64).sqrt();

                let mut gv = Tensor3::zeros(dv, h, w);
                for c in 0..dv {
                    let go = g.channel(c);
                    let dst = gv.channel_mut(c);
                    for p in 0..n {
                        let row = &weights[p * n..(p + 1) * n];
                        for (qq, a) in row.iter().enumerate() {
                            dst[qq] += a * go[p];
                        }
                    }
                }
                // dS = A ⊙ (dA − rowsum(A ⊙ dA))
                let mut ds = vec![0.0; n * n];
                for p in 0..n {
                    let row = &weights[p * n..(p + 1) * n];
                    let drow = &mut ds[p * n..(p + 1) * n];
                    for (qq, da) in drow.iter_mut().enumerate() {
                        *da = (0..dv).map(|c| g.channel(c)[p] * vv.channel(c)[qq]).sum();
                    }
                    let dot: f64 = row.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
                    for (da, a) in drow.iter_mut().zip(row) {
                        *da = a * (*da - dot) * scale;
                    }
                }
                let mut gq = Tensor3::zeros(d, h, w);
                let mut gk = Tensor3::zeros(d, h, w);
                for c in 0..d {
                    let (qc, kc) = (qv.channel(c), kv.channel(c));
                    for p in 0..n {
                        let drow = &ds[p * n..(p + 1) * n];
                        let mut acc = 0.0;
                        for qq in 0..n {
                            acc += drow[qq] * kc[qq];
                            let cur = gk.channel(c)[qq];
                            gk.channel_mut(c)[qq] = cur + drow[qq] * qc[p];
                        }
                        gq.channel_mut(c)[p] = acc;
                    }
                }
                accumulate(grads, *q, gq);
                accumulate(grads, *k, gk);
                accumulate(grads, *v, gv);
            }
            Op::GlobalAvg { x } => {
                let (c, h, w) = self.value(*x).shape();
                let inv = 1.0 / (h * w) as f64;
                let gx = Tensor3::from_fn(c, h, w, |ch, _, _| g.as_slice()[ch] * inv);
                accumulate(grads, *x, gx);
            }
            Op::Modulate { x, s } => {
                let xv = self.value(*x);
                let sv = self.value(*s).as_slice();
                let c = xv.channels();
                let mut gx = g.clone();
                let mut gs = vec![0.0; 2 * c];
                for ch in 0..c {
                    let gc = g.channel(ch);
                    let xc = xv.channel(ch);
                    gs[ch] = gc.iter().zip(xc).map(|(a, b)| a * b).sum();
                    gs[c + ch] = gc.iter().sum();
                    gx.channel_mut(ch).iter_mut().for_each(|v| *v *= 1.0 + sv[ch]);
                }
                accumulate(grads, *x, gx);
                let ss = self.value(*s).shape();
                accumulate(grads, *s, Tensor3::from_vec(ss.0, ss.1, ss.2, gs).expect("coef size"));
            }
            Op::MaskedL2 { r, target, mask, a0, a1 } => {
                let rv = self.value(*r);
                let seed = g.as_slice()[0];
                let plane = rv.plane_len();
                let n = rv.len() as f64;
                let data = rv
                    .as_slice()
                    .iter()
                    .zip(target.as_slice())
                    .enumerate()
                    .map(|(i, (a, b))| {
                        let m = mask.as_slice()[i % plane];
                        seed * 2.0 * (a0 * m + a1 * (1.0 - m)) * (a - b) / n
                    })
                    .collect();
                let (c, h, w) = rv.shape();
                accumulate(grads, *r, Tensor3::from_vec(c, h, w, data).expect("same size"));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor3>], v: Var, g: Tensor3) {
    match &mut grads[v.0] {
        Some(acc) => acc
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}
