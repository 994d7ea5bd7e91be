//! Binary containers: propagation kernels, SI/SV kernels and model checkpoints.
//!
//! Every file starts with a 16-byte header: 4-byte magic, then little-endian
//! `u32` version and two `u32` header words whose meaning depends on the kind.
//! Payload values are little-endian `f32`.

use std::path::Path;

use num_complex::Complex64;

use crate::error::{ensure_arg, Error, Result};
use crate::focal_model::{ModelConfig, ModelParams};
use crate::imageio::{read_bytes, write_bytes};
use crate::sac_ops::{SIKernel, SVKernel};
use crate::tensor::Tensor3;
use crate::wave_optics::PropagationKernel;

pub const VERSION: u32 = 1;
const KERNEL_MAGIC: &[u8; 4] = b"FHPK";
const TENSOR_MAGIC: &[u8; 4] = b"FHTS";
const CHECKPOINT_MAGIC: &[u8; 4] = b"FHCK";

struct Reader<'a> {
    what: &'static str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(what: &'static str, bytes: &'a [u8]) -> Self {
        Self { what, bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated {field}: need {n} bytes, have {}", self.bytes.len() - self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self, field: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, field: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<(u32, u32)> {
        let m = self.take(4, "magic")?;
        if m != magic {
            self.pos = 0;
            return Err(self.err(format!("bad magic {m:?}")));
        }
        let at = self.pos;
        let v = self.u32("version")?;
        if v != VERSION {
            self.pos = at;
            return Err(self.err(format!("unsupported version {v}")));
        }
        Ok((self.u32("header word")?, self.u32("header word")?))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }

    fn err(&self, message: String) -> Error {
        Error::Parse {
            what: self.what,
            offset: self.pos,
            message,
        }
    }
}

fn header(magic: &[u8; 4], a: u32, b: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(16);
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&a.to_le_bytes());
    out.extend_from_slice(&b.to_le_bytes());
    out
}

fn dim(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("dimension {n} exceeds u32")))
}

/// Header words are width and height. Then `(re, im)` pairs row-major, the
/// band mask packed LSB-first, and a trailer of `f64` distance (mm),
/// wavelength (nm) and pitch (µm).
pub fn encode_kernel(k: &PropagationKernel) -> Result<Vec<u8>> {
    let mut out = header(KERNEL_MAGIC, dim(k.width())?, dim(k.height())?);
    for z in k.transfer() {
        out.extend_from_slice(&(z.re as f32).to_le_bytes());
        out.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    let mut bits = vec![0u8; k.band_mask().len().div_ceil(8)];
    for (i, &b) in k.band_mask().iter().enumerate() {
        if b {
            bits[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&bits);
    for v in [k.distance_mm(), k.wavelength_nm(), k.pixel_pitch_um()] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_kernel(bytes: &[u8]) -> Result<PropagationKernel> {
    let mut r = Reader::new("kernel file", bytes);
    let (w, h) = r.header(KERNEL_MAGIC)?;
    let n = w as usize * h as usize;
    let mut transfer = Vec::with_capacity(n);
    for _ in 0..n {
        let re = r.f32("transfer")?;
        let im = r.f32("transfer")?;
        transfer.push(Complex64::new(re as f64, im as f64));
    }
    let bits = r.take(n.div_ceil(8), "band mask")?;
    let mask = (0..n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
    let distance = r.f64("distance")?;
    let wavelength = r.f64("wavelength")?;
    let pitch = r.f64("pixel pitch")?;
    r.finish()?;
    Ok(PropagationKernel::from_parts(w as usize, h as usize, distance, wavelength, pitch, transfer, mask))
}

/// A named `f32` tensor with an arbitrary shape.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

fn push_tensors(out: &mut Vec<u8>, tensors: &[NamedTensor]) -> Result<()> {
    for t in tensors {
        ensure_arg!(
            t.shape.iter().product::<usize>() == t.data.len(),
            "tensor {} shape {:?} does not match {} values",
            t.name,
            t.shape,
            t.data.len()
        );
        out.extend_from_slice(&dim(t.name.len())?.to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&dim(t.shape.len())?.to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&dim(d)?.to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(())
}

fn read_tensors(r: &mut Reader<'_>, count: u32) -> Result<Vec<NamedTensor>> {
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Parse {
                what: r.what,
                offset: at,
                message: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let rank = r.u32("rank")? as usize;
        ensure_arg!(rank <= 8, "tensor {name} has rank {rank}");
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("shape")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| r.err("tensor too large".into()))?, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        out.push(NamedTensor { name, shape, data });
    }
    Ok(out)
}

/// Header words are the tensor count and zero.
pub fn encode_tensors(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut out = header(TENSOR_MAGIC, dim(tensors.len())?, 0);
    push_tensors(&mut out, tensors)?;
    Ok(out)
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut r = Reader::new("tensor file", bytes);
    let (count, _) = r.header(TENSOR_MAGIC)?;
    let t = read_tensors(&mut r, count)?;
    r.finish()?;
    Ok(t)
}

pub fn si_kernel_tensor(name: &str, w: &SIKernel) -> NamedTensor {
    NamedTensor {
        name: name.into(),
        shape: vec![w.out_channels(), w.in_channels(), w.k(), w.k()],
        data: w.as_slice().to_vec(),
    }
}

pub fn sv_kernel_tensor(name: &str, v: &SVKernel) -> NamedTensor {
    NamedTensor {
        name: name.into(),
        shape: vec![v.height(), v.width(), v.in_channels(), v.k(), v.k()],
        data: v.as_slice().to_vec(),
    }
}

impl NamedTensor {
    pub fn to_si_kernel(&self) -> Result<SIKernel> {
        ensure_arg!(self.shape.len() == 4 && self.shape[2] == self.shape[3], "{} is not an SI kernel", self.name);
        SIKernel::new(self.shape[0], self.shape[1], self.shape[2], self.data.clone())
    }

    pub fn to_sv_kernel(&self) -> Result<SVKernel> {
        ensure_arg!(self.shape.len() == 5 && self.shape[3] == self.shape[4], "{} is not an SV kernel", self.name);
        SVKernel::new(self.shape[0], self.shape[1], self.shape[2], self.shape[3], self.data.clone())
    }
}

/// Header words are the tensor count and the number of `u32` config words
/// that follow (height, width, base channels, k).
pub fn encode_checkpoint(params: &ModelParams) -> Result<Vec<u8>> {
    let c = params.config();
    let mut out = header(CHECKPOINT_MAGIC, dim(params.names().len())?, 4);
    for v in [c.height, c.width, c.base_channels, c.k] {
        out.extend_from_slice(&dim(v)?.to_le_bytes());
    }
    let tensors: Vec<NamedTensor> = params
        .names()
        .iter()
        .zip(params.tensors())
        .map(|(n, t)| {
            let (a, b, c) = t.shape();
            NamedTensor {
                name: n.clone(),
                shape: vec![a, b, c],
                data: t.as_slice().to_vec(),
            }
        })
        .collect();
    push_tensors(&mut out, &tensors)?;
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader::new("checkpoint", bytes);
    let (count, words) = r.header(CHECKPOINT_MAGIC)?;
    ensure_arg!(words == 4, "checkpoint config has {words} words, expected 4");
    let mut cfg = [0usize; 4];
    for v in &mut cfg {
        *v = r.u32("model config")? as usize;
    }
    let config = ModelConfig {
        height: cfg[0],
        width: cfg[1],
        base_channels: cfg[2],
        k: cfg[3],
    };
    let named = read_tensors(&mut r, count)?
        .into_iter()
        .map(|t| {
            ensure_arg!(t.shape.len() == 3, "parameter {} has rank {}", t.name, t.shape.len());
            Ok((t.name, Tensor3::from_vec(t.shape[0], t.shape[1], t.shape[2], t.data)?))
        })
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    let params = ModelParams::from_named(config, named)?;
    ensure_arg!(
        params.same_layout(&ModelParams::init(config, 0)?),
        "checkpoint tensors do not match the architecture for {config:?}"
    );
    Ok(params)
}

pub fn save_kernel(path: impl AsRef<Path>, k: &PropagationKernel) -> Result<()> {
    write_bytes(path.as_ref(), &encode_kernel(k)?)
}

pub fn load_kernel(path: impl AsRef<Path>) -> Result<PropagationKernel> {
    decode_kernel(&read_bytes(path.as_ref())?)
}

pub fn save_tensors(path: impl AsRef<Path>, tensors: &[NamedTensor]) -> Result<()> {
    write_bytes(path.as_ref(), &encode_tensors(tensors)?)
}

pub fn load_tensors(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>> {
    decode_tensors(&read_bytes(path.as_ref())?)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    write_bytes(path.as_ref(), &encode_checkpoint(params)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    decode_checkpoint(&read_bytes(path.as_ref())?)
}
