//! PFM (little-endian float32) and 8-bit PNG image I/O.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{ensure_arg, Error, Result};
use crate::tensor::Tensor3;

/// Encodes a 1- or 3-channel tensor as little-endian PFM, rows bottom to top.
pub fn encode_pfm(image: &Tensor3) -> Result<Vec<u8>> {
    let (c, h, w) = image.shape();
    ensure_arg!(c == 1 || c == 3, "PFM holds 1 or 3 channels, got {c}");
    let tag = if c == 3 { "PF" } else { "Pf" };
    let mut out = format!("{tag}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(c * h * w * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            for ch in 0..c {
                out.extend_from_slice(&(image.get(ch, y, x) as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn token(&mut self, field: &'static str) -> Result<&'a str> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(start, format!("missing {field}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| parse_err(start, format!("non-ASCII {field}")))
    }

    fn number<T: std::str::FromStr>(&mut self, field: &'static str) -> Result<T> {
        let start = self.pos;
        let tok = self.token(field)?;
        tok.parse()
            .map_err(|_| parse_err(start, format!("invalid {field} {tok:?}")))
    }
}

fn parse_err(offset: usize, message: String) -> Error {
    Error::Parse {
        what: "PFM",
        offset,
        message,
    }
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Tensor3> {
    let mut cur = Cursor { bytes, pos: 0 };
    let channels = match cur.token("magic")? {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(parse_err(0, format!("bad magic {other:?}"))),
    };
    let width: usize = cur.number("width")?;
    let height: usize = cur.number("height")?;
    let scale_at = cur.pos;
    let scale: f64 = cur.number("scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(parse_err(scale_at, "scale must be finite and non-zero".into()));
    }
    // exactly one whitespace byte separates header and raster
    if cur.pos >= bytes.len() {
        return Err(parse_err(cur.pos, "missing raster".into()));
    }
    let start = cur.pos + 1;
    let need = channels * width * height * 4;
    if bytes.len() - start < need {
        return Err(parse_err(
            bytes.len(),
            format!("raster truncated: need {need} bytes, have {}", bytes.len() - start),
        ));
    }
    let little = scale < 0.0;
    let mut img = Tensor3::zeros(channels, height, width);
    let mut off = start;
    for y in (0..height).rev() {
        for x in 0..width {
            for c in 0..channels {
                let raw: [u8; 4] = bytes[off..off + 4].try_into().expect("4 bytes");
                let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
                img.set(c, y, x, v as f64);
                off += 4;
            }
        }
    }
    Ok(img)
}

pub fn save_pfm(path: impl AsRef<Path>, image: &Tensor3) -> Result<()> {
    write_bytes(path.as_ref(), &encode_pfm(image)?)
}

pub fn load_pfm(path: impl AsRef<Path>) -> Result<Tensor3> {
    decode_pfm(&read_bytes(path.as_ref())?)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

/// `[0, 1]` to a byte, rounding half up; values outside are clamped.
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Png(e.to_string())
}

/// Writes a 1-channel (gray) or 3-channel (RGB) image as 8-bit PNG.
pub fn save_png(path: impl AsRef<Path>, image: &Tensor3) -> Result<()> {
    let (c, h, w) = image.shape();
    ensure_arg!(c == 1 || c == 3, "PNG export needs 1 or 3 channels, got {c}");
    let color = if c == 3 { png::ColorType::Rgb } else { png::ColorType::Grayscale };
    let mut data = Vec::with_capacity(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data.push(quantize_u8(image.get(ch, y, x)));
            }
        }
    }
    encode_png(path.as_ref(), w, h, color, png::BitDepth::Eight, &data)
}

/// Writes a binary mask as a 1-bit grayscale PNG.
pub fn save_mask_png(path: impl AsRef<Path>, mask: &Tensor3) -> Result<()> {
    let (c, h, w) = mask.shape();
    ensure_arg!(c == 1, "mask must have one channel, got {c}");
    ensure_arg!(crate::hologram::is_binary(mask), "mask must be binary");
    let stride = w.div_ceil(8);
    let mut data = vec![0u8; stride * h];
    for y in 0..h {
        for x in 0..w {
            if mask.get(0, y, x) == 1.0 {
                data[y * stride + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    encode_png(path.as_ref(), w, h, png::ColorType::Grayscale, png::BitDepth::One, &data)
}

fn encode_png(path: &Path, w: usize, h: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, w as u32, h as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(data).map_err(png_err)?;
    }
    write_bytes(path, &buf)
}

/// Reads a PNG as floats in `[0, 1]`: gray (any bit depth) to 1 channel,
/// RGB(A) to 3 channels. Alpha is dropped; 16-bit samples are reduced to 8.
pub fn load_png(path: impl AsRef<Path>) -> Result<Tensor3> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(png_err)?;
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| png_err("image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let (src_c, out_c) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => return Err(png_err("indexed PNG not expanded")),
    };
    let line = info.line_size;
    Ok(Tensor3::from_fn(out_c, h, w, |c, y, x| buf[y * line + x * src_c + c] as f64 / 255.0))
}

/// Phase in radians to a `[0, 1]` gray visualization (wrapped to `[−π, π)`).
pub fn phase_visualization(phase: &[f64], height: usize, width: usize) -> Result<Tensor3> {
    use std::f64::consts::PI;
    let data = phase
        .iter()
        .map(|&p| (p + PI).rem_euclid(2.0 * PI) / (2.0 * PI))
        .collect();
    Tensor3::from_vec(1, height, width, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_is_bit_identical_for_f32_values() {
        let img = Tensor3::from_fn(3, 5, 7, |c, y, x| ((c * 35 + y * 7 + x) as f32 * 0.37 - 4.0) as f64);
        let back = decode_pfm(&encode_pfm(&img).unwrap()).unwrap();
        assert_eq!(img, back);
        let gray = Tensor3::from_fn(1, 3, 2, |_, y, x| (y * 2 + x) as f64);
        assert_eq!(decode_pfm(&encode_pfm(&gray).unwrap()).unwrap(), gray);
    }

    #[test]
    fn pfm_rows_are_stored_bottom_up() {
        let img = Tensor3::from_fn(1, 2, 1, |_, y, _| y as f64);
        let bytes = encode_pfm(&img).unwrap();
        let raster = &bytes[bytes.len() - 8..];
        assert_eq!(f32::from_le_bytes(raster[0..4].try_into().unwrap()), 1.0);
    }

    #[test]
    fn pfm_truncated_headers_name_the_missing_field() {
        for (bytes, field) in [
            (&b""[..], "magic"),
            (&b"PF\n"[..], "width"),
            (&b"PF\n4"[..], "height"),
            (&b"PF\n4 4\n"[..], "scale"),
        ] {
            let msg = decode_pfm(bytes).unwrap_err().to_string();
            assert!(msg.contains(&format!("missing {field}")), "{msg}");
        }
        let msg = decode_pfm(b"PF\n2 2\n-1.0\n\0\0").unwrap_err().to_string();
        assert!(msg.contains("truncated"), "{msg}");
        assert!(decode_pfm(b"P6\n2 2\n-1\n").unwrap_err().to_string().contains("byte 0"));
    }

    #[test]
    fn png_half_quantizes_to_128() {
        assert_eq!(quantize_u8(0.5), 128);
        assert_eq!(quantize_u8(0.0), 0);
        assert_eq!(quantize_u8(1.0), 255);
        assert_eq!(quantize_u8(-2.0), 0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("half.png");
        save_png(&p, &Tensor3::filled(3, 2, 2, 0.5)).unwrap();
        let back = load_png(&p).unwrap();
        assert_eq!(back.shape(), (3, 2, 2));
        assert!(back.as_slice().iter().all(|&v| v == 128.0 / 255.0));
    }

    #[test]
    fn mask_png_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = Tensor3::from_fn(1, 3, 11, |_, y, x| ((x + y) % 3 == 0) as u8 as f64);
        save_mask_png(&p, &m).unwrap();
        assert_eq!(load_png(&p).unwrap(), m);
    }
}
