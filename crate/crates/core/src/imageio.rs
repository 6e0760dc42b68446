//! Linear RGB images, binary masks and the binary PNM formats used on disk.
//!
//! Color images are stored as 8-bit P6 after clamping to [0, 1] and applying a
//! 1/2.2 gamma. Scalar maps (depth, alpha) are 16-bit P5 with the linear scale
//! in a sidecar `.txt`. Masks are 8-bit P5 with values 0 and 255.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::Vec3;

pub const GAMMA: f64 = 2.2;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<Vec3>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, Vec3::zeros())
    }

    pub fn filled(width: u32, height: u32, value: Vec3) -> Self {
        Image {
            width,
            height,
            pixels: vec![value; (width * height) as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> Vec3 {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: Vec3) {
        self.pixels[(y * self.width + x) as usize] = v;
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|p| p.sum()).sum::<f64>() / (3 * self.pixels.len()).max(1) as f64
    }

    /// Sets every channel of every pixel to the sRGB-quantized value, as a round trip through disk would.
    pub fn quantized(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .map(|p| p.map(|c| srgb8_to_linear(linear_to_srgb8(c))))
                .collect(),
        }
    }

    /// Side-by-side concatenation; all panels must share a height.
    pub fn hstack(panels: &[Image]) -> Image {
        let height = panels.first().map_or(0, |p| p.height);
        let width = panels.iter().map(|p| p.width).sum();
        let mut out = Image::new(width, height);
        let mut x0 = 0;
        for p in panels {
            assert_eq!(p.height, height);
            for y in 0..height {
                for x in 0..p.width {
                    out.set(x0 + x, y, p.get(x, y));
                }
            }
            x0 += p.width;
        }
        out
    }
}

pub fn linear_to_srgb8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0).powf(1.0 / GAMMA) * 255.0).round() as u8
}

pub fn srgb8_to_linear(b: u8) -> f64 {
    (b as f64 / 255.0).powf(GAMMA)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Mask {
            width,
            height,
            data: vec![false; (width * height) as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.data[(y * self.width + x) as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn union(&self, other: &Mask) -> Mask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect(),
        }
    }
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for p in &img.pixels {
        out.extend(p.iter().map(|&c| linear_to_srgb8(c)));
    }
    out
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let (hdr, data) = parse_header(bytes, b"P6")?;
    if hdr.maxval != 255 {
        return Err(Error::Image(format!("unsupported P6 maxval {}", hdr.maxval)));
    }
    let n = (hdr.width * hdr.height) as usize;
    if data.len() < 3 * n {
        return Err(Error::Image("truncated P6 data".into()));
    }
    let pixels = data[..3 * n]
        .chunks_exact(3)
        .map(|c| Vec3::new(srgb8_to_linear(c[0]), srgb8_to_linear(c[1]), srgb8_to_linear(c[2])))
        .collect();
    Ok(Image {
        width: hdr.width,
        height: hdr.height,
        pixels,
    })
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.data.iter().map(|&b| if b { 255u8 } else { 0 }));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (hdr, data) = parse_header(&bytes, b"P5")?;
    let n = (hdr.width * hdr.height) as usize;
    if hdr.maxval != 255 || data.len() < n {
        return Err(Error::Image(format!("{} is not an 8-bit mask", path.display())));
    }
    Ok(Mask {
        width: hdr.width,
        height: hdr.height,
        data: data[..n].iter().map(|&v| v >= 128).collect(),
    })
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

/// 16-bit P5 scalar map; `value = sample / 65535 * scale`, with `scale` written to `<path>.txt`.
pub fn write_scalar_map(path: &Path, width: u32, height: u32, values: &[f64], scale: f64) -> Result<()> {
    assert_eq!(values.len(), (width * height) as usize);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for v in values {
        let q = ((v / scale).clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    fs::write(&side, format!("scale {scale:.17e}\n")).map_err(|e| Error::io(side, e))
}

pub fn read_scalar_map(path: &Path) -> Result<(u32, u32, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (hdr, data) = parse_header(&bytes, b"P5")?;
    let n = (hdr.width * hdr.height) as usize;
    if hdr.maxval != 65535 || data.len() < 2 * n {
        return Err(Error::Image(format!("{} is not a 16-bit map", path.display())));
    }
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let scale: f64 = text
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Image(format!("bad sidecar {}", side.display())))?;
    let values = data[..2 * n]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0 * scale)
        .collect();
    Ok((hdr.width, hdr.height, values))
}

struct PnmHeader {
    width: u32,
    height: u32,
    maxval: u32,
}

fn parse_header<'a>(bytes: &'a [u8], magic: &[u8; 2]) -> Result<(PnmHeader, &'a [u8])> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::Image(format!(
            "expected {} header",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for f in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Image("malformed PNM header".into()))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::Image("malformed PNM header".into()));
    }
    Ok((
        PnmHeader {
            width: fields[0],
            height: fields[1],
            maxval: fields[2],
        },
        &bytes[pos + 1..],
    ))
}
