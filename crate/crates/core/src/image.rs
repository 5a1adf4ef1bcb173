//! Normalized grayscale images and binary portable graymap (P5) persistence.
//!
//! Pixels are stored as `f64` in `[0, 1]`. The source quantization is kept in
//! [`BitDepth`] so that a 10-bit graymap written back out lands on the same
//! integer codes it was read from.

use std::fs;
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum BitDepth {
    Eight,
    Ten,
}

impl BitDepth {
    pub fn max_value(self) -> u16 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Ten => 1023,
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Ten => 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    bit_depth: BitDepth,
}

impl GrayImage {
    /// Builds an image from row-major pixels. Every pixel must be finite and in `[0, 1]`.
    pub fn new(width: usize, height: usize, pixels: Vec<f64>, bit_depth: BitDepth) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if let Some((i, v)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(Error::InvalidArgument(format!(
                "pixel {i} = {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            bit_depth,
        })
    }

    /// Like [`GrayImage::new`] but clamps into `[0, 1]`; NaN maps to 0.
    pub fn clamped(width: usize, height: usize, pixels: Vec<f64>, bit_depth: BitDepth) -> Result<Self> {
        let pixels = pixels
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self::new(width, height, pixels, bit_depth)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        bit_depth: BitDepth,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self::clamped(width, height, pixels, bit_depth)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::clamped(width, height, vec![value; width * height], BitDepth::Ten)
    }

    /// Min-max normalizes raw values into `[0, 1]`. A flat input maps to all zeros.
    pub fn normalized(width: usize, height: usize, raw: &[f64], bit_depth: BitDepth) -> Result<Self> {
        if let Some(v) = raw.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("raw pixel {v}")));
        }
        let (lo, hi) = min_max(raw);
        let span = hi - lo;
        let pixels = if span > 0.0 {
            raw.iter().map(|v| (v - lo) / span).collect()
        } else {
            vec![0.0; raw.len()]
        };
        Self::clamped(width, height, pixels, bit_depth)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn bit_depth(&self) -> BitDepth {
        self.bit_depth
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    pub fn same_dims(&self, other: &GrayImage) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Integer codes at the image's bit depth, rounded to nearest.
    pub fn quantized(&self) -> Vec<u16> {
        let max = self.bit_depth.max_value() as f64;
        self.pixels.iter().map(|v| (v * max).round() as u16).collect()
    }

    /// Number of distinct gray levels after quantizing to `depth`.
    pub fn distinct_levels(&self, depth: BitDepth) -> usize {
        let max = depth.max_value() as f64;
        let mut codes: Vec<u16> = self.pixels.iter().map(|v| (v * max).round() as u16).collect();
        codes.sort_unstable();
        codes.dedup();
        codes.len()
    }
}

pub(crate) fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Reads a binary graymap with max value 255 or 1023.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|msg| Error::format(path, msg))
}

/// Writes a binary graymap at the image's bit depth, rounding to nearest code.
pub fn write_pgm(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(image)).map_err(|e| Error::io(path, e))
}

pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let max = image.bit_depth.max_value();
    let mut out = format!("P5\n{} {}\n{}\n", image.width, image.height, max).into_bytes();
    let codes = image.quantized();
    match image.bit_depth {
        BitDepth::Eight => out.extend(codes.iter().map(|&c| c as u8)),
        BitDepth::Ten => {
            for c in codes {
                out.extend_from_slice(&c.to_be_bytes());
            }
        }
    }
    out
}

pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos).ok_or("missing magic number")?;
    if magic != "P5" {
        return Err(format!("bad magic number '{magic}', expected 'P5'"));
    }
    let mut field = |name: &str| -> std::result::Result<usize, String> {
        let tok = next_token(bytes, &mut pos).ok_or(format!("missing {name}"))?;
        tok.parse::<usize>()
            .map_err(|_| format!("bad {name} token '{tok}'"))
    };
    let width = field("width")?;
    let height = field("height")?;
    let maxval = field("maxval")?;
    if width == 0 || height == 0 {
        return Err(format!("bad dimensions '{width} {height}'"));
    }
    let depth = match maxval {
        255 => BitDepth::Eight,
        1023 => BitDepth::Ten,
        other => return Err(format!("unsupported maxval token '{other}'")),
    };
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing whitespace after maxval".into());
    }
    pos += 1;
    let n = width * height;
    let bpp = if depth == BitDepth::Eight { 1 } else { 2 };
    let raster = &bytes[pos..];
    if raster.len() != n * bpp {
        return Err(format!(
            "raster has {} bytes, expected {}",
            raster.len(),
            n * bpp
        ));
    }
    let max = maxval as f64;
    let mut pixels = Vec::with_capacity(n);
    for i in 0..n {
        let code = if bpp == 1 {
            raster[i] as u16
        } else {
            u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]])
        };
        if code as usize > maxval {
            return Err(format!("sample {i} = {code} exceeds maxval {maxval}"));
        }
        pixels.push(code as f64 / max);
    }
    GrayImage::new(width, height, pixels, depth).map_err(|e| e.to_string())
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (*pos > start).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_bit_endpoints() {
        let img = decode_pgm(b"P5\n2 1\n255\n\x00\xff").unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0]);
        assert_eq!(img.bit_depth(), BitDepth::Eight);
    }

    #[test]
    fn ten_bit_big_endian() {
        let img = decode_pgm(b"P5\n1 1\n1023\n\x01\xff").unwrap();
        assert_eq!(img.pixels(), &[511.0 / 1023.0]);
        assert_eq!(img.bit_depth(), BitDepth::Ten);
    }

    #[test]
    fn header_comments_are_skipped() {
        let img = decode_pgm(b"P5 # comment\n2 # w\n1\n255\n\x10\x20").unwrap();
        assert_eq!(img.width(), 2);
    }

    #[test]
    fn malformed_headers_name_the_token() {
        let err = decode_pgm(b"P6\n1 1\n255\n\x00").unwrap_err();
        assert!(err.contains("'P6'"), "{err}");
        let err = decode_pgm(b"P5\n1 x\n255\n\x00").unwrap_err();
        assert!(err.contains("'x'"), "{err}");
        let err = decode_pgm(b"P5\n1 1\n4095\n\x00\x00").unwrap_err();
        assert!(err.contains("'4095'"), "{err}");
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00").is_err());
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let bytes = b"P5\n3 2\n1023\n\x00\x00\x03\xff\x01\x00\x02\x22\x00\x07\x01\x01".to_vec();
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(encode_pgm(&img), bytes);
    }

    #[test]
    fn out_of_range_pixels_rejected() {
        assert!(GrayImage::new(1, 1, vec![1.5], BitDepth::Eight).is_err());
        assert!(GrayImage::new(1, 1, vec![f64::NAN], BitDepth::Eight).is_err());
        assert!(GrayImage::new(2, 1, vec![0.5], BitDepth::Eight).is_err());
        let c = GrayImage::clamped(2, 1, vec![-0.2, 1.7], BitDepth::Eight).unwrap();
        assert_eq!(c.pixels(), &[0.0, 1.0]);
    }

    #[test]
    fn normalization_of_flat_input_is_zero() {
        let img = GrayImage::normalized(2, 2, &[3.0; 4], BitDepth::Ten).unwrap();
        assert!(img.pixels().iter().all(|&v| v == 0.0));
        let img = GrayImage::normalized(2, 1, &[2.0, 4.0], BitDepth::Ten).unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0]);
    }

    #[test]
    fn quantization_error_is_at_most_half_a_step() {
        let img = GrayImage::from_fn(17, 3, BitDepth::Eight, |r, c| (r * 17 + c) as f64 / 50.0).unwrap();
        let back = decode_pgm(&encode_pgm(&img)).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
