//! 8-bit and 16-bit RGB rasters, PNG I/O and conversions to and from the
//! normalized `[0, 1]` domain the networks work in.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::config::validate_percentile;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Largest 8-bit code value.
pub const LDR_MAX: u16 = 255;
/// Largest 16-bit code value.
pub const HDR_MAX: u32 = 65535;

/// Integer RGB raster, channel-last. `LdrImage` and `HdrImage` differ only in
/// their value range.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster<P> {
    height: usize,
    width: usize,
    pixels: Vec<P>,
}

pub type LdrImage = Raster<u8>;
pub type HdrImage = Raster<u16>;

impl<P: Copy + Default> Raster<P> {
    pub fn new(height: usize, width: usize, pixels: Vec<P>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("image must be non-empty, got {height}x{width}")));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {height}x{width}x3 image",
                pixels.len()
            )));
        }
        Ok(Raster { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: P) -> Self {
        assert!(height > 0 && width > 0, "image must be non-empty");
        Raster {
            height,
            width,
            pixels: vec![value; height * width * 3],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> P) -> Self {
        assert!(height > 0 && width > 0, "image must be non-empty");
        let mut pixels = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    pixels.push(f(y, x, c));
                }
            }
        }
        Raster { height, width, pixels }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[P] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [P] {
        &mut self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> P {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || y0 + h > self.height || x0 + w > self.width {
            return Err(Error::Argument(format!(
                "crop {h}x{w} at ({y0},{x0}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        let mut pixels = Vec::with_capacity(h * w * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + w * 3]);
        }
        Ok(Raster { height: h, width: w, pixels })
    }

    pub fn same_size<Q>(&self, other: &Raster<Q>) -> bool {
        self.height == other.height && self.width == other.width
    }
}

fn decode(path: &Path, depth: BitDepth) -> Result<(usize, usize, Vec<u8>)> {
    let expected = match depth {
        BitDepth::Sixteen => "16-bit",
        _ => "8-bit",
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(path, format!("not a decodable PNG: {e}")))?;
    let info = reader.info();
    if info.bit_depth != depth {
        return Err(Error::format(
            path,
            format!("expected {expected} RGB, found {}-bit samples", info.bit_depth as u8),
        ));
    }
    if info.color_type != ColorType::Rgb {
        return Err(Error::format(
            path,
            format!("expected {expected} RGB, found color type {:?}", info.color_type),
        ));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let out = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, format!("corrupt PNG data: {e}")))?;
    buf.truncate(out.buffer_size());
    Ok((out.height as usize, out.width as usize, buf))
}

fn encode(path: &Path, height: usize, width: usize, depth: BitDepth, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(ColorType::Rgb);
    encoder.set_depth(depth);
    let to_io = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    };
    let mut writer = encoder.write_header().map_err(to_io)?;
    writer.write_image_data(bytes).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

pub fn load_ldr(path: impl AsRef<Path>) -> Result<LdrImage> {
    let path = path.as_ref();
    let (h, w, bytes) = decode(path, BitDepth::Eight)?;
    Raster::new(h, w, bytes)
}

pub fn save_ldr(img: &LdrImage, path: impl AsRef<Path>) -> Result<()> {
    encode(path.as_ref(), img.height, img.width, BitDepth::Eight, &img.pixels)
}

pub fn load_hdr16(path: impl AsRef<Path>) -> Result<HdrImage> {
    let path = path.as_ref();
    let (h, w, bytes) = decode(path, BitDepth::Sixteen)?;
    // PNG stores 16-bit samples big-endian
    let pixels = bytes
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Raster::new(h, w, pixels)
}

pub fn save_hdr16(img: &HdrImage, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = img.pixels.iter().flat_map(|v| v.to_be_bytes()).collect();
    encode(path.as_ref(), img.height, img.width, BitDepth::Sixteen, &bytes)
}

fn normalize<P: Copy + Into<f64>, T: Scalar>(img: &Raster<P>, max: f64) -> Tensor<T> {
    let data = img
        .pixels
        .iter()
        .map(|&v| T::from_f64_lossy(v.into() / max))
        .collect();
    Tensor::from_vec(img.height, img.width, 3, data).expect("raster shape")
}

pub fn normalize8<T: Scalar>(img: &LdrImage) -> Tensor<T> {
    normalize(img, LDR_MAX as f64)
}

pub fn normalize16<T: Scalar>(img: &HdrImage) -> Tensor<T> {
    normalize(img, HDR_MAX as f64)
}

/// `floor(v + 0.5)` on a clamped, scaled value.
#[inline]
pub fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max + 0.5).floor()
}

fn denormalize<T: Scalar, P>(img: &Tensor<T>, max: f64, cast: impl Fn(f64) -> P) -> Result<Raster<P>> {
    img.ensure_channels(3, "image")?;
    img.ensure_finite("image")?;
    let pixels = img.data().iter().map(|&v| cast(quantize(v.as_f64(), max))).collect();
    Ok(Raster {
        height: img.height(),
        width: img.width(),
        pixels,
    })
}

pub fn denormalize8<T: Scalar>(img: &Tensor<T>) -> Result<LdrImage> {
    denormalize(img, LDR_MAX as f64, |v| v as u8)
}

pub fn denormalize16<T: Scalar>(img: &Tensor<T>) -> Result<HdrImage> {
    denormalize(img, HDR_MAX as f64, |v| v as u16)
}

/// Quantile with linear interpolation between order statistics
/// (`q = 0` gives the minimum, `q = 1` the maximum).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty set");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Quantile of a 16-bit image's values, computed exactly via a histogram.
pub fn hdr_quantile(img: &HdrImage, q: f64) -> f64 {
    let mut hist = vec![0usize; HDR_MAX as usize + 1];
    for &v in &img.pixels {
        hist[v as usize] += 1;
    }
    let n = img.pixels.len();
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    // values at sorted ranks lo and lo + 1
    let mut seen = 0usize;
    let mut at_lo = None;
    for (value, &count) in hist.iter().enumerate() {
        if count == 0 {
            continue;
        }
        seen += count;
        if at_lo.is_none() && seen > lo {
            at_lo = Some(value as f64);
        }
        if at_lo.is_some() && (seen > lo + 1 || lo + 1 >= n) {
            let a = at_lo.unwrap();
            let b = if lo + 1 >= n { a } else { value as f64 };
            return a + (b - a) * frac;
        }
    }
    unreachable!("histogram covers every value")
}

/// Divides by the `percentile` quantile of all channel values, clips to
/// `[0, 1]` and quantizes to 8 bits.
pub fn clip_normalize_ref8(img: &HdrImage, percentile: f64) -> Result<LdrImage> {
    validate_percentile(percentile)?;
    let p = hdr_quantile(img, percentile);
    if p <= 0.0 {
        return Err(Error::Degenerate(format!(
            "the {percentile} quantile of the image is zero; cannot normalize"
        )));
    }
    Ok(clip_normalize_with(img, p))
}

pub(crate) fn clip_normalize_with(img: &HdrImage, p: f64) -> LdrImage {
    let pixels = img
        .pixels
        .iter()
        .map(|&v| quantize(v as f64 / p, LDR_MAX as f64) as u8)
        .collect();
    Raster {
        height: img.height,
        width: img.width,
        pixels,
    }
}

/// Display rendering of a 16-bit image; same procedure as [`clip_normalize_ref8`].
pub fn visualize(img: &HdrImage, percentile: f64) -> Result<LdrImage> {
    clip_normalize_ref8(img, percentile)
}
