//! Raster images and binary masks, binary PGM/PPM I/O, and the resampling
//! helpers used around the saliency pipeline.

use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl ImageError {
    fn parse(offset: usize, message: impl Into<String>) -> Self {
        ImageError::Parse {
            offset,
            message: message.into(),
        }
    }
}

/// Row-major 8-bit raster with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<u8>,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::InvalidArgument(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(ImageError::InvalidArgument(format!(
                "pixel buffer has {} samples, expected {}",
                pixels.len(),
                width * height * channels
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self, ImageError> {
        Image::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    /// Sample at (x, y, c). Panics when out of bounds.
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }
}

/// Binary object mask, one byte per pixel holding 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidArgument(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        if bits.len() != width * height {
            return Err(ImageError::InvalidArgument(format!(
                "mask has {} elements, expected {}",
                bits.len(),
                width * height
            )));
        }
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(ImageError::InvalidArgument(format!(
                "mask element {pos} is {}, expected 0 or 1",
                bits[pos]
            )));
        }
        Ok(Mask {
            width,
            height,
            bits,
        })
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            bits: vec![1; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            bits: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn count_zeros(&self) -> usize {
        self.bits.len() - self.count_ones()
    }
}

/// Incremental tokenizer over a netpbm header.
struct HeaderReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.data.len() {
            match self.data[self.pos] {
                b'#' => {
                    while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn next_number(&mut self, what: &str) -> Result<usize, ImageError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.data.len() && self.data[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImageError::parse(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::parse(start, format!("{what} out of range")))
    }
}

/// Decode a binary PGM (P5) or PPM (P6) with maxval 255.
pub fn decode_netpbm(data: &[u8]) -> Result<Image, ImageError> {
    if data.len() < 2 {
        return Err(ImageError::parse(0, "file too short for a magic number"));
    }
    let channels = match &data[..2] {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(ImageError::parse(
                0,
                format!(
                    "unsupported magic number {:?}, expected P5 or P6",
                    String::from_utf8_lossy(other)
                ),
            ))
        }
    };
    let mut header = HeaderReader { data, pos: 2 };
    let width = header.next_number("width")?;
    let height = header.next_number("height")?;
    header.skip_whitespace_and_comments();
    let maxval_offset = header.pos;
    let maxval = header.next_number("maxval")?;
    if maxval != 255 {
        return Err(ImageError::parse(
            maxval_offset,
            format!("maxval {maxval} unsupported, expected 255"),
        ));
    }
    if width == 0 || height == 0 {
        return Err(ImageError::parse(2, "zero image dimension"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if header.pos >= data.len() || !data[header.pos].is_ascii_whitespace() {
        return Err(ImageError::parse(header.pos, "missing whitespace after maxval"));
    }
    let start = header.pos + 1;
    let expected = width * height * channels;
    let available = data.len() - start;
    if available < expected {
        return Err(ImageError::parse(
            data.len(),
            format!("truncated payload: {available} of {expected} bytes"),
        ));
    }
    Image::new(width, height, channels, data[start..start + expected].to_vec())
}

pub fn encode_netpbm(image: &Image) -> Vec<u8> {
    let magic = if image.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.pixels);
    out
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image, ImageError> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_netpbm(&data)
}

pub fn write_image(image: &Image, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    fs::write(path, encode_netpbm(image)).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// BT.601 luma, rounded to nearest. Gray input is returned unchanged.
pub fn to_grayscale(image: &Image) -> Image {
    if image.channels == 1 {
        return image.clone();
    }
    let pixels = image
        .pixels
        .chunks_exact(3)
        .map(|rgb| {
            let luma = 0.299 * f64::from(rgb[0]) + 0.587 * f64::from(rgb[1]) + 0.114 * f64::from(rgb[2]);
            (luma + 0.5).floor().min(255.0) as u8
        })
        .collect();
    Image {
        width: image.width,
        height: image.height,
        channels: 1,
        pixels,
    }
}

/// Source sample positions and weights for one output axis under
/// half-pixel-centered mapping with edge clamping.
fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear resize of a single-channel image. Output samples are rounded
/// half-up.
pub fn resize_bilinear(image: &Image, out_w: usize, out_h: usize) -> Result<Image, ImageError> {
    if out_w == 0 || out_h == 0 {
        return Err(ImageError::InvalidArgument(format!(
            "target size must be positive, got {out_w}x{out_h}"
        )));
    }
    if image.channels != 1 {
        return Err(ImageError::InvalidArgument(
            "resize_bilinear expects a single-channel image".into(),
        ));
    }
    let xs = bilinear_taps(image.width, out_w);
    let ys = bilinear_taps(image.height, out_h);
    let src = |x: usize, y: usize| f64::from(image.pixels[y * image.width + x]);
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src(x0, y0) * (1.0 - fx) + src(x1, y0) * fx;
            let bottom = src(x0, y1) * (1.0 - fx) + src(x1, y1) * fx;
            let v = top * (1.0 - fy) + bottom * fy;
            pixels.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(Image {
        width: out_w,
        height: out_h,
        channels: 1,
        pixels,
    })
}

/// Nearest-neighbour mask upsampling:
/// `out(x, y) = mask(floor(x * w / out_w), floor(y * h / out_h))`.
pub fn upsample_mask_nearest(mask: &Mask, out_w: usize, out_h: usize) -> Result<Mask, ImageError> {
    if out_w < mask.width || out_h < mask.height {
        return Err(ImageError::InvalidArgument(format!(
            "cannot upsample {}x{} mask to smaller size {out_w}x{out_h}",
            mask.width, mask.height
        )));
    }
    let cols: Vec<usize> = (0..out_w).map(|x| x * mask.width / out_w).collect();
    let mut bits = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let row = &mask.bits[(y * mask.height / out_h) * mask.width..][..mask.width];
        bits.extend(cols.iter().map(|&c| row[c]));
    }
    Ok(Mask {
        width: out_w,
        height: out_h,
        bits,
    })
}
