//! RGB float images and binary PPM (`P6`, plus `P5` greyscale on read).

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB image, channel values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&fill);
        }
        Image { width, height, data }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape(format!("{} values for a {width}x{height} RGB image", data.len())));
        }
        Ok(Image { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let o = (y * self.width + x) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// Fills the clipped rectangle `[x0, x1) × [y0, y1)`.
    pub fn fill_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, rgb: [f32; 3]) {
        for y in y0.min(self.height)..y1.min(self.height) {
            for x in x0.min(self.width)..x1.min(self.width) {
                self.set_pixel(x, y, rgb);
            }
        }
    }

    /// Luma with Rec. 601 weights.
    pub fn to_gray(&self) -> Vec<f32> {
        self.data.chunks_exact(3).map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).collect()
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.encode_ppm())?;
        f.flush()?;
        Ok(())
    }
}

/// Concatenated PPM images, as written by [`encode_ppm_sequence`].
pub fn encode_ppm_sequence(images: &[Image]) -> Vec<u8> {
    images.iter().flat_map(|im| im.encode_ppm()).collect()
}

/// Decodes exactly one image; trailing bytes are an error.
pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let (img, used) = decode_one(bytes)?;
    if used != bytes.len() {
        return Err(Error::format("ppm", "trailing bytes after image"));
    }
    Ok(img)
}

/// Decodes one or more concatenated images.
pub fn decode_ppm_sequence(bytes: &[u8]) -> Result<Vec<Image>> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        if bytes[pos..].iter().all(|b| b.is_ascii_whitespace()) {
            break;
        }
        let (img, used) = decode_one(&bytes[pos..])?;
        out.push(img);
        pos += used;
    }
    if out.is_empty() {
        return Err(Error::format("ppm", "no image"));
    }
    Ok(out)
}

pub fn read_ppm_sequence(path: impl AsRef<Path>) -> Result<Vec<Image>> {
    decode_ppm_sequence(&std::fs::read(path)?)
}

const MAX_PIXELS: usize = 1 << 26;

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos || self.pos - start > 9 {
            return Err(Error::format("ppm", format!("bad {what}")));
        }
        let s = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        Ok(s.parse().expect("at most nine digits"))
    }
}

fn decode_one(bytes: &[u8]) -> Result<(Image, usize)> {
    let gray = match bytes.get(..2) {
        Some(b"P6") => false,
        Some(b"P5") => true,
        _ => return Err(Error::format("ppm", "expected P6 or P5 magic")),
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 || width.saturating_mul(height) > MAX_PIXELS {
        return Err(Error::format("ppm", format!("unsupported size {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format("ppm", format!("maxval {maxval}")));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(Error::format("ppm", "missing separator before raster")),
    }
    let channels = if gray { 1 } else { 3 };
    let sample_bytes = if maxval > 255 { 2 } else { 1 };
    let len = width * height * channels * sample_bytes;
    let raster = bytes
        .get(h.pos..h.pos + len)
        .ok_or_else(|| Error::format("ppm", "truncated raster"))?;
    let scale = 1.0 / maxval as f32;
    let samples: Vec<f32> = if sample_bytes == 1 {
        raster.iter().map(|&b| b as usize).map(|v| v.min(maxval) as f32 * scale).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as usize)
            .map(|v| v.min(maxval) as f32 * scale)
            .collect()
    };
    let data = if gray { samples.iter().flat_map(|&v| [v, v, v]).collect() } else { samples };
    Ok((Image { width, height, data }, h.pos + len))
}
