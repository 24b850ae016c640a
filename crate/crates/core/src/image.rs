//! Dense float rasters and their on-disk forms.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB image with linear values (nominally in `[0, 1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

/// Row-major single-channel raster (alpha, depth).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ScalarImage {
    pub fn new(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, fill: [f64; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    pub fn same_size(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn clamped(mut self) -> Self {
        for p in &mut self.data {
            for v in p.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
        }
        self
    }

    /// Per-channel means.
    pub fn channel_means(&self) -> [f64; 3] {
        let mut m = [0.0; 3];
        for p in &self.data {
            for k in 0..3 {
                m[k] += p[k];
            }
        }
        let n = self.data.len().max(1) as f64;
        m.map(|v| v / n)
    }

    /// Linear `[0,1]` to 8-bit by `round(v·255)` after clamping.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 3);
        for p in &self.data {
            for v in p {
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 3 {
            return Err(Error::invalid("rgb8 buffer size mismatch"));
        }
        let data = bytes
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]].map(|v| v as f64 / 255.0))
            .collect();
        Ok(Self { width, height, data })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .ok_or_else(|| Error::invalid("image buffer size mismatch"))?;
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// The same bytes [`ImageBuffer::save_png`] writes, in memory.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .ok_or_else(|| Error::invalid("image buffer size mismatch"))?;
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    /// Loads any PNG/JPEG as RGB in `[0, 1]`.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        Self::from_rgb8(img.width() as usize, img.height() as usize, img.as_raw())
    }

    /// Bilinear resample to a new size (pixel-center aligned).
    pub fn resized(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Self::from_fn(width, height, |x, y| {
            let u = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
            let v = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let (x0, y0) = (u.floor() as usize, v.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
            let (fx, fy) = (u - x0 as f64, v - y0 as f64);
            let mut out = [0.0; 3];
            for k in 0..3 {
                let top = self.get(x0, y0)[k] * (1.0 - fx) + self.get(x1, y0)[k] * fx;
                let bot = self.get(x0, y1)[k] * (1.0 - fx) + self.get(x1, y1)[k] * fx;
                out[k] = top * (1.0 - fy) + bot * fy;
            }
            out
        })
    }
}

/// Raw float32 fixture: `width: u32, height: u32` (LE) then row-major
/// float32 LE samples. Channel count is implied by the payload length.
pub fn write_raw<W: Write>(w: &mut W, width: usize, height: usize, samples: &[f64]) -> std::io::Result<()> {
    w.write_all(&(width as u32).to_le_bytes())?;
    w.write_all(&(height as u32).to_le_bytes())?;
    for v in samples {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Returns `(width, height, channels, samples)`.
pub fn read_raw<R: Read>(r: &mut R) -> Result<(usize, usize, usize, Vec<f64>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::parse("raw image", e.to_string()))?;
    if bytes.len() < 8 {
        return Err(Error::parse("raw image", "missing 8-byte header"));
    }
    let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let payload = &bytes[8..];
    let pixels = width * height;
    if pixels == 0 || payload.len() % (4 * pixels) != 0 {
        return Err(Error::parse("raw image", "payload does not match header size"));
    }
    let channels = payload.len() / (4 * pixels);
    let samples = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((width, height, channels, samples))
}

pub fn save_raw_rgb(image: &ImageBuffer, path: &Path) -> Result<()> {
    let flat: Vec<f64> = image.data.iter().flatten().copied().collect();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_raw(&mut f, image.width, image.height, &flat).map_err(|e| Error::io(path, e))
}

pub fn save_raw_scalar(image: &ScalarImage, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_raw(&mut f, image.width, image.height, &image.data).map_err(|e| Error::io(path, e))
}

pub fn load_raw_rgb(path: &Path) -> Result<ImageBuffer> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let (width, height, channels, s) = read_raw(&mut f)?;
    if channels != 3 {
        return Err(Error::parse(
            "raw image",
            format!("expected 3 channels, got {channels}"),
        ));
    }
    let data = s.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Ok(ImageBuffer { width, height, data })
}

pub fn load_raw_scalar(path: &Path) -> Result<ScalarImage> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let (width, height, channels, data) = read_raw(&mut f)?;
    if channels != 1 {
        return Err(Error::parse("raw image", format!("expected 1 channel, got {channels}")));
    }
    Ok(ScalarImage { width, height, data })
}
