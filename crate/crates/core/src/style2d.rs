//! AdaIN statistics transfer, 2D stylization backends, and style latents.
//!
//! The default `stat` extractor is a 3-level Laplacian pyramid. Each level
//! carries the three color bands plus five fixed zero-mean 3×3 filters on the
//! band's luminance (two Sobel, two diagonal, one Laplacian), giving 8 channels
//! per level and 24 overall. Inversion collapses the color bands; the filter
//! channels only feed statistics (latents and the perceptual metric).

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

pub const ADAIN_EPS: f64 = 1e-5;
pub const PYRAMID_LEVELS: usize = 3;
pub const CHANNELS_PER_LEVEL: usize = 8;
pub const FEATURE_CHANNELS: usize = PYRAMID_LEVELS * CHANNELS_PER_LEVEL;
pub const LATENT_DIM: usize = 2 * FEATURE_CHANNELS;

/// `channels × height × width`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, width: usize, height: usize) -> Self {
        Self {
            channels,
            width,
            height,
            data: vec![0.0; channels * width * height],
        }
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Per-channel mean and population standard deviation.
    pub fn channel_stats(&self) -> Vec<(f64, f64)> {
        (0..self.channels).map(|c| mean_std(self.channel(c))).collect()
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Replaces the per-channel mean/std of `content` with those of `style`.
pub fn adain_transfer(content: &FeatureMap, style: &FeatureMap) -> Result<FeatureMap> {
    let stats = style.channel_stats();
    adain_with_stats(content, &stats)
}

/// [`adain_transfer`] against precomputed `(mean, std)` target statistics.
pub fn adain_with_stats(content: &FeatureMap, target: &[(f64, f64)]) -> Result<FeatureMap> {
    if content.channels != target.len() {
        return Err(Error::invalid(format!(
            "AdaIN channel mismatch: content has {}, style has {}",
            content.channels,
            target.len()
        )));
    }
    let mut out = content.clone();
    for (c, &(mu_s, sigma_s)) in target.iter().enumerate() {
        let (mu_c, sigma_c) = mean_std(content.channel(c));
        let gain = sigma_s / (sigma_c + ADAIN_EPS);
        for v in out.channel_mut(c) {
            *v = gain * (*v - mu_c) + mu_s;
        }
    }
    Ok(out)
}

// ---- plane helpers (single-channel, row-major) ----

#[derive(Debug, Clone, PartialEq)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    #[inline]
    fn at(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.v[y * self.w + x]
    }

    /// Separable [1,2,1]/4 with edge duplication; preserves the mean exactly.
    fn blur(&self) -> Plane {
        let mut tmp = vec![0.0; self.v.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                let (xi, yi) = (x as isize, y as isize);
                tmp[y * self.w + x] = 0.25 * self.at(xi - 1, yi) + 0.5 * self.at(xi, yi) + 0.25 * self.at(xi + 1, yi);
            }
        }
        let t = Plane {
            w: self.w,
            h: self.h,
            v: tmp,
        };
        let mut out = vec![0.0; self.v.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                let (xi, yi) = (x as isize, y as isize);
                out[y * self.w + x] = 0.25 * t.at(xi, yi - 1) + 0.5 * t.at(xi, yi) + 0.25 * t.at(xi, yi + 1);
            }
        }
        Plane {
            w: self.w,
            h: self.h,
            v: out,
        }
    }

    /// Blur, then 2×2 box average (partial blocks at odd edges).
    fn down(&self) -> Plane {
        let b = self.blur();
        let (w, h) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let mut v = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                let mut n = 0.0;
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let (sx, sy) = (2 * x + dx, 2 * y + dy);
                    if sx < self.w && sy < self.h {
                        s += b.v[sy * self.w + sx];
                        n += 1.0;
                    }
                }
                v[y * w + x] = s / n;
            }
        }
        Plane { w, h, v }
    }

    /// Pixel replication to `w × h`, then blur.
    fn up(&self, w: usize, h: usize) -> Plane {
        let mut v = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                v[y * w + x] = self.v[(y / 2).min(self.h - 1) * self.w + (x / 2).min(self.w - 1)];
            }
        }
        Plane { w, h, v }.blur()
    }

    fn filter3(&self, k: &[[f64; 3]; 3]) -> Vec<f64> {
        let mut out = vec![0.0; self.v.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                let mut s = 0.0;
                for (j, row) in k.iter().enumerate() {
                    for (i, kv) in row.iter().enumerate() {
                        s += kv * self.at(x as isize + i as isize - 1, y as isize + j as isize - 1);
                    }
                }
                out[y * self.w + x] = s;
            }
        }
        out
    }
}

const FILTER_BANK: [[[f64; 3]; 3]; 5] = [
    [[-0.125, 0.0, 0.125], [-0.25, 0.0, 0.25], [-0.125, 0.0, 0.125]],
    [[-0.125, -0.25, -0.125], [0.0, 0.0, 0.0], [0.125, 0.25, 0.125]],
    [[0.0, 0.125, 0.25], [-0.125, 0.0, 0.125], [-0.25, -0.125, 0.0]],
    [[-0.25, -0.125, 0.0], [-0.125, 0.0, 0.125], [0.0, 0.125, 0.25]],
    [[0.0, 0.25, 0.0], [0.25, -1.0, 0.25], [0.0, 0.25, 0.0]],
];

fn image_planes(img: &ImageBuffer) -> [Plane; 3] {
    std::array::from_fn(|c| Plane {
        w: img.width,
        h: img.height,
        v: img.data.iter().map(|p| p[c]).collect(),
    })
}

/// Laplacian color bands per level; the last level is the low-pass residual.
fn color_bands(img: &ImageBuffer) -> Vec<[Plane; 3]> {
    let mut gauss = vec![image_planes(img)];
    for _ in 1..PYRAMID_LEVELS {
        let next = std::array::from_fn(|c| gauss.last().unwrap()[c].down());
        gauss.push(next);
    }
    let mut bands = Vec::with_capacity(PYRAMID_LEVELS);
    for l in 0..PYRAMID_LEVELS {
        if l + 1 == PYRAMID_LEVELS {
            bands.push(gauss[l].clone());
        } else {
            bands.push(std::array::from_fn(|c| {
                let g = &gauss[l][c];
                let up = gauss[l + 1][c].up(g.w, g.h);
                Plane {
                    w: g.w,
                    h: g.h,
                    v: g.v.iter().zip(&up.v).map(|(a, b)| a - b).collect(),
                }
            }));
        }
    }
    bands
}

fn level_features(bands: &[Plane; 3]) -> FeatureMap {
    let (w, h) = (bands[0].w, bands[0].h);
    let mut fm = FeatureMap::zeros(CHANNELS_PER_LEVEL, w, h);
    for (c, band) in bands.iter().enumerate() {
        fm.channel_mut(c).copy_from_slice(&band.v);
    }
    let luma = Plane {
        w,
        h,
        v: (0..w * h)
            .map(|i| (bands[0].v[i] + bands[1].v[i] + bands[2].v[i]) / 3.0)
            .collect(),
    };
    for (k, filt) in FILTER_BANK.iter().enumerate() {
        fm.channel_mut(3 + k).copy_from_slice(&luma.filter3(filt));
    }
    fm
}

/// Features of the `stat` extractor, finest level first.
pub fn extract_features(img: &ImageBuffer) -> Vec<FeatureMap> {
    color_bands(img).iter().map(level_features).collect()
}

/// Collapses the color-band channels of a feature pyramid back to an image.
pub fn invert_features(levels: &[FeatureMap]) -> Result<ImageBuffer> {
    if levels.len() != PYRAMID_LEVELS || levels.iter().any(|l| l.channels < 3) {
        return Err(Error::invalid("feature pyramid has the wrong shape"));
    }
    let last = &levels[PYRAMID_LEVELS - 1];
    let mut acc: [Plane; 3] = std::array::from_fn(|c| Plane {
        w: last.width,
        h: last.height,
        v: last.channel(c).to_vec(),
    });
    for fm in levels[..PYRAMID_LEVELS - 1].iter().rev() {
        acc = std::array::from_fn(|c| {
            let up = acc[c].up(fm.width, fm.height);
            Plane {
                w: fm.width,
                h: fm.height,
                v: up.v.iter().zip(fm.channel(c)).map(|(a, b)| a + b).collect(),
            }
        });
    }
    let (w, h) = (acc[0].w, acc[0].h);
    Ok(ImageBuffer::from_fn(w, h, |x, y| {
        let i = y * w + x;
        [acc[0].v[i], acc[1].v[i], acc[2].v[i]]
    }))
}

/// Style latent from already-extracted features: per-channel means then stds.
pub fn latent_from_features(levels: &[FeatureMap]) -> Vec<f64> {
    let stats: Vec<(f64, f64)> = levels.iter().flat_map(|l| l.channel_stats()).collect();
    stats.iter().map(|s| s.0).chain(stats.iter().map(|s| s.1)).collect()
}

/// 48-dimensional style code: channel statistics of the `stat` extractor.
pub fn style_latent(style: &ImageBuffer) -> Vec<f64> {
    latent_from_features(&extract_features(style))
}

// ---- neural backend ----

#[derive(Debug, Clone, PartialEq)]
pub enum NeuralLayer {
    /// `out × in × k × k` weights (odd k, same padding), then `out` biases.
    Conv {
        out_ch: usize,
        in_ch: usize,
        k: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
    },
    Relu,
    AvgPool2,
    Upsample2,
    /// Boundary between encoder and decoder.
    AdaIn,
}

const KIND_CONV: u32 = 1;
const KIND_RELU: u32 = 2;
const KIND_POOL: u32 = 3;
const KIND_UPSAMPLE: u32 = 4;
const KIND_ADAIN: u32 = 5;

/// Convolutional encoder → AdaIN → decoder loaded from a weight file.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralStylizer {
    encoder: Vec<NeuralLayer>,
    decoder: Vec<NeuralLayer>,
}

impl NeuralStylizer {
    pub fn new(layers: Vec<NeuralLayer>) -> Result<Self> {
        let split = layers
            .iter()
            .position(|l| *l == NeuralLayer::AdaIn)
            .ok_or_else(|| Error::Config("neural stylizer has no AdaIN layer".into()))?;
        let decoder = layers[split + 1..].to_vec();
        if decoder.contains(&NeuralLayer::AdaIn) {
            return Err(Error::Config("neural stylizer has more than one AdaIN layer".into()));
        }
        let mut encoder = layers;
        encoder.truncate(split);
        let mut ch = 3;
        for l in encoder.iter().chain(&decoder) {
            if let NeuralLayer::Conv {
                out_ch,
                in_ch,
                k,
                weights,
                biases,
            } = l
            {
                if *in_ch != ch || k % 2 == 0 || weights.len() != out_ch * in_ch * k * k || biases.len() != *out_ch {
                    return Err(Error::Config("neural stylizer conv shapes do not chain".into()));
                }
                ch = *out_ch;
            }
        }
        if ch != 3 {
            return Err(Error::Config("neural stylizer must end with 3 channels".into()));
        }
        Ok(Self { encoder, decoder })
    }

    /// Weight file: `u32` layer count, then per layer `u32` kind, `u32` rank,
    /// `rank × u32` shape, and for conv layers `out·in·k·k` weights followed by
    /// `out` biases as f32. All little-endian.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&mut bytes.as_slice())
    }

    pub fn parse<R: Read>(r: &mut R) -> Result<Self> {
        let err = |e: std::io::Error| Error::parse("neural weights", e.to_string());
        let mut b = [0u8; 4];
        let mut word = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut b).map_err(err)?;
            Ok(u32::from_le_bytes(b))
        };
        let n = word(r)?;
        if n > 1024 {
            return Err(Error::parse("neural weights", format!("implausible layer count {n}")));
        }
        let mut layers = Vec::new();
        for i in 0..n {
            let kind = word(r)?;
            let rank = word(r)?;
            if rank > 4 {
                return Err(Error::parse("neural weights", format!("layer {i}: rank {rank}")));
            }
            let mut shape = Vec::new();
            for _ in 0..rank {
                shape.push(word(r)? as usize);
            }
            let layer = match (kind, shape.as_slice()) {
                (KIND_CONV, &[o, c, k, k2]) if k == k2 && o * c * k * k <= 1 << 24 => {
                    let mut weights = Vec::with_capacity(o * c * k * k);
                    for _ in 0..o * c * k * k {
                        weights.push(f32::from_bits(word(r)?) as f64);
                    }
                    let mut biases = Vec::with_capacity(o);
                    for _ in 0..o {
                        biases.push(f32::from_bits(word(r)?) as f64);
                    }
                    NeuralLayer::Conv {
                        out_ch: o,
                        in_ch: c,
                        k,
                        weights,
                        biases,
                    }
                }
                (KIND_RELU, []) => NeuralLayer::Relu,
                (KIND_POOL, []) => NeuralLayer::AvgPool2,
                (KIND_UPSAMPLE, []) => NeuralLayer::Upsample2,
                (KIND_ADAIN, []) => NeuralLayer::AdaIn,
                _ => {
                    return Err(Error::parse(
                        "neural weights",
                        format!("layer {i}: unknown kind {kind} with shape {shape:?}"),
                    ))
                }
            };
            layers.push(layer);
        }
        Self::new(layers)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut put = |v: u32| out.extend_from_slice(&v.to_le_bytes());
        let all: Vec<&NeuralLayer> = self
            .encoder
            .iter()
            .chain(std::iter::once(&NeuralLayer::AdaIn))
            .chain(&self.decoder)
            .collect();
        put(all.len() as u32);
        for l in all {
            match l {
                NeuralLayer::Conv {
                    out_ch,
                    in_ch,
                    k,
                    weights,
                    biases,
                } => {
                    for v in [KIND_CONV, 4, *out_ch as u32, *in_ch as u32, *k as u32, *k as u32] {
                        put(v);
                    }
                    for v in weights.iter().chain(biases) {
                        put((*v as f32).to_bits());
                    }
                }
                NeuralLayer::Relu => [KIND_RELU, 0].into_iter().for_each(&mut put),
                NeuralLayer::AvgPool2 => [KIND_POOL, 0].into_iter().for_each(&mut put),
                NeuralLayer::Upsample2 => [KIND_UPSAMPLE, 0].into_iter().for_each(&mut put),
                NeuralLayer::AdaIn => [KIND_ADAIN, 0].into_iter().for_each(&mut put),
            }
        }
        out
    }

    fn run(layers: &[NeuralLayer], mut fm: FeatureMap) -> FeatureMap {
        for l in layers {
            fm = match l {
                NeuralLayer::Conv {
                    out_ch,
                    in_ch,
                    k,
                    weights,
                    biases,
                } => {
                    let (w, h) = (fm.width, fm.height);
                    let r = (*k / 2) as isize;
                    let mut out = FeatureMap::zeros(*out_ch, w, h);
                    for o in 0..*out_ch {
                        let dst = out.channel_mut(o);
                        dst.fill(biases[o]);
                        for i in 0..*in_ch {
                            let src = fm.channel(i);
                            let kern = &weights[(o * in_ch + i) * k * k..(o * in_ch + i + 1) * k * k];
                            for y in 0..h as isize {
                                for x in 0..w as isize {
                                    let mut s = 0.0;
                                    for ky in -r..=r {
                                        let sy = (y + ky).clamp(0, h as isize - 1) as usize;
                                        for kx in -r..=r {
                                            let sx = (x + kx).clamp(0, w as isize - 1) as usize;
                                            s += kern[((ky + r) as usize) * k + (kx + r) as usize] * src[sy * w + sx];
                                        }
                                    }
                                    dst[y as usize * w + x as usize] += s;
                                }
                            }
                        }
                    }
                    out
                }
                NeuralLayer::Relu => {
                    fm.data.iter_mut().for_each(|v| *v = v.max(0.0));
                    fm
                }
                NeuralLayer::AvgPool2 => {
                    let mut out = FeatureMap::zeros(fm.channels, fm.width.div_ceil(2), fm.height.div_ceil(2));
                    for c in 0..fm.channels {
                        let p = Plane {
                            w: fm.width,
                            h: fm.height,
                            v: fm.channel(c).to_vec(),
                        };
                        let mut s = vec![0.0; out.width * out.height];
                        let mut n = vec![0.0; out.width * out.height];
                        for y in 0..p.h {
                            for x in 0..p.w {
                                let i = (y / 2) * out.width + x / 2;
                                s[i] += p.v[y * p.w + x];
                                n[i] += 1.0;
                            }
                        }
                        for (d, (s, n)) in out.channel_mut(c).iter_mut().zip(s.iter().zip(&n)) {
                            *d = s / n;
                        }
                    }
                    out
                }
                NeuralLayer::Upsample2 => {
                    let mut out = FeatureMap::zeros(fm.channels, fm.width * 2, fm.height * 2);
                    let ow = out.width;
                    for c in 0..fm.channels {
                        let src = fm.channel(c).to_vec();
                        for (i, d) in out.channel_mut(c).iter_mut().enumerate() {
                            let (x, y) = (i % ow, i / ow);
                            *d = src[(y / 2) * fm.width + x / 2];
                        }
                    }
                    out
                }
                NeuralLayer::AdaIn => fm,
            };
        }
        fm
    }

    pub fn stylize(&self, content: &ImageBuffer, style: &ImageBuffer) -> Result<ImageBuffer> {
        let cf = Self::run(&self.encoder, image_to_features(content));
        let sf = Self::run(&self.encoder, image_to_features(style));
        let mixed = adain_transfer(&cf, &sf)?;
        let out = Self::run(&self.decoder, mixed);
        // decoders that change resolution are resampled back to the content size
        let img = ImageBuffer::from_fn(out.width, out.height, |x, y| {
            let i = y * out.width + x;
            [out.channel(0)[i], out.channel(1)[i], out.channel(2)[i]]
        });
        let img = if img.width != content.width || img.height != content.height {
            img.resized(content.width, content.height)
        } else {
            img
        };
        Ok(img.clamped())
    }
}

fn image_to_features(img: &ImageBuffer) -> FeatureMap {
    let mut fm = FeatureMap::zeros(3, img.width, img.height);
    for c in 0..3 {
        for (d, p) in fm.channel_mut(c).iter_mut().zip(&img.data) {
            *d = p[c];
        }
    }
    fm
}

/// Which 2D stylizer produces the guide image.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Backend {
    #[default]
    Stat,
    /// `None` until a weight file has been loaded.
    Neural(Option<Box<NeuralStylizer>>),
}

/// Precomputed style statistics, reusable across content images.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleStats {
    levels: Vec<Vec<(f64, f64)>>,
}

impl StyleStats {
    pub fn of(style: &ImageBuffer) -> Self {
        Self {
            levels: extract_features(style).iter().map(|l| l.channel_stats()).collect(),
        }
    }
}

/// `stat` stylization against precomputed style statistics.
pub fn stylize_with_stats(content: &ImageBuffer, stats: &StyleStats) -> Result<ImageBuffer> {
    let levels = extract_features(content);
    let mixed: Vec<FeatureMap> = levels
        .iter()
        .zip(&stats.levels)
        .map(|(l, s)| adain_with_stats(l, s))
        .collect::<Result<_>>()?;
    Ok(invert_features(&mixed)?.clamped())
}

/// 2D AdaIN stylization of `content` toward `style`, clamped to [0,1].
pub fn stylize2d(content: &ImageBuffer, style: &ImageBuffer, backend: &Backend) -> Result<ImageBuffer> {
    match backend {
        Backend::Stat => stylize_with_stats(content, &StyleStats::of(style)),
        Backend::Neural(Some(net)) => net.stylize(content, style),
        Backend::Neural(None) => Err(Error::Config(
            "neural backend selected but no weights were loaded".into(),
        )),
    }
}
