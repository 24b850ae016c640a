//! Tile-based forward splatting and the color backward pass.
//!
//! Compositing follows the reference 3DGS rasterizer: splats are depth
//! sorted (ties by index), each pixel blends front to back with
//! `αᵢ = min(0.99, oᵢ·exp(-½ dᵀΣ⁻¹d))`, contributions below 1/255 are
//! skipped, and a pixel stops before its transmittance would drop below 1e-4.

mod project;

pub use project::{project_splat, Splat2D};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{ImageBuffer, ScalarImage};
use crate::scene::{Camera, GaussianCloud};

pub const TILE_SIZE: usize = 16;
pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
pub const LOW_PASS: f64 = 0.3;
pub const NEAR_PLANE: f64 = 0.01;

#[derive(Debug, Clone, Copy, Default)]
pub struct RenderOptions {
    /// Keep per-pixel compositing weights for the backward pass and recoloring.
    pub record_contributions: bool,
}

impl RenderOptions {
    pub fn with_contributions() -> Self {
        Self {
            record_contributions: true,
        }
    }
}

/// Per-pixel compositing weights of the forward pass.
#[derive(Debug, Clone)]
pub struct Contributions {
    n_gaussians: usize,
    /// `(start, len)` into `records` for every pixel.
    spans: Vec<(u32, u32)>,
    records: Vec<(u32, f64)>,
    final_transmittance: Vec<f64>,
}

impl Contributions {
    pub fn pixel(&self, index: usize) -> &[(u32, f64)] {
        let (s, l) = self.spans[index];
        &self.records[s as usize..(s + l) as usize]
    }

    pub fn final_transmittance(&self) -> &[f64] {
        &self.final_transmittance
    }

    pub fn n_gaussians(&self) -> usize {
        self.n_gaussians
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: ImageBuffer,
    pub alpha: ScalarImage,
    pub depth: ScalarImage,
    pub background: [f64; 3],
    pub contributions: Option<Contributions>,
}

impl RenderOutput {
    /// Re-composites the cached weights with new per-Gaussian colors.
    ///
    /// Geometry and opacity are fixed by the forward pass, so the result is
    /// bit-identical to a fresh [`render`] with `colors` as override.
    pub fn recolor(&self, colors: &[[f64; 3]]) -> Result<ImageBuffer> {
        let contrib = self
            .contributions
            .as_ref()
            .ok_or_else(|| Error::State("render output has no contribution records".into()))?;
        if colors.len() != contrib.n_gaussians {
            return Err(Error::invalid(format!(
                "expected {} colors, got {}",
                contrib.n_gaussians,
                colors.len()
            )));
        }
        let bg = self.background;
        let data = (0..contrib.spans.len())
            .into_par_iter()
            .with_min_len(256)
            .map(|p| {
                let mut c = [0.0; 3];
                for &(g, w) in contrib.pixel(p) {
                    let col = colors[g as usize];
                    for k in 0..3 {
                        c[k] += col[k] * w;
                    }
                }
                let t = contrib.final_transmittance[p];
                [c[0] + t * bg[0], c[1] + t * bg[1], c[2] + t * bg[2]]
            })
            .collect();
        Ok(ImageBuffer {
            width: self.color.width,
            height: self.color.height,
            data,
        })
    }
}

struct TileResult {
    color: Vec<[f64; 3]>,
    alpha: Vec<f64>,
    depth: Vec<f64>,
    transmittance: Vec<f64>,
    counts: Vec<u32>,
    records: Vec<(u32, f64)>,
}

/// Projects every Gaussian, sorts by `(depth, index)` and bins into tiles.
fn bin_splats(cloud: &GaussianCloud, camera: &Camera) -> (Vec<Splat2D>, Vec<Vec<u32>>, usize) {
    let mut splats: Vec<Splat2D> = (0..cloud.len())
        .into_par_iter()
        .with_min_len(1024)
        .filter_map(|i| project_splat(cloud, i, camera))
        .collect();
    splats.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then(a.gaussian_index.cmp(&b.gaussian_index))
    });
    let (w, h) = (camera.width as usize, camera.height as usize);
    let tiles_x = w.div_ceil(TILE_SIZE);
    let tiles_y = h.div_ceil(TILE_SIZE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for (si, s) in splats.iter().enumerate() {
        let [x0, y0, x1, y1] = s.pixel_bounds(w, h);
        if x0 >= x1 || y0 >= y1 {
            continue;
        }
        let (tx0, tx1) = (x0 / TILE_SIZE, (x1 - 1) / TILE_SIZE);
        let (ty0, ty1) = (y0 / TILE_SIZE, (y1 - 1) / TILE_SIZE);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tiles[ty * tiles_x + tx].push(si as u32);
            }
        }
    }
    (splats, tiles, tiles_x)
}

/// Tile-local copy of the fields the blend loop reads.
#[derive(Clone, Copy)]
struct PackedSplat {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    /// Powers below this give alpha < 1/255 for sure, so `exp` is skipped.
    min_power: f64,
    depth: f64,
    color: [f64; 3],
    index: u32,
}

impl PackedSplat {
    fn new(s: &Splat2D, color: [f64; 3]) -> Self {
        Self {
            mean: s.mean2d,
            conic: s.conic,
            opacity: s.opacity,
            min_power: (ALPHA_MIN / s.opacity).ln() - 1e-9,
            depth: s.depth,
            color,
            index: s.gaussian_index as u32,
        }
    }

    #[inline(always)]
    fn alpha_at(&self, u: f64, v: f64) -> Option<f64> {
        let dx = u - self.mean[0];
        let dy = v - self.mean[1];
        let power = -0.5 * (self.conic[0] * dx * dx + self.conic[2] * dy * dy) - self.conic[1] * dx * dy;
        if power > 0.0 || power < self.min_power {
            return None;
        }
        let alpha = (self.opacity * power.exp()).min(ALPHA_MAX);
        (alpha >= ALPHA_MIN).then_some(alpha)
    }
}

fn render_tile(
    splats: &[Splat2D],
    list: &[u32],
    colors: &[[f64; 3]],
    x_range: (usize, usize),
    y_range: (usize, usize),
    record: bool,
) -> TileResult {
    let npix = (x_range.1 - x_range.0) * (y_range.1 - y_range.0);
    let packed: Vec<PackedSplat> = list
        .iter()
        .map(|&si| {
            let s = &splats[si as usize];
            PackedSplat::new(s, colors[s.gaussian_index])
        })
        .collect();
    let mut out = TileResult {
        color: Vec::with_capacity(npix),
        alpha: Vec::with_capacity(npix),
        depth: Vec::with_capacity(npix),
        transmittance: Vec::with_capacity(npix),
        counts: Vec::with_capacity(if record { npix } else { 0 }),
        records: Vec::new(),
    };
    for py in y_range.0..y_range.1 {
        for px in x_range.0..x_range.1 {
            let (u, v) = (px as f64 + 0.5, py as f64 + 0.5);
            let mut t = 1.0;
            let mut c = [0.0; 3];
            let mut zsum = 0.0;
            let mut wsum = 0.0;
            let mut count = 0u32;
            for s in &packed {
                let Some(alpha) = s.alpha_at(u, v) else {
                    continue;
                };
                let next_t = t * (1.0 - alpha);
                if next_t < TRANSMITTANCE_MIN {
                    break;
                }
                let w = alpha * t;
                for k in 0..3 {
                    c[k] += s.color[k] * w;
                }
                zsum += s.depth * w;
                wsum += w;
                if record {
                    out.records.push((s.index, w));
                    count += 1;
                }
                t = next_t;
            }
            out.color.push(c);
            out.alpha.push(1.0 - t);
            out.depth.push(if wsum > 0.0 { zsum / wsum } else { 0.0 });
            out.transmittance.push(t);
            if record {
                out.counts.push(count);
            }
        }
    }
    out
}

/// Renders `cloud` from `camera`. `color_override` replaces the base colors.
pub fn render(
    cloud: &GaussianCloud,
    camera: &Camera,
    color_override: Option<&[[f64; 3]]>,
    background: [f64; 3],
    options: RenderOptions,
) -> Result<RenderOutput> {
    let colors = match color_override {
        Some(c) if c.len() != cloud.len() => {
            return Err(Error::invalid(format!(
                "color override has {} entries for {} gaussians",
                c.len(),
                cloud.len()
            )))
        }
        Some(c) => c,
        None => &cloud.base_colors,
    };
    let (w, h) = (camera.width as usize, camera.height as usize);
    let (splats, tiles, tiles_x) = bin_splats(cloud, camera);
    let record = options.record_contributions;

    let results: Vec<TileResult> = tiles
        .par_iter()
        .enumerate()
        .map(|(ti, list)| {
            let (tx, ty) = (ti % tiles_x, ti / tiles_x);
            let xr = (tx * TILE_SIZE, ((tx + 1) * TILE_SIZE).min(w));
            let yr = (ty * TILE_SIZE, ((ty + 1) * TILE_SIZE).min(h));
            render_tile(&splats, list, colors, xr, yr, record)
        })
        .collect();

    let mut color = ImageBuffer::new(w, h, [0.0; 3]);
    let mut alpha = ScalarImage::new(w, h, 0.0);
    let mut depth = ScalarImage::new(w, h, 0.0);
    let mut final_t = vec![1.0; w * h];
    let mut spans = if record { vec![(0u32, 0u32); w * h] } else { Vec::new() };
    let mut records = Vec::new();
    if record {
        records.reserve(results.iter().map(|r| r.records.len()).sum());
    }
    for (ti, r) in results.into_iter().enumerate() {
        let (tx, ty) = (ti % tiles_x, ti / tiles_x);
        let (x0, x1) = (tx * TILE_SIZE, ((tx + 1) * TILE_SIZE).min(w));
        let (y0, y1) = (ty * TILE_SIZE, ((ty + 1) * TILE_SIZE).min(h));
        let base = records.len() as u32;
        let mut cursor = base;
        let mut k = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let p = y * w + x;
                let t = r.transmittance[k];
                let c = r.color[k];
                color.data[p] = [
                    c[0] + t * background[0],
                    c[1] + t * background[1],
                    c[2] + t * background[2],
                ];
                alpha.data[p] = r.alpha[k];
                depth.data[p] = r.depth[k];
                final_t[p] = t;
                if record {
                    spans[p] = (cursor, r.counts[k]);
                    cursor += r.counts[k];
                }
                k += 1;
            }
        }
        records.extend_from_slice(&r.records);
    }
    let contributions = record.then(|| Contributions {
        n_gaussians: cloud.len(),
        spans,
        records,
        final_transmittance: final_t,
    });
    Ok(RenderOutput {
        color,
        alpha,
        depth,
        background,
        contributions,
    })
}

/// Number of fixed pixel bands the backward pass reduces over.
const BACKWARD_BANDS: usize = 8;

/// `dL/dcᵢ = Σ_p wᵢ(p)·dL/dC(p)` from the cached compositing weights.
///
/// Bands are reduced in a fixed order, so the result does not depend on the
/// number of worker threads.
pub fn render_backward_colors(output: &RenderOutput, dl_dimage: &ImageBuffer) -> Result<Vec<[f64; 3]>> {
    let contrib = output
        .contributions
        .as_ref()
        .ok_or_else(|| Error::State("render output has no contribution records".into()))?;
    if !dl_dimage.same_size(&output.color) {
        return Err(Error::invalid("gradient image size differs from render"));
    }
    let n = contrib.n_gaussians;
    let npix = contrib.spans.len();
    let band = npix.div_ceil(BACKWARD_BANDS).max(1);
    let partials: Vec<Vec<[f64; 3]>> = (0..BACKWARD_BANDS)
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![[0.0; 3]; n];
            for p in (b * band).min(npix)..((b + 1) * band).min(npix) {
                let g = dl_dimage.data[p];
                if g == [0.0; 3] {
                    continue;
                }
                for &(i, w) in contrib.pixel(p) {
                    let a = &mut acc[i as usize];
                    for k in 0..3 {
                        a[k] += w * g[k];
                    }
                }
            }
            acc
        })
        .collect();
    let mut grad = vec![[0.0; 3]; n];
    for part in partials {
        for (g, p) in grad.iter_mut().zip(part) {
            for k in 0..3 {
                g[k] += p[k];
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests;
