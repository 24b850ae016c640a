//! Immutable model snapshot shared by every session.

use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use base64::Engine;
use lru::LruCache;
use serde::Serialize;
use splatstyle_core::stylefield::blend_latents;
use splatstyle_core::{normalize_weights, render, Error, GaussianCloud, RenderOptions, Result, StyleField, StyleSet};

use crate::protocol::{Frame, RenderRequest};

/// Styles at the corners of the interpolation pad.
pub const STYLE_SLOTS: usize = 4;
pub const COLOR_CACHE_SIZE: usize = 16;
pub const THUMBNAIL_SIDE: usize = 96;

struct StyleSlot {
    name: String,
    latent: Vec<f64>,
    thumbnail_png: Vec<u8>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StyleInfo {
    pub name: String,
    /// Base64-encoded PNG.
    pub thumbnail: String,
}

/// Body of `GET /info`.
#[derive(Debug, Clone, Serialize)]
pub struct ModelInfo {
    pub n_gaussians: usize,
    pub styles: Vec<StyleInfo>,
    pub max_resolution: [u32; 2],
    pub background: [f64; 3],
}

type CacheKey = [u64; STYLE_SLOTS];

/// Cloud, color field and the four corner latents. Nothing here changes
/// after construction except the color cache.
pub struct ModelSnapshot {
    cloud: GaussianCloud,
    field: StyleField,
    background: [f64; 3],
    styles: Vec<StyleSlot>,
    cache: Mutex<LruCache<CacheKey, Arc<Vec<[f64; 3]>>>>,
}

impl ModelSnapshot {
    /// Uses the first four styles of `styles`.
    pub fn new(cloud: GaussianCloud, field: StyleField, background: [f64; 3], styles: &StyleSet) -> Result<Self> {
        if styles.len() < STYLE_SLOTS {
            return Err(Error::Config(format!(
                "the service needs {STYLE_SLOTS} style images, got {}",
                styles.len()
            )));
        }
        cloud.validate()?;
        let slots = (0..STYLE_SLOTS)
            .map(|i| {
                let img = &styles.images[i];
                let s = THUMBNAIL_SIDE as f64 / img.width.max(img.height) as f64;
                let thumb = img.resized(
                    ((img.width as f64 * s).round() as usize).max(1),
                    ((img.height as f64 * s).round() as usize).max(1),
                );
                Ok(StyleSlot {
                    name: styles.names[i].clone(),
                    latent: styles.latents[i].clone(),
                    thumbnail_png: thumb.encode_png()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cloud,
            field,
            background,
            styles: slots,
            cache: Mutex::new(LruCache::new(NonZeroUsize::new(COLOR_CACHE_SIZE).unwrap())),
        })
    }

    pub fn n_gaussians(&self) -> usize {
        self.cloud.len()
    }

    pub fn info(&self) -> ModelInfo {
        let b64 = base64::engine::general_purpose::STANDARD;
        ModelInfo {
            n_gaussians: self.cloud.len(),
            styles: self
                .styles
                .iter()
                .map(|s| StyleInfo {
                    name: s.name.clone(),
                    thumbnail: b64.encode(&s.thumbnail_png),
                })
                .collect(),
            max_resolution: [crate::protocol::MAX_WIDTH, crate::protocol::MAX_HEIGHT],
            background: self.background,
        }
    }

    /// Number of weight vectors whose colors are cached.
    pub fn cached_entries(&self) -> usize {
        self.cache.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    /// Per-Gaussian colors for a blend of the corner styles, cached per
    /// distinct (renormalized) weight vector.
    pub fn colors_for(&self, weights: &[f64; STYLE_SLOTS]) -> Result<Arc<Vec<[f64; 3]>>> {
        let w = normalize_weights(weights)?;
        let key: CacheKey = std::array::from_fn(|i| w[i].to_bits());
        if let Some(hit) = self.cache.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return Ok(hit.clone());
        }
        let latents: Vec<Vec<f64>> = self.styles.iter().map(|s| s.latent.clone()).collect();
        let latent = blend_latents(&latents, &w)?;
        let colors = Arc::new(self.field.predict_colors(&self.cloud.means, &latent)?);
        self.cache
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .put(key, colors.clone());
        Ok(colors)
    }

    /// Renders one request. `render_us` covers color lookup, rasterization
    /// and the RGB8 conversion.
    pub fn render_frame(&self, req: &RenderRequest) -> Result<Frame> {
        let start = Instant::now();
        let colors = self.colors_for(&req.weights)?;
        let out = render(
            &self.cloud,
            &req.camera,
            Some(&colors),
            self.background,
            RenderOptions::default(),
        )?;
        let rgb = out.color.to_rgb8();
        Ok(Frame {
            frame_id: req.frame_id,
            width: req.camera.width,
            height: req.camera.height,
            rgb,
            render_us: start.elapsed().as_micros() as u64,
        })
    }
}
