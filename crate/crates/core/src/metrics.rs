//! Multi-view consistency: exact geometric flow, occlusion-masked warping,
//! warped RMSE and a warped pyramid-feature distance.
//!
//! Flow is defined on the pixel grid of the view being scored (`target`) and
//! points into the view that gets warped onto it (`source`), so warping is a
//! backward bilinear lookup.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{ImageBuffer, ScalarImage};
use crate::scene::Camera;
use crate::style2d::{extract_features, FeatureMap};

pub const OCCLUSION_TOLERANCE: f64 = 0.02;
pub const ALPHA_VALID: f64 = 0.5;

/// Camera plus the depth and alpha rendered from it.
#[derive(Debug, Clone)]
pub struct ViewGeometry {
    pub camera: Camera,
    pub depth: ScalarImage,
    pub alpha: ScalarImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    /// Displacement in pixels from a target pixel to its source location.
    pub flow: Vec<[f64; 2]>,
    pub valid: Vec<bool>,
    /// Source pixels that may be sampled (alpha ≥ 0.5 in the source view).
    pub source_valid: Vec<bool>,
    pub source_width: usize,
    pub source_height: usize,
}

impl FlowField {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Zero flow with the given mask, sampling from an equally sized source.
    pub fn identity(width: usize, height: usize, valid: Vec<bool>) -> Self {
        Self {
            width,
            height,
            flow: vec![[0.0; 2]; width * height],
            source_valid: vec![true; width * height],
            valid,
            source_width: width,
            source_height: height,
        }
    }
}

/// Flow from `target` pixels into `source`, with occlusion masking.
///
/// A target pixel is valid when its alpha is ≥ 0.5, its surface point lands
/// inside the source frame on a source pixel with alpha ≥ 0.5, and the depth
/// the source rendered there agrees with the point's source depth within 2%.
pub fn exact_flow(target: &ViewGeometry, source: &ViewGeometry) -> FlowField {
    let (w, h) = (target.depth.width, target.depth.height);
    let (sw, sh) = (source.depth.width, source.depth.height);
    let source_valid: Vec<bool> = source.alpha.data.iter().map(|a| *a >= ALPHA_VALID).collect();
    let rows: Vec<(Vec<[f64; 2]>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut flow = vec![[0.0; 2]; w];
            let mut valid = vec![false; w];
            for x in 0..w {
                let i = y * w + x;
                let d = target.depth.data[i];
                if target.alpha.data[i] < ALPHA_VALID || d <= 0.0 {
                    continue;
                }
                let world = target
                    .camera
                    .to_world(target.camera.unproject([x as f64 + 0.5, y as f64 + 0.5], d));
                let pc = source.camera.to_camera(world);
                if pc[2] <= 1e-9 {
                    continue;
                }
                let (uv, z) = (source.camera.project(pc), pc[2]);
                let (sx, sy) = (uv[0] - 0.5, uv[1] - 0.5);
                flow[x] = [sx - x as f64, sy - y as f64];
                if sx < 0.0 || sy < 0.0 || sx > (sw - 1) as f64 || sy > (sh - 1) as f64 {
                    continue;
                }
                let (nx, ny) = (sx.round() as usize, sy.round() as usize);
                let si = ny * sw + nx;
                if !source_valid[si] {
                    continue;
                }
                let sd = source.depth.data[si];
                valid[x] = (sd - z).abs() <= OCCLUSION_TOLERANCE * z;
            }
            (flow, valid)
        })
        .collect();
    let mut flow = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for (f, v) in rows {
        flow.extend(f);
        valid.extend(v);
    }
    FlowField {
        width: w,
        height: h,
        flow,
        valid,
        source_valid,
        source_width: sw,
        source_height: sh,
    }
}

/// Backward-warps `image` (a source-view image) onto the target grid.
/// Returns the warped image and the propagated validity mask.
pub fn warp_image(image: &ImageBuffer, flow: &FlowField) -> Result<(ImageBuffer, Vec<bool>)> {
    if image.width != flow.source_width || image.height != flow.source_height {
        return Err(Error::invalid("image size differs from the flow's source view"));
    }
    let (sw, sh) = (image.width, image.height);
    let mut out = ImageBuffer::new(flow.width, flow.height, [0.0; 3]);
    let mut mask = vec![false; flow.width * flow.height];
    for y in 0..flow.height {
        for x in 0..flow.width {
            let i = y * flow.width + x;
            if !flow.valid[i] {
                continue;
            }
            let (sx, sy) = (x as f64 + flow.flow[i][0], y as f64 + flow.flow[i][1]);
            if sx < 0.0 || sy < 0.0 || sx > (sw - 1) as f64 || sy > (sh - 1) as f64 {
                continue;
            }
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            let mut acc = [0.0; 3];
            let mut ok = true;
            for (dx, dy, wgt) in [
                (0, 0, (1.0 - fx) * (1.0 - fy)),
                (1, 0, fx * (1.0 - fy)),
                (0, 1, (1.0 - fx) * fy),
                (1, 1, fx * fy),
            ] {
                if wgt == 0.0 {
                    continue;
                }
                let (px, py) = (x0 + dx, y0 + dy);
                if px >= sw || py >= sh || !flow.source_valid[py * sw + px] {
                    ok = false;
                    break;
                }
                let p = image.data[py * sw + px];
                for c in 0..3 {
                    acc[c] += wgt * p[c];
                }
            }
            if ok {
                out.data[i] = acc;
                mask[i] = true;
            }
        }
    }
    Ok((out, mask))
}

/// Root-mean-square color difference over `mask`.
pub fn masked_rmse(a: &ImageBuffer, b: &ImageBuffer, mask: &[bool]) -> Result<f64> {
    if !a.same_size(b) || mask.len() != a.data.len() {
        return Err(Error::invalid("masked RMSE inputs differ in size"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((p, q), m) in a.data.iter().zip(&b.data).zip(mask) {
        if *m {
            sum += (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>();
            n += 3;
        }
    }
    if n == 0 {
        return Err(Error::Evaluation("no valid pixels to compare".into()));
    }
    Ok((sum / n as f64).sqrt())
}

/// `RMSE(O_v, M_v(W(O_v′)))`.
pub fn warped_rmse(target: &ImageBuffer, source: &ImageBuffer, flow: &FlowField) -> Result<f64> {
    if target.width != flow.width || target.height != flow.height {
        return Err(Error::invalid("target size differs from flow"));
    }
    let (warped, mask) = warp_image(source, flow)?;
    masked_rmse(target, &warped, &mask)
}

/// Mask erosion; pixels outside the frame do not count as invalid, matching
/// the edge-clamped filters of the feature extractor.
fn erode(mask: &[bool], w: usize, h: usize, r: usize) -> Vec<bool> {
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let (ys, ye) = (y.saturating_sub(r), (y + r).min(h - 1));
            let (xs, xe) = (x.saturating_sub(r), (x + r).min(w - 1));
            out[y * w + x] = (ys..=ye).all(|yy| (xs..=xe).all(|xx| mask[yy * w + xx]));
        }
    }
    out
}

/// Coarser mask: a cell is valid only if all of its (up to 4) children are.
fn down_mask(mask: &[bool], w: usize, h: usize) -> (Vec<bool>, usize, usize) {
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = vec![false; nw * nh];
    for y in 0..nh {
        for x in 0..nw {
            out[y * nw + x] = [(0, 0), (1, 0), (0, 1), (1, 1)].iter().all(|(dx, dy)| {
                let (sx, sy) = (2 * x + dx, 2 * y + dy);
                sx >= w || sy >= h || mask[sy * w + sx]
            });
        }
    }
    (out, nw, nh)
}

/// Per-level masks for the feature pyramid, conservative enough that masked-out
/// pixels cannot influence any retained feature much.
fn pyramid_masks(mask: &[bool], w: usize, h: usize, levels: usize) -> Vec<Vec<bool>> {
    let mut out = Vec::with_capacity(levels);
    let mut cur = erode(mask, w, h, 3);
    let (mut cw, mut ch) = (w, h);
    for l in 0..levels {
        if l > 0 {
            let (m, nw, nh) = down_mask(&cur, cw, ch);
            cur = erode(&m, nw, nh, 1);
            cw = nw;
            ch = nh;
        }
        out.push(cur.clone());
    }
    out
}

fn masked_feature_rmse(a: &FeatureMap, b: &FeatureMap, mask: &[bool]) -> Option<f64> {
    let n = a.width * a.height;
    let mut sum = 0.0;
    let mut count = 0usize;
    for c in 0..a.channels {
        let (ca, cb) = (a.channel(c), b.channel(c));
        for i in 0..n {
            if mask[i] {
                sum += (ca[i] - cb[i]).powi(2);
                count += 1;
            }
        }
    }
    (count > 0).then(|| (sum / count as f64).sqrt())
}

/// Masked RMSE between pyramid features of `O_v` and the warped `O_v′`,
/// averaged over pyramid levels that keep at least one valid pixel.
pub fn warped_perceptual(target: &ImageBuffer, source: &ImageBuffer, flow: &FlowField) -> Result<f64> {
    if target.width != flow.width || target.height != flow.height {
        return Err(Error::invalid("target size differs from flow"));
    }
    let (warped, mask) = warp_image(source, flow)?;
    if !mask.iter().any(|m| *m) {
        return Err(Error::Evaluation("no valid pixels to compare".into()));
    }
    // identical filler outside the mask keeps both pyramids comparable there
    let fill = |img: &ImageBuffer| {
        let mut o = img.clone();
        for (p, m) in o.data.iter_mut().zip(&mask) {
            if !*m {
                *p = [0.0; 3];
            }
        }
        o
    };
    let fa = extract_features(&fill(target));
    let fb = extract_features(&fill(&warped));
    let masks = pyramid_masks(&mask, target.width, target.height, fa.len());
    let scores: Vec<f64> = fa
        .iter()
        .zip(&fb)
        .zip(&masks)
        .filter_map(|((a, b), m)| masked_feature_rmse(a, b, m))
        .collect();
    if scores.is_empty() {
        return Err(Error::Evaluation(
            "valid region too small for the feature pyramid".into(),
        ));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    /// Consecutive views.
    Short,
    /// Views at least half the path apart, scored in both directions.
    Long,
}

impl Pairing {
    pub fn as_str(self) -> &'static str {
        match self {
            Pairing::Short => "short",
            Pairing::Long => "long",
        }
    }
}

/// `(target, source)` index pairs for `n` views ordered along a path.
pub fn view_pairs(n: usize, pairing: Pairing) -> Vec<(usize, usize)> {
    match pairing {
        Pairing::Short => (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect(),
        Pairing::Long => {
            let half = n.div_ceil(2);
            (0..n.saturating_sub(half))
                .flat_map(|i| [(i, i + half), (i + half, i)])
                .collect()
        }
    }
}

/// An image together with the geometry of the view it was rendered from.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub image: ImageBuffer,
    pub geometry: ViewGeometry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub pair_id: String,
    pub view_a: usize,
    pub view_b: usize,
    pub wrmse: f64,
    pub wperc: f64,
    pub mode: String,
}

/// Warped scores for every pair of `views` under `pairing`.
pub fn consistency_report(views: &[RenderedView], pairing: Pairing, mode: &str) -> Result<Vec<ReportRow>> {
    if views.len() < 2 {
        return Err(Error::Config("consistency needs at least two views".into()));
    }
    let pairs = view_pairs(views.len(), pairing);
    pairs
        .par_iter()
        .enumerate()
        .map(|(k, &(a, b))| {
            let flow = exact_flow(&views[a].geometry, &views[b].geometry);
            Ok(ReportRow {
                pair_id: format!("{}-{k:03}", pairing.as_str()),
                view_a: a,
                view_b: b,
                wrmse: warped_rmse(&views[a].image, &views[b].image, &flow)?,
                wperc: warped_perceptual(&views[a].image, &views[b].image, &flow)?,
                mode: mode.to_string(),
            })
        })
        .collect()
}

/// Arithmetic means `(wrmse, wperc)` of report rows.
pub fn report_means(rows: &[ReportRow]) -> (f64, f64) {
    let n = rows.len().max(1) as f64;
    (
        rows.iter().map(|r| r.wrmse).sum::<f64>() / n,
        rows.iter().map(|r| r.wperc).sum::<f64>() / n,
    )
}

pub const REPORT_HEADER: &str = "pair_id,view_a,view_b,wrmse,wperc,mode";

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = format!("{REPORT_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.pair_id, r.view_a, r.view_b, r.wrmse, r.wperc, r.mode
        ));
    }
    s
}
