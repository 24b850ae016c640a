//! Stylized view sets for the consistency evaluation: the 3D style field and
//! the two 2D baselines built from per-frame AdaIN.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::metrics::{consistency_report, Pairing, RenderedView, ReportRow, ViewGeometry};
use crate::raster::{render, RenderOptions, RenderOutput};
use crate::scene::{Camera, SceneBundle};
use crate::style2d::Backend;
use crate::stylefield::StyleField;
use crate::trainer::{fit_colors, FitConfig, StyleSet};

/// Default number of held-out views rendered along the camera path.
pub const EVAL_VIEWS: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvalMode {
    /// Colors from the trained style field.
    Gss,
    /// Unstyled render, then 2D AdaIN per frame.
    GsAdain,
    /// 2D AdaIN on the training views, then colors fitted to them.
    AdainGs,
}

impl EvalMode {
    pub const ALL: [EvalMode; 3] = [EvalMode::Gss, EvalMode::GsAdain, EvalMode::AdainGs];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Gss => "gss",
            EvalMode::GsAdain => "gs-adain",
            EvalMode::AdainGs => "adain-gs",
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gss" => Ok(EvalMode::Gss),
            "gs-adain" | "gs_adain" => Ok(EvalMode::GsAdain),
            "adain-gs" | "adain_gs" => Ok(EvalMode::AdainGs),
            other => Err(Error::Config(format!(
                "unknown eval mode '{other}' (expected gss, gs-adain or adain-gs)"
            ))),
        }
    }
}

fn camera_rotation(c: &Camera) -> UnitQuaternion<f64> {
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(c.rotation_matrix()))
}

/// `n` cameras sampled uniformly along the path through `cameras`, with
/// centers interpolated linearly and orientations by slerp. Intrinsics come
/// from the first camera.
pub fn path_cameras(cameras: &[Camera], n: usize) -> Result<Vec<Camera>> {
    let first = cameras
        .first()
        .ok_or_else(|| Error::invalid("camera path needs at least one camera"))?;
    if n == 0 {
        return Err(Error::invalid("camera path needs at least one view"));
    }
    let segments = cameras.len() - 1;
    (0..n)
        .map(|k| {
            let s = if n == 1 || segments == 0 {
                0.0
            } else {
                k as f64 / (n - 1) as f64 * segments as f64
            };
            let i = (s.floor() as usize).min(segments.saturating_sub(1));
            let t = if segments == 0 { 0.0 } else { s - i as f64 };
            let (a, b) = (&cameras[i], &cameras[(i + 1).min(segments)]);
            let (ca, cb) = (a.center(), b.center());
            let center: [f64; 3] = std::array::from_fn(|j| ca[j] + (cb[j] - ca[j]) * t);
            let q = camera_rotation(a).slerp(&camera_rotation(b), t);
            let r: Matrix3<f64> = q.to_rotation_matrix().into_inner();
            let rc = r * nalgebra::Vector3::from(center);
            let mut cam = *first;
            cam.rotation = std::array::from_fn(|row| std::array::from_fn(|col| r[(row, col)]));
            cam.translation = [-rc[0], -rc[1], -rc[2]];
            Ok(cam)
        })
        .collect()
}

fn base_renders(scene: &SceneBundle, cameras: &[Camera]) -> Result<Vec<RenderOutput>> {
    cameras
        .iter()
        .map(|c| {
            render(
                &scene.cloud,
                c,
                None,
                scene.background,
                RenderOptions::with_contributions(),
            )
        })
        .collect()
}

fn view(out: &RenderOutput, camera: &Camera, image: ImageBuffer) -> RenderedView {
    RenderedView {
        image,
        geometry: ViewGeometry {
            camera: *camera,
            depth: out.depth.clone(),
            alpha: out.alpha.clone(),
        },
    }
}

/// Inputs shared by every evaluation mode.
pub struct EvalContext<'a> {
    pub scene: &'a SceneBundle,
    pub styles: &'a StyleSet,
    /// Needed by [`EvalMode::Gss`] only.
    pub field: Option<&'a StyleField>,
    pub backend: Backend,
    pub fit: FitConfig,
}

impl<'a> EvalContext<'a> {
    pub fn new(scene: &'a SceneBundle, styles: &'a StyleSet, field: Option<&'a StyleField>) -> Self {
        Self {
            scene,
            styles,
            field,
            backend: Backend::Stat,
            fit: FitConfig::default(),
        }
    }

    /// Per-Gaussian colors the field predicts for style `style`.
    pub fn field_colors(&self, style: usize) -> Result<Vec<[f64; 3]>> {
        let field = self
            .field
            .ok_or_else(|| Error::Config("gss mode needs a trained style field".into()))?;
        field.predict_colors(&self.scene.cloud.means, self.latent(style)?)
    }

    fn latent(&self, style: usize) -> Result<&[f64]> {
        self.styles
            .latents
            .get(style)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::invalid(format!("style index {style} out of range")))
    }

    /// Colors fitted to per-frame AdaIN stylizations of the training views.
    pub fn fitted_colors(&self, style: usize) -> Result<Vec<[f64; 3]>> {
        self.latent(style)?;
        let targets = base_renders(self.scene, &self.scene.cameras)?
            .iter()
            .map(|out| self.styles.stylize(&out.color, style, &self.backend))
            .collect::<Result<Vec<_>>>()?;
        Ok(fit_colors(self.scene, &targets, &self.scene.cloud.base_colors, self.fit)?.colors)
    }

    /// Stylized renders at `cameras` in style `style`, with the geometry the
    /// flow computation needs.
    pub fn render_views(&self, mode: EvalMode, style: usize, cameras: &[Camera]) -> Result<Vec<RenderedView>> {
        let bases = base_renders(self.scene, cameras)?;
        let images: Vec<ImageBuffer> = match mode {
            EvalMode::Gss => {
                let colors = self.field_colors(style)?;
                bases.iter().map(|b| b.recolor(&colors)).collect::<Result<_>>()?
            }
            EvalMode::GsAdain => {
                self.latent(style)?;
                bases
                    .iter()
                    .map(|b| self.styles.stylize(&b.color, style, &self.backend))
                    .collect::<Result<_>>()?
            }
            EvalMode::AdainGs => {
                let colors = self.fitted_colors(style)?;
                bases.iter().map(|b| b.recolor(&colors)).collect::<Result<_>>()?
            }
        };
        Ok(bases
            .iter()
            .zip(cameras)
            .zip(images)
            .map(|((b, c), img)| view(b, c, img))
            .collect())
    }

    /// Short- and long-range report rows for one mode and style.
    pub fn report(&self, mode: EvalMode, style: usize, cameras: &[Camera]) -> Result<Vec<ReportRow>> {
        let views = self.render_views(mode, style, cameras)?;
        let mut rows = consistency_report(&views, Pairing::Short, mode.as_str())?;
        rows.extend(consistency_report(&views, Pairing::Long, mode.as_str())?);
        Ok(rows)
    }
}
