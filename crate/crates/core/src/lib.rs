//! Style-conditioned 3D Gaussian splatting on the CPU.
//!
//! A pretrained (or synthetic) Gaussian cloud keeps its geometry fixed while a
//! hash-grid + tiny-MLP color field, conditioned on a style latent, predicts a
//! new color per Gaussian. Training is guided by 2D AdaIN stylizations of the
//! unstyled renders; evaluation measures multi-view consistency with exact
//! geometric flow.

pub mod encoding;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod raster;
pub mod scene;
pub mod style2d;
pub mod stylefield;
pub mod trainer;

pub use error::{Error, Result};
pub use eval::{path_cameras, EvalContext, EvalMode};
pub use image::{ImageBuffer, ScalarImage};
pub use metrics::{consistency_report, exact_flow, Pairing, RenderedView, ReportRow};
pub use raster::{render, render_backward_colors, RenderOptions, RenderOutput};
pub use scene::{Camera, GaussianCloud, SceneBundle};
pub use style2d::{style_latent, Backend, NeuralStylizer};
pub use stylefield::{blend_latents, normalize_weights, StyleField};
pub use trainer::{fit_colors, train, FitConfig, StyleSet, TrainConfig, Trainer};
