//! Stage-2 optimization of a [`StyleField`] and color-only scene fitting.
//!
//! Geometry is borrowed immutably for the whole run, so only the field's
//! parameters (or, for [`fit_colors`], the base colors) ever change. Because
//! geometry is frozen, each camera's compositing weights are rendered once and
//! reused; a new set of colors is then just a [`RenderOutput::recolor`].

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoding::HashGridConfig;
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::loss::{dssim_l1_loss_grad, losses_with_gradient, LossRecord, LossWeights, DSSIM_LAMBDA};
use crate::nn::{AdamConfig, AdamState};
use crate::raster::{render, render_backward_colors, RenderOptions, RenderOutput};
use crate::scene::SceneBundle;
use crate::style2d::{style_latent, stylize2d, stylize_with_stats, Backend, StyleStats};
use crate::stylefield::{field_bounds, FieldOptimizer, StyleField};

/// Longest side style images are reduced to before statistics are taken.
pub const STYLE_MAX_SIDE: usize = 256;
const STATE_MAGIC: &[u8; 4] = b"SSTS";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda_g: f64,
    pub lambda_c: f64,
    pub lr: f64,
    pub iterations: usize,
    pub seed: u64,
    pub style_dir: Option<PathBuf>,
    pub scene: Option<PathBuf>,
    /// Save a resumable checkpoint every this many iterations (0 = never).
    pub checkpoint_every: usize,
    pub checkpoint_path: Option<PathBuf>,
    /// `false` trains the position-only ablation without a hash grid.
    pub use_grid: bool,
    pub grid: HashGridConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_g: 1.0,
            lambda_c: 0.1,
            lr: 1e-4,
            iterations: 2000,
            seed: 0,
            style_dir: None,
            scene: None,
            checkpoint_every: 0,
            checkpoint_path: None,
            use_grid: true,
            grid: HashGridConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            guide: self.lambda_g,
            content: self.lambda_c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_g >= 0.0 && self.lambda_c >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Parses flat `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::Config(format!("line {}: invalid {what} `{value}`", n + 1));
            match key {
                "lambda_g" => cfg.lambda_g = value.parse().map_err(|_| bad(key))?,
                "lambda_c" => cfg.lambda_c = value.parse().map_err(|_| bad(key))?,
                "lr" => cfg.lr = value.parse().map_err(|_| bad(key))?,
                "iterations" => cfg.iterations = value.parse().map_err(|_| bad(key))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad(key))?,
                "style_dir" => cfg.style_dir = Some(PathBuf::from(value)),
                "scene" => cfg.scene = Some(PathBuf::from(value)),
                "checkpoint_every" => cfg.checkpoint_every = value.parse().map_err(|_| bad(key))?,
                "checkpoint_path" => cfg.checkpoint_path = Some(PathBuf::from(value)),
                "use_grid" => cfg.use_grid = value.parse().map_err(|_| bad(key))?,
                "grid_levels" => cfg.grid.levels = value.parse().map_err(|_| bad(key))?,
                "grid_table_size" => cfg.grid.table_size = value.parse().map_err(|_| bad(key))?,
                _ => return Err(Error::Config(format!("line {}: unknown key `{key}`", n + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Style images with their latents and AdaIN statistics.
#[derive(Debug, Clone)]
pub struct StyleSet {
    pub names: Vec<String>,
    pub images: Vec<ImageBuffer>,
    pub latents: Vec<Vec<f64>>,
    stats: Vec<StyleStats>,
}

fn shrink(img: ImageBuffer) -> ImageBuffer {
    let side = img.width.max(img.height);
    if side <= STYLE_MAX_SIDE {
        return img;
    }
    let s = STYLE_MAX_SIDE as f64 / side as f64;
    let (w, h) = (
        ((img.width as f64 * s).round() as usize).max(1),
        ((img.height as f64 * s).round() as usize).max(1),
    );
    img.resized(w, h)
}

impl StyleSet {
    pub fn new(names: Vec<String>, images: Vec<ImageBuffer>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Config("no style images given".into()));
        }
        if names.len() != images.len() {
            return Err(Error::invalid("style names and images differ in count"));
        }
        let images: Vec<ImageBuffer> = images.into_iter().map(shrink).collect();
        let latents = images.iter().map(style_latent).collect();
        let stats = images.iter().map(StyleStats::of).collect();
        Ok(Self {
            names,
            images,
            latents,
            stats,
        })
    }

    pub fn load_files(paths: &[PathBuf]) -> Result<Self> {
        let mut names = Vec::new();
        let mut images = Vec::new();
        for p in paths {
            names.push(
                p.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            );
            images.push(ImageBuffer::load(p)?);
        }
        Self::new(names, images)
    }

    /// All PNG/JPEG files of a directory, in file-name order.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            })
            .collect();
        if paths.is_empty() {
            return Err(Error::Config(format!(
                "style directory {} has no images",
                dir.display()
            )));
        }
        paths.sort();
        Self::load_files(&paths)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// 2D guide for `content` in style `index`.
    pub fn stylize(&self, content: &ImageBuffer, index: usize, backend: &Backend) -> Result<ImageBuffer> {
        match backend {
            Backend::Stat => stylize_with_stats(content, &self.stats[index]),
            other => stylize2d(content, &self.images[index], other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub iteration: usize,
    pub camera: usize,
    pub style: usize,
    pub loss: LossRecord,
}

pub struct Trainer<'a> {
    scene: &'a SceneBundle,
    styles: &'a StyleSet,
    config: TrainConfig,
    backend: Backend,
    field: StyleField,
    optimizer: FieldOptimizer,
    rng: ChaCha8Rng,
    iteration: usize,
    history: Vec<StepRecord>,
    renders: Vec<Option<RenderOutput>>,
    guides: HashMap<(usize, usize), ImageBuffer>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, scene: &'a SceneBundle, styles: &'a StyleSet) -> Result<Self> {
        config.validate()?;
        if styles.is_empty() {
            return Err(Error::Config("no style images given".into()));
        }
        if scene.cameras.is_empty() {
            return Err(Error::Config("scene has no cameras".into()));
        }
        let bounds = field_bounds(&scene.cloud.means);
        let field = if config.use_grid {
            StyleField::new(config.grid, bounds, config.seed)?
        } else {
            StyleField::without_grid(config.grid, bounds, config.seed)?
        };
        let optimizer = FieldOptimizer::new(&field, AdamConfig::with_lr(config.lr));
        Ok(Self {
            scene,
            styles,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            backend: Backend::Stat,
            field,
            optimizer,
            iteration: 0,
            history: Vec::new(),
            renders: vec![None; scene.cameras.len()],
            guides: HashMap::new(),
        })
    }

    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self.guides.clear();
        self
    }

    pub fn field(&self) -> &StyleField {
        &self.field
    }

    pub fn into_field(self) -> StyleField {
        self.field
    }

    pub fn history(&self) -> &[StepRecord] {
        &self.history
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn base_render(&mut self, camera: usize) -> Result<&RenderOutput> {
        if self.renders[camera].is_none() {
            let out = render(
                &self.scene.cloud,
                &self.scene.cameras[camera],
                None,
                self.scene.background,
                RenderOptions::with_contributions(),
            )?;
            self.renders[camera] = Some(out);
        }
        Ok(self.renders[camera].as_ref().unwrap())
    }

    fn guide(&mut self, camera: usize, style: usize) -> Result<ImageBuffer> {
        if let Some(g) = self.guides.get(&(camera, style)) {
            return Ok(g.clone());
        }
        let unstyled = self.base_render(camera)?.color.clone();
        let g = self.styles.stylize(&unstyled, style, &self.backend)?;
        self.guides.insert((camera, style), g.clone());
        Ok(g)
    }

    /// One Adam step on the given (camera, style) pair.
    pub fn step_on(&mut self, camera: usize, style: usize) -> Result<StepRecord> {
        if camera >= self.scene.cameras.len() || style >= self.styles.len() {
            return Err(Error::invalid("camera or style index out of range"));
        }
        let guide = self.guide(camera, style)?;
        let weights = self.config.weights();
        let means = &self.scene.cloud.means;
        let (colors, cache) = self.field.forward(means, &self.styles.latents[style])?;
        self.base_render(camera)?;
        let base = self.renders[camera].as_ref().unwrap();
        let generated = base.recolor(&colors)?;
        let (loss, dl_dimage) = losses_with_gradient(&generated, &guide, &base.color, weights)?;
        let iteration = self.iteration;
        let fail = |what: &str| {
            Error::Training(format!(
                "{what} at iteration {iteration}, style {style}, camera {camera}"
            ))
        };
        if !loss.total.is_finite() {
            return Err(fail("non-finite loss"));
        }
        let dl_dcolors = render_backward_colors(base, &dl_dimage)?;
        let grad = self.field.backward(&cache, &dl_dcolors)?;
        self.optimizer
            .step(&mut self.field, &grad)
            .map_err(|e| fail(&format!("optimizer step failed ({e})")))?;
        self.iteration += 1;
        let record = StepRecord {
            iteration: self.iteration,
            camera,
            style,
            loss,
        };
        self.history.push(record);
        Ok(record)
    }

    /// One step on a uniformly sampled (camera, style) pair.
    pub fn step(&mut self) -> Result<StepRecord> {
        let camera = self.rng.gen_range(0..self.scene.cameras.len());
        let style = self.rng.gen_range(0..self.styles.len());
        self.step_on(camera, style)
    }

    /// Runs until `config.iterations`, checkpointing at the configured cadence.
    pub fn run(&mut self) -> Result<()> {
        while self.iteration < self.config.iterations {
            let r = self.step()?;
            if r.iteration % 100 == 0 || r.iteration == 1 {
                log::info!(
                    "iter {:>6}  guide {:.5}  content {:.5}  total {:.5}",
                    r.iteration,
                    r.loss.guide,
                    r.loss.content,
                    r.loss.total
                );
            }
            if self.config.checkpoint_every > 0 && r.iteration % self.config.checkpoint_every == 0 {
                if let Some(path) = self.config.checkpoint_path.clone() {
                    self.save_checkpoint(&path)?;
                    log::debug!("checkpoint written to {}", path.display());
                }
            }
        }
        Ok(())
    }

    /// Mean losses of the current field over every (camera, style) pair.
    pub fn evaluate(&mut self) -> Result<LossRecord> {
        let weights = self.config.weights();
        let mut sum = LossRecord::default();
        let mut n = 0.0;
        for style in 0..self.styles.len() {
            let colors = self
                .field
                .predict_colors(&self.scene.cloud.means, &self.styles.latents[style])?;
            for camera in 0..self.scene.cameras.len() {
                let guide = self.guide(camera, style)?;
                self.base_render(camera)?;
                let base = self.renders[camera].as_ref().unwrap();
                let generated = base.recolor(&colors)?;
                let r = crate::loss::compute_losses(&generated, &guide, &base.color, weights)?;
                sum.guide += r.guide;
                sum.content += r.content;
                sum.total += r.total;
                n += 1.0;
            }
        }
        Ok(LossRecord {
            guide: sum.guide / n,
            content: sum.content / n,
            total: sum.total / n,
        })
    }

    /// Writes the field to `path` and the lossless training state next to it
    /// (`<path>.state`).
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        self.field.save(path)?;
        let state_path = state_path_for(path);
        let mut buf = Vec::new();
        self.write_state(&mut buf).expect("writing to memory");
        std::fs::write(&state_path, buf).map_err(|e| Error::io(&state_path, e))
    }

    fn write_state<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(STATE_MAGIC)?;
        w.write_all(&(self.iteration as u64).to_le_bytes())?;
        w.write_all(&self.rng.get_word_pos().to_le_bytes())?;
        w.write_all(&(self.history.len() as u64).to_le_bytes())?;
        for r in &self.history {
            for v in [r.iteration as u64, r.camera as u64, r.style as u64] {
                w.write_all(&v.to_le_bytes())?;
            }
            for v in [r.loss.guide, r.loss.content, r.loss.total] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for t in field_tensors(&self.field) {
            for v in t {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        self.optimizer.write_state(w)
    }

    /// Restores a run saved by [`save_checkpoint`](Self::save_checkpoint).
    /// `config` must describe the same field layout and seed.
    pub fn resume(config: TrainConfig, scene: &'a SceneBundle, styles: &'a StyleSet, path: &Path) -> Result<Self> {
        let mut t = Self::new(config, scene, styles)?;
        let state_path = state_path_for(path);
        let bytes = std::fs::read(&state_path).map_err(|e| Error::io(&state_path, e))?;
        let r = &mut bytes.as_slice();
        let err = |e: std::io::Error| Error::parse("training state", e.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(err)?;
        if &magic != STATE_MAGIC {
            return Err(Error::parse("training state", "bad magic number"));
        }
        let mut b8 = [0u8; 8];
        let mut b16 = [0u8; 16];
        r.read_exact(&mut b8).map_err(err)?;
        t.iteration = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b16).map_err(err)?;
        t.rng.set_word_pos(u128::from_le_bytes(b16));
        r.read_exact(&mut b8).map_err(err)?;
        let n = u64::from_le_bytes(b8) as usize;
        if n > t.iteration {
            return Err(Error::parse("training state", "history longer than iteration count"));
        }
        for _ in 0..n {
            let mut u = [0u64; 3];
            let mut f = [0f64; 3];
            for v in &mut u {
                r.read_exact(&mut b8).map_err(err)?;
                *v = u64::from_le_bytes(b8);
            }
            for v in &mut f {
                r.read_exact(&mut b8).map_err(err)?;
                *v = f64::from_le_bytes(b8);
            }
            t.history.push(StepRecord {
                iteration: u[0] as usize,
                camera: u[1] as usize,
                style: u[2] as usize,
                loss: LossRecord {
                    guide: f[0],
                    content: f[1],
                    total: f[2],
                },
            });
        }
        for tensor in field_tensors_mut(&mut t.field) {
            for v in tensor.iter_mut() {
                r.read_exact(&mut b8).map_err(err)?;
                *v = f64::from_le_bytes(b8);
            }
        }
        t.optimizer.read_state(r)?;
        Ok(t)
    }
}

fn field_tensors(field: &StyleField) -> Vec<&[f64]> {
    let mut out: Vec<&[f64]> = vec![&field.grid.tables];
    for l in field.latent_fc.layers.iter().chain(&field.mlp.layers) {
        out.push(&l.weights);
        out.push(&l.biases);
    }
    out
}

fn field_tensors_mut(field: &mut StyleField) -> Vec<&mut [f64]> {
    let mut out: Vec<&mut [f64]> = vec![field.grid.tables.as_mut_slice()];
    out.extend(crate::nn::layer_tensors_mut(&mut field.latent_fc));
    out.extend(crate::nn::layer_tensors_mut(&mut field.mlp));
    out
}

pub fn state_path_for(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".state");
    PathBuf::from(s)
}

pub struct TrainOutcome {
    pub field: StyleField,
    pub history: Vec<StepRecord>,
}

/// Trains a fresh field for `config.iterations` steps.
pub fn train(config: TrainConfig, scene: &SceneBundle, styles: &StyleSet) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config, scene, styles)?;
    trainer.run()?;
    let history = trainer.history().to_vec();
    Ok(TrainOutcome {
        field: trainer.into_field(),
        history,
    })
}

/// `iteration,guide,content,total` rows.
pub fn write_loss_csv(history: &[StepRecord], path: &Path) -> Result<()> {
    let mut s = String::from("iteration,guide,content,total\n");
    for r in history {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.iteration, r.loss.guide, r.loss.content, r.loss.total
        ));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub iterations: usize,
    pub lr: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            lr: 1e-2,
            lambda: DSSIM_LAMBDA,
            seed: 0,
        }
    }
}

pub struct FitOutcome {
    pub colors: Vec<[f64; 3]>,
    /// Photometric loss per iteration.
    pub history: Vec<f64>,
}

/// Optimizes per-Gaussian colors so renders match `targets` (one per camera)
/// under the D-SSIM + L1 loss. Colors stay clamped to [0,1].
pub fn fit_colors(
    scene: &SceneBundle,
    targets: &[ImageBuffer],
    initial: &[[f64; 3]],
    config: FitConfig,
) -> Result<FitOutcome> {
    if targets.len() != scene.cameras.len() {
        return Err(Error::invalid(format!(
            "{} targets for {} cameras",
            targets.len(),
            scene.cameras.len()
        )));
    }
    if initial.len() != scene.cloud.len() {
        return Err(Error::invalid("initial colors do not match the cloud"));
    }
    if config.iterations == 0 || scene.cameras.is_empty() {
        return Err(Error::Config(
            "fitting needs at least one iteration and one camera".into(),
        ));
    }
    let mut renders: Vec<Option<RenderOutput>> = vec![None; scene.cameras.len()];
    let mut colors: Vec<f64> = initial.iter().flatten().copied().collect();
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), &[colors.len()]);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let cam = rng.gen_range(0..scene.cameras.len());
        if renders[cam].is_none() {
            renders[cam] = Some(render(
                &scene.cloud,
                &scene.cameras[cam],
                None,
                scene.background,
                RenderOptions::with_contributions(),
            )?);
        }
        let base = renders[cam].as_ref().unwrap();
        let current: Vec<[f64; 3]> = colors.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let img = base.recolor(&current)?;
        let (loss, grad_img) = dssim_l1_loss_grad(&img, &targets[cam], config.lambda)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss at iteration {it}, camera {cam}"
            )));
        }
        let g = render_backward_colors(base, &grad_img)?;
        let flat: Vec<f64> = g.iter().flatten().copied().collect();
        adam.step(&mut [&mut colors], &[&flat])?;
        colors.iter_mut().for_each(|c| *c = c.clamp(0.0, 1.0));
        history.push(loss);
    }
    Ok(FitOutcome {
        colors: colors.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{make_synthetic_scene, SceneSpec, SyntheticKind};

    fn small_grid() -> HashGridConfig {
        HashGridConfig {
            levels: 6,
            table_size: 1 << 12,
            features_per_level: 2,
            base_resolution: 4,
            growth: 1.6,
        }
    }

    fn scene(n: usize, cams: usize) -> SceneBundle {
        let mut spec = SceneSpec::new(SyntheticKind::Spheres, n, cams, 3);
        spec.resolution = (48, 36);
        make_synthetic_scene(&spec).unwrap()
    }

    fn styles(n: usize) -> StyleSet {
        let palette = [[0.9, 0.2, 0.1], [0.1, 0.3, 0.9], [0.2, 0.8, 0.3], [0.9, 0.9, 0.2]];
        let images = (0..n)
            .map(|k| {
                let c = palette[k % 4];
                ImageBuffer::from_fn(40, 40, move |x, y| {
                    let s = if ((x / (3 + k)) + (y / 5)) % 2 == 0 { 1.0 } else { 0.4 };
                    [c[0] * s, c[1] * s, c[2] * s]
                })
            })
            .collect();
        StyleSet::new((0..n).map(|k| format!("s{k}")).collect(), images).unwrap()
    }

    fn config(iters: usize) -> TrainConfig {
        TrainConfig {
            iterations: iters,
            lr: 1e-3,
            grid: small_grid(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_parsing() {
        let c = TrainConfig::parse(
            "# run\nlambda_g = 1\nlambda_c=10\n lr = 0.001 \niterations=50\nseed=4\nstyle_dir=styles\n",
        )
        .unwrap();
        assert_eq!((c.lambda_c, c.lr, c.iterations, c.seed), (10.0, 1e-3, 50, 4));
        assert_eq!(c.style_dir, Some(PathBuf::from("styles")));
        assert!(matches!(TrainConfig::parse("lambda_x = 1"), Err(Error::Config(_))));
        assert!(matches!(TrainConfig::parse("iterations = 0"), Err(Error::Config(_))));
        assert!(matches!(TrainConfig::parse("lambda_c = -1"), Err(Error::Config(_))));
        assert!(TrainConfig::parse("lr").is_err());
    }

    #[test]
    fn empty_style_dir_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(StyleSet::load_dir(dir.path()), Err(Error::Config(_))));
    }

    #[test]
    fn zero_weights_leave_parameters_unchanged() {
        let sc = scene(300, 2);
        let st = styles(1);
        let cfg = TrainConfig {
            lambda_g: 0.0,
            lambda_c: 0.0,
            ..config(5)
        };
        let mut t = Trainer::new(cfg, &sc, &st).unwrap();
        let before = t.field().clone();
        t.run().unwrap();
        assert_eq!(t.field().grid.tables, before.grid.tables);
        assert_eq!(t.field().mlp.layers, before.mlp.layers);
        assert_eq!(t.field().latent_fc.layers, before.latent_fc.layers);
    }

    #[test]
    fn runs_are_bit_reproducible() {
        let sc = scene(300, 3);
        let st = styles(2);
        let trace = || {
            let mut t = Trainer::new(config(15), &sc, &st).unwrap();
            t.run().unwrap();
            t.history().to_vec()
        };
        assert_eq!(trace(), trace());
    }

    #[test]
    fn resume_continues_the_same_trace() {
        let sc = scene(300, 3);
        let st = styles(2);
        let mut full = Trainer::new(config(20), &sc, &st).unwrap();
        full.run().unwrap();

        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("field.bin");
        let mut first = Trainer::new(config(10), &sc, &st).unwrap();
        first.run().unwrap();
        first.save_checkpoint(&ckpt).unwrap();
        drop(first);
        let mut second = Trainer::resume(config(20), &sc, &st, &ckpt).unwrap();
        assert_eq!(second.iteration(), 10);
        second.run().unwrap();
        assert_eq!(second.history(), full.history());
        assert_eq!(second.field().grid.tables, full.field().grid.tables);
    }

    #[test]
    fn losses_decrease_in_a_short_run() {
        let sc = scene(400, 1);
        let st = styles(1);
        let mut t = Trainer::new(config(150), &sc, &st).unwrap();
        t.run().unwrap();
        let h = t.history();
        let first: f64 = h[..10].iter().map(|r| r.loss.total).sum::<f64>() / 10.0;
        let last: f64 = h[h.len() - 10..].iter().map(|r| r.loss.total).sum::<f64>() / 10.0;
        assert!(last < 0.5 * first, "{last} vs {first}");
        for r in h {
            assert!(r.loss.guide >= 0.0 && r.loss.content >= 0.0);
            assert_eq!(r.loss.total, r.loss.guide + 0.1 * r.loss.content);
        }
    }

    #[test]
    fn loss_csv_layout() {
        let sc = scene(100, 1);
        let st = styles(1);
        let out = train(config(3), &sc, &st).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        write_loss_csv(&out.history, &p).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iteration,guide,content,total");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("1,"));
    }

    #[test]
    fn fit_colors_recovers_targets() {
        let sc = scene(400, 2);
        let targets: Vec<ImageBuffer> = sc
            .cameras
            .iter()
            .map(|c| {
                render(&sc.cloud, c, None, sc.background, RenderOptions::default())
                    .unwrap()
                    .color
            })
            .collect();
        let gray = vec![[0.5; 3]; sc.cloud.len()];
        let out = fit_colors(
            &sc,
            &targets,
            &gray,
            FitConfig {
                iterations: 200,
                ..FitConfig::default()
            },
        )
        .unwrap();
        let first = out.history[..5].iter().sum::<f64>() / 5.0;
        let last = out.history[out.history.len() - 5..].iter().sum::<f64>() / 5.0;
        assert!(last < 0.5 * first, "{last} vs {first}");
        assert!(out.colors.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }
}
