use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatstyle_core::eval::EVAL_VIEWS;
use splatstyle_core::metrics::{report_csv, report_means};
use splatstyle_core::scene::{
    cameras_path_for, framing_camera, load_cameras, load_ply, make_synthetic_scene, save_ply,
};
use splatstyle_core::scene::{SceneSpec, SyntheticKind};
use splatstyle_core::stylefield::{blend_latents, corner_weights};
use splatstyle_core::trainer::write_loss_csv;
use splatstyle_core::{
    fit_colors as fit_scene_colors, path_cameras, render as rasterize, Backend, Camera, EvalContext, EvalMode,
    FitConfig, ImageBuffer, NeuralStylizer, RenderOptions, SceneBundle, StyleField, StyleSet, TrainConfig, Trainer,
};
use splatstyle_service::ModelSnapshot;

use crate::{
    BackendArgs, BackendKind, EvalArgs, FitColorsArgs, InterpolateArgs, Kind, RenderArgs, SceneArgs, ServeArgs,
    StyleArgs, SynthArgs, TrainArgs, UsageError,
};

/// Resolution used when a scene has no cameras file.
const FRAMING_RES: (u32, u32) = (256, 192);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load_scene(args: &SceneArgs) -> Result<SceneBundle> {
    let cloud = load_ply(&args.scene)?;
    let cams_path = args.cams.clone().or_else(|| {
        let p = cameras_path_for(&args.scene);
        p.exists().then_some(p)
    });
    let (cameras, background) = match cams_path {
        Some(p) => load_cameras(&p)?,
        None => {
            log::info!("no cameras file for {}, framing the cloud", args.scene.display());
            (vec![framing_camera(&cloud, FRAMING_RES.0, FRAMING_RES.1)?], [0.0; 3])
        }
    };
    if cameras.is_empty() {
        bail!("the cameras file lists no cameras");
    }
    Ok(SceneBundle::new(cloud, cameras, background)?)
}

fn load_styles(args: &StyleArgs) -> Result<StyleSet> {
    let set = match (&args.style_dir, args.style.is_empty()) {
        (Some(dir), _) => StyleSet::load_dir(dir)?,
        (None, false) => StyleSet::load_files(&args.style)?,
        (None, true) => return Err(usage("give style images with --style or --style-dir")),
    };
    log::info!("{} style image(s): {}", set.len(), set.names.join(", "));
    Ok(set)
}

fn load_backend(args: &BackendArgs) -> Result<Backend> {
    match (args.backend, &args.neural_weights) {
        (BackendKind::Stat, _) => Ok(Backend::Stat),
        (BackendKind::Neural, Some(p)) => Ok(Backend::Neural(Some(Box::new(NeuralStylizer::load(p)?)))),
        (BackendKind::Neural, None) => Err(usage("--backend neural needs --neural-weights")),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn at_resolution(camera: &Camera, res: Option<(u32, u32)>) -> Result<Camera> {
    Ok(match res {
        Some((w, h)) => camera.with_resolution(w, h)?,
        None => *camera,
    })
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let kind = match a.kind {
        Kind::Lattice => SyntheticKind::Lattice,
        Kind::Spheres => SyntheticKind::Spheres,
        Kind::TexturedBox => SyntheticKind::TexturedBox,
    };
    let mut spec = SceneSpec::new(kind, a.n, a.cams, a.seed);
    spec.resolution = a.res;
    let scene = make_synthetic_scene(&spec)?;
    let cams = cameras_path_for(&a.out);
    scene.save(&a.out, &cams)?;
    println!(
        "wrote {} gaussians to {} and {} cameras to {}",
        scene.cloud.len(),
        a.out.display(),
        scene.cameras.len(),
        cams.display()
    );
    Ok(())
}

pub fn fit_colors(a: FitColorsArgs) -> Result<()> {
    if a.iters == 0 {
        return Err(usage("--iters must be at least 1"));
    }
    let scene = load_scene(&a.scene)?;
    let targets = scene
        .cameras
        .iter()
        .map(|c| Ok(rasterize(&scene.cloud, c, None, scene.background, RenderOptions::default())?.color))
        .collect::<Result<Vec<ImageBuffer>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let initial: Vec<[f64; 3]> = (0..scene.cloud.len())
        .map(|_| std::array::from_fn(|_| rng.gen_range(0.0..1.0)))
        .collect();
    let config = FitConfig {
        iterations: a.iters,
        lr: a.lr,
        seed: a.seed,
        ..FitConfig::default()
    };
    let outcome = fit_scene_colors(&scene, &targets, &initial, config)?;
    let mut cloud = scene.cloud.clone();
    cloud.base_colors = outcome.colors.clone();
    save_ply(&cloud, &a.out)?;
    if let Some(p) = &a.loss_csv {
        let mut s = String::from("iteration,loss\n");
        for (i, l) in outcome.history.iter().enumerate() {
            s.push_str(&format!("{},{l}\n", i + 1));
        }
        std::fs::write(p, s).with_context(|| format!("writing {}", p.display()))?;
    }
    let mean_err = scene
        .cloud
        .base_colors
        .iter()
        .zip(&outcome.colors)
        .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).abs()).sum::<f64>() / 3.0)
        .sum::<f64>()
        / scene.cloud.len().max(1) as f64;
    println!(
        "loss {:.5} -> {:.5}; mean |color error| {:.4}; wrote {}",
        outcome.history.first().copied().unwrap_or(f64::NAN),
        outcome.history.last().copied().unwrap_or(f64::NAN),
        mean_err,
        a.out.display()
    );
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.iters {
        config.iterations = v;
    }
    if let Some(v) = a.lambda_g {
        config.lambda_g = v;
    }
    if let Some(v) = a.lambda_c {
        config.lambda_c = v;
    }
    if let Some(v) = a.lr {
        config.lr = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.checkpoint_every {
        config.checkpoint_every = v;
    }
    if a.no_grid {
        config.use_grid = false;
    }
    config.checkpoint_path = Some(a.out.clone());
    config.scene = Some(a.scene.scene.clone());
    config.style_dir = a.styles.style_dir.clone();
    config.validate().map_err(|e| usage(e.to_string()))?;

    let scene = load_scene(&a.scene)?;
    let styles = load_styles(&a.styles)?;
    let backend = load_backend(&a.backend)?;
    let trainer = if a.resume {
        Trainer::resume(config, &scene, &styles, &a.out)?
    } else {
        Trainer::new(config, &scene, &styles)?
    };
    let mut trainer = trainer.with_backend(backend);
    let start = std::time::Instant::now();
    trainer.run()?;
    trainer.save_checkpoint(&a.out)?;
    if let Some(p) = &a.loss_csv {
        write_loss_csv(trainer.history(), p)?;
    }
    let h = trainer.history();
    if let (Some(first), Some(last)) = (h.first(), h.last()) {
        println!(
            "{} iterations in {:.1}s; total loss {:.5} -> {:.5}; wrote {}",
            trainer.iteration(),
            start.elapsed().as_secs_f64(),
            first.loss.total,
            last.loss.total,
            a.out.display()
        );
    }
    Ok(())
}

fn style_colors(
    scene: &SceneBundle,
    field: &Option<PathBuf>,
    style: &Option<PathBuf>,
) -> Result<Option<Vec<[f64; 3]>>> {
    match (field, style) {
        (Some(f), Some(s)) => {
            let field = StyleField::load(f)?;
            let styles = StyleSet::load_files(std::slice::from_ref(s))?;
            Ok(Some(field.predict_colors(&scene.cloud.means, &styles.latents[0])?))
        }
        _ => Ok(None),
    }
}

pub fn render(a: RenderArgs) -> Result<()> {
    let scene = load_scene(&a.scene)?;
    let colors = style_colors(&scene, &a.field, &a.style)?;
    let draw = |camera: &Camera, path: &Path| -> Result<()> {
        let cam = at_resolution(camera, a.res)?;
        rasterize(
            &scene.cloud,
            &cam,
            colors.as_deref(),
            scene.background,
            RenderOptions::default(),
        )?
        .color
        .save_png(path)?;
        Ok(())
    };
    if let Some(i) = a.cam {
        let camera = scene
            .cameras
            .get(i)
            .ok_or_else(|| usage(format!("--cam {i} out of range ({} cameras)", scene.cameras.len())))?;
        draw(camera, &a.out)?;
        println!("wrote {}", a.out.display());
        return Ok(());
    }
    let cameras = match a.path_views {
        Some(0) => return Err(usage("--path-views must be at least 1")),
        Some(n) => path_cameras(&scene.cameras, n)?,
        None => scene.cameras.clone(),
    };
    create_dir(&a.out)?;
    for (i, c) in cameras.iter().enumerate() {
        draw(c, &a.out.join(format!("view_{i:03}.png")))?;
    }
    println!("wrote {} views to {}", cameras.len(), a.out.display());
    Ok(())
}

pub fn interpolate(a: InterpolateArgs) -> Result<()> {
    if a.grid < 2 {
        return Err(usage("--grid must be at least 2"));
    }
    let scene = load_scene(&a.scene)?;
    let styles = load_styles(&a.styles)?;
    if styles.len() != 4 {
        return Err(usage(format!(
            "interpolate takes exactly 4 styles, got {}",
            styles.len()
        )));
    }
    let field = StyleField::load(&a.field)?;
    let camera = scene
        .cameras
        .get(a.cam)
        .ok_or_else(|| usage(format!("--cam {} out of range", a.cam)))?;
    let camera = at_resolution(camera, a.res)?;
    create_dir(&a.out)?;
    let n = a.grid;
    let mut tiles = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            let w = corner_weights(c as f64 / (n - 1) as f64, r as f64 / (n - 1) as f64);
            let latent = blend_latents(&styles.latents, &w)?;
            let colors = field.predict_colors(&scene.cloud.means, &latent)?;
            let img = rasterize(
                &scene.cloud,
                &camera,
                Some(&colors),
                scene.background,
                RenderOptions::default(),
            )?
            .color;
            img.save_png(&a.out.join(format!("interp_{r}_{c}.png")))?;
            tiles.push(img);
        }
    }
    let (tw, th) = (camera.width as usize, camera.height as usize);
    let mosaic = ImageBuffer::from_fn(tw * n, th * n, |x, y| tiles[(y / th) * n + x / tw].get(x % tw, y % th));
    let grid_path = a.out.join("grid.png");
    mosaic.save_png(&grid_path)?;
    println!("wrote {} blends and {}", n * n, grid_path.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let modes = a
        .mode
        .iter()
        .map(|m| m.trim().parse::<EvalMode>().map_err(|e| usage(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    if modes.is_empty() {
        return Err(usage("--mode lists no modes"));
    }
    if a.views < 2 {
        return Err(usage("--views must be at least 2"));
    }
    if modes.contains(&EvalMode::Gss) && a.field.is_none() {
        return Err(usage("the gss mode needs --field"));
    }
    let scene = load_scene(&a.scene)?;
    let styles = load_styles(&a.styles)?;
    let field = a.field.as_deref().map(StyleField::load).transpose()?;
    let mut ctx = EvalContext::new(&scene, &styles, field.as_ref());
    ctx.backend = load_backend(&a.backend)?;
    ctx.fit = FitConfig {
        iterations: a.iters,
        lr: a.lr,
        seed: a.seed,
        ..FitConfig::default()
    };
    let style_indices: Vec<usize> = match a.style_index {
        Some(i) if i >= styles.len() => return Err(usage(format!("--style-index {i} out of range"))),
        Some(i) => vec![i],
        None => (0..styles.len()).collect(),
    };
    let cameras = path_cameras(&scene.cameras, a.views)?;
    if a.views != EVAL_VIEWS {
        log::info!("evaluating {} views (default {EVAL_VIEWS})", a.views);
    }
    let mut rows = Vec::new();
    println!("{:<10} {:<6} {:>10} {:>10}", "mode", "pairs", "wrmse", "wperc");
    for &mode in &modes {
        let mut mode_rows = Vec::new();
        for &s in &style_indices {
            for mut row in ctx.report(mode, s, &cameras)? {
                row.pair_id = format!("{}:{}", styles.names[s], row.pair_id);
                mode_rows.push(row);
            }
        }
        for pairing in ["short", "long"] {
            let subset: Vec<_> = mode_rows
                .iter()
                .filter(|r| r.pair_id.contains(&format!(":{pairing}-")))
                .cloned()
                .collect();
            let (r, p) = report_means(&subset);
            println!("{:<10} {:<6} {:>10.5} {:>10.5}", mode.as_str(), pairing, r, p);
        }
        rows.extend(mode_rows);
    }
    std::fs::write(&a.out, report_csv(&rows)).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {} rows to {}", rows.len(), a.out.display());
    Ok(())
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let scene = load_scene(&a.scene)?;
    let styles = load_styles(&a.styles)?;
    let field = StyleField::load(&a.field)?;
    if styles.len() < 4 {
        return Err(usage(format!("serve needs 4 style images, got {}", styles.len())));
    }
    if styles.len() > 4 {
        log::warn!("using the first 4 of {} styles", styles.len());
    }
    let model = Arc::new(ModelSnapshot::new(scene.cloud, field, scene.background, &styles)?);
    let runtime = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    runtime.block_on(splatstyle_service::serve(model, a.addr))?;
    Ok(())
}
