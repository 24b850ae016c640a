use super::*;
use crate::scene::synth::{default_test_camera, random_cloud};

/// Per-pixel oracle: every projected splat, one global `(depth, index)` sort.
fn brute_force(cloud: &GaussianCloud, cam: &Camera, bg: [f64; 3]) -> (Vec<[f64; 3]>, Vec<f64>) {
    let mut splats: Vec<Splat2D> = (0..cloud.len()).filter_map(|i| project_splat(cloud, i, cam)).collect();
    splats.sort_by(|a, b| {
        a.depth
            .partial_cmp(&b.depth)
            .unwrap()
            .then(a.gaussian_index.cmp(&b.gaussian_index))
    });
    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut color = Vec::new();
    let mut alpha = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let mut t = 1.0;
            let mut c = [0.0; 3];
            for s in &splats {
                let Some(a) = s.alpha_at(x as f64 + 0.5, y as f64 + 0.5) else {
                    continue;
                };
                if t * (1.0 - a) < TRANSMITTANCE_MIN {
                    break;
                }
                for k in 0..3 {
                    c[k] += cloud.base_colors[s.gaussian_index][k] * a * t;
                }
                t *= 1.0 - a;
            }
            color.push([0, 1, 2].map(|k| c[k] + t * bg[k]));
            alpha.push(1.0 - t);
        }
    }
    (color, alpha)
}

fn single(mean: [f64; 3], scale: f64, opacity: f64, color: [f64; 3]) -> GaussianCloud {
    GaussianCloud::new(
        vec![mean],
        vec![[1.0, 0.0, 0.0, 0.0]],
        vec![[scale; 3]],
        vec![opacity],
        vec![color],
    )
    .unwrap()
}

#[test]
fn on_axis_covariance_matches_closed_form_and_numerical_jacobian() {
    let cam = default_test_camera(64, 64);
    let (d, s) = (4.0, 0.2);
    let cloud = single([0.0, 0.0, 0.0], s, 0.9, [1.0; 3]);
    let splat = project_splat(&cloud, 0, &cam).unwrap();
    let f = cam.fx;
    let expect = (f * s / d).powi(2) + LOW_PASS;
    assert!((splat.cov2d[0] - expect).abs() < 1e-9);
    assert!((splat.cov2d[2] - expect).abs() < 1e-9);
    assert!(splat.cov2d[1].abs() < 1e-9);
    assert_eq!(splat.mean2d, [cam.cx, cam.cy]);

    // off-axis anisotropic case against a finite-difference Jacobian
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut cloud = single([0.4, -0.3, 0.5], 0.1, 0.9, [1.0; 3]);
    cloud.rotations[0] = [h, h * 0.6, 0.0, h * 0.8];
    cloud.scales[0] = [0.3, 0.1, 0.05];
    let splat = project_splat(&cloud, 0, &cam).unwrap();
    let pix = |p: [f64; 3]| cam.project(cam.to_camera(p));
    let eps = 1e-6;
    let mut jac = [[0.0; 3]; 2];
    for k in 0..3 {
        let mut a = cloud.means[0];
        let mut b = a;
        a[k] += eps;
        b[k] -= eps;
        let (pa, pb) = (pix(a), pix(b));
        for r in 0..2 {
            jac[r][k] = (pa[r] - pb[r]) / (2.0 * eps);
        }
    }
    let sigma = cloud.covariance(0).unwrap();
    let mut cov = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    cov[r][c] += jac[r][i] * sigma[(i, j)] * jac[c][j];
                }
            }
        }
    }
    assert!((splat.cov2d[0] - cov[0][0] - LOW_PASS).abs() < 1e-5);
    assert!((splat.cov2d[1] - cov[0][1]).abs() < 1e-5);
    assert!((splat.cov2d[2] - cov[1][1] - LOW_PASS).abs() < 1e-5);
}

#[test]
fn behind_camera_is_culled() {
    let cam = default_test_camera(32, 32);
    // camera sits at z = -4 looking at +z: z = -5 is depth -1
    let cloud = single([0.0, 0.0, -5.0], 0.2, 0.9, [1.0; 3]);
    assert!(project_splat(&cloud, 0, &cam).is_none());
}

#[test]
fn empty_cloud_renders_background() {
    let cam = default_test_camera(40, 24);
    let out = render(
        &GaussianCloud::default(),
        &cam,
        None,
        [0.2, 0.3, 0.4],
        RenderOptions::default(),
    )
    .unwrap();
    assert!(out.color.data.iter().all(|p| *p == [0.2, 0.3, 0.4]));
    assert!(out.alpha.data.iter().all(|a| *a == 0.0));
    assert!(out.depth.data.iter().all(|d| *d == 0.0));
}

#[test]
fn single_opaque_splat_clamps_alpha() {
    let cam = default_test_camera(64, 64);
    let cloud = single([0.0, 0.0, 0.0], 3.0, 1.0, [1.0, 0.0, 0.0]);
    let bg = [0.0, 0.0, 1.0];
    let out = render(&cloud, &cam, None, bg, RenderOptions::default()).unwrap();
    let c = out.color.get(32, 32);
    assert!((c[0] - 0.99).abs() < 1e-12);
    assert!((c[2] - 0.01).abs() < 1e-12);
    assert!((out.alpha.get(32, 32) - 0.99).abs() < 1e-12);
    assert!((out.depth.get(32, 32) - 4.0).abs() < 1e-12);
}

#[test]
fn override_length_mismatch_is_invalid() {
    let cam = default_test_camera(16, 16);
    let cloud = random_cloud(3, 0);
    let err = render(&cloud, &cam, Some(&[[0.0; 3]; 2]), [0.0; 3], RenderOptions::default()).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)));
}

#[test]
fn tile_renderer_matches_brute_force() {
    let cam = default_test_camera(64, 64);
    for seed in 0..12 {
        let n = 20 + (seed as usize * 41) % 480;
        let cloud = random_cloud(n, seed);
        let bg = [0.1, 0.5, 0.9];
        let out = render(&cloud, &cam, None, bg, RenderOptions::default()).unwrap();
        let (color, alpha) = brute_force(&cloud, &cam, bg);
        for p in 0..color.len() {
            for k in 0..3 {
                assert!((out.color.data[p][k] - color[p][k]).abs() <= 1e-5, "seed {seed}");
            }
            assert!((out.alpha.data[p] - alpha[p]).abs() <= 1e-5);
        }
    }
}

#[test]
fn non_tile_aligned_resolution_matches_brute_force() {
    let cam = default_test_camera(37, 29);
    let cloud = random_cloud(200, 99);
    let out = render(&cloud, &cam, None, [0.0; 3], RenderOptions::default()).unwrap();
    let (color, _) = brute_force(&cloud, &cam, [0.0; 3]);
    for (a, b) in out.color.data.iter().zip(&color) {
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() <= 1e-5);
        }
    }
}

#[test]
fn colors_enter_linearly() {
    let cam = default_test_camera(48, 48);
    let cloud = random_cloud(150, 5);
    let bg = [0.3, 0.6, 0.2];
    let c1: Vec<[f64; 3]> = random_cloud(150, 6).base_colors;
    let c2: Vec<[f64; 3]> = random_cloud(150, 7).base_colors;
    let sum: Vec<[f64; 3]> = c1
        .iter()
        .zip(&c2)
        .map(|(a, b)| [a[0] + b[0], a[1] + b[1], a[2] + b[2]])
        .collect();
    let zero = vec![[0.0; 3]; 150];
    let r = |c: &[[f64; 3]]| {
        render(&cloud, &cam, Some(c), bg, RenderOptions::default())
            .unwrap()
            .color
    };
    let (a, b, s, z) = (r(&c1), r(&c2), r(&sum), r(&zero));
    for p in 0..a.data.len() {
        for k in 0..3 {
            let lhs = s.data[p][k];
            let rhs = a.data[p][k] + b.data[p][k] - z.data[p][k];
            assert!((lhs - rhs).abs() <= 1e-5);
        }
    }
}

#[test]
fn alpha_grows_with_opacity_until_saturation() {
    // The early-termination rule can only lower alpha in pixels that end
    // above 0.99 coverage, so the check is monotone below that level.
    let cam = default_test_camera(48, 48);
    for seed in 0..5 {
        let cloud = random_cloud(120, 100 + seed);
        let base = render(&cloud, &cam, None, [0.0; 3], RenderOptions::default()).unwrap();
        for i in (0..120).step_by(17) {
            let mut bumped = cloud.clone();
            bumped.opacities[i] = (bumped.opacities[i] + 0.3).min(1.0);
            let out = render(&bumped, &cam, None, [0.0; 3], RenderOptions::default()).unwrap();
            for (new, old) in out.alpha.data.iter().zip(&base.alpha.data) {
                assert!(*new >= old.min(0.99) - 1e-12, "alpha {old} -> {new}");
            }
        }
    }
}

#[test]
fn backward_of_zero_is_zero() {
    let cam = default_test_camera(32, 32);
    let cloud = random_cloud(30, 1);
    let out = render(&cloud, &cam, None, [0.0; 3], RenderOptions::with_contributions()).unwrap();
    let g = render_backward_colors(&out, &ImageBuffer::new(32, 32, [0.0; 3])).unwrap();
    assert!(g.iter().all(|v| *v == [0.0; 3]));
}

#[test]
fn backward_single_pixel_weight_is_clamped_alpha() {
    let cam = default_test_camera(33, 33);
    // projects to (16.5, 16.5): the center of pixel (16, 16)
    let cloud = single([0.0, 0.0, 0.0], 1e-4, 1.0, [0.2, 0.4, 0.6]);
    let out = render(&cloud, &cam, None, [0.0; 3], RenderOptions::with_contributions()).unwrap();
    let mut dl = ImageBuffer::new(33, 33, [0.0; 3]);
    dl.data[16 * 33 + 16] = [1.0, 0.0, 0.0];
    let g = render_backward_colors(&out, &dl).unwrap();
    assert!((g[0][0] - 0.99).abs() < 1e-12);
    assert_eq!(g[0][1], 0.0);
    assert_eq!(g[0][2], 0.0);
}

#[test]
fn backward_without_records_is_state_error() {
    let cam = default_test_camera(16, 16);
    let out = render(&random_cloud(3, 0), &cam, None, [0.0; 3], RenderOptions::default()).unwrap();
    let err = render_backward_colors(&out, &ImageBuffer::new(16, 16, [1.0; 3])).unwrap_err();
    assert!(matches!(err, Error::State(_)));
}

#[test]
fn backward_matches_central_differences() {
    let cam = default_test_camera(64, 64);
    let cloud = random_cloud(50, 21);
    let bg = [0.2; 3];
    let out = render(&cloud, &cam, None, bg, RenderOptions::with_contributions()).unwrap();
    let g = render_backward_colors(&out, &ImageBuffer::new(64, 64, [1.0; 3])).unwrap();
    let loss = |c: &[[f64; 3]]| -> f64 {
        render(&cloud, &cam, Some(c), bg, RenderOptions::default())
            .unwrap()
            .color
            .data
            .iter()
            .flatten()
            .sum()
    };
    let eps = 1e-3;
    for i in 0..50 {
        for k in 0..3 {
            let mut plus = cloud.base_colors.clone();
            let mut minus = cloud.base_colors.clone();
            plus[i][k] += eps;
            minus[i][k] -= eps;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            let rel = (fd - g[i][k]).abs() / fd.abs().max(g[i][k].abs()).max(1e-6);
            assert!(
                rel <= 1e-3 || (fd - g[i][k]).abs() < 1e-9,
                "gaussian {i}: fd {fd} vs {}",
                g[i][k]
            );
        }
    }
}

#[test]
fn recolor_is_bit_identical_to_override_render() {
    let cam = default_test_camera(40, 30);
    let cloud = random_cloud(80, 8);
    let bg = [0.7, 0.1, 0.3];
    let out = render(&cloud, &cam, None, bg, RenderOptions::with_contributions()).unwrap();
    let colors = random_cloud(80, 9).base_colors;
    let direct = render(&cloud, &cam, Some(&colors), bg, RenderOptions::default()).unwrap();
    assert_eq!(out.recolor(&colors).unwrap(), direct.color);
}
