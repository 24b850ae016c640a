use proptest::prelude::*;
use splatstyle_core::loss::{compute_losses, LossWeights};
use splatstyle_core::metrics::{warped_rmse, FlowField};
use splatstyle_core::nn::{mlp_forward, MlpParams};
use splatstyle_core::scene::synth::random_cloud;
use splatstyle_core::scene::{read_ply, write_ply};
use splatstyle_core::style2d::{adain_transfer, FeatureMap, LATENT_DIM};
use splatstyle_core::stylefield::corner_weights;
use splatstyle_core::{normalize_weights, render, style_latent, Camera, GaussianCloud, ImageBuffer, RenderOptions};

fn unit_quat() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(-1.0..1.0f64)
        .prop_filter("non-zero", |q| q.iter().map(|v| v * v).sum::<f64>() > 1e-2)
        .prop_map(|q| {
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            q.map(|v| v / n)
        })
}

fn gaussian() -> impl Strategy<Value = ([f64; 3], [f64; 4], [f64; 3], f64, [f64; 3])> {
    (
        prop::array::uniform3(-1.0..1.0f64),
        unit_quat(),
        prop::array::uniform3(0.02..0.4f64),
        0.0..=1.0f64,
        prop::array::uniform3(0.0..=1.0f64),
    )
}

fn cloud(max: usize) -> impl Strategy<Value = GaussianCloud> {
    prop::collection::vec(gaussian(), 0..max).prop_map(|gs| {
        let mut c = GaussianCloud::default();
        for (m, q, s, o, col) in gs {
            c.means.push(m);
            c.rotations.push(q);
            c.scales.push(s);
            c.opacities.push(o);
            c.base_colors.push(col);
        }
        c
    })
}

fn image(w: usize, h: usize) -> impl Strategy<Value = ImageBuffer> {
    prop::collection::vec(prop::array::uniform3(0.0..=1.0f64), w * h).prop_map(move |data| {
        let mut im = ImageBuffer::new(w, h, [0.0; 3]);
        im.data = data;
        im
    })
}

fn camera() -> Camera {
    Camera::look_at([0.0, 0.0, -4.0], [0.0; 3], 60.0, 40, 32).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ply_round_trip_within_tolerance(c in cloud(40)) {
        let mut bytes = Vec::new();
        write_ply(&c, &mut bytes).unwrap();
        let back = read_ply(bytes.as_slice()).unwrap();
        prop_assert_eq!(back.len(), c.len());
        for i in 0..c.len() {
            for k in 0..3 {
                prop_assert!((back.means[i][k] - c.means[i][k]).abs() <= 1e-5);
                prop_assert!((back.scales[i][k] - c.scales[i][k]).abs() <= 1e-5);
                prop_assert!((back.base_colors[i][k] - c.base_colors[i][k]).abs() <= 1e-5);
            }
            prop_assert!((back.opacities[i] - c.opacities[i]).abs() <= 1e-5);
            // q and -q are the same rotation
            let dot: f64 = (0..4).map(|k| back.rotations[i][k] * c.rotations[i][k]).sum();
            prop_assert!((dot.abs() - 1.0).abs() <= 1e-5);
        }
    }

    #[test]
    fn render_is_linear_in_colors(seed in 0u64..1000, n in 1usize..120, bg in prop::array::uniform3(0.0..1.0f64)) {
        let c = random_cloud(n, seed);
        let cam = camera();
        let c1: Vec<[f64; 3]> = c.base_colors.iter().map(|v| [v[1], v[2], v[0]]).collect();
        let c2: Vec<[f64; 3]> = c.base_colors.clone();
        let sum: Vec<[f64; 3]> = c1.iter().zip(&c2).map(|(a, b)| [a[0] + b[0], a[1] + b[1], a[2] + b[2]]).collect();
        let r = |cols: &[[f64; 3]]| render(&c, &cam, Some(cols), bg, RenderOptions::default()).unwrap();
        let (a, b, s) = (r(&c1), r(&c2), r(&sum));
        for p in 0..s.color.data.len() {
            let t = 1.0 - s.alpha.data[p];
            for k in 0..3 {
                let expected = a.color.data[p][k] + b.color.data[p][k] - t * bg[k];
                prop_assert!((s.color.data[p][k] - expected).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn alpha_is_bounded_and_color_splits_into_background_and_splats(seed in 0u64..1000, n in 0usize..150) {
        let c = random_cloud(n, seed);
        let bg = [0.3, 0.6, 0.9];
        let with_bg = render(&c, &camera(), None, bg, RenderOptions::default()).unwrap();
        let black = render(&c, &camera(), None, [0.0; 3], RenderOptions::default()).unwrap();
        for p in 0..with_bg.alpha.data.len() {
            let a = with_bg.alpha.data[p];
            prop_assert!((0.0..=1.0).contains(&a));
            for k in 0..3 {
                let expected = bg[k] * (1.0 - a) + black.color.data[p][k];
                prop_assert!((with_bg.color.data[p][k] - expected).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn alpha_never_drops_when_one_opacity_grows(seed in 0u64..1000, n in 1usize..80, pick in 0usize..80, bump in 0.0..0.5f64) {
        let c = random_cloud(n, seed);
        let mut more = c.clone();
        let i = pick % n;
        more.opacities[i] = (more.opacities[i] + bump).min(1.0);
        let before = render(&c, &camera(), None, [0.0; 3], RenderOptions::default()).unwrap();
        let after = render(&more, &camera(), None, [0.0; 3], RenderOptions::default()).unwrap();
        for (a, b) in before.alpha.data.iter().zip(&after.alpha.data) {
            prop_assert!(*b >= *a - 1e-12, "alpha fell from {} to {}", a, b);
        }
    }

    #[test]
    fn color_head_outputs_are_valid_colors(
        seed in 0u64..1000,
        input in prop::collection::vec(-50.0..50.0f64, 24),
        head in prop::collection::vec(-3.0..3.0f64, 3 * 16),
    ) {
        let mut p = MlpParams::color_head(8, &[16, 16], 3, seed);
        p.layers.last_mut().unwrap().weights.copy_from_slice(&head);
        p.touch();
        let (out, _) = mlp_forward(&p, &input).unwrap();
        prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn adain_is_idempotent_in_statistics(
        content in prop::collection::vec(-3.0..3.0f64, 4 * 36),
        style in prop::collection::vec(-1.0..1.0f64, 4 * 25),
    ) {
        let mut c = FeatureMap::zeros(4, 6, 6);
        c.data = content;
        let mut s = FeatureMap::zeros(4, 5, 5);
        s.data = style;
        let target = s.channel_stats();
        prop_assume!(c.channel_stats().iter().zip(&target).all(|(cs, ts)| cs.1 >= ts.1 && cs.1 > 1e-3));
        let once = adain_transfer(&c, &s).unwrap();
        let twice = adain_transfer(&once, &s).unwrap();
        for ((m, sd), (tm, tsd)) in twice.channel_stats().into_iter().zip(target) {
            prop_assert!((m - tm).abs() <= 1e-5 && (sd - tsd).abs() <= 1e-5);
        }
    }

    #[test]
    fn style_latent_has_fixed_size_and_is_deterministic(img in image(12, 9)) {
        let a = style_latent(&img);
        prop_assert_eq!(a.len(), LATENT_DIM);
        prop_assert_eq!(a, style_latent(&img));
    }

    #[test]
    fn accepted_weights_sum_to_one(w in prop::collection::vec(0.0..1.0f64, 4)) {
        let sum: f64 = w.iter().sum();
        match normalize_weights(&w) {
            Ok(n) => {
                prop_assert!((sum - 1.0).abs() <= 1e-3);
                prop_assert!((n.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            }
            Err(_) => prop_assert!((sum - 1.0).abs() > 1e-3),
        }
    }

    #[test]
    fn pad_weights_partition_unity(u in -0.5..1.5f64, v in -0.5..1.5f64) {
        let w = corner_weights(u, v);
        prop_assert!(w.iter().all(|x| *x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(normalize_weights(&w).is_ok());
    }

    #[test]
    fn total_loss_is_the_weighted_sum(
        g in image(5, 4), s in image(5, 4), u in image(5, 4),
        lg in 0.0..10.0f64, lc in 0.0..100.0f64,
    ) {
        let r = compute_losses(&g, &s, &u, LossWeights { guide: lg, content: lc }).unwrap();
        prop_assert!(r.guide >= 0.0 && r.content >= 0.0);
        prop_assert_eq!(r.total, lg * r.guide + lc * r.content);
    }

    #[test]
    fn warped_rmse_is_zero_on_itself_and_never_negative(a in image(8, 6), b in image(8, 6), mask in prop::collection::vec(any::<bool>(), 48)) {
        prop_assume!(mask.iter().any(|m| *m));
        let flow = FlowField::identity(8, 6, mask);
        prop_assert_eq!(warped_rmse(&a, &a, &flow).unwrap(), 0.0);
        prop_assert!(warped_rmse(&a, &b, &flow).unwrap() >= 0.0);
    }

    #[test]
    fn look_at_rotations_are_orthonormal(eye in prop::array::uniform3(-5.0..5.0f64), fov in 20.0..100.0f64) {
        prop_assume!(eye[0].hypot(eye[2]) > 0.1);
        let cam = Camera::look_at(eye, [0.0; 3], fov, 64, 48).unwrap();
        let r = cam.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let expected = f64::from(u8::from(i == j));
                prop_assert!((dot - expected).abs() <= 1e-6);
            }
        }
        prop_assert!(cam.fx > 0.0 && cam.fy > 0.0 && cam.cx > 0.0 && cam.cx < 64.0 && cam.cy > 0.0 && cam.cy < 48.0);
    }
}
