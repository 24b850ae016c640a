//! Procedural painting-like style images used by tests, benchmarks and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::ImageBuffer;

pub const STYLE_NAMES: [&str; 8] = ["swirl", "sunset", "mosaic", "ink", "pastel", "neon", "forest", "ember"];

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    std::array::from_fn(|c| a[c] + (b[c] - a[c]) * t)
}

fn fract(v: f64) -> f64 {
    v - v.floor()
}

/// Style image `index` (0..8) at `size × size`. Deterministic.
pub fn style_fixture(index: usize, size: usize) -> ImageBuffer {
    let n = size as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + index as u64);
    match index % STYLE_NAMES.len() {
        0 => ImageBuffer::from_fn(size, size, |x, y| {
            let (u, v) = (x as f64 / n - 0.5, y as f64 / n - 0.5);
            let r = (u * u + v * v).sqrt();
            let a = v.atan2(u) + 9.0 * r;
            let t = 0.5 + 0.5 * (6.0 * a).sin();
            mix([0.05, 0.1, 0.45], [0.95, 0.85, 0.2], t * t)
        }),
        1 => ImageBuffer::from_fn(size, size, |x, y| {
            let v = y as f64 / n;
            let band = ((v * 14.0 + (x as f64 / n * 9.0).sin() * 0.6).floor() as i64).rem_euclid(2) as f64;
            mix(
                mix([0.98, 0.55, 0.1], [0.35, 0.05, 0.4], v),
                [0.9, 0.2, 0.3],
                0.35 * band,
            )
        }),
        2 => {
            let sites: Vec<([f64; 2], [f64; 3])> = (0..40)
                .map(|_| {
                    (
                        [rng.gen_range(0.0..n), rng.gen_range(0.0..n)],
                        std::array::from_fn(|_| rng.gen_range(0.1..1.0)),
                    )
                })
                .collect();
            ImageBuffer::from_fn(size, size, |x, y| {
                let p = [x as f64, y as f64];
                let mut best = (f64::INFINITY, f64::INFINITY, [0.0; 3]);
                for (s, col) in &sites {
                    let d = (p[0] - s[0]).hypot(p[1] - s[1]);
                    if d < best.0 {
                        best = (d, best.0, *col);
                    } else if d < best.1 {
                        best.1 = d;
                    }
                }
                if best.1 - best.0 < 1.5 {
                    [0.1; 3]
                } else {
                    best.2
                }
            })
        }
        3 => {
            let strokes: Vec<[f64; 5]> = (0..25)
                .map(|_| {
                    [
                        rng.gen_range(0.0..n),
                        rng.gen_range(0.0..n),
                        rng.gen_range(0.0..std::f64::consts::PI),
                        rng.gen_range(0.1..0.45) * n,
                        rng.gen_range(1.0..4.0),
                    ]
                })
                .collect();
            ImageBuffer::from_fn(size, size, |x, y| {
                let mut ink: f64 = 0.0;
                for s in &strokes {
                    let (dx, dy) = (x as f64 - s[0], y as f64 - s[1]);
                    let along = dx * s[2].cos() + dy * s[2].sin();
                    let across = -dx * s[2].sin() + dy * s[2].cos();
                    if along.abs() < s[3] {
                        ink = ink.max((-across * across / (s[4] * s[4])).exp());
                    }
                }
                mix([0.93, 0.9, 0.82], [0.05, 0.05, 0.08], ink)
            })
        }
        4 => {
            let blobs: Vec<([f64; 3], [f64; 3])> = (0..12)
                .map(|_| {
                    (
                        [
                            rng.gen_range(0.0..n),
                            rng.gen_range(0.0..n),
                            rng.gen_range(0.08..0.25) * n,
                        ],
                        [
                            rng.gen_range(0.7..1.0),
                            rng.gen_range(0.6..0.9),
                            rng.gen_range(0.75..1.0),
                        ],
                    )
                })
                .collect();
            ImageBuffer::from_fn(size, size, |x, y| {
                let mut c = [0.85, 0.88, 0.92];
                for (b, col) in &blobs {
                    let d = (x as f64 - b[0]).hypot(y as f64 - b[1]) / b[2];
                    c = mix(c, *col, (-d * d).exp() * 0.8);
                }
                c
            })
        }
        5 => ImageBuffer::from_fn(size, size, |x, y| {
            let (u, v) = (x as f64 / n * 8.0, y as f64 / n * 8.0);
            let line = (fract(u) < 0.12) || (fract(v) < 0.12);
            let diag = fract((u + v) * 0.5) < 0.08;
            if line {
                [0.1, 1.0, 0.9]
            } else if diag {
                [1.0, 0.1, 0.8]
            } else {
                [0.04, 0.02, 0.12]
            }
        }),
        6 => ImageBuffer::from_fn(size, size, |x, y| {
            let (u, v) = (x as f64 / n, y as f64 / n);
            let trunks = (0.5 + 0.5 * (u * 40.0 + (v * 7.0).sin() * 2.0).sin()).powi(8);
            let canopy = 0.5 + 0.5 * ((u * 23.0).sin() * (v * 19.0).cos());
            let base = mix([0.05, 0.25, 0.08], [0.45, 0.7, 0.2], canopy * (1.0 - v));
            mix(base, [0.3, 0.18, 0.08], trunks * v)
        }),
        _ => ImageBuffer::from_fn(size, size, |x, y| {
            let (u, v) = (x as f64 / n, y as f64 / n);
            let flame = (1.0 - v) * (0.6 + 0.4 * ((u * 17.0 + v * 5.0).sin() * (v * 29.0).cos()));
            let spark = if ((x * 7919 + y * 104_729) % 97) == 0 { 1.0 } else { 0.0 };
            mix(
                mix([0.1, 0.0, 0.0], [1.0, 0.45, 0.05], flame.clamp(0.0, 1.0)),
                [1.0, 1.0, 0.7],
                spark,
            )
        }),
    }
}

/// All eight styles with their names.
pub fn style_fixtures(size: usize) -> (Vec<String>, Vec<ImageBuffer>) {
    (
        STYLE_NAMES.iter().map(|s| s.to_string()).collect(),
        (0..STYLE_NAMES.len()).map(|i| style_fixture(i, size)).collect(),
    )
}
