//! Deterministic synthetic scenes with exact geometry.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Camera, GaussianCloud, SceneBundle};
use crate::error::{Error, Result};

/// Horizontal field of view of synthetic cameras, degrees.
pub const SYNTH_FOV_DEG: f64 = 50.0;
/// Total angular span of the camera arc, degrees.
pub const ARC_SPAN_DEG: f64 = 30.0;
pub const ARC_RADIUS: f64 = 4.0;
pub const DEFAULT_RESOLUTION: (u32, u32) = (96, 72);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    Lattice,
    Spheres,
    TexturedBox,
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lattice" => Ok(Self::Lattice),
            "spheres" => Ok(Self::Spheres),
            "textured-box" => Ok(Self::TexturedBox),
            other => Err(Error::invalid(format!("unknown synthetic scene kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub kind: SyntheticKind,
    pub n_gaussians: usize,
    pub n_cameras: usize,
    pub seed: u64,
    pub resolution: (u32, u32),
}

impl SceneSpec {
    pub fn new(kind: SyntheticKind, n_gaussians: usize, n_cameras: usize, seed: u64) -> Self {
        Self {
            kind,
            n_gaussians,
            n_cameras,
            seed,
            resolution: DEFAULT_RESOLUTION,
        }
    }
}

/// `n` cameras on a horizontal arc around the origin, all looking at it.
pub fn arc_cameras(n: usize, width: u32, height: u32) -> Result<Vec<Camera>> {
    (0..n)
        .map(|k| {
            let theta = if n == 1 {
                0.0
            } else {
                (-0.5 + k as f64 / (n - 1) as f64) * ARC_SPAN_DEG.to_radians()
            };
            let eye = [ARC_RADIUS * theta.sin(), -0.3, -ARC_RADIUS * theta.cos()];
            Camera::look_at(eye, [0.0; 3], SYNTH_FOV_DEG, width, height)
        })
        .collect()
}

fn random_unit_quaternion(rng: &mut ChaCha8Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let n2: f64 = q.iter().map(|v| v * v).sum();
        if n2 > 1e-4 && n2 <= 1.0 {
            let n = n2.sqrt();
            return q.map(|v| v / n);
        }
    }
}

/// Quaternion rotating +z onto the unit vector `d`.
fn quaternion_z_to(d: [f64; 3]) -> [f64; 4] {
    // half-way vector construction
    let (x, y, z) = (d[0], d[1], d[2]);
    if z < -1.0 + 1e-12 {
        return [0.0, 1.0, 0.0, 0.0];
    }
    let w = 1.0 + z;
    let q = [w, -y, x, 0.0];
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / n)
}

/// Random Gaussians in `[-1, 1]³`, seen by [`default_test_camera`].
pub fn random_cloud(n: usize, seed: u64) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = GaussianCloud::default();
    for _ in 0..n {
        cloud.means.push(std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
        cloud.rotations.push(random_unit_quaternion(&mut rng));
        cloud.scales.push(std::array::from_fn(|_| rng.gen_range(0.03..0.3)));
        cloud.opacities.push(rng.gen_range(0.05..1.0));
        cloud.base_colors.push(std::array::from_fn(|_| rng.gen_range(0.0..1.0)));
    }
    cloud
}

/// Camera at distance 4 on the -z axis looking at the origin.
pub fn default_test_camera(width: u32, height: u32) -> Camera {
    Camera::look_at([0.0, 0.0, -4.0], [0.0; 3], 60.0, width, height).expect("canonical test camera is valid")
}

/// Camera on the -z side of `cloud` that fits its bounding sphere in view.
pub fn framing_camera(cloud: &GaussianCloud, width: u32, height: u32) -> Result<Camera> {
    let (lo, hi) = cloud.bounds();
    let center: [f64; 3] = std::array::from_fn(|k| 0.5 * (lo[k] + hi[k]));
    let radius = (0..3)
        .map(|k| (hi[k] - lo[k]).powi(2))
        .sum::<f64>()
        .sqrt()
        .mul_add(0.5, 1e-3);
    let tan_x = (0.5 * SYNTH_FOV_DEG).to_radians().tan();
    let tan_min = tan_x.min(tan_x * height as f64 / width as f64);
    let dist = 1.1 * radius / tan_min.atan().sin();
    let eye = [center[0], center[1] - 0.2 * dist, center[2] - dist];
    Camera::look_at(eye, center, SYNTH_FOV_DEG, width, height)
}

pub fn make_synthetic_scene(spec: &SceneSpec) -> Result<SceneBundle> {
    if spec.n_gaussians == 0 {
        return Err(Error::invalid("n_gaussians must be at least 1"));
    }
    if spec.n_cameras == 0 {
        return Err(Error::invalid("n_cameras must be at least 1"));
    }
    let (w, h) = spec.resolution;
    let cameras = arc_cameras(spec.n_cameras, w, h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (cloud, background) = match spec.kind {
        SyntheticKind::Lattice => (lattice(spec.n_gaussians, &mut rng), [0.0; 3]),
        SyntheticKind::Spheres => (spheres(spec.n_gaussians, &cameras, &mut rng), [0.05, 0.05, 0.05]),
        SyntheticKind::TexturedBox => (textured_box(spec.n_gaussians, &mut rng), [1.0; 3]),
    };
    cloud.validate()?;
    SceneBundle::new(cloud, cameras, background)
}

fn lattice(n: usize, rng: &mut ChaCha8Rng) -> GaussianCloud {
    let k = (n as f64).cbrt().ceil().max(1.0) as usize;
    let spacing = if k > 1 { 2.0 / (k - 1) as f64 } else { 1.0 };
    let mut cloud = GaussianCloud::default();
    'outer: for iz in 0..k {
        for iy in 0..k {
            for ix in 0..k {
                if cloud.len() == n {
                    break 'outer;
                }
                let p = [ix, iy, iz].map(|i| if k > 1 { -1.0 + i as f64 * spacing } else { 0.0 });
                cloud.means.push(p);
                cloud.rotations.push(random_unit_quaternion(rng));
                cloud.scales.push([0.25 * spacing, 0.2 * spacing, 0.15 * spacing]);
                cloud.opacities.push(0.8);
                cloud.base_colors.push(p.map(|v| 0.5 + 0.5 * v * 0.9));
            }
        }
    }
    cloud
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Front-facing scene: a textured backdrop wall filling every view plus a
/// handful of textured spheres in front of it.
fn spheres(n: usize, cameras: &[Camera], rng: &mut ChaCha8Rng) -> GaussianCloud {
    const WALL_Z: f64 = 1.5;
    let n_wall = (n * 2 / 5).max(1).min(n);
    let n_sph = n - n_wall;
    let mut cloud = GaussianCloud::default();

    // wall samples restricted to the union of camera frustums
    let (half_w, half_h) = (4.5, 3.0);
    let area_est = 4.0 * half_w * half_h * 0.6;
    let wall_sigma = (area_est / n_wall as f64).sqrt() * 0.75;
    let mut placed = 0;
    while placed < n_wall {
        let p = [rng.gen_range(-half_w..half_w), rng.gen_range(-half_h..half_h), WALL_Z];
        if !cameras.iter().any(|c| c.sees(p, 0.0)) {
            continue;
        }
        let stripe = ((p[0] * 1.7 + p[1] * 0.9).sin() * (p[1] * 2.3).cos()) * 0.5 + 0.5;
        let base = hsv(0.08 + 0.5 * stripe, 0.55, 0.35 + 0.5 * stripe);
        let jitter = rng.gen_range(-0.04..0.04);
        cloud.means.push(p);
        cloud.rotations.push(quaternion_z_to([0.0, 0.0, 1.0]));
        cloud.scales.push([
            wall_sigma * rng.gen_range(0.8..1.2),
            wall_sigma * rng.gen_range(0.8..1.2),
            0.01,
        ]);
        cloud.opacities.push(rng.gen_range(0.6..1.0));
        cloud.base_colors.push(base.map(|v| (v + jitter).clamp(0.0, 1.0)));
        placed += 1;
    }

    let n_spheres = 5usize.min(n_sph.max(1));
    let centers: Vec<([f64; 3], f64, f64)> = (0..n_spheres)
        .map(|k| {
            let c = [
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-0.7..0.7),
                rng.gen_range(-0.4..0.6),
            ];
            let r = rng.gen_range(0.3..0.55);
            (c, r, k as f64 / n_spheres as f64 + rng.gen_range(0.0..0.1))
        })
        .collect();
    let total_area: f64 = centers.iter().map(|(_, r, _)| r * r).sum();
    let mut placed = 0;
    while placed < n_sph {
        // area-proportional sphere choice
        let mut pick = rng.gen_range(0.0..total_area);
        let mut idx = 0;
        for (i, (_, r, _)) in centers.iter().enumerate() {
            if pick < r * r {
                idx = i;
                break;
            }
            pick -= r * r;
            idx = i;
        }
        let (c, r, hue) = centers[idx];
        let z: f64 = rng.gen_range(-1.0..1.0);
        let phi: f64 = rng.gen_range(0.0..2.0 * PI);
        let s = (1.0 - z * z).sqrt();
        let d = [s * phi.cos(), s * phi.sin(), z];
        let p = [c[0] + r * d[0], c[1] + r * d[1], c[2] + r * d[2]];
        if !cameras.iter().any(|cam| cam.sees(p, 0.0)) {
            continue;
        }
        let area_per = 4.0 * PI * total_area / n_sph as f64;
        let sigma = area_per.sqrt() * 0.6;
        let band = (6.0 * phi + 4.0 * z).sin() * 0.5 + 0.5;
        cloud.means.push(p);
        cloud.rotations.push(quaternion_z_to(d));
        cloud.scales.push([sigma, sigma, 0.005]);
        cloud.opacities.push(rng.gen_range(0.5..1.0));
        cloud.base_colors.push(hsv(hue + 0.08 * band, 0.7, 0.45 + 0.5 * band));
        placed += 1;
    }
    for o in &mut cloud.opacities {
        *o = o.clamp(0.2, 1.0);
    }
    cloud
}

fn textured_box(n: usize, rng: &mut ChaCha8Rng) -> GaussianCloud {
    let mut cloud = GaussianCloud::default();
    let sigma = (24.0 / n as f64).sqrt() * 0.6;
    for _ in 0..n {
        let face = rng.gen_range(0..6usize);
        let u: f64 = rng.gen_range(-1.0..1.0);
        let v: f64 = rng.gen_range(-1.0..1.0);
        let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
        let axis = face / 2;
        let mut p = [0.0; 3];
        p[axis] = sign;
        p[(axis + 1) % 3] = u;
        p[(axis + 2) % 3] = v;
        let mut normal = [0.0; 3];
        normal[axis] = sign;
        let checker = ((u * 4.0).floor() + (v * 4.0).floor()).rem_euclid(2.0);
        let color = if checker < 0.5 {
            hsv(face as f64 / 6.0, 0.6, 0.9)
        } else {
            [0.15, 0.15, 0.2]
        };
        cloud.means.push(p);
        cloud.rotations.push(quaternion_z_to(normal));
        cloud.scales.push([sigma, sigma, 0.005]);
        cloud.opacities.push(rng.gen_range(0.7..1.0));
        cloud.base_colors.push(color);
    }
    cloud
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::write_ply;

    fn bytes(b: &SceneBundle) -> Vec<u8> {
        let mut v = Vec::new();
        write_ply(&b.cloud, &mut v).unwrap();
        v
    }

    #[test]
    fn lattice_is_deterministic() {
        let spec = SceneSpec::new(SyntheticKind::Lattice, 8, 1, 0);
        let a = make_synthetic_scene(&spec).unwrap();
        let b = make_synthetic_scene(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cloud.len(), 8);
    }

    #[test]
    fn spheres_checker_pass() {
        let b = make_synthetic_scene(&SceneSpec::new(SyntheticKind::Spheres, 5000, 20, 1)).unwrap();
        assert_eq!(b.cloud.len(), 5000);
        assert_eq!(b.cameras.len(), 20);
        assert!(b.cloud.opacities.iter().all(|o| (0.2..=1.0).contains(o)));
        for cam in &b.cameras {
            assert!(b.cloud.means.iter().all(|m| cam.to_camera(*m)[2] > 0.0));
        }
        for m in &b.cloud.means {
            assert!(b.cameras.iter().any(|c| c.sees(*m, 0.0)));
        }
    }

    #[test]
    fn textured_box_frustums_overlap() {
        let b = make_synthetic_scene(&SceneSpec::new(SyntheticKind::TexturedBox, 1000, 2, 2)).unwrap();
        let both = b
            .cloud
            .means
            .iter()
            .filter(|m| b.cameras.iter().all(|c| c.sees(**m, 0.0)))
            .count();
        assert!(both * 2 >= b.cloud.len(), "overlap {both}");
        for m in &b.cloud.means {
            assert!(b.cameras.iter().any(|c| c.sees(*m, 0.0)));
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        for kind in [
            SyntheticKind::Lattice,
            SyntheticKind::Spheres,
            SyntheticKind::TexturedBox,
        ] {
            let spec = SceneSpec::new(kind, 300, 3, 11);
            assert_eq!(
                bytes(&make_synthetic_scene(&spec).unwrap()),
                bytes(&make_synthetic_scene(&spec).unwrap())
            );
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!("cube".parse::<SyntheticKind>().is_err());
        assert!(make_synthetic_scene(&SceneSpec::new(SyntheticKind::Lattice, 0, 1, 0)).is_err());
        assert!(make_synthetic_scene(&SceneSpec::new(SyntheticKind::Lattice, 1, 0, 0)).is_err());
    }

    #[test]
    fn quaternion_maps_z_to_target() {
        let d = [0.6, 0.0, 0.8];
        let r = crate::scene::rotation_matrix(quaternion_z_to(d));
        let z = r * nalgebra::Vector3::new(0.0, 0.0, 1.0);
        assert!((z - nalgebra::Vector3::from(d)).norm() < 1e-12);
    }

    #[test]
    fn framing_camera_sees_every_mean() {
        for seed in 0..3 {
            let cloud = random_cloud(200, seed);
            let cam = framing_camera(&cloud, 64, 48).unwrap();
            assert!(cloud.means.iter().all(|&m| cam.sees(m, 0.0)));
        }
    }
}
