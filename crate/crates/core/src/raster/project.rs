use super::{ALPHA_MAX, ALPHA_MIN, LOW_PASS, NEAR_PLANE};
use crate::scene::{rotation_matrix, Camera, GaussianCloud};

/// A Gaussian projected to the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub mean2d: [f64; 2],
    /// Upper triangle `(xx, xy, yy)` of the dilated 2D covariance, pixels².
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d`, same layout.
    pub conic: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    /// Half-width of the square outside which alpha is below 1/255.
    pub radius: f64,
    pub gaussian_index: usize,
}

impl Splat2D {
    /// Clamped alpha at pixel-center coordinates, or `None` when skipped.
    #[inline(always)]
    pub fn alpha_at(&self, u: f64, v: f64) -> Option<f64> {
        let dx = u - self.mean2d[0];
        let dy = v - self.mean2d[1];
        let power = -0.5 * (self.conic[0] * dx * dx + self.conic[2] * dy * dy) - self.conic[1] * dx * dy;
        if power > 0.0 {
            return None;
        }
        let alpha = (self.opacity * power.exp()).min(ALPHA_MAX);
        (alpha >= ALPHA_MIN).then_some(alpha)
    }

    /// Pixel index range `[x0, y0, x1, y1)` the splat can touch, clipped to the image.
    pub fn pixel_bounds(&self, width: usize, height: usize) -> [usize; 4] {
        let r = self.radius;
        // pixel centers at i + 0.5
        let x0 = (self.mean2d[0] - r - 0.5).ceil().max(0.0) as usize;
        let y0 = (self.mean2d[1] - r - 0.5).ceil().max(0.0) as usize;
        let x1 = ((self.mean2d[0] + r - 0.5).floor() + 1.0).clamp(0.0, width as f64) as usize;
        let y1 = ((self.mean2d[1] + r - 0.5).floor() + 1.0).clamp(0.0, height as f64) as usize;
        [
            x0.min(width),
            y0.min(height),
            x1.max(x0.min(width)),
            y1.max(y0.min(height)),
        ]
    }
}

/// Projects Gaussian `index` of `cloud`; `None` when culled.
///
/// Culling: depth at or below the near plane, opacity too low to ever
/// reach the 1/255 skip threshold, or an extent that misses the image.
pub fn project_splat(cloud: &GaussianCloud, index: usize, camera: &Camera) -> Option<Splat2D> {
    let pc = camera.to_camera(cloud.means[index]);
    let z = pc[2];
    if z <= NEAR_PLANE {
        return None;
    }
    let opacity = cloud.opacities[index];
    if opacity * 255.0 <= 1.0 {
        return None;
    }
    let mean2d = camera.project(pc);

    // Σ = M·Mᵀ with M = R·S
    let r = rotation_matrix(cloud.rotations[index]);
    let s = cloud.scales[index];
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[(i, j)] * s[j];
        }
    }
    // T = J·W, then cov2d = T·Σ·Tᵀ = (T·M)(T·M)ᵀ
    let w = &camera.rotation;
    let j = [
        [camera.fx / z, 0.0, -camera.fx * pc[0] / (z * z)],
        [0.0, camera.fy / z, -camera.fy * pc[1] / (z * z)],
    ];
    let mut t = [[0.0; 3]; 2];
    for a in 0..2 {
        for b in 0..3 {
            t[a][b] = j[a][0] * w[0][b] + j[a][1] * w[1][b] + j[a][2] * w[2][b];
        }
    }
    let mut tm = [[0.0; 3]; 2];
    for a in 0..2 {
        for b in 0..3 {
            tm[a][b] = t[a][0] * m[0][b] + t[a][1] * m[1][b] + t[a][2] * m[2][b];
        }
    }
    let dot = |x: &[f64; 3], y: &[f64; 3]| x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
    let cxx = dot(&tm[0], &tm[0]) + LOW_PASS;
    let cxy = dot(&tm[0], &tm[1]);
    let cyy = dot(&tm[1], &tm[1]) + LOW_PASS;
    let det = cxx * cyy - cxy * cxy;
    if det <= 0.0 || !det.is_finite() {
        return None;
    }
    let conic = [cyy / det, -cxy / det, cxx / det];
    let mid = 0.5 * (cxx + cyy);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let q_max = 2.0 * (255.0 * opacity).ln();
    let radius = (q_max * lambda_max).sqrt() + 1.0;

    let (wf, hf) = (camera.width as f64, camera.height as f64);
    if mean2d[0] + radius < 0.0 || mean2d[1] + radius < 0.0 || mean2d[0] - radius > wf || mean2d[1] - radius > hf {
        return None;
    }
    Some(Splat2D {
        mean2d,
        cov2d: [cxx, cxy, cyy],
        conic,
        depth: z,
        opacity,
        radius,
        gaussian_index: index,
    })
}
