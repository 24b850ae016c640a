use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera with a world-to-camera pose (`x_cam = R·x_world + t`).
///
/// Camera space is right-handed with +z forward and +y down. Pixel
/// `(i, j)` covers `[i, i+1) × [j, j+1)`, so its center is at `(i+0.5, j+0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRecord", into = "CameraRecord")]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

/// Wire form shared by the cameras file and the render service.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: u32,
    pub h: u32,
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl From<Camera> for CameraRecord {
    fn from(c: Camera) -> Self {
        let m = c.rotation;
        CameraRecord {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            w: c.width,
            h: c.height,
            r: [
                m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
            ],
            t: c.translation,
        }
    }
}

impl TryFrom<CameraRecord> for Camera {
    type Error = Error;

    fn try_from(r: CameraRecord) -> Result<Self> {
        let rotation = [
            [r.r[0], r.r[1], r.r[2]],
            [r.r[3], r.r[4], r.r[5]],
            [r.r[6], r.r[7], r.r[8]],
        ];
        Camera::new(r.fx, r.fy, r.cx, r.cy, r.w, r.h, rotation, r.t)
    }
}

const ORTHO_TOL: f64 = 1e-6;

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        rotation: [[f64; 3]; 3],
        translation: [f64; 3],
    ) -> Result<Self> {
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return Err(Error::invalid("cx outside the image"));
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(Error::invalid("cy outside the image"));
        }
        let r = self.rotation_matrix();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > ORTHO_TOL || !err.is_finite() {
            return Err(Error::invalid(format!(
                "camera rotation is not orthonormal (error {err:e})"
            )));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("non-finite camera translation"));
        }
        Ok(())
    }

    /// Camera looking from `eye` at `target` with world `+y` as image down.
    /// `fov_x_deg` is the horizontal field of view.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], fov_x_deg: f64, width: u32, height: u32) -> Result<Self> {
        let eye = Vector3::from(eye);
        let forward = (Vector3::from(target) - eye).normalize();
        let down = Vector3::new(0.0, 1.0, 0.0);
        let right = down.cross(&forward);
        if right.norm() < 1e-9 {
            return Err(Error::invalid("look-at direction parallel to world up"));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(rot * eye);
        let f = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Camera::new(
            f,
            f,
            0.5 * width as f64,
            0.5 * height as f64,
            width,
            height,
            matrix_to_rows(&rot),
            [t.x, t.y, t.z],
        )
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let r = self.rotation;
        Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    pub fn to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let d = [
            p[0] - self.translation[0],
            p[1] - self.translation[1],
            p[2] - self.translation[2],
        ];
        [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ]
    }

    /// Pixel coordinates of a camera-space point (z must be positive).
    pub fn project(&self, pc: [f64; 3]) -> [f64; 2] {
        [self.fx * pc[0] / pc[2] + self.cx, self.fy * pc[1] / pc[2] + self.cy]
    }

    /// Camera-space point at `depth` along the ray through pixel coords `uv`.
    pub fn unproject(&self, uv: [f64; 2], depth: f64) -> [f64; 3] {
        [
            (uv[0] - self.cx) / self.fx * depth,
            (uv[1] - self.cy) / self.fy * depth,
            depth,
        ]
    }

    pub fn center(&self) -> [f64; 3] {
        self.to_world([0.0; 3])
    }

    /// Same pose with intrinsics rescaled to a new resolution.
    pub fn with_resolution(&self, width: u32, height: u32) -> Result<Self> {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Camera::new(
            self.fx * sx,
            self.fy * sy,
            self.cx * sx,
            self.cy * sy,
            width,
            height,
            self.rotation,
            self.translation,
        )
    }

    /// True when the world point lies in front of the camera and projects
    /// inside the image shrunk by `margin` pixels.
    pub fn sees(&self, p: [f64; 3], margin: f64) -> bool {
        let pc = self.to_camera(p);
        if pc[2] <= 0.01 {
            return false;
        }
        let uv = self.project(pc);
        uv[0] >= margin
            && uv[1] >= margin
            && uv[0] <= self.width as f64 - margin
            && uv[1] <= self.height as f64 - margin
    }
}

fn matrix_to_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}
