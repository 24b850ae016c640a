//! Gaussian-cloud data model, cameras and scene bundles.

mod camera;
mod ply;
pub mod synth;

pub use camera::{Camera, CameraRecord};
pub use ply::{load_ply, read_ply, save_ply, write_ply, SH_C0};
pub use synth::{arc_cameras, framing_camera, make_synthetic_scene, SceneSpec, SyntheticKind};

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Tolerance on quaternion norms before they are treated as invalid input.
pub const QUAT_NORM_TOL: f64 = 1e-6;

/// A set of anisotropic 3D Gaussians with view-independent base colors.
///
/// All arrays have the same length. Quaternions are `(w, x, y, z)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianCloud {
    pub means: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub scales: Vec<[f64; 3]>,
    pub opacities: Vec<f64>,
    pub base_colors: Vec<[f64; 3]>,
}

impl GaussianCloud {
    /// Builds a cloud, clamping opacities and colors into `[0, 1]` and
    /// checking the remaining invariants.
    pub fn new(
        means: Vec<[f64; 3]>,
        rotations: Vec<[f64; 4]>,
        scales: Vec<[f64; 3]>,
        mut opacities: Vec<f64>,
        mut base_colors: Vec<[f64; 3]>,
    ) -> Result<Self> {
        for o in &mut opacities {
            *o = o.clamp(0.0, 1.0);
        }
        for c in &mut base_colors {
            for v in c.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
        }
        let cloud = Self {
            means,
            rotations,
            scales,
            opacities,
            base_colors,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.means.len();
        if self.rotations.len() != n
            || self.scales.len() != n
            || self.opacities.len() != n
            || self.base_colors.len() != n
        {
            return Err(Error::invalid("gaussian cloud arrays differ in length"));
        }
        for (i, q) in self.rotations.iter().enumerate() {
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > QUAT_NORM_TOL {
                return Err(Error::invalid(format!(
                    "gaussian {i}: quaternion norm {norm} is not unit"
                )));
            }
        }
        for (i, s) in self.scales.iter().enumerate() {
            if !s.iter().all(|v| *v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("gaussian {i}: non-positive scale")));
            }
        }
        for (i, m) in self.means.iter().enumerate() {
            if !m.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid(format!("gaussian {i}: non-finite mean")));
            }
        }
        if self.opacities.iter().any(|o| !(0.0..=1.0).contains(o)) {
            return Err(Error::invalid("opacity outside [0, 1]"));
        }
        if self.base_colors.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::invalid("base color outside [0, 1]"));
        }
        Ok(())
    }

    /// Axis-aligned bounding box of the means as `(min, max)`.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for m in &self.means {
            for k in 0..3 {
                lo[k] = lo[k].min(m[k]);
                hi[k] = hi[k].max(m[k]);
            }
        }
        if self.is_empty() {
            return ([0.0; 3], [0.0; 3]);
        }
        (lo, hi)
    }

    pub fn covariance(&self, index: usize) -> Result<Matrix3<f64>> {
        covariance_from_rotation_scale(self.rotations[index], self.scales[index])
    }
}

/// Rotation matrix of a `(w, x, y, z)` quaternion.
pub fn rotation_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let uq = UnitQuaternion::new_unchecked(Quaternion::new(q[0], q[1], q[2], q[3]));
    uq.to_rotation_matrix().into_inner()
}

/// `Σ = R·S·Sᵀ·Rᵀ` for a unit quaternion and per-axis standard deviations.
pub fn covariance_from_rotation_scale(q: [f64; 4], s: [f64; 3]) -> Result<Matrix3<f64>> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > QUAT_NORM_TOL {
        return Err(Error::invalid(format!("quaternion norm {norm} is not unit")));
    }
    if !s.iter().all(|v| *v > 0.0) {
        return Err(Error::invalid("scales must be strictly positive"));
    }
    let r = rotation_matrix(q);
    let m = r * Matrix3::from_diagonal(&Vector3::new(s[0], s[1], s[2]));
    let cov = m * m.transpose();
    // exact symmetry
    Ok((cov + cov.transpose()) * 0.5)
}

/// Cloud plus the cameras it is viewed from.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub cloud: GaussianCloud,
    pub cameras: Vec<Camera>,
    pub background: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct CamerasFile {
    background: [f64; 3],
    cameras: Vec<Camera>,
}

impl SceneBundle {
    pub fn new(cloud: GaussianCloud, cameras: Vec<Camera>, background: [f64; 3]) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::invalid("scene bundle needs at least one camera"));
        }
        Ok(Self {
            cloud,
            cameras,
            background,
        })
    }

    /// Writes `cloud` as PLY and the cameras as JSON next to it.
    pub fn save(&self, ply_path: &Path, cameras_path: &Path) -> Result<()> {
        save_ply(&self.cloud, ply_path)?;
        save_cameras(&self.cameras, self.background, cameras_path)
    }

    pub fn load(ply_path: &Path, cameras_path: &Path) -> Result<Self> {
        let cloud = load_ply(ply_path)?;
        let (cameras, background) = load_cameras(cameras_path)?;
        Self::new(cloud, cameras, background)
    }
}

/// Default cameras-file path for a scene PLY: `scene.ply` → `scene.cameras.json`.
pub fn cameras_path_for(ply_path: &Path) -> std::path::PathBuf {
    ply_path.with_extension("cameras.json")
}

pub fn save_cameras(cameras: &[Camera], background: [f64; 3], path: &Path) -> Result<()> {
    let file = CamerasFile {
        background,
        cameras: cameras.to_vec(),
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::invalid(format!("camera serialization: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a cameras file. Accepts either `{background, cameras}` or a bare
/// JSON list of camera records (black background).
pub fn load_cameras(path: &Path) -> Result<(Vec<Camera>, [f64; 3])> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if let Ok(file) = serde_json::from_str::<CamerasFile>(&text) {
        return Ok((file.cameras, file.background));
    }
    let cameras: Vec<Camera> = serde_json::from_str(&text).map_err(|e| Error::parse("cameras", e.to_string()))?;
    Ok((cameras, [0.0; 3]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    fn naive_rs(q: [f64; 4], s: [f64; 3]) -> [[f64; 3]; 3] {
        // textbook quaternion matrix, then explicit triple loop products
        let [w, x, y, z] = q;
        let r = [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ];
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    out[i][j] += r[i][k] * s[k] * s[k] * r[j][k];
                }
            }
        }
        out
    }

    #[test]
    fn identity_rotation_unit_scale() {
        let c = covariance_from_rotation_scale([1.0, 0.0, 0.0, 0.0], [1.0; 3]).unwrap();
        assert_abs_diff_eq!(c, Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn diagonal_case() {
        let c = covariance_from_rotation_scale([1.0, 0.0, 0.0, 0.0], [2.0, 3.0, 4.0]).unwrap();
        assert_abs_diff_eq!(
            c,
            Matrix3::from_diagonal(&Vector3::new(4.0, 9.0, 16.0)),
            epsilon = 1e-12
        );
    }

    #[test]
    fn quarter_turn_about_z_swaps_axes() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let q = [h, 0.0, 0.0, h];
        let oracle = naive_rs(q, [2.0, 1.0, 1.0]);
        assert_abs_diff_eq!(oracle[0][0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(oracle[1][1], 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(oracle[2][2], 1.0, epsilon = 1e-12);
        let c = covariance_from_rotation_scale(q, [2.0, 1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(c, Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0)), epsilon = 1e-12);
    }

    #[test]
    fn rejects_non_unit_quaternion() {
        let err = covariance_from_rotation_scale([1.0, 0.1, 0.0, 0.0], [1.0; 3]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn bundle_requires_camera() {
        assert!(SceneBundle::new(GaussianCloud::default(), vec![], [0.0; 3]).is_err());
    }

    fn arb_quat() -> impl Strategy<Value = [f64; 4]> {
        prop::array::uniform4(-1.0f64..1.0)
            .prop_filter("non-degenerate", |q| q.iter().map(|v| v * v).sum::<f64>() > 1e-3)
            .prop_map(|q| {
                let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn covariance_symmetric_with_squared_scale_spectrum(
            q in arb_quat(),
            s in prop::array::uniform3(0.01f64..3.0),
        ) {
            let c = covariance_from_rotation_scale(q, s).unwrap();
            let oracle = naive_rs(q, s);
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((c[(i, j)] - c[(j, i)]).abs() <= 1e-9);
                    prop_assert!((c[(i, j)] - oracle[i][j]).abs() <= 1e-9);
                }
            }
            let mut eig: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
            eig.sort_by(f64::total_cmp);
            let mut sq: Vec<f64> = s.iter().map(|v| v * v).collect();
            sq.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&sq) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }
    }
}
