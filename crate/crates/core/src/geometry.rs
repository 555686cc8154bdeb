//! Pinhole camera geometry: intrinsics, rigid poses and per-hypothesis
//! pixel warping between a reference and a source view.
//!
//! Pixel coordinates use `x = column`, `y = row`, lifted to `(x, y, 1)`.
//! Poses are world-to-camera transforms `X_cam = R * X_world + t`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;
const MIN_HOMOGENEOUS_W: f64 = 1e-12;

/// Continuous pixel coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub x: f64,
    pub y: f64,
}

impl PixelCoord {
    pub fn new(x: f64, y: f64) -> Self {
        PixelCoord { x, y }
    }

    pub fn distance(&self, other: &PixelCoord) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Pinhole intrinsics plus the image size they apply to.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    intrinsics: Matrix3<f64>,
    inverse: Matrix3<f64>,
    height: usize,
    width: usize,
}

impl CameraModel {
    pub fn new(intrinsics: Matrix3<f64>, height: usize, width: usize) -> Result<Self> {
        let k = &intrinsics;
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera("non-finite intrinsics".into()));
        }
        if k[(0, 0)] <= 0.0 || k[(1, 1)] <= 0.0 {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive, got fx={} fy={}",
                k[(0, 0)],
                k[(1, 1)]
            )));
        }
        if k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(Error::InvalidCamera("last row must be (0, 0, 1)".into()));
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidCamera("empty image size".into()));
        }
        let (cx, cy) = (k[(0, 2)], k[(1, 2)]);
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::InvalidCamera(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        let inverse = intrinsics
            .try_inverse()
            .ok_or_else(|| Error::InvalidCamera("singular intrinsics".into()))?;
        Ok(CameraModel {
            intrinsics,
            inverse,
            height,
            width,
        })
    }

    pub fn from_params(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        Self::new(
            Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0),
            height,
            width,
        )
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn inverse_intrinsics(&self) -> &Matrix3<f64> {
        &self.inverse
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn contains(&self, p: &PixelCoord) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.width as f64 && p.y < self.height as f64
    }

    /// Projects a point in this camera's frame.
    pub fn project(&self, point: &Vector3<f64>) -> Result<PixelCoord> {
        dehomogenize(&(self.intrinsics * point))
    }

    /// Lifts a pixel at `depth` into this camera's frame.
    pub fn back_project(&self, p: &PixelCoord, depth: f64) -> Vector3<f64> {
        self.inverse * Vector3::new(p.x, p.y, 1.0) * depth
    }

    /// Rescales the intrinsics to pyramid `level` (resolution `2^-level`).
    pub fn scaled(&self, level: usize) -> Result<Self> {
        let step = 1usize << level;
        if !self.height.is_multiple_of(step) || !self.width.is_multiple_of(step) {
            return Err(Error::NotDivisible {
                height: self.height,
                width: self.width,
                level,
            });
        }
        let s = 1.0 / step as f64;
        let mut k = self.intrinsics;
        for c in 0..3 {
            k[(0, c)] *= s;
            k[(1, c)] *= s;
        }
        Self::new(k, self.height / step, self.width / step)
    }
}

/// Free-function form of [`CameraModel::scaled`].
pub fn scale_camera(cam: &CameraModel, level: usize) -> Result<CameraModel> {
    cam.scaled(level)
}

/// A validated rigid transform (rotation + translation).
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// Transform from the reference camera frame to a source camera frame.
pub type RelativePose = Pose;

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidPose("non-finite entries".into()));
        }
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        let err = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if err > ORTHONORMAL_TOL {
            return Err(Error::InvalidPose(format!(
                "rotation not orthonormal (max |R^T R - I| = {err:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidPose(format!("det(R) = {det}, expected +1")));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Pose of a camera centred at `center` with the given world-to-camera rotation.
    pub fn from_center(rotation: Matrix3<f64>, center: Vector3<f64>) -> Result<Self> {
        let t = -(rotation * center);
        Self::new(rotation, t)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    pub fn inverse_transform(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (point - self.translation)
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

/// Composes two world-to-camera poses into the reference-to-source transform,
/// so that `src(X) = R * ref(X) + t` for every world point `X`.
pub fn relative_pose(world_ref: &Pose, world_src: &Pose) -> Pose {
    let rotation = world_src.rotation * world_ref.rotation.transpose();
    let translation = world_src.translation - rotation * world_ref.translation;
    Pose {
        rotation,
        translation,
    }
}

fn dehomogenize(h: &Vector3<f64>) -> Result<PixelCoord> {
    if !(h.z > MIN_HOMOGENEOUS_W) {
        return Err(Error::BehindCamera(h.z));
    }
    Ok(PixelCoord::new(h.x / h.z, h.y / h.z))
}

/// Warps reference pixel `p` at depth `depth` into the source image:
/// `p' ~ K_src * (R * K_ref^-1 * (x, y, 1) * depth + t)`.
///
/// The result may fall outside the source image.
pub fn warp_pixel(
    p: PixelCoord,
    depth: f64,
    ref_cam: &CameraModel,
    src_cam: &CameraModel,
    pose: &RelativePose,
) -> Result<PixelCoord> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::InvalidArgument(format!("depth must be positive, got {depth}")));
    }
    if !p.x.is_finite() || !p.y.is_finite() || !ref_cam.contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "pixel ({}, {}) outside reference image",
            p.x, p.y
        )));
    }
    let ray = ref_cam.inverse * Vector3::new(p.x, p.y, 1.0);
    let h = src_cam.intrinsics * (pose.rotation * ray * depth + pose.translation);
    dehomogenize(&h)
}

/// Precomputed warp between a fixed camera pair, for sweeping many
/// depths per pixel. Evaluates the same expression as [`warp_pixel`]
/// with the matrix products folded.
#[derive(Debug, Clone)]
pub struct Warper {
    ray_to_src: Matrix3<f64>,
    offset: Vector3<f64>,
}

impl Warper {
    pub fn new(ref_cam: &CameraModel, src_cam: &CameraModel, pose: &RelativePose) -> Self {
        Warper {
            ray_to_src: src_cam.intrinsics * pose.rotation * ref_cam.inverse,
            offset: src_cam.intrinsics * pose.translation,
        }
    }

    /// Depth-independent part of the warp for one pixel.
    #[inline]
    pub fn ray(&self, x: f64, y: f64) -> Vector3<f64> {
        self.ray_to_src * Vector3::new(x, y, 1.0)
    }

    /// Warps a precomputed ray at `depth`; `None` when behind the camera.
    #[inline]
    pub fn at_depth(&self, ray: &Vector3<f64>, depth: f64) -> Option<(f64, f64)> {
        let h = ray * depth + self.offset;
        if h.z > MIN_HOMOGENEOUS_W {
            Some((h.x / h.z, h.y / h.z))
        } else {
            None
        }
    }
}
