//! Procedural test scenes with exact ground truth.
//!
//! The reference camera sits at the origin looking down `+z`; the other
//! cameras are offset by a fixed baseline in the image plane. Surfaces are
//! parametric, so per-pixel depth comes from an exact ray intersection and
//! image intensities from a band-limited texture evaluated at the hit point.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::DepthMap;
use crate::geometry::{CameraModel, PixelCoord, Pose};
use crate::grid::{GrayImage, Grid};
use crate::io::{load_gray, read_camera, read_depth_pfm, save_gray_png16, write_camera, write_depth_pfm, CameraRecord};
use crate::search::{DepthRange, View};

/// Distance from the reference camera to the base plane.
pub const PLANE_DEPTH: f64 = 100.0;
/// Camera offset from the reference along each axis.
pub const BASELINE: f64 = 10.0;
/// Depth change per world unit of `x` on the slanted plane.
const SLANT: f64 = 0.1;
/// Spherical cap bulging toward the cameras.
const CAP_HEIGHT: f64 = 0.8;
const CAP_RADIUS: f64 = 24.0;
/// Texture wavelengths in world units; a pixel spans about 0.6 units at the
/// plane for the default focal length.
const MIN_WAVELENGTH: f64 = 2.5;
const MAX_WAVELENGTH: f64 = 40.0;
const TEXTURE_COMPONENTS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneShape {
    FrontoParallel,
    Slanted,
    SphereOnPlane,
}

impl std::str::FromStr for SceneShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fronto-parallel" | "plane" => Ok(SceneShape::FrontoParallel),
            "slanted" => Ok(SceneShape::Slanted),
            "sphere-on-plane" | "sphere" => Ok(SceneShape::SphereOnPlane),
            other => Err(Error::InvalidArgument(format!("unknown scene shape '{other}'"))),
        }
    }
}

impl std::fmt::Display for SceneShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SceneShape::FrontoParallel => "fronto-parallel",
            SceneShape::Slanted => "slanted",
            SceneShape::SphereOnPlane => "sphere-on-plane",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub shape: SceneShape,
    pub seed: u64,
    pub views: usize,
    pub height: usize,
    pub width: usize,
    /// Standard deviation of additive Gaussian image noise.
    pub noise_sigma: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            shape: SceneShape::FrontoParallel,
            seed: 0,
            views: 3,
            height: 128,
            width: 160,
            noise_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub views: Vec<View>,
}

struct Texture {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Texture {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let amp = 0.35 / (TEXTURE_COMPONENTS as f64 / 2.0).sqrt();
        let waves = (0..TEXTURE_COMPONENTS)
            .map(|_| {
                // Log-uniform wavelengths spread energy across scales.
                let t: f64 = rng.gen();
                let lambda = MIN_WAVELENGTH * (MAX_WAVELENGTH / MIN_WAVELENGTH).powf(t);
                let theta = rng.gen_range(0.0..PI);
                let phase = rng.gen_range(0.0..2.0 * PI);
                (theta.cos() / lambda, theta.sin() / lambda, phase, amp)
            })
            .collect();
        Texture { waves }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let s: f64 = self
            .waves
            .iter()
            .map(|&(fx, fy, phase, a)| a * (2.0 * PI * (fx * x + fy * y) + phase).sin())
            .sum();
        (0.5 + s * 0.5).clamp(0.0, 1.0)
    }
}

/// Ray parameter of the first hit along `origin + t * dir`.
fn intersect(shape: SceneShape, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
    // Plane n . X = c.
    let (n, c) = match shape {
        SceneShape::Slanted => (Vector3::new(-SLANT, 0.0, 1.0), PLANE_DEPTH),
        _ => (Vector3::new(0.0, 0.0, 1.0), PLANE_DEPTH),
    };
    let denom = n.dot(dir);
    let mut best = if denom.abs() > 1e-12 {
        Some((c - n.dot(origin)) / denom).filter(|t| *t > 0.0)
    } else {
        None
    };
    if shape == SceneShape::SphereOnPlane {
        let radius = (CAP_RADIUS * CAP_RADIUS + CAP_HEIGHT * CAP_HEIGHT) / (2.0 * CAP_HEIGHT);
        let center = Vector3::new(0.0, 0.0, PLANE_DEPTH - CAP_HEIGHT + radius);
        let oc = origin - center;
        let a = dir.dot(dir);
        let b = oc.dot(dir);
        let disc = b * b - a * (oc.dot(&oc) - radius * radius);
        if disc >= 0.0 {
            let t = (-b - disc.sqrt()) / a;
            if t > 0.0 && best.is_none_or(|p| t < p) {
                best = Some(t);
            }
        }
    }
    best
}

/// Rotation of a camera at `center` looking at `target` with `y` down.
fn look_at(center: &Vector3<f64>, target: &Vector3<f64>) -> Matrix3<f64> {
    let z = (target - center).normalize();
    let x = Vector3::new(0.0, 1.0, 0.0).cross(&z).normalize();
    let y = z.cross(&x);
    Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
}

fn camera_centers(views: usize) -> Vec<Vector3<f64>> {
    let offsets = [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)];
    std::iter::once(Vector3::zeros())
        .chain((0..views - 1).map(|i| {
            let (ox, oy) = offsets[i % offsets.len()];
            let ring = (i / offsets.len() + 1) as f64;
            Vector3::new(ox, oy, 0.0) * BASELINE * ring
        }))
        .collect()
}

/// Renders a scene; the output depends only on `spec`.
pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    if spec.views < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 views, got {}", spec.views)));
    }
    if spec.height < 2 || spec.width < 2 {
        return Err(Error::InvalidArgument("image must be at least 2x2".into()));
    }
    if !(spec.noise_sigma.is_finite() && spec.noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("invalid noise sigma {}", spec.noise_sigma)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let texture = Texture::new(&mut rng);
    let (h, w) = (spec.height, spec.width);
    let f = w as f64;
    let camera = CameraModel::from_params(f, f, w as f64 / 2.0, h as f64 / 2.0, h, w)?;
    let target = Vector3::new(0.0, 0.0, PLANE_DEPTH);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");

    let mut views = Vec::with_capacity(spec.views);
    for (vi, center) in camera_centers(spec.views).into_iter().enumerate() {
        let rotation = if spec.shape == SceneShape::FrontoParallel || vi == 0 {
            Matrix3::identity()
        } else {
            look_at(&center, &target)
        };
        let pose = Pose::from_center(rotation, center)?;
        let mut depth = Grid::filled(h, w, 0.0f64);
        let mut image = GrayImage::filled(h, w, 0.0);
        for y in 0..h {
            for x in 0..w {
                let ray_cam = camera.back_project(&PixelCoord::new(x as f64, y as f64), 1.0);
                let dir = rotation.transpose() * ray_cam;
                let t = intersect(spec.shape, &center, &dir).ok_or_else(|| {
                    Error::InvalidArgument(format!("view {vi} pixel ({x}, {y}) misses the surface"))
                })?;
                let hit = center + dir * t;
                *depth.get_mut(y, x) = t;
                *image.get_mut(y, x) = texture.at(hit.x, hit.y) as f32;
            }
        }
        if spec.noise_sigma > 0.0 {
            let mut vrng = ChaCha8Rng::seed_from_u64(spec.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(vi as u64 + 1)));
            for v in image.as_mut_slice() {
                *v = (*v as f64 + noise.sample(&mut vrng)).clamp(0.0, 1.0) as f32;
            }
        }
        let (lo, hi) = depth
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &d| (a.min(d), b.max(d)));
        let range = DepthRange::new(0.8 * lo, 1.2 * hi)?;
        views.push(View {
            image,
            camera: camera.clone(),
            pose,
            range,
            ground_truth: Some(DepthMap::from_depths(depth)),
        });
    }
    Ok(SyntheticScene { spec: *spec, views })
}

fn view_name(i: usize) -> String {
    format!("{i:04}")
}

/// Writes `images/NNNN.png`, `cams/NNNN.txt` and `gt/NNNN.pfm`.
pub fn save_views(dir: impl AsRef<Path>, views: &[View]) -> Result<()> {
    let dir = dir.as_ref();
    for (i, v) in views.iter().enumerate() {
        let name = view_name(i);
        save_gray_png16(dir.join("images").join(format!("{name}.png")), &v.image)?;
        write_camera(
            dir.join("cams").join(format!("{name}.txt")),
            &CameraRecord {
                intrinsics: *v.camera.intrinsics(),
                pose: v.pose.clone(),
                range: v.range,
            },
        )?;
        if let Some(gt) = &v.ground_truth {
            write_depth_pfm(dir.join("gt").join(format!("{name}.pfm")), gt)?;
        }
    }
    Ok(())
}

/// Reads a directory written by [`save_views`]; ground truth is optional.
pub fn load_views(dir: impl AsRef<Path>) -> Result<Vec<View>> {
    let dir = dir.as_ref();
    let images = dir.join("images");
    let mut names: Vec<String> = std::fs::read_dir(&images)
        .map_err(|e| Error::io(&images, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            let ext = p.extension()?.to_str()?.to_ascii_lowercase();
            matches!(ext.as_str(), "png" | "pgm").then(|| p.file_name()?.to_str().map(str::to_owned))?
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::InvalidArgument(format!("no images in {}", images.display())));
    }
    names
        .iter()
        .map(|file| {
            let stem = Path::new(file).file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let image = load_gray(images.join(file))?;
            let record = read_camera(dir.join("cams").join(format!("{stem}.txt")))?;
            let camera = record.camera(image.height(), image.width())?;
            let gt_path = dir.join("gt").join(format!("{stem}.pfm"));
            let ground_truth = if gt_path.exists() {
                Some(read_depth_pfm(&gt_path)?)
            } else {
                None
            };
            Ok(View {
                image,
                camera,
                pose: record.pose,
                range: record.range,
                ground_truth,
            })
        })
        .collect()
}
