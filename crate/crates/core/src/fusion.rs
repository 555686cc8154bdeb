//! Depth-map filtering and fusion into a point cloud.
//!
//! Depths are filtered first by photometric consistency (the stage-averaged
//! maximum hypothesis probability), then by cross-view geometric
//! consistency (reprojection round trip), and the survivors are
//! back-projected into world space.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::costvol::ProbabilityVolume;
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, PixelCoord, Pose};
use crate::grid::{GrayImage, Grid, MaskMap};

/// Per-pixel depth with a validity flag. Valid depths are positive and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    depth: Grid<f64>,
    valid: MaskMap,
}

impl DepthMap {
    pub fn new(depth: Grid<f64>, valid: MaskMap) -> Result<Self> {
        if depth.shape() != valid.shape() {
            return Err(Error::ShapeMismatch(format!(
                "depth {:?} vs mask {:?}",
                depth.shape(),
                valid.shape()
            )));
        }
        if depth
            .iter()
            .zip(valid.iter())
            .any(|(d, v)| *v && !(d.is_finite() && *d > 0.0))
        {
            return Err(Error::InvalidArgument("valid depth must be positive and finite".into()));
        }
        Ok(DepthMap { depth, valid })
    }

    /// Marks every positive finite entry valid.
    pub fn from_depths(depth: Grid<f64>) -> Self {
        let valid = depth.map(|d| d.is_finite() && *d > 0.0);
        DepthMap { depth, valid }
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.depth.shape()
    }

    /// Depth at a pixel, `None` when invalid.
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> Option<f64> {
        if *self.valid.get(y, x) {
            Some(*self.depth.get(y, x))
        } else {
            None
        }
    }

    pub fn depth(&self) -> &Grid<f64> {
        &self.depth
    }

    pub fn valid(&self) -> &MaskMap {
        &self.valid
    }

    /// Every `2^level`-th pixel, matching the intrinsics scaling convention.
    pub fn subsample(&self, level: usize) -> DepthMap {
        DepthMap {
            depth: self.depth.subsample(level),
            valid: self.valid.subsample(level),
        }
    }

    /// Copy with extra pixels invalidated.
    pub fn masked(&self, keep: &MaskMap) -> DepthMap {
        let valid = Grid::from_fn(self.height(), self.width(), |y, x| {
            *self.valid.get(y, x) && *keep.get(y, x)
        });
        DepthMap {
            depth: self.depth.clone(),
            valid,
        }
    }

    /// Bilinear depth at a continuous position; `None` unless all four
    /// neighbours are valid.
    pub fn sample_bilinear(&self, p: &PixelCoord) -> Option<f64> {
        let (h, w) = self.shape();
        if !(p.x >= 0.0 && p.y >= 0.0 && p.x <= (w - 1) as f64 && p.y <= (h - 1) as f64) {
            return None;
        }
        let x0 = (p.x.floor() as usize).min(w.saturating_sub(2));
        let y0 = (p.y.floor() as usize).min(h.saturating_sub(2));
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = p.x - x0 as f64;
        let fy = p.y - y0 as f64;
        let a = self.get(y0, x0)?;
        let b = self.get(y0, x1)?;
        let c = self.get(y1, x0)?;
        let d = self.get(y1, x1)?;
        let top = a * (1.0 - fx) + b * fx;
        let bottom = c * (1.0 - fx) + d * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }
}

/// Per-pixel consistency score in `[0, 1]`.
pub type ConsistencyMap = Grid<f64>;

/// `Ph(p) = (1/K') * sum_{k <= K'} max_j P_k(j, p)`, with coarser volumes
/// upsampled to the finest resolution by nearest neighbour.
pub fn photometric_consistency(
    stage_volumes: &[&ProbabilityVolume],
    stages_used: usize,
) -> Result<ConsistencyMap> {
    if stages_used == 0 || stages_used > stage_volumes.len() {
        return Err(Error::InvalidArgument(format!(
            "photometric stage count {stages_used} outside 1..={}",
            stage_volumes.len()
        )));
    }
    let finest = stage_volumes
        .iter()
        .max_by_key(|p| p.height())
        .expect("non-empty");
    let (h, w) = (finest.height(), finest.width());
    let mut acc = Grid::filled(h, w, 0.0f64);
    for p in &stage_volumes[..stages_used] {
        let factor = h / p.height();
        if factor == 0 || !factor.is_power_of_two() || p.height() * factor != h || p.width() * factor != w {
            return Err(Error::ShapeMismatch(format!(
                "volume {}x{} does not upsample to {h}x{w}",
                p.height(),
                p.width()
            )));
        }
        let shift = factor.trailing_zeros() as usize;
        let maxima = p.max_map().upsample_nearest(shift);
        for (a, m) in acc.as_mut_slice().iter_mut().zip(maxima.iter()) {
            *a += m;
        }
    }
    let k = stages_used as f64;
    Ok(acc.map(|v| (v / k).clamp(0.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Stages averaged for photometric consistency; `None` means `K - 2`
    /// (at least 1).
    pub photometric_stages: Option<usize>,
    /// Minimum photometric consistency `tau_ph`.
    pub photometric_threshold: f64,
    /// Reprojection round-trip threshold in pixels.
    pub pixel_threshold: f64,
    /// Relative depth discrepancy threshold.
    pub depth_threshold: f64,
    /// Consistent source views required.
    pub min_views: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            photometric_stages: None,
            photometric_threshold: 0.4,
            pixel_threshold: 1.0,
            depth_threshold: 0.01,
            min_views: 2,
        }
    }
}

impl FusionConfig {
    pub fn stages_for(&self, total: usize) -> usize {
        self.photometric_stages
            .unwrap_or_else(|| total.saturating_sub(2).max(1))
            .min(total)
    }
}

/// A view's depth map with its calibration.
#[derive(Debug, Clone, Copy)]
pub struct CalibratedDepth<'a> {
    pub depth: &'a DepthMap,
    pub camera: &'a CameraModel,
    pub pose: &'a Pose,
}

/// Geometric check result for one reference view.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricConsistency {
    pub mask: MaskMap,
    /// Number of agreeing source views per pixel.
    pub votes: Grid<u32>,
    /// Mean of the reference depth and the agreeing reprojected depths.
    pub fused_depth: Grid<f64>,
}

/// Round trip of one reference pixel through a source depth map: returns
/// the reprojected pixel and its depth in the reference frame.
fn round_trip(
    reference: &CalibratedDepth<'_>,
    source: &CalibratedDepth<'_>,
    p: PixelCoord,
    depth: f64,
) -> Option<(PixelCoord, f64)> {
    let world = reference
        .pose
        .inverse_transform(&reference.camera.back_project(&p, depth));
    let in_src = source.pose.transform(&world);
    let p_src = source.camera.project(&in_src).ok()?;
    let d_src = source.depth.sample_bilinear(&p_src)?;
    let back = source
        .pose
        .inverse_transform(&source.camera.back_project(&p_src, d_src));
    let in_ref = reference.pose.transform(&back);
    let p_ref = reference.camera.project(&in_ref).ok()?;
    Some((p_ref, in_ref.z))
}

/// Cross-view consistency for every view as reference.
pub fn geometric_consistency(
    views: &[CalibratedDepth<'_>],
    config: &FusionConfig,
) -> Result<Vec<GeometricConsistency>> {
    if views.len() < 2 {
        return Err(Error::InvalidArgument("geometric consistency needs >= 2 views".into()));
    }
    for v in views {
        if v.depth.shape() != v.camera.image_size() {
            return Err(Error::ShapeMismatch("depth map vs camera size".into()));
        }
    }
    Ok((0..views.len())
        .map(|r| {
            let reference = &views[r];
            let (h, w) = reference.depth.shape();
            let mut votes = Grid::filled(h, w, 0u32);
            let mut fused = Grid::filled(h, w, 0.0f64);
            for y in 0..h {
                for x in 0..w {
                    let Some(d) = reference.depth.get(y, x) else {
                        continue;
                    };
                    let p = PixelCoord::new(x as f64, y as f64);
                    let mut sum = d;
                    let mut n = 0u32;
                    for (s, source) in views.iter().enumerate() {
                        if s == r {
                            continue;
                        }
                        if let Some((q, dq)) = round_trip(reference, source, p, d) {
                            if q.distance(&p) < config.pixel_threshold
                                && ((dq - d) / d).abs() < config.depth_threshold
                            {
                                sum += dq;
                                n += 1;
                            }
                        }
                    }
                    *votes.get_mut(y, x) = n;
                    *fused.get_mut(y, x) = sum / (n + 1) as f64;
                }
            }
            let mask = Grid::from_fn(h, w, |y, x| {
                reference.depth.get(y, x).is_some() && *votes.get(y, x) as usize >= config.min_views
            });
            GeometricConsistency {
                mask,
                votes,
                fused_depth: fused,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub position: Vector3<f64>,
    pub gray: Option<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One view's inputs to fusion.
#[derive(Debug, Clone, Copy)]
pub struct FusionView<'a> {
    pub depth: &'a DepthMap,
    pub photometric: &'a ConsistencyMap,
    pub camera: &'a CameraModel,
    pub pose: &'a Pose,
    pub image: Option<&'a GrayImage>,
}

/// Filters every view's depth map and back-projects the survivors, in
/// view-then-row-major pixel order.
pub fn fuse(views: &[FusionView<'_>], config: &FusionConfig) -> Result<PointCloud> {
    for v in views {
        if v.photometric.shape() != v.depth.shape() {
            return Err(Error::ShapeMismatch("consistency map vs depth map".into()));
        }
    }
    let filtered: Vec<DepthMap> = views
        .iter()
        .map(|v| v.depth.masked(&v.photometric.map(|&ph| ph >= config.photometric_threshold)))
        .collect();
    let calibrated: Vec<CalibratedDepth<'_>> = views
        .iter()
        .zip(&filtered)
        .map(|(v, d)| CalibratedDepth {
            depth: d,
            camera: v.camera,
            pose: v.pose,
        })
        .collect();
    let geo = geometric_consistency(&calibrated, config)?;
    let mut cloud = PointCloud::default();
    for (v, g) in views.iter().zip(&geo) {
        let (h, w) = v.depth.shape();
        for y in 0..h {
            for x in 0..w {
                if !*g.mask.get(y, x) {
                    continue;
                }
                let d = *g.fused_depth.get(y, x);
                let p = PixelCoord::new(x as f64, y as f64);
                let position = v.pose.inverse_transform(&v.camera.back_project(&p, d));
                let gray = v.image.map(|img| *img.get(y, x));
                cloud.points.push(Point { position, gray });
            }
        }
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use proptest::prelude::*;

    fn plane_views(z: f64) -> (Vec<CameraModel>, Vec<Pose>, Vec<DepthMap>) {
        let cam = CameraModel::from_params(32.0, 32.0, 16.0, 12.0, 24, 32).unwrap();
        let centers = [0.0, 2.0, -2.0];
        let poses: Vec<Pose> = centers
            .iter()
            .map(|&c| Pose::from_center(Matrix3::identity(), Vector3::new(c, 0.0, 0.0)).unwrap())
            .collect();
        let depths = vec![DepthMap::from_depths(Grid::filled(24, 32, z)); 3];
        (vec![cam; 3], poses, depths)
    }

    fn calibrated<'a>(c: &'a [CameraModel], p: &'a [Pose], d: &'a [DepthMap]) -> Vec<CalibratedDepth<'a>> {
        (0..c.len())
            .map(|i| CalibratedDepth { depth: &d[i], camera: &c[i], pose: &p[i] })
            .collect()
    }

    fn prob(d: usize, h: usize, w: usize, f: impl Fn(usize, usize) -> Vec<f64>) -> ProbabilityVolume {
        let mut data = Vec::new();
        for y in 0..h {
            for x in 0..w {
                data.extend(f(y, x));
            }
        }
        ProbabilityVolume::from_vec(d, h, w, data).unwrap()
    }

    #[test]
    fn photometric_examples() {
        let confident = prob(4, 2, 2, |_, _| vec![0.0, 1.0, 0.0, 0.0]);
        let coarse = prob(4, 1, 1, |_, _| vec![1.0, 0.0, 0.0, 0.0]);
        let ph = photometric_consistency(&[&coarse, &confident], 2).unwrap();
        assert!(ph.iter().all(|&v| v == 1.0));

        let half = prob(4, 2, 2, |_, _| vec![0.5, 0.5, 0.0, 0.0]);
        let ph = photometric_consistency(&[&half, &confident], 2).unwrap();
        assert!(ph.iter().all(|&v| (v - 0.75).abs() < 1e-12));

        let u = ProbabilityVolume::uniform(4, 2, 2);
        for k in 1..=3 {
            let ph = photometric_consistency(&[&u, &u, &u], k).unwrap();
            assert!(ph.iter().all(|&v| (v - 0.25).abs() < 1e-12));
        }
        assert!(photometric_consistency(&[&u], 0).is_err());
        assert!(photometric_consistency(&[&u], 2).is_err());
    }

    #[test]
    fn photometric_upsamples_coarse_stage() {
        let coarse = prob(2, 1, 2, |_, x| if x == 0 { vec![0.9, 0.1] } else { vec![0.5, 0.5] });
        let fine = ProbabilityVolume::uniform(2, 2, 4);
        let ph = photometric_consistency(&[&coarse, &fine], 1).unwrap();
        assert_eq!(ph.shape(), (2, 4));
        assert!((ph.get(1, 1) - 0.9).abs() < 1e-12);
        assert!((ph.get(0, 3) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn exact_depths_are_consistent() {
        let (c, p, d) = plane_views(10.0);
        let cfg = FusionConfig { min_views: 1, ..FusionConfig::default() };
        let geo = geometric_consistency(&calibrated(&c, &p, &d), &cfg).unwrap();
        // The center view sees every pixel in at least one neighbour.
        assert!(geo[0].mask.iter().all(|&m| m));
        for g in &geo {
            assert!(g.mask.iter().any(|&m| m));
            assert!(g.fused_depth.iter().all(|&v| (v - 10.0).abs() < 1e-9));
        }
    }

    #[test]
    fn perturbed_view_gets_no_votes() {
        let (c, p, mut d) = plane_views(10.0);
        d[2] = DepthMap::from_depths(Grid::filled(24, 32, 11.0));
        let cfg = FusionConfig { min_views: 1, ..FusionConfig::default() };
        let geo = geometric_consistency(&calibrated(&c, &p, &d), &cfg).unwrap();
        // Reference 0 and 1 agree with each other only.
        assert!(geo[0].votes.iter().all(|&v| v <= 1));
        assert!(geo[2].votes.iter().all(|&v| v == 0));
        assert!(!geo[2].mask.iter().any(|&m| m));
    }

    #[test]
    fn too_many_required_views_fail_everything() {
        let (c, p, d) = plane_views(10.0);
        let cfg = FusionConfig { min_views: 3, ..FusionConfig::default() };
        let geo = geometric_consistency(&calibrated(&c, &p, &d), &cfg).unwrap();
        assert!(geo.iter().all(|g| !g.mask.iter().any(|&m| m)));
    }

    #[test]
    fn fuse_thresholds() {
        let (c, p, d) = plane_views(10.0);
        let ph = Grid::filled(24, 32, 0.6);
        let views: Vec<FusionView<'_>> = (0..3)
            .map(|i| FusionView { depth: &d[i], photometric: &ph, camera: &c[i], pose: &p[i], image: None })
            .collect();
        let all = FusionConfig { photometric_threshold: 0.0, min_views: 0, ..FusionConfig::default() };
        assert_eq!(fuse(&views, &all).unwrap().len(), 3 * 24 * 32);
        let none = FusionConfig { photometric_threshold: 1.0 + 1e-9, ..all };
        assert!(fuse(&views, &none).unwrap().is_empty());
        let cloud = fuse(&views, &FusionConfig { min_views: 1, ..FusionConfig::default() }).unwrap();
        assert!(!cloud.is_empty());
        assert!(cloud.points.iter().all(|pt| (pt.position.z - 10.0).abs() < 1e-9));
    }

    proptest! {
        #[test]
        fn photometric_monotone(base in proptest::collection::vec(0.26f64..0.9, 6), bump in 0.0f64..0.09, k in 1usize..=3) {
            let mk = |m: f64| prob(4, 1, 2, |_, _| { let r = (1.0 - m) / 3.0; vec![m, r, r, r] });
            let vols: Vec<ProbabilityVolume> = base.iter().take(3).map(|&m| mk(m)).collect();
            let mut raised = vols.clone();
            raised[k - 1] = mk((base[k - 1] + bump).min(0.99));
            let a = photometric_consistency(&vols.iter().collect::<Vec<_>>(), 3).unwrap();
            let b = photometric_consistency(&raised.iter().collect::<Vec<_>>(), 3).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!(y >= x);
            }
        }

        #[test]
        fn filtering_monotone_in_threshold(t1 in 0.0f64..1.0, t2 in 0.0f64..1.0, seed in 0u64..100) {
            let (c, p, d) = plane_views(10.0);
            let phs: Vec<ConsistencyMap> = (0..3).map(|i| Grid::from_fn(24, 32, |y, x| {
                (((y * 31 + x * 17 + i * 7) as u64 * (seed + 3)) % 101) as f64 / 100.0
            })).collect();
            let views: Vec<FusionView<'_>> = (0..3)
                .map(|i| FusionView { depth: &d[i], photometric: &phs[i], camera: &c[i], pose: &p[i], image: None })
                .collect();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let cfg = FusionConfig { min_views: 1, ..FusionConfig::default() };
            let a = fuse(&views, &FusionConfig { photometric_threshold: lo, ..cfg }).unwrap().len();
            let b = fuse(&views, &FusionConfig { photometric_threshold: hi, ..cfg }).unwrap().len();
            prop_assert!(b <= a);
        }

        #[test]
        fn back_projection_inverse(x in 0.0f64..31.0, y in 0.0f64..23.0, d in 0.5f64..100.0, cx in -3.0f64..3.0) {
            let cam = CameraModel::from_params(30.0, 31.0, 15.5, 11.0, 24, 32).unwrap();
            let rot = *nalgebra::Rotation3::from_euler_angles(0.1, -0.2, 0.05).matrix();
            let pose = Pose::from_center(rot, Vector3::new(cx, 0.3, -1.0)).unwrap();
            let p = PixelCoord::new(x, y);
            let world = pose.inverse_transform(&cam.back_project(&p, d));
            let q = cam.project(&pose.transform(&world)).unwrap();
            prop_assert!(q.distance(&p) < 1e-6);
        }
    }
}
