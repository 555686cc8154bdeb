//! Plane-sweep cost volumes: group-wise correlation against warped source
//! features, per-view weighting and fusion, and the small regularizer head
//! that turns a fused volume into per-pixel hypothesis probabilities.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alloc::{Lease, MemoryLedger, TensorKind};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::geometry::{CameraModel, RelativePose, Warper};
use crate::grid::Grid;
use crate::search::DepthHypotheses;

/// Score assigned to hypotheses whose warp left every source image.
pub const UNCOVERED_SCORE: f64 = -10.0;

const MIN_WEIGHT_SUM: f64 = 1e-8;

/// `D x H x W x N_g` correlation scores plus `D x H x W` coverage flags.
///
/// Stored pixel-major: all `D * N_g` values of a pixel are contiguous.
#[derive(Debug, Clone)]
pub struct CostVolume {
    hypotheses: usize,
    height: usize,
    width: usize,
    groups: usize,
    data: Vec<f32>,
    coverage: Vec<bool>,
    lease: Option<Lease>,
}

impl PartialEq for CostVolume {
    fn eq(&self, other: &Self) -> bool {
        self.shape() == other.shape() && self.data == other.data && self.coverage == other.coverage
    }
}

impl CostVolume {
    /// All-zero, fully uncovered volume.
    pub fn zeros(hypotheses: usize, height: usize, width: usize, groups: usize) -> Result<Self> {
        if hypotheses < 2 {
            return Err(Error::InvalidArgument(format!(
                "cost volume needs at least 2 hypotheses, got {hypotheses}"
            )));
        }
        Ok(CostVolume {
            hypotheses,
            height,
            width,
            groups,
            data: vec![0.0; hypotheses * height * width * groups],
            coverage: vec![false; hypotheses * height * width],
            lease: None,
        })
    }

    /// Builds a volume from a per-cell function `(j, y, x, g) -> (value, covered)`.
    /// Coverage is taken from group 0.
    pub fn from_fn(
        hypotheses: usize,
        height: usize,
        width: usize,
        groups: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> (f32, bool),
    ) -> Result<Self> {
        let mut vol = Self::zeros(hypotheses, height, width, groups)?;
        for y in 0..height {
            for x in 0..width {
                for j in 0..hypotheses {
                    for g in 0..groups {
                        let (v, c) = f(j, y, x, g);
                        let i = vol.index(j, y, x, g);
                        vol.data[i] = v;
                        if g == 0 {
                            let ci = vol.coverage_index(j, y, x);
                            vol.coverage[ci] = c;
                        }
                    }
                }
            }
        }
        Ok(vol)
    }

    /// Registers this volume's elements with `ledger` until it is dropped.
    pub fn track(mut self, ledger: &Arc<MemoryLedger>) -> Self {
        self.lease = Some(ledger.lease(TensorKind::CostVolume, self.data.len()));
        self
    }

    /// `(D, H, W, N_g)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.hypotheses, self.height, self.width, self.groups)
    }

    pub fn hypotheses(&self) -> usize {
        self.hypotheses
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    /// Number of score elements (`D * H * W * N_g`).
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    fn index(&self, j: usize, y: usize, x: usize, g: usize) -> usize {
        ((y * self.width + x) * self.hypotheses + j) * self.groups + g
    }

    #[inline]
    fn coverage_index(&self, j: usize, y: usize, x: usize) -> usize {
        (y * self.width + x) * self.hypotheses + j
    }

    #[inline]
    pub fn value(&self, j: usize, y: usize, x: usize, g: usize) -> f32 {
        self.data[self.index(j, y, x, g)]
    }

    #[inline]
    pub fn set_value(&mut self, j: usize, y: usize, x: usize, g: usize, v: f32) {
        let i = self.index(j, y, x, g);
        self.data[i] = v;
    }

    #[inline]
    pub fn covered(&self, j: usize, y: usize, x: usize) -> bool {
        self.coverage[self.coverage_index(j, y, x)]
    }

    #[inline]
    pub fn set_covered(&mut self, j: usize, y: usize, x: usize, c: bool) {
        let i = self.coverage_index(j, y, x);
        self.coverage[i] = c;
    }

    /// The `D * N_g` values of one pixel, hypothesis-major.
    #[inline]
    pub fn pixel_values(&self, y: usize, x: usize) -> &[f32] {
        let n = self.hypotheses * self.groups;
        let i = (y * self.width + x) * n;
        &self.data[i..i + n]
    }

    #[inline]
    pub fn pixel_coverage(&self, y: usize, x: usize) -> &[bool] {
        let i = (y * self.width + x) * self.hypotheses;
        &self.coverage[i..i + self.hypotheses]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Per-pixel view weights in `[0, 1]`.
pub type ViewWeightMap = Grid<f32>;

/// `D x H x W` per-pixel distributions over hypotheses, pixel-major.
#[derive(Debug, Clone)]
pub struct ProbabilityVolume {
    hypotheses: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    lease: Option<Lease>,
}

impl PartialEq for ProbabilityVolume {
    fn eq(&self, other: &Self) -> bool {
        self.hypotheses == other.hypotheses
            && self.height == other.height
            && self.width == other.width
            && self.data == other.data
    }
}

impl ProbabilityVolume {
    /// Wraps pixel-major probabilities; each pixel's `D` entries must sum to 1.
    pub fn from_vec(hypotheses: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != hypotheses * height * width {
            return Err(Error::ShapeMismatch(format!(
                "probability data length {} != {hypotheses}x{height}x{width}",
                data.len()
            )));
        }
        let vol = ProbabilityVolume {
            hypotheses,
            height,
            width,
            data,
            lease: None,
        };
        for y in 0..height {
            for x in 0..width {
                let s: f64 = vol.pixel(y, x).iter().sum();
                if !((s - 1.0).abs() <= 1e-6) || vol.pixel(y, x).iter().any(|p| !(*p >= 0.0)) {
                    return Err(Error::InvalidArgument(format!(
                        "pixel ({y}, {x}) is not a distribution (sum {s})"
                    )));
                }
            }
        }
        Ok(vol)
    }

    /// Uniform `1/D` everywhere.
    pub fn uniform(hypotheses: usize, height: usize, width: usize) -> Self {
        ProbabilityVolume {
            hypotheses,
            height,
            width,
            data: vec![1.0 / hypotheses as f64; hypotheses * height * width],
            lease: None,
        }
    }

    pub fn track(mut self, ledger: &Arc<MemoryLedger>) -> Self {
        self.lease = Some(ledger.lease(TensorKind::Probability, self.data.len()));
        self
    }

    pub fn hypotheses(&self) -> usize {
        self.hypotheses
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, j: usize, y: usize, x: usize) -> f64 {
        self.data[(y * self.width + x) * self.hypotheses + j]
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let i = (y * self.width + x) * self.hypotheses;
        &self.data[i..i + self.hypotheses]
    }

    /// Per-pixel maximum probability.
    pub fn max_map(&self) -> Grid<f64> {
        Grid::from_fn(self.height, self.width, |y, x| {
            self.pixel(y, x).iter().copied().fold(f64::MIN, f64::max)
        })
    }

    /// Drops the ledger registration, for records kept past a stage.
    pub fn untracked(mut self) -> Self {
        self.lease = None;
        self
    }
}

/// A source view as seen from the reference: its features, camera and the
/// reference-to-source pose.
#[derive(Debug, Clone, Copy)]
pub struct SourceView<'a> {
    pub features: &'a FeatureMap,
    pub camera: &'a CameraModel,
    pub pose: &'a RelativePose,
}

fn check_pair(reference: &FeatureMap, source: &FeatureMap, hyps: &DepthHypotheses) -> Result<()> {
    if reference.channels() != source.channels()
        || reference.groups() != source.groups()
        || reference.level() != source.level()
    {
        return Err(Error::ShapeMismatch(format!(
            "feature maps differ: {}ch/{}g/level {} vs {}ch/{}g/level {}",
            reference.channels(),
            reference.groups(),
            reference.level(),
            source.channels(),
            source.groups(),
            source.level()
        )));
    }
    if hyps.height() != reference.height() || hyps.width() != reference.width() {
        return Err(Error::ShapeMismatch(format!(
            "hypotheses {}x{} vs features {}x{}",
            hyps.height(),
            hyps.width(),
            reference.height(),
            reference.width()
        )));
    }
    Ok(())
}

/// Correlates one reference pixel against one source view for every
/// hypothesis. Writes `D * N_g` values and `D` coverage flags.
#[allow(clippy::too_many_arguments)]
#[inline]
fn correlate_pixel(
    reference: &FeatureMap,
    source: &FeatureMap,
    warper: &Warper,
    y: usize,
    x: usize,
    depths: &[f64],
    values: &mut [f32],
    coverage: &mut [bool],
    sample: &mut [f64],
) {
    let groups = reference.groups();
    let per_group = reference.channels() / groups;
    let scale = groups as f64 / reference.channels() as f64;
    let f0 = reference.pixel(y, x);
    let ray = warper.ray(x as f64, y as f64);
    for (j, &d) in depths.iter().enumerate() {
        let out = &mut values[j * groups..(j + 1) * groups];
        let inside = match warper.at_depth(&ray, d) {
            Some((px, py)) => source.sample_bilinear(px, py, sample),
            None => false,
        };
        coverage[j] = inside;
        if !inside {
            out.fill(0.0);
            continue;
        }
        for (g, o) in out.iter_mut().enumerate() {
            let mut dot = 0.0f64;
            for c in g * per_group..(g + 1) * per_group {
                dot += f0[c] as f64 * sample[c];
            }
            *o = (scale * dot) as f32;
        }
    }
}

/// Two-view group-wise correlation volume:
/// `V(j, p, g) = (N_g / N_c) * <F_ref^g(p), F_src^g(p'_j)>` with `p'_j` the
/// warp of `p` at hypothesis `j`, sampled bilinearly. Warps landing outside
/// the source image are uncovered and score 0.
pub fn build_two_view_volume(
    reference: &FeatureMap,
    source: &FeatureMap,
    hyps: &DepthHypotheses,
    ref_cam: &CameraModel,
    src_cam: &CameraModel,
    pose: &RelativePose,
) -> Result<CostVolume> {
    check_pair(reference, source, hyps)?;
    let (h, w, d, g) = (reference.height(), reference.width(), hyps.hypotheses(), reference.groups());
    let mut vol = CostVolume::zeros(d, h, w, g)?;
    let warper = Warper::new(ref_cam, src_cam, pose);
    let channels = reference.channels();
    vol.data
        .par_chunks_mut(w * d * g)
        .zip(vol.coverage.par_chunks_mut(w * d))
        .enumerate()
        .for_each(|(y, (vals, covs))| {
            let mut sample = vec![0.0f64; channels];
            for x in 0..w {
                correlate_pixel(
                    reference,
                    source,
                    &warper,
                    y,
                    x,
                    hyps.pixel(y, x),
                    &mut vals[x * d * g..(x + 1) * d * g],
                    &mut covs[x * d..(x + 1) * d],
                    &mut sample,
                );
            }
        });
    Ok(vol)
}

#[inline]
fn pixel_weight(values: &[f32], coverage: &[bool], groups: usize) -> f32 {
    let mut best = f32::NEG_INFINITY;
    for (j, &c) in coverage.iter().enumerate() {
        if c {
            for &v in &values[j * groups..(j + 1) * groups] {
                best = best.max(v);
            }
        }
    }
    if best == f32::NEG_INFINITY {
        0.0
    } else {
        best.clamp(0.0, 1.0)
    }
}

/// Per-pixel view weight: the maximum covered correlation, clamped to
/// `[0, 1]`; 0 where nothing is covered.
pub fn compute_view_weights(vol: &CostVolume) -> ViewWeightMap {
    Grid::from_fn(vol.height, vol.width, |y, x| {
        pixel_weight(vol.pixel_values(y, x), vol.pixel_coverage(y, x), vol.groups)
    })
}

/// Weighted mean of per-view pixel columns into `out`; returns whether the
/// total weight was usable.
#[inline]
fn fuse_pixel(
    columns: &[(&[f32], &[bool])],
    weights: &[f64],
    groups: usize,
    out_values: &mut [f32],
    out_coverage: &mut [bool],
) {
    let total: f64 = weights.iter().sum();
    if total < MIN_WEIGHT_SUM {
        out_values.fill(0.0);
        out_coverage.fill(false);
        return;
    }
    for (k, o) in out_values.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for ((vals, _), &wt) in columns.iter().zip(weights) {
            acc += wt * vals[k] as f64;
        }
        *o = (acc / total) as f32;
    }
    for (j, c) in out_coverage.iter_mut().enumerate() {
        *c = columns
            .iter()
            .zip(weights)
            .any(|((_, cov), &wt)| wt > 0.0 && cov[j]);
    }
    debug_assert_eq!(out_values.len(), out_coverage.len() * groups);
}

/// Weighted fusion of per-view volumes:
/// `V = sum_i W_i * V_i / sum_i W_i`, with pixels whose weight sum is below
/// `1e-8` zeroed and uncovered.
pub fn fuse_volumes(vols: &[CostVolume], weights: &[ViewWeightMap]) -> Result<CostVolume> {
    let first = vols
        .first()
        .ok_or_else(|| Error::InvalidArgument("no source volumes to fuse".into()))?;
    if vols.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} volumes but {} weight maps",
            vols.len(),
            weights.len()
        )));
    }
    let shape = first.shape();
    for (v, w) in vols.iter().zip(weights) {
        if v.shape() != shape || w.shape() != (shape.1, shape.2) {
            return Err(Error::ShapeMismatch("inconsistent volume shapes".into()));
        }
    }
    let (d, h, w, g) = shape;
    let mut out = CostVolume::zeros(d, h, w, g)?;
    for y in 0..h {
        for x in 0..w {
            let columns: Vec<(&[f32], &[bool])> = vols
                .iter()
                .map(|v| (v.pixel_values(y, x), v.pixel_coverage(y, x)))
                .collect();
            let wts: Vec<f64> = weights.iter().map(|m| *m.get(y, x) as f64).collect();
            let base = (y * w + x) * d;
            fuse_pixel(
                &columns,
                &wts,
                g,
                &mut out.data[base * g..(base + d) * g],
                &mut out.coverage[base..base + d],
            );
        }
    }
    Ok(out)
}

/// Builds the fused volume directly, one pixel at a time, so that no
/// per-view volume is ever materialized. Equivalent to
/// `fuse_volumes(build_two_view_volume(..) for each source, compute_view_weights(..))`.
pub fn build_fused_volume(
    reference: &FeatureMap,
    ref_cam: &CameraModel,
    sources: &[SourceView<'_>],
    hyps: &DepthHypotheses,
    ledger: Option<&Arc<MemoryLedger>>,
) -> Result<CostVolume> {
    if sources.is_empty() {
        return Err(Error::InvalidArgument("no source views".into()));
    }
    for s in sources {
        check_pair(reference, s.features, hyps)?;
    }
    let (h, w, d, g) = (reference.height(), reference.width(), hyps.hypotheses(), reference.groups());
    let mut vol = CostVolume::zeros(d, h, w, g)?;
    if let Some(ledger) = ledger {
        vol = vol.track(ledger);
    }
    let warpers: Vec<Warper> = sources
        .iter()
        .map(|s| Warper::new(ref_cam, s.camera, s.pose))
        .collect();
    let channels = reference.channels();
    let n = sources.len();
    vol.data
        .par_chunks_mut(w * d * g)
        .zip(vol.coverage.par_chunks_mut(w * d))
        .enumerate()
        .for_each(|(y, (vals, covs))| {
            let mut sample = vec![0.0f64; channels];
            let mut col_vals = vec![0.0f32; n * d * g];
            let mut col_cov = vec![false; n * d];
            let mut weights = vec![0.0f64; n];
            for x in 0..w {
                for (i, (src, warper)) in sources.iter().zip(&warpers).enumerate() {
                    let cv = &mut col_vals[i * d * g..(i + 1) * d * g];
                    let cc = &mut col_cov[i * d..(i + 1) * d];
                    correlate_pixel(reference, src.features, warper, y, x, hyps.pixel(y, x), cv, cc, &mut sample);
                    weights[i] = pixel_weight(cv, cc, g) as f64;
                }
                let columns: Vec<(&[f32], &[bool])> = (0..n)
                    .map(|i| (&col_vals[i * d * g..(i + 1) * d * g], &col_cov[i * d..(i + 1) * d]))
                    .collect();
                fuse_pixel(
                    &columns,
                    &weights,
                    g,
                    &mut vals[x * d * g..(x + 1) * d * g],
                    &mut covs[x * d..(x + 1) * d],
                );
            }
        });
    Ok(vol)
}

/// Learnable head: one weight per correlation group and one bias per
/// hypothesis slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizerParams {
    pub group_weights: Vec<f64>,
    pub hypothesis_biases: Vec<f64>,
}

impl RegularizerParams {
    /// Unit group weights and zero biases.
    pub fn uniform(groups: usize, hypotheses: usize) -> Self {
        RegularizerParams {
            group_weights: vec![1.0; groups],
            hypothesis_biases: vec![0.0; hypotheses],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .group_weights
            .iter()
            .chain(&self.hypothesis_biases)
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidArgument("non-finite regularizer parameter".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.group_weights.len() + self.hypothesis_biases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattened `[w_0.., b_0..]`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.group_weights
            .iter()
            .chain(&self.hypothesis_biases)
            .copied()
            .collect()
    }

    pub fn from_slice(groups: usize, values: &[f64]) -> Self {
        RegularizerParams {
            group_weights: values[..groups].to_vec(),
            hypothesis_biases: values[groups..].to_vec(),
        }
    }

    fn check_volume(&self, vol: &CostVolume) -> Result<()> {
        self.validate()?;
        if self.group_weights.len() != vol.groups || self.hypothesis_biases.len() != vol.hypotheses {
            return Err(Error::ShapeMismatch(format!(
                "head has {} weights / {} biases for a volume with {} groups / {} hypotheses",
                self.group_weights.len(),
                self.hypothesis_biases.len(),
                vol.groups,
                vol.hypotheses
            )));
        }
        Ok(())
    }
}

/// 3x3 replicate-padded mean of every `(j, g)` slice at one pixel, written
/// to `out` (`D * N_g`, hypothesis-major).
#[inline]
pub fn smoothed_pixel(vol: &CostVolume, y: usize, x: usize, out: &mut [f64]) {
    out.fill(0.0);
    for dy in -1isize..=1 {
        let yy = (y as isize + dy).clamp(0, vol.height as isize - 1) as usize;
        for dx in -1isize..=1 {
            let xx = (x as isize + dx).clamp(0, vol.width as isize - 1) as usize;
            for (o, &v) in out.iter_mut().zip(vol.pixel_values(yy, xx)) {
                *o += v as f64;
            }
        }
    }
    for o in out.iter_mut() {
        *o /= 9.0;
    }
}

/// Hypothesis scores of one pixel: `s_j = sum_g w_g * smooth(V)(j, g) + b_j`,
/// or [`UNCOVERED_SCORE`] for uncovered hypotheses.
#[inline]
pub(crate) fn pixel_scores(
    vol: &CostVolume,
    params: &RegularizerParams,
    smoothed: &[f64],
    y: usize,
    x: usize,
    scores: &mut [f64],
) {
    let g = vol.groups;
    let cov = vol.pixel_coverage(y, x);
    for (j, s) in scores.iter_mut().enumerate() {
        *s = if cov[j] {
            let mut acc = params.hypothesis_biases[j];
            for (wg, v) in params.group_weights.iter().zip(&smoothed[j * g..(j + 1) * g]) {
                acc += wg * v;
            }
            acc
        } else {
            UNCOVERED_SCORE
        };
    }
}

/// Numerically stable in-place softmax.
#[inline]
pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for e in v.iter_mut() {
        *e = (*e - m).exp();
        sum += *e;
    }
    for e in v.iter_mut() {
        *e /= sum;
    }
}

/// Turns a fused volume into per-pixel probabilities over the hypotheses.
pub fn regularize(vol: &CostVolume, params: &RegularizerParams) -> Result<ProbabilityVolume> {
    regularize_tracked(vol, params, None)
}

pub fn regularize_tracked(
    vol: &CostVolume,
    params: &RegularizerParams,
    ledger: Option<&Arc<MemoryLedger>>,
) -> Result<ProbabilityVolume> {
    params.check_volume(vol)?;
    let (d, h, w, g) = vol.shape();
    let mut data = vec![0.0f64; d * h * w];
    data.par_chunks_mut(w * d).enumerate().for_each(|(y, row)| {
        let mut smooth = vec![0.0f64; d * g];
        for x in 0..w {
            smoothed_pixel(vol, y, x, &mut smooth);
            let out = &mut row[x * d..(x + 1) * d];
            pixel_scores(vol, params, &smooth, y, x, out);
            softmax_in_place(out);
        }
    });
    let mut p = ProbabilityVolume {
        hypotheses: d,
        height: h,
        width: w,
        data,
        lease: None,
    };
    if let Some(ledger) = ledger {
        p = p.track(ledger);
    }
    Ok(p)
}
