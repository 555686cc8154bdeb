//! Binary search over depth bins.
//!
//! Every pixel carries `D` equal-width bins. Each stage samples the bin
//! centres as depth hypotheses, classifies which bin holds the surface, and
//! subdivides the chosen bin for the next stage. With `D = 2` this is a
//! plain bisection. With even `D >= 4` the two halves are padded with
//! `(D - 2) / 2` error-tolerance bins per side, so a label that is off by
//! one can still be corrected later. Bin width at stage `k` is
//! `R / (D * 2^(k-1))`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::alloc::MemoryLedger;
use crate::costvol::{build_fused_volume, regularize, CostVolume, ProbabilityVolume, RegularizerParams, SourceView};
use crate::error::{Error, Result};
use crate::features::{build_pyramid, FeatureConfig, FeaturePyramid};
use crate::fusion::DepthMap;
use crate::geometry::{relative_pose, CameraModel, Pose, RelativePose};
use crate::grid::{GrayImage, Grid, MaskMap};

/// Closed depth interval `[min, max]` with `0 < min < max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    min: f64,
    max: f64,
}

impl DepthRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min > 0.0 && max > min && max.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid depth range [{min}, {max}]")));
        }
        Ok(DepthRange { min, max })
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    /// `R = max - min`.
    pub fn extent(&self) -> f64 {
        self.max - self.min
    }

    pub fn contains(&self, d: f64) -> bool {
        d >= self.min && d <= self.max
    }
}

/// Bin width at `stage` (1-based) for `hypotheses` bins over `extent`.
pub fn bin_width_at(extent: f64, hypotheses: usize, stage: usize) -> f64 {
    extent / (hypotheses as f64 * 2f64.powi(stage as i32 - 1))
}

/// Per-pixel labels, `1..=D`; 0 marks "no label".
pub type LabelMap = Grid<u32>;

/// `D` depth hypotheses per pixel, pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthHypotheses {
    hypotheses: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DepthHypotheses {
    pub fn from_fn(
        hypotheses: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(hypotheses * height * width);
        for y in 0..height {
            for x in 0..width {
                for j in 0..hypotheses {
                    data.push(f(j, y, x));
                }
            }
        }
        DepthHypotheses {
            hypotheses,
            height,
            width,
            data,
        }
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

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let i = (y * self.width + x) * self.hypotheses;
        &self.data[i..i + self.hypotheses]
    }

    /// Hypothesis `j` (0-based) at a pixel.
    #[inline]
    pub fn get(&self, j: usize, y: usize, x: usize) -> f64 {
        self.pixel(y, x)[j]
    }
}

/// Per-pixel bin edges for the current stage.
#[derive(Debug, Clone, PartialEq)]
pub struct BinState {
    stage: usize,
    hypotheses: usize,
    height: usize,
    width: usize,
    range: DepthRange,
    bin_width: f64,
    edges: Vec<f64>,
}

impl BinState {
    pub fn stage(&self) -> usize {
        self.stage
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

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn range(&self) -> DepthRange {
        self.range
    }

    /// Nominal bin width for the current stage, `R / (D * 2^(k-1))`.
    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    /// The `D + 1` edges of a pixel, increasing.
    #[inline]
    pub fn edges(&self, y: usize, x: usize) -> &[f64] {
        let n = self.hypotheses + 1;
        let i = (y * self.width + x) * n;
        &self.edges[i..i + n]
    }

    #[inline]
    fn edges_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let n = self.hypotheses + 1;
        let i = (y * self.width + x) * n;
        &mut self.edges[i..i + n]
    }

    /// A single-pixel state with explicit edges, for driving the update
    /// rules directly.
    pub fn from_pixel_edges(stage: usize, range: DepthRange, edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 3 {
            return Err(Error::InvalidArgument("need at least 2 bins".into()));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("edges must be strictly increasing".into()));
        }
        let hypotheses = edges.len() - 1;
        Ok(BinState {
            stage,
            hypotheses,
            height: 1,
            width: 1,
            range,
            bin_width: edges[1] - edges[0],
            edges,
        })
    }

    /// Nearest-neighbor handoff to the next finer pyramid level.
    pub fn upsample(&self) -> BinState {
        let n = self.hypotheses + 1;
        let (h, w) = (self.height * 2, self.width * 2);
        let mut edges = Vec::with_capacity(h * w * n);
        for y in 0..h {
            for x in 0..w {
                edges.extend_from_slice(self.edges(y / 2, x / 2));
            }
        }
        BinState {
            height: h,
            width: w,
            edges,
            ..self.clone()
        }
    }

    /// Centre of the bin `label` (1-based) at each pixel.
    pub fn selected_centers(&self, labels: &LabelMap) -> Result<Grid<f64>> {
        self.check_labels(labels)?;
        Ok(Grid::from_fn(self.height, self.width, |y, x| {
            let e = self.edges(y, x);
            let j = *labels.get(y, x) as usize;
            0.5 * (e[j - 1] + e[j])
        }))
    }

    fn check_labels(&self, labels: &LabelMap) -> Result<()> {
        if labels.shape() != self.shape() {
            return Err(Error::ShapeMismatch(format!(
                "labels {:?} vs bins {:?}",
                labels.shape(),
                self.shape()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l == 0 || l as usize > self.hypotheses) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside 1..={}",
                self.hypotheses
            )));
        }
        Ok(())
    }
}

/// Stage-1 bins: `D` equal bins tiling the range at every pixel.
pub fn init_bins(range: DepthRange, hypotheses: usize, image_size: (usize, usize)) -> Result<BinState> {
    if hypotheses < 2 || !hypotheses.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "hypothesis count must be even and >= 2, got {hypotheses}"
        )));
    }
    let (height, width) = image_size;
    let bin_width = bin_width_at(range.extent(), hypotheses, 1);
    let pixel: Vec<f64> = (0..=hypotheses)
        .map(|m| {
            if m == hypotheses {
                range.max
            } else {
                range.min + m as f64 * bin_width
            }
        })
        .collect();
    let mut edges = Vec::with_capacity(height * width * pixel.len());
    for _ in 0..height * width {
        edges.extend_from_slice(&pixel);
    }
    Ok(BinState {
        stage: 1,
        hypotheses,
        height,
        width,
        range,
        bin_width,
        edges,
    })
}

/// Bin centres `d_j = (e_j + e_{j+1}) / 2`.
pub fn centers(state: &BinState) -> DepthHypotheses {
    DepthHypotheses::from_fn(state.hypotheses, state.height, state.width, |j, y, x| {
        let e = state.edges(y, x);
        0.5 * (e[j] + e[j + 1])
    })
}

/// Per-pixel argmax over hypotheses (1-based), ties to the lowest index.
pub fn select_label(p: &ProbabilityVolume) -> LabelMap {
    Grid::from_fn(p.height(), p.width(), |y, x| {
        let mut best = 0;
        let px = p.pixel(y, x);
        for (j, &v) in px.iter().enumerate() {
            if v > px[best] {
                best = j;
            }
        }
        best as u32 + 1
    })
}

/// Bisection step (`D = 2`): the chosen bin becomes the two new bins.
pub fn update_bins_binary(state: &BinState, labels: &LabelMap) -> Result<BinState> {
    if state.hypotheses != 2 {
        return Err(Error::InvalidArgument(format!(
            "binary update needs D = 2, got {}",
            state.hypotheses
        )));
    }
    state.check_labels(labels)?;
    let mut next = state.clone();
    next.stage += 1;
    next.bin_width = state.bin_width / 2.0;
    for y in 0..state.height {
        for x in 0..state.width {
            let j = *labels.get(y, x) as usize;
            let e = state.edges(y, x);
            let (a, b) = (e[j - 1], e[j]);
            next.edges_mut(y, x).copy_from_slice(&[a, 0.5 * (a + b), b]);
        }
    }
    Ok(next)
}

/// Generalized step: halve the chosen bin `[a, b]` and pad `(D - 2) / 2`
/// bins of the new width on each side. Edges are not clamped to the depth
/// range; if the smallest centre would be non-positive the window is shifted
/// so that it sits at `d_min / 2`.
pub fn update_bins_generalized(state: &BinState, labels: &LabelMap) -> Result<BinState> {
    let d = state.hypotheses;
    if d < 2 || !d.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("hypothesis count must be even, got {d}")));
    }
    state.check_labels(labels)?;
    let pad = (d - 2) / 2;
    let h = state.bin_width / 2.0;
    let mut next = state.clone();
    next.stage += 1;
    next.bin_width = h;
    let floor = state.range.min / 2.0;
    for y in 0..state.height {
        for x in 0..state.width {
            let j = *labels.get(y, x) as usize;
            let e = state.edges(y, x);
            let (a, b) = (e[j - 1], e[j]);
            let out = next.edges_mut(y, x);
            for i in 0..pad {
                out[i] = a - (pad - i) as f64 * h;
                out[pad + 3 + i] = b + (i + 1) as f64 * h;
            }
            out[pad] = a;
            out[pad + 1] = 0.5 * (a + b);
            out[pad + 2] = b;
            let first_center = 0.5 * (out[0] + out[1]);
            if first_center <= 0.0 {
                let shift = floor - first_center;
                out.iter_mut().for_each(|v| *v += shift);
            }
        }
    }
    Ok(next)
}

/// Valid where the ground truth is valid and `e_1 <= d_gt < e_{D+1}`.
pub fn compute_valid_mask(state: &BinState, gt: &DepthMap) -> Result<MaskMap> {
    check_gt(state, gt)?;
    Ok(Grid::from_fn(state.height, state.width, |y, x| match gt.get(y, x) {
        Some(d) => {
            let e = state.edges(y, x);
            e[0] <= d && d < e[state.hypotheses]
        }
        None => false,
    }))
}

/// The bin holding the ground truth (half-open bins), with 0 and a false
/// mask entry where the ground truth is invalid or outside all bins.
pub fn ground_truth_label(state: &BinState, gt: &DepthMap) -> Result<(LabelMap, MaskMap)> {
    let mask = compute_valid_mask(state, gt)?;
    let labels = Grid::from_fn(state.height, state.width, |y, x| {
        if !*mask.get(y, x) {
            return 0;
        }
        let d = gt.get(y, x).unwrap_or(f64::NAN);
        let e = state.edges(y, x);
        // e[0] <= d < e[D] holds; find the last edge <= d.
        let j = e[1..state.hypotheses].iter().take_while(|&&edge| edge <= d).count();
        j as u32 + 1
    });
    Ok((labels, mask))
}

fn check_gt(state: &BinState, gt: &DepthMap) -> Result<()> {
    if gt.shape() != state.shape() {
        return Err(Error::ShapeMismatch(format!(
            "ground truth {:?} vs bins {:?}",
            gt.shape(),
            state.shape()
        )));
    }
    Ok(())
}

/// Ground-truth labels where the ground truth lies in the bins, the
/// prediction elsewhere.
pub(crate) fn oracle_or_predicted(state: &BinState, gt: &DepthMap, predicted: &LabelMap) -> Result<LabelMap> {
    let (oracle, mask) = ground_truth_label(state, gt)?;
    Ok(Grid::from_fn(oracle.height(), oracle.width(), |y, x| {
        if *mask.get(y, x) {
            *oracle.get(y, x)
        } else {
            *predicted.get(y, x)
        }
    }))
}

/// How each stage's labels are chosen and applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Predicted labels, bisection (`D = 2`).
    Binary,
    /// Predicted labels, subdivision with tolerance bins.
    Generalized,
    /// Ground-truth labels (teacher forcing), subdivision with tolerance
    /// bins. Falls back to the prediction where no ground truth applies.
    OracleLabel,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Strategy::Binary),
            "generalized" => Ok(Strategy::Generalized),
            "oracle-label" | "oracle" => Ok(Strategy::OracleLabel),
            other => Err(Error::InvalidArgument(format!("unknown strategy '{other}'"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Binary => "binary",
            Strategy::Generalized => "generalized",
            Strategy::OracleLabel => "oracle-label",
        })
    }
}

/// Applies the update rule matching `strategy`.
pub fn advance_bins(state: &BinState, labels: &LabelMap, strategy: Strategy) -> Result<BinState> {
    match strategy {
        Strategy::Binary => update_bins_binary(state, labels),
        Strategy::Generalized | Strategy::OracleLabel => update_bins_generalized(state, labels),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Hypotheses (bins) per stage, `D`.
    pub hypotheses: usize,
    /// Number of stages, `K`.
    pub stages: usize,
    /// Pyramid levels.
    pub levels: usize,
    pub strategy: Strategy,
    pub features: FeatureConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            hypotheses: 4,
            stages: 8,
            levels: 4,
            strategy: Strategy::Generalized,
            features: FeatureConfig::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        if self.hypotheses < 2 || !self.hypotheses.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "hypothesis count must be even and >= 2, got {}",
                self.hypotheses
            )));
        }
        if self.strategy == Strategy::Binary && self.hypotheses != 2 {
            return Err(Error::InvalidArgument("binary strategy needs 2 hypotheses".into()));
        }
        if self.stages == 0 || self.levels == 0 {
            return Err(Error::InvalidArgument("need at least one stage and one level".into()));
        }
        Ok(())
    }

    /// Pyramid level of `stage` (1-based): two consecutive stages per level,
    /// ending at full resolution on the last stage, clamped to the coarsest
    /// level for long schedules.
    pub fn level_for_stage(&self, stage: usize) -> usize {
        let remaining = self.stages - stage;
        (remaining / 2).min(self.levels - 1)
    }

    /// Final-stage bin width for a range.
    pub fn final_bin_width(&self, range: DepthRange) -> f64 {
        bin_width_at(range.extent(), self.hypotheses, self.stages)
    }
}

/// Per-stage regularizer heads, one per pyramid level (shared by the
/// stages at that level).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSet {
    pub levels: Vec<RegularizerParams>,
}

impl RegularizerSet {
    pub fn uniform(levels: usize, groups: usize, hypotheses: usize) -> Self {
        RegularizerSet {
            levels: vec![RegularizerParams::uniform(groups, hypotheses); levels],
        }
    }

    pub fn for_config(config: &SearchConfig) -> Self {
        Self::uniform(config.levels, config.features.groups, config.hypotheses)
    }

    pub fn level(&self, level: usize) -> Result<&RegularizerParams> {
        self.levels
            .get(level)
            .ok_or_else(|| Error::InvalidArgument(format!("no regularizer for level {level}")))
    }
}

/// One calibrated view of a scene. `pose` maps world to camera.
#[derive(Debug, Clone)]
pub struct View {
    pub image: GrayImage,
    pub camera: CameraModel,
    pub pose: Pose,
    pub range: DepthRange,
    pub ground_truth: Option<DepthMap>,
}

/// Everything recorded for one stage.
#[derive(Debug, Clone)]
pub struct StageRecord {
    pub stage: usize,
    pub level: usize,
    pub bin_width: f64,
    pub probability: ProbabilityVolume,
    pub labels: LabelMap,
    /// Centre of the selected bin per pixel, at this stage's resolution.
    pub depth: Grid<f64>,
    /// Pixels with at least one covered hypothesis.
    pub covered: MaskMap,
    /// Valid mask against the ground truth, when available.
    pub valid: Option<MaskMap>,
}

impl StageRecord {
    /// Fraction of ground-truth-valid pixels still inside the bins.
    pub fn valid_fraction(&self, gt: Option<&DepthMap>) -> Option<f64> {
        let mask = self.valid.as_ref()?;
        let gt = gt?;
        let total = gt.valid().count_true();
        if total == 0 {
            return None;
        }
        Some(mask.count_true() as f64 / total as f64)
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutput {
    pub depth: DepthMap,
    pub stages: Vec<StageRecord>,
}

impl SearchOutput {
    pub fn probabilities(&self) -> Vec<&ProbabilityVolume> {
        self.stages.iter().map(|s| &s.probability).collect()
    }
}

/// Feature pyramids and per-level cameras for a view set, computed once and
/// shared between searches with different references or strategies.
#[derive(Debug)]
pub struct SearchContext<'a> {
    views: &'a [View],
    config: SearchConfig,
    pyramids: Vec<FeaturePyramid>,
    cameras: Vec<Vec<CameraModel>>,
    ground_truth: Vec<Vec<Option<DepthMap>>>,
}

impl<'a> SearchContext<'a> {
    pub fn new(views: &'a [View], config: SearchConfig) -> Result<Self> {
        config.validate()?;
        if views.len() < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 views, got {}", views.len())));
        }
        let mut pyramids = Vec::with_capacity(views.len());
        let mut cameras = Vec::with_capacity(views.len());
        let mut ground_truth = Vec::with_capacity(views.len());
        for v in views {
            if v.image.shape() != v.camera.image_size() {
                return Err(Error::ShapeMismatch(format!(
                    "image {:?} vs camera {:?}",
                    v.image.shape(),
                    v.camera.image_size()
                )));
            }
            pyramids.push(build_pyramid(&v.image, config.levels, config.features)?);
            cameras.push(
                (0..config.levels)
                    .map(|l| v.camera.scaled(l))
                    .collect::<Result<Vec<_>>>()?,
            );
            ground_truth.push(
                (0..config.levels)
                    .map(|l| v.ground_truth.as_ref().map(|g| g.subsample(l)))
                    .collect(),
            );
        }
        Ok(SearchContext {
            views,
            config,
            pyramids,
            cameras,
            ground_truth,
        })
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    pub fn views(&self) -> &[View] {
        self.views
    }

    pub fn pyramid(&self, view: usize) -> &FeaturePyramid {
        &self.pyramids[view]
    }

    pub fn camera(&self, view: usize, level: usize) -> &CameraModel {
        &self.cameras[view][level]
    }

    /// Ground truth of `view` subsampled to `level`.
    pub fn ground_truth(&self, view: usize, level: usize) -> Option<&DepthMap> {
        self.ground_truth[view][level].as_ref()
    }

    /// Relative poses from `reference` to every other view.
    pub fn relative_poses(&self, reference: usize) -> Vec<(usize, RelativePose)> {
        let r = &self.views[reference].pose;
        (0..self.views.len())
            .filter(|&i| i != reference)
            .map(|i| (i, relative_pose(r, &self.views[i].pose)))
            .collect()
    }

    /// Fused cost volume of `reference` at `level` for the given hypotheses.
    pub fn build_volume(
        &self,
        reference: usize,
        level: usize,
        hyps: &DepthHypotheses,
        ledger: Option<&Arc<MemoryLedger>>,
    ) -> Result<CostVolume> {
        let poses = self.relative_poses(reference);
        let sources: Vec<SourceView<'_>> = poses
            .iter()
            .map(|(i, pose)| SourceView {
                features: self.pyramids[*i].level(level),
                camera: &self.cameras[*i][level],
                pose,
            })
            .collect();
        build_fused_volume(
            self.pyramids[reference].level(level),
            &self.cameras[reference][level],
            &sources,
            hyps,
            ledger,
        )
    }

    /// Stage-1 bins for `reference` at `level`.
    pub fn initial_bins(&self, reference: usize, level: usize) -> Result<BinState> {
        let cam = &self.cameras[reference][level];
        init_bins(self.views[reference].range, self.config.hypotheses, cam.image_size())
    }

    /// Brings `state` from its level to `level` by nearest-neighbor upsampling.
    pub fn handoff(&self, mut state: BinState, reference: usize, level: usize) -> BinState {
        let target = self.cameras[reference][level].image_size();
        while state.shape() != target && state.height() < target.0 {
            state = state.upsample();
        }
        state
    }

    /// Runs all stages with `reference` as the reference view.
    pub fn run(
        &self,
        reference: usize,
        params: &RegularizerSet,
        ledger: Option<&Arc<MemoryLedger>>,
    ) -> Result<SearchOutput> {
        let cfg = &self.config;
        let mut stages = Vec::with_capacity(cfg.stages);
        let mut state: Option<BinState> = None;
        for stage in 1..=cfg.stages {
            let level = cfg.level_for_stage(stage);
            let current = match state.take() {
                None => self.initial_bins(reference, level)?,
                Some(s) => self.handoff(s, reference, level),
            };
            let hyps = centers(&current);
            let vol = self.build_volume(reference, level, &hyps, ledger)?;
            let prob = regularize(&vol, params.level(level)?)?;
            let covered = Grid::from_fn(vol.height(), vol.width(), |y, x| {
                vol.pixel_coverage(y, x).iter().any(|&c| c)
            });
            drop(vol);
            let predicted = select_label(&prob);
            let gt = self.ground_truth(reference, level);
            let valid = gt.map(|g| compute_valid_mask(&current, g)).transpose()?;
            let labels = match (cfg.strategy, gt) {
                (Strategy::OracleLabel, Some(g)) => oracle_or_predicted(&current, g, &predicted)?,
                (Strategy::OracleLabel, None) => {
                    return Err(Error::InvalidArgument(
                        "oracle-label strategy needs ground truth".into(),
                    ))
                }
                _ => predicted,
            };
            let depth = current.selected_centers(&labels)?;
            if stage < cfg.stages {
                state = Some(advance_bins(&current, &labels, cfg.strategy)?);
            }
            stages.push(StageRecord {
                stage,
                level,
                bin_width: current.bin_width(),
                probability: prob,
                labels,
                depth,
                covered,
                valid,
            });
        }
        let last = stages.last().expect("at least one stage");
        let depth = DepthMap::new(last.depth.clone(), last.covered.clone())?;
        Ok(SearchOutput { depth, stages })
    }
}

/// Convenience wrapper: builds a [`SearchContext`] and runs one reference.
pub fn run_search(
    views: &[View],
    reference: usize,
    config: SearchConfig,
    params: &RegularizerSet,
    ledger: Option<&Arc<MemoryLedger>>,
) -> Result<SearchOutput> {
    SearchContext::new(views, config)?.run(reference, params, ledger)
}
