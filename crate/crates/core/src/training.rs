//! Fitting the regularizer heads with a masked classification loss.
//!
//! Each stage is trained on its own: the stage's cost volume is built, the
//! loss over pixels whose ground truth still lies inside the bins is
//! computed, and the shared head of that pyramid level is updated before the
//! next stage starts. Only one stage's tensors are alive at any time.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alloc::MemoryLedger;
use crate::costvol::{
    pixel_scores, regularize_tracked, smoothed_pixel, softmax_in_place, CostVolume, ProbabilityVolume,
    RegularizerParams,
};
use crate::error::{Error, Result};
use crate::fusion::DepthMap;
use crate::grid::MaskMap;
use crate::search::{
    advance_bins, centers, ground_truth_label, oracle_or_predicted, select_label, BinState, RegularizerSet,
    SearchConfig, SearchContext, Strategy, View,
};

/// Probabilities below this are floored inside the logarithm.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// One-hot target per pixel; all zeros where the ground truth is outside
/// the bins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyVolume {
    hypotheses: usize,
    height: usize,
    width: usize,
    /// 0-based index of the hot bin, `None` for all-zero rows.
    hot: Vec<Option<u32>>,
}

impl OccupancyVolume {
    pub fn hypotheses(&self) -> usize {
        self.hypotheses
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.hypotheses, self.height, self.width)
    }

    /// `G(j, y, x)` in `{0, 1}`.
    pub fn get(&self, j: usize, y: usize, x: usize) -> u8 {
        u8::from(self.hot(y, x) == Some(j))
    }

    /// 0-based index of the hot bin at a pixel.
    pub fn hot(&self, y: usize, x: usize) -> Option<usize> {
        self.hot[y * self.width + x].map(|j| j as usize)
    }
}

/// Converts ground truth into one-hot bin targets and the valid mask.
pub fn build_occupancy(state: &BinState, gt: &DepthMap) -> Result<(OccupancyVolume, MaskMap)> {
    let (labels, mask) = ground_truth_label(state, gt)?;
    let hot = labels
        .iter()
        .map(|&l| if l == 0 { None } else { Some(l - 1) })
        .collect();
    Ok((
        OccupancyVolume {
            hypotheses: state.hypotheses(),
            height: state.height(),
            width: state.width(),
            hot,
        },
        mask,
    ))
}

fn check_shapes(p: (usize, usize, usize), g: &OccupancyVolume, mask: &MaskMap) -> Result<()> {
    if p != g.shape() || (p.1, p.2) != mask.shape() {
        return Err(Error::ShapeMismatch(format!(
            "probabilities {:?}, targets {:?}, mask {:?}",
            p,
            g.shape(),
            mask.shape()
        )));
    }
    Ok(())
}

/// Pixels that contribute to the loss: masked true with a hot bin.
fn counted(g: &OccupancyVolume, mask: &MaskMap, y: usize, x: usize) -> Option<usize> {
    if *mask.get(y, x) {
        g.hot(y, x)
    } else {
        None
    }
}

/// Mean over valid pixels of `-log P(j*, q)`, with the probability floored
/// at [`PROBABILITY_FLOOR`].
pub fn masked_cross_entropy(p: &ProbabilityVolume, g: &OccupancyVolume, mask: &MaskMap) -> Result<f64> {
    check_shapes((p.hypotheses(), p.height(), p.width()), g, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..p.height() {
        for x in 0..p.width() {
            if let Some(j) = counted(g, mask, y, x) {
                sum -= p.get(j, y, x).max(PROBABILITY_FLOOR).ln();
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok(sum / n as f64)
}

/// Gradient of the loss with respect to one regularizer head.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    pub group_weights: Vec<f64>,
    pub hypothesis_biases: Vec<f64>,
}

impl LossGradients {
    pub fn norm(&self) -> f64 {
        self.group_weights
            .iter()
            .chain(&self.hypothesis_biases)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.group_weights
            .iter()
            .chain(&self.hypothesis_biases)
            .all(|v| v.is_finite())
    }

    fn zeros(groups: usize, hypotheses: usize) -> Self {
        LossGradients {
            group_weights: vec![0.0; groups],
            hypothesis_biases: vec![0.0; hypotheses],
        }
    }

    fn add(&mut self, other: &LossGradients) {
        for (a, b) in self.group_weights.iter_mut().zip(&other.group_weights) {
            *a += b;
        }
        for (a, b) in self.hypothesis_biases.iter_mut().zip(&other.hypothesis_biases) {
            *a += b;
        }
    }

    /// `params - step * self`.
    pub fn descend(&self, params: &RegularizerParams, step: f64) -> RegularizerParams {
        RegularizerParams {
            group_weights: params
                .group_weights
                .iter()
                .zip(&self.group_weights)
                .map(|(p, g)| p - step * g)
                .collect(),
            hypothesis_biases: params
                .hypothesis_biases
                .iter()
                .zip(&self.hypothesis_biases)
                .map(|(p, g)| p - step * g)
                .collect(),
        }
    }
}

/// Analytic gradient of [`masked_cross_entropy`] after
/// [`crate::costvol::regularize`].
///
/// With `r_j = (P_j - G_j) / |valid|` at covered hypotheses, the weight
/// gradient is `sum r_j * smooth(V)(j, g)` and the bias gradient `sum r_j`.
/// Rows are reduced in order, so the result does not depend on the thread
/// count.
pub fn loss_gradients(
    vol: &CostVolume,
    params: &RegularizerParams,
    g: &OccupancyVolume,
    mask: &MaskMap,
) -> Result<LossGradients> {
    let (d, h, w, groups) = vol.shape();
    check_shapes((d, h, w), g, mask)?;
    params.validate()?;
    if params.group_weights.len() != groups || params.hypothesis_biases.len() != d {
        return Err(Error::ShapeMismatch("regularizer head vs volume".into()));
    }
    let rows: Vec<(LossGradients, usize)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut acc = LossGradients::zeros(groups, d);
            let mut n = 0usize;
            let mut smooth = vec![0.0f64; d * groups];
            let mut p = vec![0.0f64; d];
            for x in 0..w {
                let Some(target) = counted(g, mask, y, x) else {
                    continue;
                };
                n += 1;
                smoothed_pixel(vol, y, x, &mut smooth);
                pixel_scores(vol, params, &smooth, y, x, &mut p);
                softmax_in_place(&mut p);
                if p[target] < PROBABILITY_FLOOR {
                    // The floored log is constant here.
                    continue;
                }
                let cov = vol.pixel_coverage(y, x);
                for j in 0..d {
                    if !cov[j] {
                        continue;
                    }
                    let r = p[j] - if j == target { 1.0 } else { 0.0 };
                    acc.hypothesis_biases[j] += r;
                    for (gw, s) in acc.group_weights.iter_mut().zip(&smooth[j * groups..(j + 1) * groups]) {
                        *gw += r * s;
                    }
                }
            }
            (acc, n)
        })
        .collect();
    let mut total = LossGradients::zeros(groups, d);
    let mut n = 0usize;
    for (row, count) in &rows {
        total.add(row);
        n += count;
    }
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    let inv = 1.0 / n as f64;
    for v in total.group_weights.iter_mut().chain(total.hypothesis_biases.iter_mut()) {
        *v *= inv;
    }
    Ok(total)
}

/// When parameter updates are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateMode {
    /// Update right after each stage and release its tensors.
    #[default]
    Stagewise,
    /// Keep every stage alive and update once per scene. Exists to measure
    /// what the stagewise schedule saves.
    Accumulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Gradient-descent step size.
    pub step: f64,
    /// Epochs between increases of the stage cap (which starts at 2 and
    /// grows by 2 up to `K`).
    pub epochs_per_increase: usize,
    /// Drive bin updates with ground-truth labels instead of predictions.
    pub teacher_forcing: bool,
    pub mode: UpdateMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            step: 0.07,
            epochs_per_increase: 2,
            teacher_forcing: true,
            mode: UpdateMode::Stagewise,
        }
    }
}

impl TrainConfig {
    /// Number of stages trained in `epoch` (0-based).
    pub fn stage_cap(&self, epoch: usize, stages: usize) -> usize {
        let steps = epoch / self.epochs_per_increase.max(1);
        (2 + 2 * steps).min(stages)
    }
}

/// A training scene: calibrated views with ground truth and the view used
/// as reference.
#[derive(Debug, Clone)]
pub struct TrainingScene {
    pub views: Vec<View>,
    pub reference: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub scene: usize,
    pub stage: usize,
    pub level: usize,
    /// `None` when no pixel was valid and the update was skipped.
    pub loss: Option<f64>,
    pub valid_fraction: f64,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: RegularizerSet,
    pub records: Vec<TrainRecord>,
}

impl TrainOutput {
    /// Mean loss of an epoch, optionally restricted to one stage.
    pub fn mean_loss(&self, epoch: usize, stage: Option<usize>) -> Option<f64> {
        let losses: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.epoch == epoch && stage.is_none_or(|s| r.stage == s))
            .filter_map(|r| r.loss)
            .collect();
        if losses.is_empty() {
            None
        } else {
            Some(losses.iter().sum::<f64>() / losses.len() as f64)
        }
    }
}

/// Forward products of one stage that the update needs.
struct StageTensors {
    level: usize,
    volume: CostVolume,
    targets: OccupancyVolume,
    mask: MaskMap,
    _probability: ProbabilityVolume,
}

fn gradient_step(
    params: &mut RegularizerSet,
    level: usize,
    grads: &LossGradients,
    step: f64,
    stage: usize,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Diverged(format!("non-finite gradient at stage {stage}")));
    }
    let updated = grads.descend(&params.levels[level], step);
    updated
        .validate()
        .map_err(|_| Error::Diverged(format!("non-finite parameters after stage {stage}")))?;
    params.levels[level] = updated;
    Ok(())
}

/// Fits the per-level heads by gradient descent over the scenes.
pub fn train_stagewise(
    scenes: &[TrainingScene],
    search: SearchConfig,
    config: &TrainConfig,
    init: RegularizerSet,
    ledger: Option<&Arc<MemoryLedger>>,
) -> Result<TrainOutput> {
    if scenes.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one scene".into()));
    }
    if !(config.step.is_finite() && config.step >= 0.0) {
        return Err(Error::InvalidArgument(format!("invalid step size {}", config.step)));
    }
    if init.levels.len() != search.levels {
        return Err(Error::ShapeMismatch(format!(
            "{} regularizer heads for {} levels",
            init.levels.len(),
            search.levels
        )));
    }
    let strategy = match search.strategy {
        Strategy::Binary => Strategy::Binary,
        _ => Strategy::Generalized,
    };
    let contexts = scenes
        .iter()
        .map(|s| {
            if s.views.get(s.reference).and_then(|v| v.ground_truth.as_ref()).is_none() {
                return Err(Error::InvalidArgument("training reference needs ground truth".into()));
            }
            SearchContext::new(&s.views, search)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut params = init;
    let mut records = Vec::new();
    for epoch in 0..config.epochs {
        let cap = config.stage_cap(epoch, search.stages);
        for (si, (scene, ctx)) in scenes.iter().zip(&contexts).enumerate() {
            let reference = scene.reference;
            let mut state: Option<BinState> = None;
            let mut kept: Vec<StageTensors> = Vec::new();
            let mut pending: Vec<usize> = Vec::new();
            for stage in 1..=cap {
                let level = search.level_for_stage(stage);
                let current = match state.take() {
                    None => ctx.initial_bins(reference, level)?,
                    Some(s) => ctx.handoff(s, reference, level),
                };
                let gt = ctx.ground_truth(reference, level).expect("checked above");
                let volume = ctx.build_volume(reference, level, &centers(&current), ledger)?;
                let head = &params.levels[level];
                let probability = regularize_tracked(&volume, head, ledger)?;
                let (targets, mask) = build_occupancy(&current, gt)?;
                let valid_fraction = mask.count_true() as f64 / mask.len() as f64;

                let mut record = TrainRecord {
                    epoch,
                    scene: si,
                    stage,
                    level,
                    loss: None,
                    valid_fraction,
                    gradient_norm: 0.0,
                };
                match masked_cross_entropy(&probability, &targets, &mask) {
                    Ok(loss) if !loss.is_finite() => {
                        return Err(Error::Diverged(format!(
                            "loss {loss} at epoch {epoch}, scene {si}, stage {stage}"
                        )))
                    }
                    Ok(loss) => record.loss = Some(loss),
                    Err(Error::NoValidPixels) => {}
                    Err(e) => return Err(e),
                }

                let predicted = select_label(&probability);
                let labels = if config.teacher_forcing {
                    oracle_or_predicted(&current, gt, &predicted)?
                } else {
                    predicted
                };
                if stage < cap {
                    state = Some(advance_bins(&current, &labels, strategy)?);
                }

                match config.mode {
                    UpdateMode::Stagewise => {
                        if record.loss.is_some() {
                            let grads = loss_gradients(&volume, head, &targets, &mask)?;
                            record.gradient_norm = grads.norm();
                            gradient_step(&mut params, level, &grads, config.step, stage)?;
                        }
                    }
                    UpdateMode::Accumulated => {
                        pending.push(records.len());
                        kept.push(StageTensors {
                            level,
                            volume,
                            targets,
                            mask,
                            _probability: probability,
                        });
                    }
                }
                records.push(record);
            }
            if config.mode == UpdateMode::Accumulated {
                // Gradients against the parameters used in the forward pass.
                let frozen = params.clone();
                for (t, &ri) in kept.iter().zip(&pending) {
                    if records[ri].loss.is_none() {
                        continue;
                    }
                    let grads = loss_gradients(&t.volume, &frozen.levels[t.level], &t.targets, &t.mask)?;
                    records[ri].gradient_norm = grads.norm();
                    let stage = records[ri].stage;
                    gradient_step(&mut params, t.level, &grads, config.step, stage)?;
                }
            }
        }
    }
    Ok(TrainOutput { params, records })
}
