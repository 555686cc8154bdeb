//! Baselines, metrics and end-to-end drivers used by the CLI and tests.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::alloc::MemoryLedger;
use crate::costvol::{regularize_tracked, RegularizerParams};
use crate::error::{Error, Result};
use crate::fusion::{fuse, photometric_consistency, ConsistencyMap, DepthMap, FusionConfig, FusionView, PointCloud};
use crate::grid::Grid;
use crate::search::{
    centers, init_bins, select_label, RegularizerSet, SearchConfig, SearchContext, SearchOutput, Strategy, View,
};

/// Single-stage classification over `hypotheses` evenly spaced depths at
/// full resolution, scored with the group weights of `head` and zero
/// biases.
pub fn dense_linear_search(
    ctx: &SearchContext<'_>,
    reference: usize,
    hypotheses: usize,
    head: &RegularizerParams,
    ledger: Option<&Arc<MemoryLedger>>,
) -> Result<DepthMap> {
    if hypotheses < 2 {
        return Err(Error::InvalidArgument(format!("dense search needs >= 2 hypotheses, got {hypotheses}")));
    }
    let cam = ctx.camera(reference, 0);
    let state = init_bins(ctx.views()[reference].range, hypotheses, cam.image_size())?;
    let vol = ctx.build_volume(reference, 0, &centers(&state), ledger)?;
    let dense_head = RegularizerParams {
        group_weights: head.group_weights.clone(),
        hypothesis_biases: vec![0.0; hypotheses],
    };
    let prob = regularize_tracked(&vol, &dense_head, ledger)?;
    let covered = Grid::from_fn(vol.height(), vol.width(), |y, x| vol.pixel_coverage(y, x).iter().any(|&c| c));
    drop(vol);
    let labels = select_label(&prob);
    DepthMap::new(state.selected_centers(&labels)?, covered)
}

/// Depth accuracy against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `(threshold, fraction of gt-valid pixels with |error| < threshold)`,
    /// ascending in threshold.
    pub accuracy: Vec<(f64, f64)>,
    /// Mean absolute error over pixels valid in both maps.
    pub mean_abs_error: f64,
    /// Fraction of gt-valid pixels the prediction covers.
    pub completeness: f64,
    /// Per-stage valid-mask fractions, when known.
    pub stage_valid_fractions: Vec<f64>,
}

impl Metrics {
    pub fn fraction_at(&self, threshold: f64) -> Option<f64> {
        self.accuracy.iter().find(|(t, _)| *t == threshold).map(|(_, f)| *f)
    }
}

/// `{0.25, 0.5, 1, 2}` times the final bin width.
pub fn default_thresholds(final_bin_width: f64) -> Vec<f64> {
    [0.25, 0.5, 1.0, 2.0].iter().map(|m| m * final_bin_width).collect()
}

/// Fractions are over gt-valid pixels; pixels without a prediction count
/// as misses.
pub fn evaluate_depth(pred: &DepthMap, gt: &DepthMap, thresholds: &[f64]) -> Result<Metrics> {
    if pred.shape() != gt.shape() {
        return Err(Error::ShapeMismatch(format!("prediction {:?} vs gt {:?}", pred.shape(), gt.shape())));
    }
    let mut sorted = thresholds.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut hits = vec![0usize; sorted.len()];
    let (mut n, mut covered, mut abs_sum) = (0usize, 0usize, 0.0f64);
    let (h, w) = gt.shape();
    for y in 0..h {
        for x in 0..w {
            let Some(g) = gt.get(y, x) else { continue };
            n += 1;
            let Some(p) = pred.get(y, x) else { continue };
            covered += 1;
            let err = (p - g).abs();
            abs_sum += err;
            for (hit, t) in hits.iter_mut().zip(&sorted) {
                if err < *t {
                    *hit += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok(Metrics {
        accuracy: sorted
            .iter()
            .zip(&hits)
            .map(|(t, k)| (*t, *k as f64 / n as f64))
            .collect(),
        mean_abs_error: if covered > 0 { abs_sum / covered as f64 } else { f64::NAN },
        completeness: covered as f64 / n as f64,
        stage_valid_fractions: Vec::new(),
    })
}

/// Per-stage summary of one search run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub stage: usize,
    pub level: usize,
    pub bin_width: f64,
    pub mean_max_probability: f64,
    pub valid_fraction: Option<f64>,
    pub mean_abs_error: Option<f64>,
}

pub fn stage_rows(ctx: &SearchContext<'_>, reference: usize, output: &SearchOutput) -> Vec<StageRow> {
    output
        .stages
        .iter()
        .map(|s| {
            let gt = ctx.ground_truth(reference, s.level);
            let maxima = s.probability.max_map();
            let mae = gt.and_then(|g| {
                let errs: Vec<f64> = (0..g.height())
                    .flat_map(|y| (0..g.width()).map(move |x| (y, x)))
                    .filter_map(|(y, x)| g.get(y, x).map(|d| (s.depth.get(y, x) - d).abs()))
                    .collect();
                (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
            });
            StageRow {
                stage: s.stage,
                level: s.level,
                bin_width: s.bin_width,
                mean_max_probability: maxima.iter().sum::<f64>() / maxima.len() as f64,
                valid_fraction: s.valid_fraction(gt),
                mean_abs_error: mae,
            }
        })
        .collect()
}

/// One line of the strategy comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: String,
    pub hypotheses: usize,
    pub stages: usize,
    pub evaluations_per_pixel: usize,
    pub peak_cost_elements: usize,
    pub final_bin_width: f64,
    pub mean_abs_error: f64,
    pub accuracy_quarter: f64,
    pub accuracy_half: f64,
    pub accuracy_one: f64,
    pub accuracy_two: f64,
    /// Per-stage valid fractions joined with `;`.
    pub valid_fractions: String,
}

/// Dense search, bisection and generalized search on the same features.
///
/// Thresholds are multiples of the generalized search's final bin width for
/// every row. Bisection reuses the group weights of `params` with zero
/// biases.
pub fn compare_strategies(
    views: &[View],
    reference: usize,
    config: SearchConfig,
    params: &RegularizerSet,
) -> Result<Vec<StrategyReport>> {
    let gt = views
        .get(reference)
        .and_then(|v| v.ground_truth.as_ref())
        .ok_or_else(|| Error::InvalidArgument("comparison needs ground truth".into()))?;
    let generalized = SearchConfig { strategy: Strategy::Generalized, ..config };
    let ctx = SearchContext::new(views, generalized)?;
    let range = views[reference].range;
    let final_width = generalized.final_bin_width(range);
    let thresholds = default_thresholds(final_width);
    let (h, w) = ctx.camera(reference, 0).image_size();
    let groups = config.features.groups;

    let report = |name: &str, d: usize, k: usize, evals: usize, peak: usize, width: f64, depth: &DepthMap, valid: Vec<f64>| {
        let m = evaluate_depth(depth, gt, &thresholds)?;
        Ok::<_, Error>(StrategyReport {
            strategy: name.to_string(),
            hypotheses: d,
            stages: k,
            evaluations_per_pixel: evals,
            peak_cost_elements: peak,
            final_bin_width: width,
            mean_abs_error: m.mean_abs_error,
            accuracy_quarter: m.accuracy[0].1,
            accuracy_half: m.accuracy[1].1,
            accuracy_one: m.accuracy[2].1,
            accuracy_two: m.accuracy[3].1,
            valid_fractions: valid.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(";"),
        })
    };
    let valid_of = |out: &SearchOutput, c: &SearchContext<'_>| -> Vec<f64> {
        out.stages
            .iter()
            .filter_map(|s| s.valid_fraction(c.ground_truth(reference, s.level)))
            .collect()
    };

    let mut rows = Vec::with_capacity(3);

    let dense_d = config.hypotheses << (config.stages - 1);
    let ledger = MemoryLedger::new();
    let dense = dense_linear_search(&ctx, reference, dense_d, params.level(0)?, Some(&ledger))?;
    debug_assert_eq!(ledger.cost_peak(), dense_d * h * w * groups);
    rows.push(report(
        "dense",
        dense_d,
        1,
        dense_d,
        ledger.cost_peak(),
        range.extent() / dense_d as f64,
        &dense,
        Vec::new(),
    )?);

    let binary = SearchConfig { hypotheses: 2, strategy: Strategy::Binary, ..config };
    let bctx = SearchContext::new(views, binary)?;
    let bparams = RegularizerSet {
        levels: params
            .levels
            .iter()
            .map(|p| RegularizerParams {
                group_weights: p.group_weights.clone(),
                hypothesis_biases: vec![0.0; 2],
            })
            .collect(),
    };
    let ledger = MemoryLedger::new();
    let out = bctx.run(reference, &bparams, Some(&ledger))?;
    rows.push(report(
        "binary",
        2,
        binary.stages,
        2 * binary.stages,
        ledger.cost_peak(),
        binary.final_bin_width(range),
        &out.depth,
        valid_of(&out, &bctx),
    )?);

    let ledger = MemoryLedger::new();
    let out = ctx.run(reference, params, Some(&ledger))?;
    rows.push(report(
        "generalized",
        config.hypotheses,
        config.stages,
        config.hypotheses * config.stages,
        ledger.cost_peak(),
        final_width,
        &out.depth,
        valid_of(&out, &ctx),
    )?);
    Ok(rows)
}

/// Depth, consistency and the fused cloud for every view as reference.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub outputs: Vec<SearchOutput>,
    pub consistency: Vec<ConsistencyMap>,
    pub cloud: PointCloud,
}

pub fn reconstruct(ctx: &SearchContext<'_>, params: &RegularizerSet, fusion: &FusionConfig) -> Result<Reconstruction> {
    let views = ctx.views();
    let outputs = (0..views.len())
        .map(|r| ctx.run(r, params, None))
        .collect::<Result<Vec<_>>>()?;
    let k = fusion.stages_for(ctx.config().stages);
    let consistency = outputs
        .iter()
        .map(|o| photometric_consistency(&o.probabilities(), k))
        .collect::<Result<Vec<_>>>()?;
    let fusion_views: Vec<FusionView<'_>> = views
        .iter()
        .zip(&outputs)
        .zip(&consistency)
        .map(|((v, o), ph)| FusionView {
            depth: &o.depth,
            photometric: ph,
            camera: &v.camera,
            pose: &v.pose,
            image: Some(&v.image),
        })
        .collect();
    let cloud = fuse(&fusion_views, fusion)?;
    Ok(Reconstruction {
        outputs,
        consistency,
        cloud,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, SceneShape, SceneSpec};

    fn dm(values: Vec<f64>) -> DepthMap {
        let n = values.len();
        DepthMap::from_depths(Grid::from_vec(1, n, values))
    }

    #[test]
    fn metrics_examples() {
        let gt = dm(vec![10.0, 20.0, 30.0]);
        let m = evaluate_depth(&gt, &gt, &[0.5, 1.0]).unwrap();
        assert!(m.accuracy.iter().all(|(_, f)| *f == 1.0));
        assert_eq!(m.mean_abs_error, 0.0);

        let off = dm(vec![10.3, 20.3, 30.3]);
        let m = evaluate_depth(&off, &gt, &[0.5, 0.2]).unwrap();
        assert_eq!(m.accuracy, vec![(0.2, 0.0), (0.5, 1.0)]);

        let partial = DepthMap::new(Grid::from_vec(1, 3, vec![10.0, 0.0, 30.0]), Grid::from_vec(1, 3, vec![true, false, true])).unwrap();
        let m = evaluate_depth(&partial, &gt, &[1.0]).unwrap();
        assert!((m.accuracy[0].1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.completeness - 2.0 / 3.0).abs() < 1e-12);

        let empty = DepthMap::new(Grid::filled(1, 3, 0.0), Grid::filled(1, 3, false)).unwrap();
        assert!(matches!(evaluate_depth(&gt, &empty, &[1.0]), Err(Error::NoValidPixels)));
    }

    #[test]
    fn metrics_monotone() {
        let gt = dm((0..50).map(|i| 10.0 + i as f64).collect());
        let pred = dm((0..50).map(|i| 10.0 + i as f64 + (i as f64 * 0.37).sin()).collect());
        let m = evaluate_depth(&pred, &gt, &[0.9, 0.1, 0.5, 0.3]).unwrap();
        assert!(m.accuracy.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
    }

    fn small_scene() -> Vec<View> {
        generate_scene(&SceneSpec { height: 32, width: 40, ..SceneSpec::default() }).unwrap().views
    }

    #[test]
    fn dense_two_hypotheses_ideal_cost() {
        // Two bins over [90, 130): the first is centered on the true depth.
        let mut views = small_scene();
        for v in &mut views {
            v.range = crate::search::DepthRange::new(90.0, 130.0).unwrap();
        }
        let cfg = SearchConfig { levels: 1, stages: 1, ..SearchConfig::default() };
        let ctx = SearchContext::new(&views, cfg).unwrap();
        let d = dense_linear_search(&ctx, 0, 2, &RegularizerParams::uniform(4, 4), None).unwrap();
        let (h, w) = d.shape();
        let picks = (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).filter(|&(y, x)| d.get(y, x) == Some(100.0)).count();
        assert!(picks as f64 >= 0.9 * (h * w) as f64, "{picks} of {}", h * w);
    }

    #[test]
    fn textureless_ties_pick_lowest_depth() {
        let mut views = small_scene();
        for v in &mut views {
            v.image = Grid::filled(32, 40, 0.5);
        }
        let cfg = SearchConfig { levels: 1, stages: 1, ..SearchConfig::default() };
        let ctx = SearchContext::new(&views, cfg).unwrap();
        let d = dense_linear_search(&ctx, 0, 8, &RegularizerParams::uniform(4, 4), None).unwrap();
        let range = views[0].range;
        let first = range.min() + range.extent() / 16.0;
        // Every covered pixel has identical zero scores.
        let (h, w) = d.shape();
        for y in 0..h {
            for x in 0..w {
                if let Some(v) = d.get(y, x) {
                    assert!((v - first).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn comparison_arithmetic() {
        let views = small_scene();
        let cfg = SearchConfig { levels: 2, ..SearchConfig::default() };
        let rows = compare_strategies(&views, 0, cfg, &RegularizerSet::for_config(&cfg)).unwrap();
        let by = |n: &str| rows.iter().find(|r| r.strategy == n).unwrap();
        assert_eq!(by("generalized").evaluations_per_pixel, 32);
        assert_eq!(by("dense").evaluations_per_pixel, 512);
        assert_eq!(by("binary").evaluations_per_pixel, 16);
        assert_eq!(by("dense").peak_cost_elements, 512 * 32 * 40 * 4);
        assert_eq!(by("generalized").peak_cost_elements, 4 * 32 * 40 * 4);
        assert_eq!(by("generalized").valid_fractions.split(';').count(), 8);
    }

    #[test]
    fn slanted_scene_runs_end_to_end() {
        let views = generate_scene(&SceneSpec { shape: SceneShape::Slanted, height: 32, width: 40, ..SceneSpec::default() })
            .unwrap()
            .views;
        let cfg = SearchConfig { levels: 2, ..SearchConfig::default() };
        let ctx = SearchContext::new(&views, cfg).unwrap();
        let fusion = FusionConfig { photometric_threshold: 0.0, min_views: 1, ..FusionConfig::default() };
        let rec = reconstruct(&ctx, &RegularizerSet::for_config(&cfg), &fusion).unwrap();
        assert_eq!(rec.outputs.len(), 3);
        assert!(!rec.cloud.is_empty());
        let rows = stage_rows(&ctx, 0, &rec.outputs[0]);
        assert_eq!(rows.len(), 8);
        assert_eq!(rows[0].valid_fraction, Some(1.0));
    }
}
