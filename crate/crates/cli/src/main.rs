//! Command-line driver: synthesize scenes, estimate depth, train the
//! regularizer heads, fuse point clouds and report metrics.

mod config;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mvs_bisect::fusion::{fuse, DepthMap, FusionView};
use mvs_bisect::harness::{compare_strategies, default_thresholds, evaluate_depth, stage_rows};
use mvs_bisect::io::{read_depth_pfm, read_params, read_pfm, write_csv, write_depth_pfm, write_params, write_pfm, write_ply};
use mvs_bisect::scene::{generate_scene, load_views, save_views, SceneShape, SceneSpec};
use mvs_bisect::search::{RegularizerSet, SearchContext, Strategy, View};
use mvs_bisect::training::{train_stagewise, TrainingScene};
use serde::Serialize;

use crate::config::Config;

#[derive(Debug, Parser)]
#[command(name = "mvs-bisect", version, about = "Multi-view stereo by generalized binary search over depth bins")]
struct Cli {
    /// TOML configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (1 runs everything on the calling thread).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic scene into `<out>/{images,cams,gt}`.
    Synth(SynthArgs),
    /// Estimate depth and photometric consistency for every view.
    Depth(DepthArgs),
    /// Fit the regularizer heads on synthetic scenes.
    Train(TrainArgs),
    /// Fuse the depth maps from `depth` into `<out>/cloud.ply`.
    Fuse(SceneOut),
    /// Compare dense search, bisection and generalized search.
    Compare(CompareArgs),
    /// Score the depth maps from `depth` against ground truth.
    Eval(SceneOut),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// fronto-parallel, slanted or sphere-on-plane.
    #[arg(long)]
    shape: Option<SceneShape>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    views: Option<usize>,
    /// Image height; the search needs a multiple of 2^(levels-1).
    #[arg(long)]
    height: Option<usize>,
    /// Image width; the search needs a multiple of 2^(levels-1).
    #[arg(long)]
    width: Option<usize>,
    /// Standard deviation of Gaussian image noise.
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Debug, Args)]
struct SearchFlags {
    /// Trained heads written by `train`; uniform heads otherwise.
    #[arg(long)]
    params: Option<PathBuf>,
    /// generalized, binary (implies 2 hypotheses) or oracle-label.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Bins per stage.
    #[arg(long)]
    hypotheses: Option<usize>,
    #[arg(long)]
    stages: Option<usize>,
    /// Pyramid levels.
    #[arg(long)]
    levels: Option<usize>,
}

#[derive(Debug, Args)]
struct SceneOut {
    /// Directory written by `synth` (or laid out the same way).
    #[arg(long)]
    scene: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    search: SearchFlags,
}

#[derive(Debug, Args)]
struct DepthArgs {
    #[command(flatten)]
    io: SceneOut,
    /// Only this reference view.
    #[arg(long)]
    reference: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    out: PathBuf,
    /// Number of generated training scenes.
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Gradient-descent step size.
    #[arg(long)]
    step: Option<f64>,
    /// Seed of the first training scene.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    search: SearchFlags,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Directory written by `synth`.
    #[arg(long)]
    scene: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    reference: usize,
    #[command(flatten)]
    search: SearchFlags,
}

fn apply_search(cfg: &mut Config, flags: &SearchFlags) -> Result<RegularizerSet> {
    let s = &mut cfg.search;
    if let Some(v) = flags.strategy {
        s.strategy = v;
        if v == Strategy::Binary && flags.hypotheses.is_none() {
            s.hypotheses = 2;
        }
    }
    if let Some(v) = flags.hypotheses {
        s.hypotheses = v;
    }
    if let Some(v) = flags.stages {
        s.stages = v;
    }
    if let Some(v) = flags.levels {
        s.levels = v;
    }
    s.validate()?;
    let params = match &flags.params {
        Some(p) => read_params(p)?,
        None => RegularizerSet::for_config(s),
    };
    if params.levels.len() != s.levels {
        bail!("parameter file has {} levels, config has {}", params.levels.len(), s.levels);
    }
    Ok(params)
}

fn view_name(i: usize) -> String {
    format!("{i:04}")
}

fn load_scene(dir: &Path) -> Result<Vec<View>> {
    load_views(dir).with_context(|| format!("loading scene from {}", dir.display()))
}

fn synth(cfg: &mut Config, a: &SynthArgs) -> Result<()> {
    let s = &mut cfg.scene;
    s.shape = a.shape.unwrap_or(s.shape);
    s.seed = a.seed.unwrap_or(s.seed);
    s.views = a.views.unwrap_or(s.views);
    s.height = a.height.unwrap_or(s.height);
    s.width = a.width.unwrap_or(s.width);
    s.noise_sigma = a.noise.unwrap_or(s.noise_sigma);
    let scene = generate_scene(s)?;
    save_views(&a.out, &scene.views)?;
    Ok(())
}

fn depth(cfg: &mut Config, a: &DepthArgs) -> Result<()> {
    let params = apply_search(cfg, &a.io.search)?;
    let views = load_scene(&a.io.scene)?;
    let ctx = SearchContext::new(&views, cfg.search)?;
    let refs: Vec<usize> = match a.reference {
        Some(r) if r >= views.len() => bail!("reference {r} out of range ({} views)", views.len()),
        Some(r) => vec![r],
        None => (0..views.len()).collect(),
    };
    let k = cfg.fusion.stages_for(cfg.search.stages);
    let out = &a.io.out;
    for r in refs {
        let result = ctx.run(r, &params, None)?;
        let name = view_name(r);
        write_depth_pfm(out.join("depth").join(format!("{name}.pfm")), &result.depth)?;
        let ph = mvs_bisect::fusion::photometric_consistency(&result.probabilities(), k)?;
        write_pfm(out.join("conf").join(format!("{name}.pfm")), &ph.map(|&v| v as f32))?;
        write_csv(out.join("stages").join(format!("{name}.csv")), &stage_rows(&ctx, r, &result))?;
    }
    Ok(())
}

fn train(cfg: &mut Config, a: &TrainArgs) -> Result<()> {
    let init = apply_search(cfg, &a.search)?;
    let t = &mut cfg.train;
    t.scenes = a.scenes.unwrap_or(t.scenes);
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.step = a.step.unwrap_or(t.step);
    let base = SceneSpec {
        shape: t.shape,
        seed: a.seed.unwrap_or(cfg.scene.seed),
        ..cfg.scene
    };
    let scenes = (0..t.scenes as u64)
        .map(|i| {
            let spec = SceneSpec { seed: base.seed + i, ..base };
            Ok(TrainingScene {
                views: generate_scene(&spec)?.views,
                reference: 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let result = train_stagewise(&scenes, cfg.search, &t.schedule(), init, None)?;
    write_params(a.out.join("params.txt"), &result.params)?;
    write_csv(a.out.join("train_records.csv"), &result.records)?;
    Ok(())
}

fn read_outputs(out: &Path, views: usize) -> Result<(Vec<DepthMap>, Vec<mvs_bisect::fusion::ConsistencyMap>)> {
    let mut depths = Vec::with_capacity(views);
    let mut conf = Vec::with_capacity(views);
    for i in 0..views {
        let name = view_name(i);
        depths.push(read_depth_pfm(out.join("depth").join(format!("{name}.pfm")))?);
        conf.push(read_pfm(out.join("conf").join(format!("{name}.pfm")))?.map(|&v| v as f64));
    }
    Ok((depths, conf))
}

fn fuse_cmd(cfg: &mut Config, a: &SceneOut) -> Result<()> {
    apply_search(cfg, &a.search)?;
    let views = load_scene(&a.scene)?;
    let (depths, conf) = read_outputs(&a.out, views.len()).context("run `depth` for every view first")?;
    let inputs: Vec<FusionView<'_>> = views
        .iter()
        .zip(depths.iter().zip(&conf))
        .map(|(v, (d, c))| FusionView {
            depth: d,
            photometric: c,
            camera: &v.camera,
            pose: &v.pose,
            image: Some(&v.image),
        })
        .collect();
    let cloud = fuse(&inputs, &cfg.fusion)?;
    write_ply(a.out.join("cloud.ply"), &cloud)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct MetricsRow {
    view: usize,
    mean_abs_error: f64,
    completeness: f64,
    accuracy_quarter: f64,
    accuracy_half: f64,
    accuracy_one: f64,
    accuracy_two: f64,
}

fn eval(cfg: &mut Config, a: &SceneOut) -> Result<()> {
    apply_search(cfg, &a.search)?;
    let views = load_scene(&a.scene)?;
    let mut rows = Vec::new();
    for (i, v) in views.iter().enumerate() {
        let Some(gt) = &v.ground_truth else { continue };
        let path = a.out.join("depth").join(format!("{}.pfm", view_name(i)));
        if !path.exists() {
            continue;
        }
        let pred = read_depth_pfm(&path)?;
        let m = evaluate_depth(&pred, gt, &default_thresholds(cfg.search.final_bin_width(v.range)))?;
        rows.push(MetricsRow {
            view: i,
            mean_abs_error: m.mean_abs_error,
            completeness: m.completeness,
            accuracy_quarter: m.accuracy[0].1,
            accuracy_half: m.accuracy[1].1,
            accuracy_one: m.accuracy[2].1,
            accuracy_two: m.accuracy[3].1,
        });
    }
    if rows.is_empty() {
        bail!("no depth maps with ground truth under {}", a.out.display());
    }
    write_csv(a.out.join("metrics.csv"), &rows)?;
    Ok(())
}

fn compare(cfg: &mut Config, a: &CompareArgs) -> Result<()> {
    let params = apply_search(cfg, &a.search)?;
    let views = load_scene(&a.scene)?;
    let rows = compare_strategies(&views, a.reference, cfg.search, &params)?;
    write_csv(&a.out, &rows)?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut cfg = Config::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Synth(a) => synth(&mut cfg, a),
        Command::Depth(a) => depth(&mut cfg, a),
        Command::Train(a) => train(&mut cfg, a),
        Command::Fuse(a) => fuse_cmd(&mut cfg, a),
        Command::Compare(a) => compare(&mut cfg, a),
        Command::Eval(a) => eval(&mut cfg, a),
    }
}
