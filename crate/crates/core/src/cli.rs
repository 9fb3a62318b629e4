//! `anwm` command line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::{generate_dataset, read_clip, read_dataset, write_dataset, Clip};
use crate::error::{Error, Result};
use crate::eval::metrics::distance_by_name;
use crate::eval::{
    clip_scene, load_named_clips, run_ablation, run_generation_eval, run_navigation_eval, AblationKind,
    AblationSetup, NamedClip,
};
use crate::ffp::{future_frame_projection, hole_fraction};
use crate::frame::{read_frame_png, write_png_gray, write_png_rgb, FrameRGBD};
use crate::geometry::{Action4, Intrinsics, Pose4};
use crate::model::checkpoint;
use crate::model::train::{build_windows, Trainer};
use crate::model::WorldModel;
use crate::planner::{perturb_waypoints, rank_candidates, sample_candidates};
use crate::rollout::{rollout_trajectory, DepthPolicy, DiffusionPredictor, RolloutOptions};
use crate::scene::{build_scene, render};

#[derive(Parser, Debug)]
#[command(name = "anwm", version, about = "Aerial navigation world model toolkit")]
struct Cli {
    /// TOML run config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; module seeds are derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More logging (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Errors only.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a procedural scene; writes scene.json and an overview render.
    GenScene(GenSceneArgs),
    /// Fly trajectories through a scene and write clip directories.
    GenDataset(GenDatasetArgs),
    /// Train the world model on a dataset.
    Train(TrainArgs),
    /// Generate frames autoregressively from a clip's first frames.
    Rollout(RolloutArgs),
    /// Write the projected prior and its hole mask for one clip frame.
    Ffp(FfpArgs),
    /// Rank candidate trajectories toward a goal image.
    Plan(PlanArgs),
    /// Generation (and optionally navigation) metrics on a dataset.
    Eval(EvalArgs),
    /// Parameter sweeps.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct GenSceneArgs {
    #[arg(long)]
    scene_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenDatasetArgs {
    #[arg(long)]
    scene_seed: Option<u64>,
    #[arg(long)]
    clips: Option<usize>,
    #[arg(long)]
    segment_len: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RolloutArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    clip: PathBuf,
    #[arg(long, default_value_t = 16)]
    context: usize,
    #[arg(long, default_value_t = 32)]
    horizon: usize,
    /// geom or carry.
    #[arg(long, default_value = "geom")]
    depth_policy: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FfpArgs {
    #[arg(long)]
    clip: PathBuf,
    #[arg(long)]
    context: usize,
    #[arg(long)]
    target_index: usize,
    /// PNG path; the hole mask goes next to it with a `_holes` suffix.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    scene_seed: u64,
    /// "x,y,z,yaw" with yaw in radians.
    #[arg(long)]
    start: String,
    #[arg(long)]
    goal_image: PathBuf,
    /// World-frame direction "dx,dy,dz" that biases candidate sampling.
    #[arg(long)]
    goal_hint: Option<String>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Clip split to evaluate; all clips when it is empty.
    #[arg(long, default_value = "test")]
    split: String,
    /// Evaluate at most this many clips.
    #[arg(long)]
    max_clips: Option<usize>,
    /// Also run planning episodes.
    #[arg(long)]
    navigation: bool,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// ffp-context, gen-context or modulation.
    #[arg(long)]
    kind: String,
    /// Comma-separated grid; defaults to the standard sweep.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    data: PathBuf,
    /// Target frame indices for ffp-context.
    #[arg(long, default_value = "16,32,48")]
    targets: String,
    #[arg(long)]
    report: PathBuf,
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad {what} entry `{s}`")))
        })
        .collect()
}

fn parse_pose(text: &str) -> Result<Pose4> {
    let v: Vec<f64> = parse_list(text, "pose")?;
    if v.len() != 4 {
        return Err(Error::invalid("pose needs four values x,y,z,yaw"));
    }
    let p = Pose4::new(v[0], v[1], v[2], v[3]);
    if !p.is_finite() {
        return Err(Error::invalid("pose must be finite"));
    }
    Ok(p)
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    let dir = parent_dir(path);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_frame(path: &Path, f: &FrameRGBD) -> Result<()> {
    ensure_parent(path)?;
    write_png_rgb(path, f.width, f.height, &f.to_rgb8())
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.quiet {
        cfg.verbosity = "error".into();
    } else if cli.verbose > 0 {
        cfg.verbosity = if cli.verbose == 1 { "debug" } else { "trace" }.into();
    }
    Ok(cfg)
}

fn load_model(path: &Path) -> Result<WorldModel> {
    checkpoint::load(path)
}

fn gen_scene(cfg: RunConfig, a: &GenSceneArgs) -> Result<()> {
    let cfg = cfg.resolve()?;
    let scene = build_scene(a.scene_seed, &cfg.dataset.scene)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_json(&a.out.join("scene.json"), &scene)?;
    let k = Intrinsics::with_fov(cfg.dataset.image_size, cfg.dataset.image_size, cfg.dataset.hfov_deg.to_radians())?;
    let e = scene.extent;
    let overview = Pose4::new(-e, 0.0, e * 0.6, 0.0);
    write_frame(&a.out.join("overview.png"), &render(&scene, &overview, &k))?;
    cfg.write_snapshot(&a.out)
}

fn gen_dataset(mut cfg: RunConfig, a: &GenDatasetArgs) -> Result<()> {
    if let Some(s) = a.scene_seed {
        cfg.dataset.scene_seed = s;
    }
    if let Some(n) = a.clips {
        cfg.dataset.clips = n;
    }
    if let Some(n) = a.segment_len {
        cfg.dataset.segment_len = n;
    }
    if let Some(n) = a.image_size {
        cfg.dataset.image_size = n;
    }
    let cfg = cfg.resolve()?;
    let clips = generate_dataset(&cfg.dataset)?;
    let dirs = write_dataset(&clips, &a.out)?;
    log::info!("wrote {} clips to {}", dirs.len(), a.out.display());
    cfg.write_snapshot(&a.out)
}

fn fit_model_to_data(cfg: &mut RunConfig, clips: &[Clip]) -> Result<()> {
    let first = clips.first().ok_or_else(|| Error::invalid("dataset has no clips"))?;
    let (w, h) = (first.intrinsics.width, first.intrinsics.height);
    if (cfg.model.image_width, cfg.model.image_height) != (w, h) {
        log::info!("model image size set to {w}x{h} from the data");
        cfg.model.image_width = w;
        cfg.model.image_height = h;
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainLog {
    steps: usize,
    windows: usize,
    parameters: usize,
    losses: Vec<f64>,
}

fn train(mut cfg: RunConfig, a: &TrainArgs) -> Result<()> {
    if let Some(n) = a.steps {
        cfg.train.steps = n;
    }
    if let Some(n) = a.batch_size {
        cfg.train.batch_size = n;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    let all = read_dataset(&a.data)?;
    let train: Vec<Clip> = all.iter().filter(|c| c.meta.split == "train").cloned().collect();
    let clips = if train.is_empty() { all } else { train };
    fit_model_to_data(&mut cfg, &clips)?;
    let cfg = cfg.resolve()?;
    let windows = build_windows(&clips, &cfg.model)?;
    let model = WorldModel::new(cfg.model.clone(), cfg.seed_for("model"))?;
    let parameters = model.params.count();
    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed_for("train"));
    let losses = trainer.fit(&windows, &mut rng)?;
    let dir = parent_dir(&a.out);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    checkpoint::save(&trainer.model, &a.out)?;
    write_json(
        &dir.join("train_log.json"),
        &TrainLog {
            steps: losses.len(),
            windows: windows.len(),
            parameters,
            losses,
        },
    )?;
    cfg.write_snapshot(&dir)
}

/// Ground truth on top, predictions below, one column per step.
fn contact_sheet(top: &[&FrameRGBD], bottom: &[&FrameRGBD]) -> (usize, usize, Vec<u8>) {
    let (w, h) = (top[0].width, top[0].height);
    let cols = top.len();
    let (sw, sh) = (w * cols, h * 2);
    let mut data = vec![0u8; sw * sh * 3];
    for (row, frames) in [top, bottom].iter().enumerate() {
        for (c, f) in frames.iter().enumerate() {
            let rgb = f.to_rgb8();
            for y in 0..h {
                let dst = ((row * h + y) * sw + c * w) * 3;
                data[dst..dst + w * 3].copy_from_slice(&rgb[y * w * 3..(y + 1) * w * 3]);
            }
        }
    }
    (sw, sh, data)
}

fn rollout(cfg: RunConfig, a: &RolloutArgs) -> Result<()> {
    let cfg = cfg.resolve()?;
    let model = load_model(&a.ckpt)?;
    let clip = read_clip(&a.clip)?;
    if a.context == 0 || a.horizon == 0 || clip.frames.len() < a.context + a.horizon {
        return Err(Error::invalid(format!(
            "clip has {} frames; need context {} + horizon {} with both positive",
            clip.frames.len(),
            a.context,
            a.horizon
        )));
    }
    let policy: DepthPolicy = a.depth_policy.parse()?;
    let scene = clip_scene(&clip);
    if policy == DepthPolicy::Geom && scene.is_none() {
        return Err(Error::invalid("geom depth policy needs a clip with scene metadata"));
    }
    let opts = RolloutOptions {
        depth: policy,
        scene: scene.as_ref(),
        intrinsics: clip.intrinsics,
        ffp_frames: cfg.eval.ffp_frames,
        seed: cfg.seed_for("rollout"),
    };
    let context: Vec<(FrameRGBD, Pose4)> = clip.frames[..a.context]
        .iter()
        .cloned()
        .zip(clip.poses[..a.context].iter().copied())
        .collect();
    let actions = &clip.actions[a.context - 1..a.context - 1 + a.horizon];
    let frames = rollout_trajectory(&DiffusionPredictor { model: &model }, &context, actions, &opts)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for (i, f) in frames.iter().enumerate() {
        write_frame(&a.out.join(format!("pred_{i:04}.png")), f)?;
    }
    let gt: Vec<&FrameRGBD> = clip.frames[a.context..a.context + a.horizon].iter().collect();
    let pred: Vec<&FrameRGBD> = frames.iter().collect();
    let (w, h, data) = contact_sheet(&gt, &pred);
    write_png_rgb(&a.out.join("contact_sheet.png"), w, h, &data)?;
    cfg.write_snapshot(&a.out)
}

fn ffp(cfg: RunConfig, a: &FfpArgs) -> Result<()> {
    let cfg = cfg.resolve()?;
    let clip = read_clip(&a.clip)?;
    let t = a.target_index;
    if a.context == 0 || t < a.context || t >= clip.frames.len() {
        return Err(Error::invalid(format!(
            "target index {t} needs {} earlier frames within a clip of {}",
            a.context,
            clip.frames.len()
        )));
    }
    let ctx: Vec<(&FrameRGBD, Pose4)> = (t - a.context..t).map(|i| (&clip.frames[i], clip.poses[i])).collect();
    let prior = future_frame_projection(&ctx, &clip.poses[t], &clip.intrinsics)?;
    write_frame(&a.out, &prior)?;
    let mask: Vec<u8> = prior.valid.iter().map(|v| if *v { 0 } else { 255 }).collect();
    let stem = a.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mask_path = a.out.with_file_name(format!("{stem}_holes.png"));
    write_png_gray(&mask_path, prior.width, prior.height, &mask)?;
    log::info!("hole fraction {:.4}", hole_fraction(&prior));
    cfg.write_snapshot(&parent_dir(&a.out))
}

#[derive(Serialize)]
struct CandidateReport {
    index: usize,
    score: Option<f64>,
    failed: bool,
    actions: Vec<[f64; 4]>,
    waypoints: Vec<[f64; 4]>,
}

#[derive(Serialize)]
struct PlanReport {
    version: u32,
    metric: String,
    selected: usize,
    ordering: Vec<usize>,
    candidates: Vec<CandidateReport>,
}

fn plan(mut cfg: RunConfig, a: &PlanArgs) -> Result<()> {
    if let Some(n) = a.candidates {
        cfg.planner.candidates = n;
    }
    if let Some(n) = a.horizon {
        cfg.planner.horizon = n;
    }
    if let Some(m) = &a.metric {
        cfg.eval.metric = m.clone();
    }
    cfg.dataset.scene_seed = a.scene_seed;
    let model = load_model(&a.ckpt)?;
    cfg.model = model.config.clone();
    let cfg = cfg.resolve()?;
    let start = parse_pose(&a.start)?;
    let hint = match &a.goal_hint {
        Some(text) => {
            let v: Vec<f64> = parse_list(text, "goal hint")?;
            if v.len() != 3 {
                return Err(Error::invalid("goal hint needs three values dx,dy,dz"));
            }
            Some([v[0], v[1], v[2]])
        }
        None => None,
    };
    let goal = read_frame_png(&a.goal_image)?;
    let k = Intrinsics::with_fov(
        cfg.model.image_width,
        cfg.model.image_height,
        cfg.dataset.hfov_deg.to_radians(),
    )?;
    if (goal.width, goal.height) != (k.width, k.height) {
        return Err(Error::invalid(format!(
            "goal image is {}x{}, model expects {}x{}",
            goal.width, goal.height, k.width, k.height
        )));
    }
    let scene = build_scene(a.scene_seed, &cfg.dataset.scene)?;
    let context = vec![(render(&scene, &start, &k), start)];
    let p = &cfg.planner;
    let candidates = sample_candidates(&start, p, hint)?
        .iter()
        .enumerate()
        .map(|(i, t)| perturb_waypoints(t, p.sigma_pos, p.sigma_yaw, p.seed.wrapping_add(i as u64 + 1)))
        .collect::<Result<Vec<_>>>()?;
    let metric = distance_by_name(&cfg.eval.metric)?;
    let opts = RolloutOptions {
        depth: DepthPolicy::Geom,
        scene: Some(&scene),
        intrinsics: k,
        ffp_frames: cfg.eval.ffp_frames,
        seed: cfg.seed_for("rollout"),
    };
    let ranking = rank_candidates(
        &DiffusionPredictor { model: &model },
        &context,
        &candidates,
        &goal,
        metric.as_ref(),
        &opts,
    )?;
    let report = PlanReport {
        version: 1,
        metric: metric.name().into(),
        selected: ranking.selected,
        ordering: ranking.ordering.clone(),
        candidates: candidates
            .iter()
            .enumerate()
            .map(|(i, c)| CandidateReport {
                index: i,
                score: (!ranking.failed[i]).then_some(ranking.scores[i]),
                failed: ranking.failed[i],
                actions: c.actions.iter().map(Action4::to_array).collect(),
                waypoints: c.waypoints.iter().map(|w| [w.x, w.y, w.z, w.yaw]).collect(),
            })
            .collect(),
    };
    let dir = parent_dir(&a.out);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_json(&a.out, &report)?;
    cfg.write_snapshot(&dir)
}

fn eval(mut cfg: RunConfig, a: &EvalArgs) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    cfg.model = model.config.clone();
    let cfg = cfg.resolve()?;
    let split = (!a.split.is_empty()).then_some(a.split.as_str());
    let mut clips = load_named_clips(&a.data, split)?;
    if let Some(n) = a.max_clips {
        clips.truncate(n);
    }
    let predictor = DiffusionPredictor { model: &model };
    let mut report = run_generation_eval(&predictor, &clips, &cfg.eval)?;
    if a.navigation {
        run_navigation_eval(&predictor, &clips, &cfg.planner, &cfg.eval, &mut report)?;
    }
    let dir = parent_dir(&a.report);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    report.write(&a.report)?;
    cfg.write_snapshot(&dir)
}

fn ablate(mut cfg: RunConfig, a: &AblateArgs) -> Result<()> {
    let kind: AblationKind = a.kind.parse()?;
    let grid = match &a.grid {
        Some(g) => parse_list::<String>(g, "grid")?,
        None => kind.default_grid(),
    };
    let targets: Vec<usize> = parse_list(&a.targets, "target")?;
    let all = load_named_clips(&a.data, None)?;
    let pick = |s: &str| -> Vec<NamedClip> { all.iter().filter(|c| c.clip.meta.split == s).cloned().collect() };
    let (mut train, mut test) = (pick("train"), pick("test"));
    if train.is_empty() {
        train = all.clone();
    }
    if test.is_empty() {
        test = all.clone();
    }
    if kind == AblationKind::FfpContext {
        test = all.clone();
    }
    let raw: Vec<Clip> = train.iter().map(|c| c.clip.clone()).collect();
    fit_model_to_data(&mut cfg, &raw)?;
    let cfg = cfg.resolve()?;
    let setup = AblationSetup {
        train: &train,
        test: &test,
        model: cfg.model.clone(),
        training: cfg.train.clone(),
        eval: cfg.eval.clone(),
        ffp_targets: targets,
        seed: cfg.seed_for("ablate"),
    };
    let report = run_ablation(kind, &grid, &setup)?;
    let dir = parent_dir(&a.report);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    report.write(&a.report)?;
    cfg.write_snapshot(&dir)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let level = cfg.verbosity.parse().unwrap_or(log::LevelFilter::Info);
    let _ = env_logger::Builder::from_default_env().filter_level(level).try_init();
    match &cli.command {
        Command::GenScene(a) => gen_scene(cfg, a),
        Command::GenDataset(a) => gen_dataset(cfg, a),
        Command::Train(a) => train(cfg, a),
        Command::Rollout(a) => rollout(cfg, a),
        Command::Ffp(a) => ffp(cfg, a),
        Command::Plan(a) => plan(cfg, a),
        Command::Eval(a) => eval(cfg, a),
        Command::Ablate(a) => ablate(cfg, a),
    }
}

/// Parses `argv` (program name first) and runs the subcommand. Returns 0 on
/// success, 1 on a domain error and 2 on a usage error.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
