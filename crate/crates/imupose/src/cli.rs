//! Command-line surface. The binary stays thin: argument parsing here,
//! everything else through the library.
//!
//! Exit codes: 0 success, 1 usage, 2 data error (unreadable/invalid files or
//! config), 3 runtime error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::RunConfig;
use crate::devconfig::{enumerate_combos, DeviceCombo};
use crate::estimator::{CalibrationProfile, EstimatorState};
use crate::importer::import_motion;
use crate::metrics::{evaluate_clip, velocity_ablation_losses, EvalReport};
use crate::seqnet::{load_bundle, save_bundle, train_head, Head, ModelBundle};
use crate::skeleton::{builtin_toy_rig, load_motion, load_rig, save_motion, MotionSequence, Rig};
use crate::synthesis::{make_windows, save_dataset, Dataset};

#[derive(Parser)]
#[command(name = "imupose", version, about = "Full-body pose and translation from sparse consumer-device IMUs")]
struct Cli {
    /// TOML config file; individual flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flag mirror of the config schema; every key is overridable.
#[derive(Args, Default, Clone)]
struct Overrides {
    /// Rig file (built-in rig when omitted).
    #[arg(long, global = true)]
    rig: Option<String>,
    #[arg(long, global = true)]
    checkpoint: Option<String>,
    /// Sliding-window length in frames.
    #[arg(long, global = true)]
    window: Option<usize>,
    #[arg(long, global = true)]
    fps: Option<f64>,
    /// Device combo id, e.g. "rpocket+lwrist".
    #[arg(long, global = true)]
    combo: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    hidden: Option<usize>,
    #[arg(long, global = true)]
    layers: Option<usize>,
    #[arg(long, global = true)]
    stride: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    batch: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    max_steps: Option<u64>,
    #[arg(long, global = true)]
    noise_sigma: Option<f64>,
    #[arg(long, global = true)]
    jerk_weight: Option<f64>,
    #[arg(long, global = true)]
    grad_clip: Option<f64>,
    #[arg(long, global = true)]
    fuse_lower: Option<f64>,
    #[arg(long, global = true)]
    fuse_upper: Option<f64>,
    #[arg(long, global = true)]
    contact_threshold: Option<f64>,
    #[arg(long, global = true)]
    gravity: Option<f64>,
    #[arg(long, global = true)]
    kp: Option<f64>,
    #[arg(long, global = true)]
    kd: Option<f64>,
    #[arg(long, global = true)]
    contact_lock_threshold: Option<f64>,
    #[arg(long, global = true)]
    floor_height: Option<f64>,
    /// Apply the pose refiner (eval/stream).
    #[arg(long, global = true)]
    refine: bool,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { cfg.$field = v.clone().into(); })*
            };
        }
        set!(window, fps, combo, seed, hidden, layers, stride, lr, batch, epochs, noise_sigma,
            jerk_weight, grad_clip, fuse_lower, fuse_upper, contact_threshold, gravity, kp,
            contact_lock_threshold, floor_height);
        if let Some(v) = &self.rig {
            cfg.rig = Some(v.clone());
        }
        if let Some(v) = &self.checkpoint {
            cfg.checkpoint = Some(v.clone());
        }
        if let Some(v) = self.max_steps {
            cfg.max_steps = Some(v);
        }
        if let Some(v) = self.kd {
            cfg.kd = Some(v);
        }
        if self.refine {
            cfg.refine = true;
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a labeled training dataset from motion clips.
    Synth {
        /// Motion clip files (.mpsq).
        #[arg(required = true)]
        motion: Vec<PathBuf>,
        /// Output dataset path (.mpds).
        #[arg(long, short)]
        out: PathBuf,
        /// Combos to synthesize: "all" or a comma-separated id list.
        #[arg(long, default_value = "all")]
        combos: String,
    },
    /// Train one or more heads on a dataset.
    Train {
        dataset: PathBuf,
        /// One of joint, theta, contact, velocity, velocity_imu, all.
        #[arg(long, default_value = "all")]
        head: String,
        /// Output checkpoint path (.mpck).
        #[arg(long, short)]
        out: PathBuf,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Evaluate a checkpoint against motion clips.
    Eval {
        motion: Vec<PathBuf>,
        /// Combos to score: "all" or a comma-separated id list (defaults to
        /// the configured combo).
        #[arg(long)]
        combos: Option<String>,
        /// Write the machine-readable report here.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Compare the pose-conditioned velocity head against the IMU-only
        /// variant.
        #[arg(long)]
        ablate_translation: bool,
        /// Score the ground truth against itself (metric plumbing check; no
        /// checkpoint needed).
        #[arg(long)]
        oracle: bool,
    },
    /// Serve the line-delimited JSON streaming protocol.
    Stream {
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
    },
    /// Measure per-frame inference latency.
    Bench {
        /// Frames to time (the report is statistical; use >= 10000).
        #[arg(long, default_value_t = 10_000)]
        frames: usize,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Convert raw motion arrays (JSON manifest) into a motion clip.
    Import {
        manifest: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Describe a rig file.
    RigInfo,
}

enum AppError {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl AppError {
    fn data(e: impl std::fmt::Display) -> AppError {
        AppError::Data(e.to_string())
    }
    fn runtime(e: impl std::fmt::Display) -> AppError {
        AppError::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), AppError>;

/// Entry point for the `imupose` binary.
pub fn run() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders --help/--version through the same path.
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let mut cfg = match &cli.config {
        Some(path) => match RunConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => RunConfig::default(),
    };
    cli.overrides.apply(&mut cfg);
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }

    let result = match &cli.cmd {
        Cmd::Synth { motion, out, combos } => cmd_synth(&cfg, motion, out, combos),
        Cmd::Train { dataset, head, out, init } => cmd_train(&cfg, dataset, head, out, init.as_deref()),
        Cmd::Eval { motion, combos, out, ablate_translation, oracle } => {
            cmd_eval(&cfg, motion, combos.as_deref(), out.as_deref(), *ablate_translation, *oracle)
        }
        Cmd::Stream { bind } => cmd_stream(&cfg, bind),
        Cmd::Bench { frames, out } => cmd_bench(&cfg, *frames, out.as_deref()),
        Cmd::Import { manifest, out } => cmd_import(manifest, out),
        Cmd::RigInfo => cmd_rig_info(&cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(AppError::Data(msg)) => {
            eprintln!("data error: {msg}");
            ExitCode::from(2)
        }
        Err(AppError::Runtime(msg)) => {
            eprintln!("runtime error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn load_rig_or_builtin(cfg: &RunConfig) -> Result<Rig, AppError> {
    match &cfg.rig {
        Some(path) => load_rig(Path::new(path)).map_err(AppError::data),
        None => Ok(builtin_toy_rig()),
    }
}

fn parse_combos(spec: &str) -> Result<Vec<DeviceCombo>, AppError> {
    if spec.trim() == "all" {
        return Ok(enumerate_combos());
    }
    spec.split(',')
        .map(|id| DeviceCombo::from_id(id.trim()).map_err(AppError::data))
        .collect()
}

fn load_bundle_checked(cfg: &RunConfig) -> Result<ModelBundle, AppError> {
    let path = cfg
        .checkpoint
        .as_deref()
        .ok_or_else(|| AppError::Usage("--checkpoint is required".into()))?;
    load_bundle(Path::new(path)).map_err(AppError::data)
}

fn cmd_synth(cfg: &RunConfig, motion: &[PathBuf], out: &Path, combos: &str) -> CmdResult {
    let rig = load_rig_or_builtin(cfg)?;
    let combos = parse_combos(combos)?;
    let mut windows = Vec::new();
    let mut fps: Option<f64> = None;
    let mut failures = 0;
    for path in motion {
        let seq = match load_motion(path) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                failures += 1;
                continue;
            }
        };
        if let Some(f) = fps {
            if (seq.fps - f).abs() > 1e-9 {
                eprintln!("{}: fps {} differs from {}", path.display(), seq.fps, f);
                failures += 1;
                continue;
            }
        }
        fps = Some(seq.fps);
        match make_windows(&rig, &seq, &combos, cfg.window, cfg.stride, cfg.contact_threshold) {
            Ok(mut w) => windows.append(&mut w),
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                failures += 1;
            }
        }
    }
    if failures > 0 {
        return Err(AppError::Data(format!("{failures} input file(s) failed")));
    }
    let ds = Dataset { window: cfg.window, fps: fps.unwrap_or(cfg.fps), windows };
    save_dataset(&ds, out).map_err(AppError::runtime)?;
    let manifest = json!({
        "dataset": out.display().to_string(),
        "window": ds.window,
        "fps": ds.fps,
        "windows": ds.windows.len(),
        "per_combo": ds.counts_per_combo(),
    });
    println!("{}", serde_json::to_string_pretty(&manifest).expect("json"));
    Ok(())
}

fn parse_heads(spec: &str) -> Result<Vec<Head>, AppError> {
    if spec == "all" {
        return Ok(Head::CORE.to_vec());
    }
    spec.split(',')
        .map(|name| {
            Head::from_name(name.trim())
                .ok_or_else(|| AppError::Usage(format!("unknown head '{name}'")))
        })
        .collect()
}

fn cmd_train(
    cfg: &RunConfig,
    dataset: &Path,
    head_spec: &str,
    out: &Path,
    init: Option<&Path>,
) -> CmdResult {
    let rig = load_rig_or_builtin(cfg)?;
    let ds = crate::synthesis::load_dataset(dataset).map_err(AppError::data)?;
    let heads = parse_heads(head_spec)?;
    let mut bundle = match init {
        Some(path) => load_bundle(path).map_err(AppError::data)?,
        None => ModelBundle::new(cfg.hidden, cfg.layers, ds.window, ds.fps, cfg.seed),
    };
    let mut train_cfg = cfg.train();
    train_cfg.horizons.retain(|&h| h <= ds.window);
    let mut record = BTreeMap::new();
    for head in heads {
        let before = bundle.meta.steps.get(head.name()).copied().unwrap_or(0);
        let outcome = train_head(&mut bundle, head, &ds, &rig, &train_cfg, |epoch, loss| {
            println!("head {} epoch {:>4} loss {:.6e}", head.name(), epoch, loss);
        })
        .map_err(AppError::runtime)?;
        println!(
            "head {} done: {} steps (total {}), final loss {:.6e}",
            head.name(),
            outcome.steps,
            before + outcome.steps,
            outcome.final_loss
        );
        record.insert(
            head.name().to_string(),
            json!({
                "steps": outcome.steps,
                "total_steps": before + outcome.steps,
                "final_loss": outcome.final_loss,
                "epoch_losses": outcome.epoch_losses,
            }),
        );
    }
    save_bundle(&bundle, out).map_err(AppError::runtime)?;
    let record_path = out.with_extension("train.json");
    std::fs::write(&record_path, serde_json::to_string_pretty(&record).expect("json"))
        .map_err(AppError::runtime)?;
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn mean_reports(reports: &[EvalReport]) -> EvalReport {
    let n = reports.len().max(1) as f64;
    let mut mean = EvalReport {
        mpjre_deg: 0.0,
        mpjpe_cm: 0.0,
        mpjve_cm: reports.iter().all(|r| r.mpjve_cm.is_some()).then_some(0.0),
        jitter_m_s3: 0.0,
        root_translation_error_cm: 0.0,
        cumulative_error_curve: Vec::new(),
    };
    for r in reports {
        mean.mpjre_deg += r.mpjre_deg / n;
        mean.mpjpe_cm += r.mpjpe_cm / n;
        if let (Some(m), Some(v)) = (&mut mean.mpjve_cm, r.mpjve_cm) {
            *m += v / n;
        }
        mean.jitter_m_s3 += r.jitter_m_s3 / n;
        mean.root_translation_error_cm += r.root_translation_error_cm / n;
    }
    mean
}

fn cmd_eval(
    cfg: &RunConfig,
    motion: &[PathBuf],
    combos: Option<&str>,
    out: Option<&Path>,
    ablate: bool,
    oracle: bool,
) -> CmdResult {
    if motion.is_empty() {
        return Err(AppError::Usage("eval needs at least one motion file".into()));
    }
    let rig = load_rig_or_builtin(cfg)?;
    let clips: Vec<MotionSequence> = motion
        .iter()
        .map(|p| load_motion(p).map_err(|e| AppError::Data(format!("{}: {e}", p.display()))))
        .collect::<Result<_, _>>()?;

    if oracle {
        // Ground truth against itself: every metric must be zero.
        let mut reports = Vec::new();
        for seq in &clips {
            let v = crate::metrics::world_velocity_of_poses(&seq.frames);
            let r = crate::metrics::report(&rig, &seq.frames, &seq.frames, &v, &v, seq.fps)
                .map_err(AppError::data)?;
            reports.push(r);
        }
        let mean = mean_reports(&reports);
        println!("oracle self-check (expect zeros):\n{mean}");
        if let Some(path) = out {
            std::fs::write(path, serde_json::to_string_pretty(&mean).expect("json"))
                .map_err(AppError::runtime)?;
        }
        return Ok(());
    }

    let bundle = load_bundle_checked(cfg)?;
    let combo_list = match combos {
        Some(spec) => parse_combos(spec)?,
        None => vec![DeviceCombo::from_id(&cfg.combo).map_err(AppError::data)?],
    };
    let refiner = cfg.refine.then(|| cfg.refiner());

    let mut per_combo: BTreeMap<String, EvalReport> = BTreeMap::new();
    for combo in &combo_list {
        let mut reports = Vec::new();
        for seq in &clips {
            reports.push(
                evaluate_clip(&bundle, &rig, seq, combo, cfg.fusion(), refiner)
                    .map_err(AppError::runtime)?,
            );
        }
        let mean = mean_reports(&reports);
        println!("combo {combo}:\n{mean}");
        per_combo.insert(combo.id(), mean);
    }
    let overall = mean_reports(&per_combo.values().cloned().collect::<Vec<_>>());
    println!("mean over {} combo(s):\n{overall}", per_combo.len());

    let mut doc = json!({ "combos": per_combo, "mean": overall });
    if ablate {
        let windows = clips
            .iter()
            .map(|seq| {
                make_windows(&rig, seq, &combo_list, cfg.window, cfg.stride, cfg.contact_threshold)
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(AppError::data)?
            .into_iter()
            .flatten()
            .collect();
        let ds = Dataset { window: cfg.window, fps: clips[0].fps, windows };
        let (pose_cond, imu_only) =
            velocity_ablation_losses(&bundle, &ds).map_err(AppError::runtime)?;
        println!(
            "velocity ablation: pose-conditioned {pose_cond:.6e} vs IMU-only {imu_only:.6e} ({})",
            if pose_cond < imu_only { "pose conditioning wins" } else { "IMU-only wins" }
        );
        doc["ablation"] = json!({
            "pose_conditioned_loss": pose_cond,
            "imu_only_loss": imu_only,
        });
    }
    if let Some(path) = out {
        std::fs::write(path, serde_json::to_string_pretty(&doc).expect("json"))
            .map_err(AppError::runtime)?;
    }
    Ok(())
}

fn cmd_stream(cfg: &RunConfig, bind: &str) -> CmdResult {
    let rig = load_rig_or_builtin(cfg)?;
    let bundle = load_bundle_checked(cfg)?;
    let ctx = Arc::new(crate::stream::ServerCtx {
        bundle,
        rig,
        fusion: cfg.fusion(),
        refiner: cfg.refine.then(|| cfg.refiner()),
        gravity: cfg.gravity_vec(),
        fps: cfg.fps,
    });
    let server = crate::stream::serve(bind, ctx).map_err(AppError::runtime)?;
    println!("listening on {}", server.addr());

    static STOP: AtomicBool = AtomicBool::new(false);
    extern "C" fn on_signal(_: libc::c_int) {
        STOP.store(true, Ordering::SeqCst);
    }
    unsafe {
        libc::signal(libc::SIGINT, on_signal as *const () as usize);
        libc::signal(libc::SIGTERM, on_signal as *const () as usize);
    }
    while !STOP.load(Ordering::SeqCst) {
        std::thread::sleep(std::time::Duration::from_millis(100));
    }
    println!("shutting down");
    server.shutdown();
    Ok(())
}

/// A gentle walking-style clip used by bench when no motion is supplied.
fn bench_clip(frames: usize, fps: f64) -> MotionSequence {
    use crate::rotmath::{RotMat, Vec3};
    use crate::skeleton::Pose;
    let poses = (0..frames)
        .map(|t| {
            let s = t as f64 / fps;
            let mut p = Pose::identity();
            p.local_rot[1] = RotMat::rot_x(20.0 * (2.0 * s).sin());
            p.local_rot[2] = RotMat::rot_x(-20.0 * (2.0 * s).sin());
            p.local_rot[16] = RotMat::rot_z(10.0 * (2.0 * s).cos());
            p.root_trans = Vec3::new(0.9 * s, 0.92, 0.0);
            p
        })
        .collect();
    MotionSequence::new(fps, poses)
}

fn cmd_bench(cfg: &RunConfig, frames: usize, out: Option<&Path>) -> CmdResult {
    let rig = load_rig_or_builtin(cfg)?;
    let bundle = match &cfg.checkpoint {
        Some(path) => load_bundle(Path::new(path)).map_err(AppError::data)?,
        None => ModelBundle::new(cfg.hidden, cfg.layers, cfg.window, cfg.fps, cfg.seed),
    };
    let combo = DeviceCombo::from_id(&cfg.combo).map_err(AppError::data)?;
    let clip = bench_clip(600, cfg.fps);
    let readings = crate::synthesis::synthesize_readings(&rig, &clip).map_err(AppError::data)?;
    let mut state = EstimatorState::new(
        combo.clone(),
        CalibrationProfile::identity(&combo),
        &bundle,
        cfg.fusion(),
    );

    // Warm-up fills the window so the steady state is what gets timed.
    for raw in readings.iter().take(bundle.meta.window.min(readings.len())) {
        state.step(&bundle, &rig, raw).map_err(AppError::runtime)?;
    }
    let mut samples_ms = Vec::with_capacity(frames);
    for i in 0..frames {
        let raw = &readings[i % readings.len()];
        let start = Instant::now();
        state.step(&bundle, &rig, raw).map_err(AppError::runtime)?;
        samples_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    samples_ms.sort_by(f64::total_cmp);
    let mean = samples_ms.iter().sum::<f64>() / samples_ms.len() as f64;
    let pct = |p: f64| samples_ms[(((samples_ms.len() - 1) as f64) * p).round() as usize];
    let budget_ms = 1000.0 / 60.0;
    let report = json!({
        "frames": frames,
        "hidden": bundle.meta.hidden,
        "layers": bundle.meta.layers,
        "window": bundle.meta.window,
        "combo": combo.id(),
        "mean_ms": mean,
        "p50_ms": pct(0.50),
        "p99_ms": pct(0.99),
        "budget_ms": budget_ms,
        "p99_within_budget": pct(0.99) < budget_ms,
        "sustainable_fps": 1000.0 / mean,
    });
    println!("{}", serde_json::to_string_pretty(&report).expect("json"));
    if let Some(path) = out {
        std::fs::write(path, serde_json::to_string(&report).expect("json"))
            .map_err(AppError::runtime)?;
    }
    Ok(())
}

fn cmd_import(manifest: &Path, out: &Path) -> CmdResult {
    let seq = import_motion(manifest).map_err(AppError::data)?;
    save_motion(&seq, out).map_err(AppError::runtime)?;
    println!("wrote {} ({} frames at {} Hz)", out.display(), seq.len(), seq.fps);
    Ok(())
}

fn cmd_rig_info(cfg: &RunConfig) -> CmdResult {
    let rig = load_rig_or_builtin(cfg)?;
    println!("joints: {}", rig.joint_count());
    let rest = rig.rest_world_positions();
    for j in 0..rig.joint_count() {
        println!(
            "  {:>2} {:<12} parent {:>2}  rest ({:+.3}, {:+.3}, {:+.3})",
            j, rig.names[j], rig.parent[j], rest[j].x, rest[j].y, rest[j].z
        );
    }
    match &rig.vertices {
        Some(v) => println!("skin vertices: {}", v.len()),
        None => println!("skin vertices: none"),
    }
    println!("sensor sites:");
    for (loc, site) in &rig.location_map {
        println!(
            "  {:<8} joint {:>2} ({})  offset ({:+.3}, {:+.3}, {:+.3})",
            loc.id(),
            site.joint,
            rig.names[site.joint],
            site.offset.x,
            site.offset.y,
            site.offset.z
        );
    }
    Ok(())
}
