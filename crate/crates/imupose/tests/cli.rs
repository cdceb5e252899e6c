//! End-to-end runs of the `imupose` binary: synth -> train -> eval, plus
//! import, bench, rig-info, and the exit-code contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use imupose::rotmath::{RotMat, Vec3};
use imupose::skeleton::{save_motion, MotionSequence, Pose};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_imupose"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_clip(dir: &Path, name: &str, frames: usize) -> PathBuf {
    let fps = 60.0;
    let poses: Vec<Pose> = (0..frames)
        .map(|t| {
            let s = t as f64 / fps;
            let mut p = Pose::identity();
            p.local_rot[16] = RotMat::rot_z(18.0 * (2.0 * s).sin());
            p.local_rot[1] = RotMat::rot_x(10.0 * (1.5 * s).cos());
            p.root_trans = Vec3::new(0.4 * s, 0.92, 0.0);
            p
        })
        .collect();
    let seq = MotionSequence::new(fps, poses);
    let path = dir.join(name);
    save_motion(&seq, &path).unwrap();
    path
}

#[test]
fn synth_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let clip = write_clip(dir.path(), "clip.mpsq", 90);
    let dataset = dir.path().join("train.mpds");
    let ckpt = dir.path().join("model.mpck");

    // Synthesize with a small window so the 90-frame clip yields windows.
    let out = run(&[
        "synth",
        clip.to_str().unwrap(),
        "--out",
        dataset.to_str().unwrap(),
        "--combos",
        "lwrist,rpocket+lwrist",
        "--window",
        "24",
        "--stride",
        "12",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(manifest["window"], 24);
    // (90 - 24) / 12 + 1 = 6 windows per combo.
    assert_eq!(manifest["windows"], 12);
    assert_eq!(manifest["per_combo"]["lwrist"], 6);

    // Deterministic artifact bytes under a fixed seed.
    let dataset2 = dir.path().join("train2.mpds");
    let out = run(&[
        "synth",
        clip.to_str().unwrap(),
        "--out",
        dataset2.to_str().unwrap(),
        "--combos",
        "lwrist,rpocket+lwrist",
        "--window",
        "24",
        "--stride",
        "12",
    ]);
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(&dataset).unwrap(),
        std::fs::read(&dataset2).unwrap(),
        "synth output must be byte-identical across runs"
    );

    // Train a few heads briefly (both velocity variants for the ablation).
    let out = run(&[
        "train",
        dataset.to_str().unwrap(),
        "--head",
        "joint,velocity,velocity_imu",
        "--out",
        ckpt.to_str().unwrap(),
        "--hidden",
        "8",
        "--max-steps",
        "6",
        "--seed",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ckpt.exists());
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ckpt.with_extension("train.json")).unwrap())
            .unwrap();
    assert_eq!(record["joint"]["steps"], 6);

    // Resume continues the step count.
    let ckpt2 = dir.path().join("model2.mpck");
    let out = run(&[
        "train",
        dataset.to_str().unwrap(),
        "--head",
        "joint",
        "--out",
        ckpt2.to_str().unwrap(),
        "--init",
        ckpt.to_str().unwrap(),
        "--max-steps",
        "4",
        "--seed",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ckpt2.with_extension("train.json")).unwrap())
            .unwrap();
    assert_eq!(record["joint"]["total_steps"], 10, "resume continues the step count");

    // Evaluate with a per-combo breakdown.
    let report_path = dir.path().join("report.json");
    let out = run(&[
        "eval",
        clip.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--combos",
        "lwrist",
        "--window",
        "24",
        "--out",
        report_path.to_str().unwrap(),
        "--ablate-translation",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(report["combos"]["lwrist"]["mpjpe_cm"].as_f64().unwrap() >= 0.0);
    assert!(report["mean"]["mpjve_cm"].as_f64().is_some());
    assert!(report["ablation"]["imu_only_loss"].as_f64().is_some());
}

#[test]
fn eval_oracle_self_check_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let clip = write_clip(dir.path(), "clip.mpsq", 120);
    let report_path = dir.path().join("oracle.json");
    let out = run(&[
        "eval",
        clip.to_str().unwrap(),
        "--oracle",
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    // arccos at zero angle turns f64 rounding into ~1e-6 deg readings.
    assert!(report["mpjre_deg"].as_f64().unwrap() < 1e-5);
    assert!(report["mpjpe_cm"].as_f64().unwrap() < 1e-9);
    assert!(report["root_translation_error_cm"].as_f64().unwrap() < 1e-9);
}

#[test]
fn bench_small_model_is_fast_and_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("bench.json");
    // Near-minimal hidden size: the lower-bound sanity check.
    let out = run(&[
        "bench",
        "--frames",
        "150",
        "--hidden",
        "2",
        "--window",
        "12",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(report["frames"], 150);
    assert!(report["mean_ms"].as_f64().unwrap() < 1.0, "tiny model must be sub-millisecond");
    for key in ["p50_ms", "p99_ms", "budget_ms", "p99_within_budget", "sustainable_fps"] {
        assert!(!report[key].is_null(), "stable key {key}");
    }
}

#[test]
fn import_converts_manifested_arrays() {
    use byteorder::{LittleEndian, WriteBytesExt};
    let dir = tempfile::tempdir().unwrap();
    let mut rots = Vec::new();
    let mut trans = Vec::new();
    let eye = [1.0f64, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    for f in 0..3 {
        for _ in 0..24 {
            for v in eye {
                rots.write_f64::<LittleEndian>(v).unwrap();
            }
        }
        for v in [0.0, 0.0, f as f64 * 0.5] {
            trans.write_f64::<LittleEndian>(v).unwrap();
        }
    }
    std::fs::write(dir.path().join("rots.bin"), rots).unwrap();
    std::fs::write(dir.path().join("trans.bin"), trans).unwrap();
    let manifest = serde_json::json!({
        "fps": 60.0,
        "frame_count": 3,
        "up_axis": "z",
        "rotation_layout": "rotmat_rowmajor",
        "units": "m",
        "dtype": "f64",
        "rotations": "rots.bin",
        "translations": "trans.bin",
    });
    let mpath = dir.path().join("clip.json");
    std::fs::write(&mpath, manifest.to_string()).unwrap();
    let out_clip = dir.path().join("clip.mpsq");
    let out = run(&["import", mpath.to_str().unwrap(), "--out", out_clip.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let seq = imupose::skeleton::load_motion(&out_clip).unwrap();
    // Source-z motion became +Y (up) motion.
    assert!((seq.frames[2].root_trans.y - 1.0).abs() < 1e-6);

    // Missing fps -> data error (exit 2) with a field diagnostic.
    let bad = serde_json::json!({
        "frame_count": 3,
        "rotations": "rots.bin",
        "translations": "trans.bin",
    });
    std::fs::write(&mpath, bad.to_string()).unwrap();
    let out = run(&["import", mpath.to_str().unwrap(), "--out", out_clip.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fps"));
}

#[test]
fn exit_codes_follow_the_contract() {
    // Usage error: unknown subcommand.
    let out = run(&["defragment"]);
    assert_eq!(out.status.code(), Some(1));

    // Usage error: eval without a checkpoint.
    let dir = tempfile::tempdir().unwrap();
    let clip = write_clip(dir.path(), "c.mpsq", 30);
    let out = run(&["eval", clip.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    // Data error: garbage motion file.
    let bad = dir.path().join("bad.mpsq");
    std::fs::write(&bad, b"nonsense").unwrap();
    let out = run(&["synth", bad.to_str().unwrap(), "--out", dir.path().join("d.mpds").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    // Data error: invalid config file.
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "fuse_lower = 2.0\n").unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "rig-info"]);
    assert_eq!(out.status.code(), Some(2));

    // Success.
    let out = run(&["rig-info"]);
    assert_eq!(out.status.code(), Some(0));
}
