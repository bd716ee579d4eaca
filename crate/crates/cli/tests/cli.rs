use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fpnr_core::cascade::{encode_checkpoint, save_checkpoint, CascadeModel};
use fpnr_core::io::{read_image, write_image};
use fpnr_core::scenes::natural_scene;
use fpnr_core::sim::{apply_fpn, make_noise, FixedPatternNoise, GainGeometry, NoiseSpec};
use fpnr_core::Image;
use serde_json::Value;

fn fpnr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fpnr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn scene_file(dir: &Path, name: &str, seed: u64) -> PathBuf {
    let p = dir.join(name);
    write_image(&p, &natural_scene(48, 64, seed)).unwrap();
    p
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn simulate_without_noise_copies_the_input() {
    let d = tempfile::tempdir().unwrap();
    let input = scene_file(d.path(), "clean.pgm", 1);
    let output = d.path().join("out.pgm");
    let out = fpnr(&[
        "simulate",
        "--input",
        s(&input),
        "--output",
        s(&output),
        "--sigma-g",
        "0",
        "--sigma-o",
        "0",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read(&input).unwrap(),
        std::fs::read(&output).unwrap()
    );
    let m = json(&d.path().join("out.pgm.manifest.json"));
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["noise"]["sigma_g"], 0.0);
    assert_eq!(m["version"], fpnr_core::VERSION);
}

#[test]
fn simulate_is_reproducible_per_seed() {
    let d = tempfile::tempdir().unwrap();
    let input = scene_file(d.path(), "clean.pgm", 2);
    let run = |name: &str, seed: &str| {
        let p = d.path().join(name);
        let out = fpnr(&[
            "simulate",
            "--input",
            s(&input),
            "--output",
            s(&p),
            "--seed",
            seed,
            "--geometry",
            "per-pixel",
        ]);
        assert_eq!(code(&out), 0);
        std::fs::read(p).unwrap()
    };
    let a = run("a.f32", "9");
    assert_eq!(a, run("b.f32", "9"));
    assert_ne!(a, run("c.f32", "10"));
}

#[test]
fn identity_checkpoint_returns_the_input() {
    let d = tempfile::tempdir().unwrap();
    let input = d.path().join("frame.f32");
    write_image(&input, &natural_scene(16, 20, 3).map(|v| v + 0.25)).unwrap();
    let ckpt = d.path().join("id.ckpt");
    save_checkpoint(&CascadeModel::<f32>::new("1/8".parse().unwrap(), 4), &ckpt).unwrap();
    let output = d.path().join("out.f32");
    let feats = d.path().join("features");
    let out = fpnr(&[
        "correct",
        "--method",
        "cnn",
        "--input",
        s(&input),
        "--model",
        s(&ckpt),
        "--output",
        s(&output),
        "--dump-features",
        s(&feats),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read(&input).unwrap(),
        std::fs::read(&output).unwrap()
    );
    let gain: Image<f32> = read_image(&feats.join("frame_0000/gain.f32")).unwrap();
    assert!(gain.data().iter().all(|&g| g == 1.0));
    assert!(feats
        .join("frame_0000/gain.block0.spatial_mask.c00.f32")
        .is_file());
    assert!(json(&feats.join("frame_0000/channel_masks.json"))
        .get("offset.block4.channel_mask")
        .is_some());
}

#[test]
fn usage_and_validation_errors_have_distinct_codes() {
    let d = tempfile::tempdir().unwrap();
    let input = scene_file(d.path(), "f.pgm", 4);
    let output = d.path().join("o.pgm");
    let out = fpnr(&[
        "correct",
        "--method",
        "cnn",
        "--input",
        s(&input),
        "--output",
        s(&output),
    ]);
    assert_eq!(code(&out), 2);
    let out = fpnr(&[
        "correct",
        "--method",
        "two-point",
        "--input",
        s(&input),
        "--output",
        s(&output),
    ]);
    assert_eq!(code(&out), 2);
    assert_eq!(
        code(&fpnr(&[
            "correct",
            "--method",
            "bogus",
            "--input",
            s(&input),
            "--output",
            s(&output)
        ])),
        2
    );

    let cfg = d.path().join("tv.json");
    std::fs::write(&cfg, r#"{"lambda": 0.0}"#).unwrap();
    let out = fpnr(&[
        "correct",
        "--method",
        "tv",
        "--input",
        s(&input),
        "--output",
        s(&output),
        "--config",
        s(&cfg),
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::write(&cfg, r#"{"mu": 1.0}"#).unwrap();
    assert_eq!(
        code(&fpnr(&[
            "correct",
            "--method",
            "tv",
            "--input",
            s(&input),
            "--output",
            s(&output),
            "--config",
            s(&cfg)
        ])),
        3
    );

    let missing = d.path().join("nope.pgm");
    assert_eq!(
        code(&fpnr(&[
            "simulate",
            "--input",
            s(&missing),
            "--output",
            s(&output)
        ])),
        4
    );
    let garbage = d.path().join("bad.pgm");
    std::fs::write(&garbage, b"P5\n4 4\n255\nxx").unwrap();
    assert_eq!(
        code(&fpnr(&[
            "simulate",
            "--input",
            s(&garbage),
            "--output",
            s(&output)
        ])),
        4
    );
    assert!(!output.exists());
}

fn sensor(h: usize, w: usize) -> FixedPatternNoise<f64> {
    make_noise(&NoiseSpec::new(0.1, 8.0, GainGeometry::PerPixel, 11), h, w).unwrap()
}

#[test]
fn two_point_through_files_recovers_the_scene() {
    let d = tempfile::tempdir().unwrap();
    let (h, w) = (24, 30);
    let mut noise = sensor(h, w);
    let (gm, om) = (noise.gain.mean(), noise.offset.mean());
    noise.gain = noise.gain.map(|g| g / gm);
    noise.offset = noise.offset.map(|o| o - om);
    let put = |name: &str, im: &Image<f64>| {
        let p = d.path().join(name);
        write_image(&p, im).unwrap();
        p
    };
    let low = put(
        "low.f32",
        &apply_fpn(&Image::filled(h, w, 30.0), &noise).unwrap(),
    );
    let high = put(
        "high.f32",
        &apply_fpn(&Image::filled(h, w, 200.0), &noise).unwrap(),
    );
    let clean = natural_scene(h, w, 5);
    let frame = put("frame.f32", &apply_fpn(&clean, &noise).unwrap());
    let truth = put("truth.f32", &clean);
    let output = d.path().join("fixed.f32");
    let out = fpnr(&[
        "correct",
        "--method",
        "two-point",
        "--input",
        s(&frame),
        "--refs-low",
        s(&low),
        "--refs-high",
        s(&high),
        "--output",
        s(&output),
        "--truth",
        s(&truth),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    // the files hold f32 samples, so the recovery is exact to single precision
    let fixed: Image<f64> = read_image(&output).unwrap();
    for (a, b) in fixed.data().iter().zip(clean.data()) {
        assert!((a - b).abs() <= 1e-4 * b.abs().max(1.0), "{a} vs {b}");
    }
    let report = json(&d.path().join("fixed.f32.metrics.json"));
    assert!(report["corrected"][0]["psnr_db"].as_f64().unwrap() > 80.0);
}

#[test]
fn scene_based_sequence_writes_a_directory() {
    let d = tempfile::tempdir().unwrap();
    let scene = natural_scene(60, 60, 6);
    let noise = make_noise::<f64>(
        &NoiseSpec::new(0.08, 10.0, GainGeometry::StripeColumn, 1),
        32,
        32,
    )
    .unwrap();
    let mut inputs = Vec::new();
    let mut truths = Vec::new();
    for i in 0..6 {
        let clean = scene.crop(i * 3, i * 4, 32, 32).unwrap();
        let p = d.path().join(format!("f{i}.f32"));
        let t = d.path().join(format!("t{i}.f32"));
        write_image(&p, &apply_fpn(&clean, &noise).unwrap()).unwrap();
        write_image(&t, &clean).unwrap();
        inputs.push(p);
        truths.push(t);
    }
    let outdir = d.path().join("out");
    let mut args = vec![
        "correct",
        "--method",
        "fa",
        "--output",
        s(&outdir),
        "--input",
    ];
    args.extend(inputs.iter().map(|p| s(p)));
    args.push("--truth");
    args.extend(truths.iter().map(|p| s(p)));
    let out = fpnr(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for i in 0..6 {
        assert!(outdir.join(format!("f{i}.f32")).is_file());
    }
    let report = json(&outdir.join("correct.metrics.json"));
    assert_eq!(report["corrected"].as_array().unwrap().len(), 6);
    assert_eq!(
        json(&outdir.join("correct.manifest.json"))["details"]["solver"]["fa_variance_gain"],
        0.05
    );
}

#[test]
fn train_with_zero_epochs_saves_the_initialization() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("train.json");
    std::fs::write(
        &cfg,
        r#"{
            "dataset": {"count": 4, "sigma_g_range": [0.05, 0.15], "sigma_o_range": [5, 25], "seed": 1},
            "width_scale": "1/8",
            "model_seed": 12,
            "train": {"epochs": 0},
            "checkpoint": "model.ckpt"
        }"#,
    )
    .unwrap();
    let out = fpnr(&["train", "--config", s(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let saved = std::fs::read(d.path().join("model.ckpt")).unwrap();
    assert_eq!(
        saved,
        encode_checkpoint(&CascadeModel::<f32>::new("1/8".parse().unwrap(), 12))
    );
    assert_eq!(
        std::fs::read_to_string(d.path().join("model.ckpt.loss.csv")).unwrap(),
        "step,epoch,lr,loss\n"
    );
    let m = json(&d.path().join("model.ckpt.manifest.json"));
    assert_eq!(m["config"]["model_seed"], 12);
    assert_eq!(m["steps"], 0);

    std::fs::write(&cfg, r#"{"dataset": {"count": 1, "sigma_g_range": [0, 0], "sigma_o_range": [0, 0], "seed": 1}, "checkpoint": "x", "extra": 1}"#).unwrap();
    assert_eq!(code(&fpnr(&["train", "--config", s(&cfg)])), 3);
}

#[test]
fn short_training_run_writes_history() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("train.json");
    std::fs::write(
        &cfg,
        r#"{
            "dataset": {"count": 8, "sigma_g_range": [0.08, 0.08], "sigma_o_range": [10, 10], "patch_size": 16, "seed": 2},
            "width_scale": "1/8",
            "train": {"epochs": 1, "batch_size": 4, "threads": 2},
            "checkpoint": "m.ckpt",
            "loss_history": "loss.csv"
        }"#,
    )
    .unwrap();
    let out = fpnr(&["train", "--config", s(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read_to_string(d.path().join("loss.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
    assert!(fpnr_core::cascade::load_checkpoint::<f32>(&d.path().join("m.ckpt")).is_ok());
}

fn bench_config(dir: &Path, methods: &str, name: &str) -> PathBuf {
    let cfg = dir.join(format!("{name}.json"));
    let text = format!(
        r#"{{
            "sequence": {{"synthetic": {{"scene_seed": 3, "scene_height": 80, "scene_width": 80,
                          "frame_height": 48, "frame_width": 48, "frames": 8}}}},
            "settings": {{"sigma_g": [0.08, 0.12], "sigma_o": [5, 15], "seed": 4, "methods": [{methods}]}},
            "output_text": "{name}.txt",
            "output_csv": "{name}.csv"
        }}"#
    );
    std::fs::write(&cfg, text).unwrap();
    cfg
}

#[test]
fn bench_tables_are_deterministic_across_thread_counts() {
    let d = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: &str| {
        let cfg = bench_config(d.path(), r#""two-point", "nn", "tv""#, name);
        let out = Command::new(env!("CARGO_BIN_EXE_fpnr"))
            .args(["bench", "--config", s(&cfg)])
            .env("FPNR_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        (
            std::fs::read(d.path().join(format!("{name}.txt"))).unwrap(),
            std::fs::read(d.path().join(format!("{name}.csv"))).unwrap(),
        )
    };
    let a = run("a", "1");
    assert_eq!(a, run("b", "1"));
    assert_eq!(a, run("c", "3"));
    let text = String::from_utf8(a.0).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.lines().nth(1).unwrap().contains("two-point"));
    assert_eq!(json(&d.path().join("a.txt.manifest.json"))["frames"], 8);
}

#[test]
fn bench_with_corrupted_column_only() {
    let d = tempfile::tempdir().unwrap();
    let cfg = bench_config(d.path(), "", "base");
    let out = fpnr(&["bench", "--config", s(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(d.path().join("base.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().skip(1).all(|l| l.contains(",corrupted,")));
    let cfg = bench_config(d.path(), r#""cnn""#, "nomodel");
    assert_eq!(code(&fpnr(&["bench", "--config", s(&cfg)])), 2);
}

fn shipped(name: &str) -> Value {
    json(
        &Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../configs")
            .join(name),
    )
}

#[test]
fn shipped_solver_configs_are_the_defaults() {
    use fpnr_core::classical::SbSolverConfig;
    for (name, expected) in [
        ("nn.json", SbSolverConfig::nn()),
        ("fa.json", SbSolverConfig::fa()),
        ("tv.json", SbSolverConfig::tv()),
    ] {
        let cfg: SbSolverConfig = serde_json::from_value(shipped(name)).unwrap();
        assert_eq!(cfg, expected, "{name}");
    }
    let d = tempfile::tempdir().unwrap();
    let input = scene_file(d.path(), "f.pgm", 7);
    let tv = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tv.json");
    let out = fpnr(&[
        "correct",
        "--method",
        "tv",
        "--input",
        s(&input),
        "--output",
        s(&d.path().join("o.pgm")),
        "--config",
        s(&tv),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn shipped_run_configs_parse() {
    let d = tempfile::tempdir().unwrap();
    for name in ["train-desk.json", "train-full.json"] {
        let mut v = shipped(name);
        v["dataset"]["count"] = 2.into();
        v["train"]["max_steps"] = 0.into();
        v["checkpoint"] = "m.ckpt".into();
        v.as_object_mut().unwrap().remove("loss_history");
        let cfg = d.path().join(name);
        std::fs::write(&cfg, v.to_string()).unwrap();
        let out = fpnr(&["train", "--config", s(&cfg)]);
        assert_eq!(
            code(&out),
            0,
            "{name}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let mut v = shipped("bench-grid.json");
    v["sequence"]["synthetic"]["frames"] = 3.into();
    v["output_text"] = "t.txt".into();
    v["output_csv"] = "t.csv".into();
    let cfg = d.path().join("bench.json");
    std::fs::write(&cfg, v.to_string()).unwrap();
    let out = fpnr(&["bench", "--config", s(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read_to_string(d.path().join("t.txt"))
            .unwrap()
            .lines()
            .count(),
        11
    );
}
