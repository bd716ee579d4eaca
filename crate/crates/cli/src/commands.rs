use std::path::{Path, PathBuf};

use fpnr_core::bench::{run_bench, worker_threads, BenchTable, THREADS_ENV};
use fpnr_core::cascade::{
    history_csv, load_checkpoint, save_checkpoint, train_model, CascadeModel, ForwardOptions,
};
use fpnr_core::classical::{
    correct as apply_field, two_point_calibrate, SbSolverConfig, SceneCorrector, SceneMethod,
};
use fpnr_core::io::{read_image, write_image, write_raw_f32, ImageFormat};
use fpnr_core::metrics::MetricReport;
use fpnr_core::scenes::{bundled_images, natural_scene};
use fpnr_core::sim::{apply_fpn, gen_patch_dataset, make_noise, pan_path, NoiseSpec};
use fpnr_core::{Image, VERSION};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{config_dir, read_json, with_suffix, BenchRun, SequenceSource, TrainRun};
use crate::error::{CliError, CliResult};
use crate::{CorrectArgs, Method, SimulateArgs};

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::validation(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn manifest(command: &str, body: Value) -> Value {
    let mut m = json!({ "tool": "fpnr", "version": VERSION, "command": command });
    if let (Value::Object(m), Value::Object(b)) = (&mut m, body) {
        m.extend(b);
    }
    m
}

fn require_file(p: &Path) -> CliResult<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::io(format!("{}: no such file", p.display())))
    }
}

fn require_format(p: &Path) -> CliResult<()> {
    ImageFormat::from_path(p).map(|_| ()).ok_or_else(|| {
        CliError::validation(format!(
            "{}: unsupported image extension (use .pgm, .f32 or .raw)",
            p.display()
        ))
    })
}

fn require_parent(p: &Path) -> CliResult<()> {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() && !d.is_dir() => Err(CliError::io(format!(
            "{}: directory does not exist",
            d.display()
        ))),
        _ => Ok(()),
    }
}

pub fn simulate(a: &SimulateArgs) -> CliResult<()> {
    require_file(&a.input)?;
    require_format(&a.input)?;
    require_format(&a.output)?;
    require_parent(&a.output)?;
    let spec = NoiseSpec::new(a.sigma_g, a.sigma_o, a.geometry.into(), a.seed);
    spec.validate()?;
    let clean: Image<f64> = read_image(&a.input)?;
    let noise = make_noise(&spec, clean.height(), clean.width())?;
    let corrupted = apply_fpn(&clean, &noise)?;
    write_image(&a.output, &corrupted)?;
    write_json(
        &with_suffix(&a.output, ".manifest.json"),
        &manifest(
            "simulate",
            json!({ "input": a.input, "output": a.output, "noise": spec }),
        ),
    )?;
    log::info!("wrote {}", a.output.display());
    Ok(())
}

/// The method's default solver settings with the fields of `overrides` replaced.
fn solver_config(method: SceneMethod, overrides: Option<&Path>) -> CliResult<SbSolverConfig> {
    let base = method.default_config();
    let Some(path) = overrides else {
        return Ok(base);
    };
    let patch: Value = read_json(path)?;
    let Value::Object(patch) = patch else {
        return Err(CliError::validation(format!(
            "{}: expected a JSON object",
            path.display()
        )));
    };
    let mut merged = serde_json::to_value(base).expect("plain struct");
    if let Value::Object(m) = &mut merged {
        m.extend(patch);
    }
    serde_json::from_value(merged)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn output_paths(a: &CorrectArgs) -> CliResult<Vec<PathBuf>> {
    if a.inputs.len() == 1 && !a.output.is_dir() {
        require_format(&a.output)?;
        require_parent(&a.output)?;
        return Ok(vec![a.output.clone()]);
    }
    if a.output.exists() && !a.output.is_dir() {
        return Err(CliError::usage(format!(
            "{}: several inputs need an output directory",
            a.output.display()
        )));
    }
    let mut out = Vec::with_capacity(a.inputs.len());
    for p in &a.inputs {
        let name = p
            .file_name()
            .ok_or_else(|| CliError::usage(format!("{}: not a file path", p.display())))?;
        let target = a.output.join(name);
        if out.contains(&target) {
            return Err(CliError::usage(format!(
                "two inputs share the file name {}",
                name.to_string_lossy()
            )));
        }
        out.push(target);
    }
    Ok(out)
}

fn read_all(paths: &[PathBuf]) -> CliResult<Vec<Image<f64>>> {
    paths
        .iter()
        .map(|p| read_image(p).map_err(CliError::from))
        .collect()
}

pub fn correct(a: &CorrectArgs) -> CliResult<()> {
    match a.method {
        Method::Cnn if a.model.is_none() => {
            return Err(CliError::usage("--method cnn needs --model"))
        }
        Method::TwoPoint if a.refs_low.is_empty() || a.refs_high.is_empty() => {
            return Err(CliError::usage(
                "--method two-point needs --refs-low and --refs-high",
            ))
        }
        _ => {}
    }
    if a.dump_features.is_some() && a.method != Method::Cnn {
        return Err(CliError::usage(
            "--dump-features applies to --method cnn only",
        ));
    }
    if !a.truth.is_empty() && a.truth.len() != a.inputs.len() {
        return Err(CliError::usage(format!(
            "{} --truth frames for {} inputs",
            a.truth.len(),
            a.inputs.len()
        )));
    }
    let scene_method = match a.method {
        Method::Nn => Some(SceneMethod::Nn),
        Method::Fa => Some(SceneMethod::Fa),
        Method::Tv => Some(SceneMethod::Tv),
        _ => None,
    };
    if a.config.is_some() && scene_method.is_none() {
        return Err(CliError::usage(
            "--config applies to the scene-based methods nn, fa and tv",
        ));
    }
    let inputs_and_refs = a
        .inputs
        .iter()
        .chain(&a.refs_low)
        .chain(&a.refs_high)
        .chain(&a.truth);
    for p in inputs_and_refs.clone() {
        require_file(p)?;
        require_format(p)?;
    }
    for p in a.model.iter().chain(&a.config) {
        require_file(p)?;
    }
    let outputs = output_paths(a)?;
    let solver = match scene_method {
        Some(m) => {
            let cfg = solver_config(m, a.config.as_deref())?;
            m.check_config(&cfg)?;
            Some((m, cfg))
        }
        None => None,
    };

    let frames = read_all(&a.inputs)?;
    let (h, w) = frames[0].dims();
    for f in &frames {
        frames[0].same_dims(f, "input sequence")?;
    }
    let mut details = json!({});
    let corrected: Vec<Image<f64>> = match a.method {
        Method::TwoPoint => {
            let tp = two_point_calibrate(&read_all(&a.refs_low)?, &read_all(&a.refs_high)?)?;
            if !tp.dead_pixels.is_empty() {
                log::warn!(
                    "{} dead pixels in the reference frames",
                    tp.dead_pixels.len()
                );
            }
            details = json!({ "refs_low": a.refs_low, "refs_high": a.refs_high, "dead_pixels": tp.dead_pixels });
            frames
                .iter()
                .map(|f| apply_field(f, &tp.field))
                .collect::<fpnr_core::Result<_>>()?
        }
        Method::Nn | Method::Fa | Method::Tv => {
            let (m, cfg) = solver.expect("scene method");
            details = json!({ "solver": cfg });
            SceneCorrector::new(m, cfg, h, w)?.run(&frames)?
        }
        Method::Cnn => {
            let path = a.model.as_ref().expect("checked");
            let model: CascadeModel<f32> = load_checkpoint(path)?;
            details = json!({ "model": path, "width_scale": model.width_scale() });
            let mut out = Vec::with_capacity(frames.len());
            for (i, f) in frames.iter().enumerate() {
                let opts = ForwardOptions {
                    trace: a.dump_features.is_some(),
                    ..Default::default()
                };
                let res = model.forward(&f.cast::<f32>().to_tensor(), opts)?;
                if let Some(dir) = &a.dump_features {
                    dump_features(&dir.join(format!("frame_{i:04}")), &res)?;
                }
                out.push(Image::from_tensor(&res.x_hat)?.cast());
            }
            out
        }
    };

    if outputs.len() > 1 {
        std::fs::create_dir_all(&a.output)
            .map_err(|e| CliError::io(format!("{}: {e}", a.output.display())))?;
    }
    for (img, path) in corrected.iter().zip(&outputs) {
        write_image(path, img)?;
    }
    let base = if outputs.len() > 1 {
        a.output.join("correct")
    } else {
        a.output.clone()
    };
    if !a.truth.is_empty() {
        let truth = read_all(&a.truth)?;
        let mut corrected_reports = Vec::new();
        let mut input_reports = Vec::new();
        for (i, ((t, c), y)) in truth.iter().zip(&corrected).zip(&frames).enumerate() {
            corrected_reports.push(MetricReport::measure(t, c, Some(i))?);
            input_reports.push(MetricReport::measure(t, y, Some(i))?);
        }
        let report_path = a
            .report
            .clone()
            .unwrap_or_else(|| with_suffix(&base, ".metrics.json"));
        write_json(
            &report_path,
            &json!({ "corrected": corrected_reports, "input": input_reports }),
        )?;
    }
    write_json(
        &with_suffix(&base, ".manifest.json"),
        &manifest(
            "correct",
            json!({ "method": format!("{:?}", a.method).to_lowercase(), "inputs": a.inputs, "outputs": outputs, "details": details }),
        ),
    )?;
    log::info!("corrected {} frame(s) with {:?}", corrected.len(), a.method);
    Ok(())
}

fn dump_features(dir: &Path, res: &fpnr_core::cascade::CascadeOutput<f32>) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
    write_raw_f32(&dir.join("gain.f32"), &Image::from_tensor(&res.gain)?)?;
    write_raw_f32(&dir.join("offset.f32"), &Image::from_tensor(&res.offset)?)?;
    let mut channel_masks = serde_json::Map::new();
    for (name, t) in &res.features {
        let s = t.shape();
        if s.len() == 4 {
            let plane = s[2] * s[3];
            for c in 0..s[1] {
                let data = t.data()[c * plane..(c + 1) * plane].to_vec();
                let img = Image::new(s[2], s[3], data)?;
                write_raw_f32(&dir.join(format!("{name}.c{c:02}.f32")), &img)?;
            }
        } else {
            channel_masks.insert(name.clone(), json!(t.data()));
        }
    }
    write_json(&dir.join("channel_masks.json"), &channel_masks)
}

fn capped_threads(requested: usize) -> usize {
    match std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    {
        Some(n) if n > 0 => requested.min(n),
        _ => requested,
    }
}

pub fn train(config: &Path) -> CliResult<()> {
    let mut run: TrainRun = read_json(config)?;
    run.resolve_paths(&config_dir(config));
    run.train.threads = capped_threads(run.train.threads);
    run.train.validate()?;
    for p in &run.sources {
        require_file(p)?;
        require_format(p)?;
    }
    require_parent(&run.checkpoint)?;
    let loss_path = run.loss_history.clone().expect("resolved");
    require_parent(&loss_path)?;

    let sources: Vec<Image<f32>> = if run.sources.is_empty() {
        bundled_images().iter().map(|i| i.cast()).collect()
    } else {
        run.sources
            .iter()
            .map(|p| read_image(p).map_err(CliError::from))
            .collect::<CliResult<_>>()?
    };
    let dataset = gen_patch_dataset(&sources, &run.dataset)?;
    let mut model = CascadeModel::<f32>::new(run.width_scale, run.model_seed);
    log::info!(
        "training {} parameters on {} patches",
        model.num_parameters(),
        dataset.len()
    );
    let history = train_model(&mut model, &dataset, &run.train)?;
    save_checkpoint(&model, &run.checkpoint)?;
    write_text(&loss_path, &history_csv(&history))?;
    write_json(
        &with_suffix(&run.checkpoint, ".manifest.json"),
        &manifest(
            "train",
            json!({ "config": run, "steps": history.len(), "final_loss": history.last().map(|r| r.loss) }),
        ),
    )?;
    log::info!("wrote {}", run.checkpoint.display());
    Ok(())
}

fn bench_frames(seq: &SequenceSource) -> CliResult<Vec<Image<f64>>> {
    match seq {
        SequenceSource::Frames(paths) => {
            if paths.is_empty() {
                return Err(CliError::validation("bench sequence has no frames"));
            }
            read_all(paths)
        }
        SequenceSource::Synthetic(s) => {
            if s.frame_height > s.scene_height || s.frame_width > s.scene_width || s.frames == 0 {
                return Err(CliError::validation(
                    "synthetic sequence needs frames > 0 and a window inside the scene",
                ));
            }
            let scene = natural_scene(s.scene_height, s.scene_width, s.scene_seed);
            pan_path(
                s.frames,
                s.scene_width - s.frame_width,
                s.scene_height - s.frame_height,
            )
            .into_iter()
            .map(|(dx, dy)| {
                scene
                    .crop(dy, dx, s.frame_height, s.frame_width)
                    .map_err(CliError::from)
            })
            .collect()
        }
    }
}

pub fn bench(config: &Path) -> CliResult<()> {
    let mut run: BenchRun = read_json(config)?;
    run.resolve_paths(&config_dir(config));
    if run
        .settings
        .methods
        .contains(&fpnr_core::bench::BenchMethod::Cnn)
        && run.checkpoint.is_none()
    {
        return Err(CliError::usage("bench method cnn needs a checkpoint"));
    }
    run.settings.validate(run.checkpoint.is_some())?;
    if let SequenceSource::Frames(paths) = &run.sequence {
        for p in paths {
            require_file(p)?;
            require_format(p)?;
        }
    }
    if let Some(p) = &run.checkpoint {
        require_file(p)?;
    }
    require_parent(&run.output_text)?;
    if let Some(p) = &run.output_csv {
        require_parent(p)?;
    }

    let frames = bench_frames(&run.sequence)?;
    let model: Option<CascadeModel<f32>> = run
        .checkpoint
        .as_ref()
        .map(|p| load_checkpoint(p))
        .transpose()?;
    let threads = worker_threads();
    let table: BenchTable = run_bench(&run.settings, &frames, model.as_ref(), threads)?;
    let text = table.to_text();
    write_text(&run.output_text, &text)?;
    if let Some(p) = &run.output_csv {
        write_text(p, &table.to_csv())?;
    }
    write_json(
        &with_suffix(&run.output_text, ".manifest.json"),
        &manifest("bench", json!({ "config": run, "frames": frames.len() })),
    )?;
    print!("{text}");
    Ok(())
}
