//! The five subcommands. Each takes fully resolved settings, touches the
//! filesystem only through explicit paths, and classifies failures for the
//! exit code.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use camb_core::checks::run_standard_checks;
use camb_core::data::scene::{synth_scene, SceneSpec};
use camb_core::data::{load_checkpoint, read_pfm, read_ppm, save_checkpoint, write_pfm, write_ppm};
use camb_core::metrics::{aggregate, evaluate, MetricsReport, DEFAULT_MIN_VALID_DEPTH};
use camb_core::network::{predict, ModelParams};
use camb_core::train::TrainConfig;
use camb_core::{AdamConfig, AdamState, DepthSample, Tensor};

use crate::failure::{in_file, Failure};
use crate::settings::{Settings, DEFAULT_EVAL_COUNT, DEFAULT_TRAIN_COUNT};

/// Seed offset separating on-the-fly evaluation scenes from training scenes
/// generated under the same user seed.
const EVAL_SCENE_SEED_OFFSET: u64 = 1_000_000;

pub fn train(s: Settings) -> Result<(), Failure> {
    let dataset = acquire_dataset(&s, DEFAULT_TRAIN_COUNT, 0)?;
    let depth_range = max_depth(&dataset);
    let mut params = ModelParams::init(s.model_config(), s.seed).map_err(Failure::from)?;
    let mut state = AdamState::new(&params);
    let cfg = TrainConfig {
        steps: s.steps,
        batch_size: s.batch_size,
        adam: AdamConfig {
            lr: s.lr,
            ..AdamConfig::default()
        },
        loss: s.loss_config(depth_range),
        toggles: s.loss_toggles(),
        seed: s.seed,
        zeta: s.zeta,
        eta: s.eta,
    };

    let log = camb_core::train::train(&mut params, &mut state, &dataset, &cfg)
        .map_err(Failure::from)?;

    let checkpoint_path = s.checkpoint.clone().unwrap_or_else(|| PathBuf::from("model.ckpt"));
    save_checkpoint(&checkpoint_path, &params, Some(&state)).map_err(Failure::from)?;

    let log_path = s.out.clone().unwrap_or_else(|| PathBuf::from("loss_log.csv"));
    let mut text = String::from("step,total_loss,lambda,depth_loss,grad_loss\n");
    for row in &log {
        writeln!(
            text,
            "{},{},{},{},{}",
            row.step, row.total, row.lambda, row.depth, row.grad
        )
        .expect("writing to a string cannot fail");
    }
    fs::write(&log_path, text)?;

    if let Some(last) = log.last() {
        println!(
            "trained {} steps on {} samples; final total loss {:.6}",
            s.steps,
            dataset.len(),
            last.total
        );
    } else {
        println!("wrote initialization checkpoint (0 steps)");
    }
    println!("checkpoint: {}", checkpoint_path.display());
    println!("loss log: {}", log_path.display());
    Ok(())
}

pub fn eval(s: Settings) -> Result<(), Failure> {
    let dataset = acquire_dataset(&s, DEFAULT_EVAL_COUNT, EVAL_SCENE_SEED_OFFSET)?;

    let rows: Vec<(String, MetricsReport)> = if s.bypass_model {
        dataset
            .iter()
            .map(|sample| {
                let r = evaluate(&sample.depth, &sample.depth, DEFAULT_MIN_VALID_DEPTH)?;
                Ok((sample.id.clone(), r))
            })
            .collect::<Result<_, camb_core::Error>>()
            .map_err(Failure::from)?
    } else {
        let checkpoint_path = s.checkpoint.clone().ok_or_else(|| {
            Failure::Config("--checkpoint is required unless --bypass-model is set".into())
        })?;
        let (params, _) =
            load_checkpoint(&checkpoint_path).map_err(|e| in_file(e, &checkpoint_path))?;
        let mut rows = Vec::with_capacity(dataset.len());
        for sample in &dataset {
            let pred = predict_plane(&params, sample)?;
            let r = evaluate(&pred, &sample.depth, DEFAULT_MIN_VALID_DEPTH)
                .map_err(Failure::from)?;
            rows.push((sample.id.clone(), r));
        }
        rows
    };

    let agg = aggregate(&rows.iter().map(|(_, r)| *r).collect::<Vec<_>>())
        .map_err(Failure::from)?;
    let table = format_metrics_table(&rows, &agg);
    print!("{table}");
    if let Some(out) = &s.out {
        fs::write(out, &table)?;
        println!("metrics table: {}", out.display());
    }
    Ok(())
}

pub fn infer(s: Settings) -> Result<(), Failure> {
    let checkpoint_path = s
        .checkpoint
        .clone()
        .ok_or_else(|| Failure::Config("--checkpoint is required for infer".into()))?;
    let data_root = s
        .data_root
        .clone()
        .ok_or_else(|| Failure::Config("--data-root is required for infer".into()))?;
    let (params, _) =
        load_checkpoint(&checkpoint_path).map_err(|e| in_file(e, &checkpoint_path))?;

    let out_dir = s.out.clone().unwrap_or_else(|| PathBuf::from("predictions"));
    fs::create_dir_all(&out_dir)?;

    let ids = image_ids(&data_root)?;
    for id in &ids {
        let path = data_root.join(format!("{id}.ppm"));
        let image = read_ppm(&path).map_err(|e| in_file(e, &path))?;
        let pred3 = predict(&params, &image).map_err(Failure::from)?;
        let (h, w) = (image.shape()[0], image.shape()[1]);
        let pred = Tensor::new(vec![h, w], pred3.data().to_vec()).map_err(Failure::from)?;
        let path = out_dir.join(format!("{id}.pfm"));
        write_pfm(&path, &pred).map_err(Failure::from)?;
    }
    println!("wrote {} depth maps to {}", ids.len(), out_dir.display());
    Ok(())
}

pub fn synth(s: Settings) -> Result<(), Failure> {
    let out_dir = s.out.clone().unwrap_or_else(|| PathBuf::from("data"));
    let count = s.count.unwrap_or(DEFAULT_EVAL_COUNT);
    fs::create_dir_all(&out_dir)?;

    let mut manifest = String::new();
    for i in 0..count {
        let sample = make_scene(&s, s.seed + i as u64, i)?;
        write_ppm(&out_dir.join(format!("{}.ppm", sample.id)), &sample.image)
            .map_err(Failure::from)?;
        write_pfm(&out_dir.join(format!("{}.pfm", sample.id)), &sample.depth)
            .map_err(Failure::from)?;
        manifest.push_str(&sample.id);
        manifest.push('\n');
    }
    fs::write(out_dir.join("manifest.txt"), manifest)?;
    println!("wrote {count} sample pairs to {}", out_dir.display());
    Ok(())
}

pub fn gradcheck(s: Settings) -> Result<(), Failure> {
    let reports = run_standard_checks(s.seed).map_err(Failure::from)?;
    let mut failures = 0usize;
    for r in &reports {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<18} max rel err {:>10.3e}  tolerance {:.0e}  {status}",
            r.name, r.max_rel_err, r.tolerance
        );
        if !r.passed() {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(Failure::Numerical(format!(
            "{failures} of {} gradient checks failed",
            reports.len()
        )));
    }
    println!("all {} gradient checks passed", reports.len());
    Ok(())
}

fn make_scene(s: &Settings, seed: u64, index: usize) -> Result<DepthSample, Failure> {
    let mut sample = synth_scene(&SceneSpec {
        seed,
        height: s.height,
        width: s.width,
        n_shapes: s.n_shapes,
        depth_max: s.depth_max,
    })
    .map_err(Failure::from)?;
    sample.id = format!("scene{index:04}");
    Ok(sample)
}

/// Loads `<root>/<id>.ppm` + `<id>.pfm` pairs, or synthesizes scenes on the
/// fly when no data root is configured.
fn acquire_dataset(s: &Settings, default_count: usize, seed_offset: u64) -> Result<Vec<DepthSample>, Failure> {
    match &s.data_root {
        Some(root) => load_dataset(root),
        None => {
            let count = s.count.unwrap_or(default_count);
            if count == 0 {
                return Err(Failure::Config("--count must be at least 1".into()));
            }
            (0..count)
                .map(|i| make_scene(s, s.seed + seed_offset + i as u64, i))
                .collect()
        }
    }
}

fn load_dataset(root: &Path) -> Result<Vec<DepthSample>, Failure> {
    let ids = image_ids(root)?;
    let mut samples = Vec::with_capacity(ids.len());
    for id in ids {
        let ppm = root.join(format!("{id}.ppm"));
        let image = read_ppm(&ppm).map_err(|e| in_file(e, &ppm))?;
        let pfm = root.join(format!("{id}.pfm"));
        let depth = read_pfm(&pfm).map_err(|e| in_file(e, &pfm))?;
        if image.shape()[..2] != *depth.shape() {
            return Err(Failure::Io(format!(
                "sample {id}: image is {:?} but depth is {:?}",
                image.shape(),
                depth.shape()
            )));
        }
        samples.push(DepthSample { image, depth, id });
    }
    Ok(samples)
}

/// Sorted stems of the `.ppm` files directly under `root`.
fn image_ids(root: &Path) -> Result<Vec<String>, Failure> {
    let mut ids = Vec::new();
    let entries = fs::read_dir(root)
        .map_err(|e| Failure::Io(format!("cannot read {}: {e}", root.display())))?;
    for entry in entries {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "ppm") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    if ids.is_empty() {
        return Err(Failure::Io(format!(
            "no .ppm images under {}",
            root.display()
        )));
    }
    ids.sort();
    Ok(ids)
}

fn predict_plane(params: &ModelParams, sample: &DepthSample) -> Result<Tensor, Failure> {
    let pred3 = predict(params, &sample.image).map_err(Failure::from)?;
    let (h, w) = (sample.depth.shape()[0], sample.depth.shape()[1]);
    Tensor::new(vec![h, w], pred3.data().to_vec()).map_err(Failure::from)
}

/// SSIM dynamic range for a dataset: the largest ground-truth depth.
fn max_depth(dataset: &[DepthSample]) -> f64 {
    dataset
        .iter()
        .flat_map(|s| s.depth.data().iter().copied())
        .fold(1.0f64, f64::max)
}

fn format_metrics_table(rows: &[(String, MetricsReport)], agg: &MetricsReport) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<12} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "id", "d1", "d2", "d3", "RMSE", "log.rel", "abs.rel", "sq.rel"
    )
    .expect("writing to a string cannot fail");
    for (id, r) in rows.iter().chain(std::iter::once(&("aggregate".to_string(), *agg))) {
        writeln!(
            out,
            "{:<12} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            id, r.delta1, r.delta2, r.delta3, r.rmse, r.log_rel, r.abs_rel, r.sq_rel
        )
        .expect("writing to a string cannot fail");
    }
    out
}
