//! Scratch harness for sizing the training smoke test: trains candidate
//! configurations and prints loss trajectories, smoothed-curve monotonicity
//! for several window sizes, and held-out metrics for the default and
//! no-attention variants.

use camb_core::data::scene::{synth_scene, SceneSpec};
use camb_core::loss::{total_loss, LossConfig, LossToggles};
use camb_core::metrics::{aggregate, evaluate};
use camb_core::network::{predict, ModelConfig, ModelParams};
use camb_core::train::{moving_average, train, TrainConfig};
use camb_core::{AdamConfig, AdamState, Tensor};

fn make_scenes(base_seed: u64, count: usize, n_shapes: usize, depth_max: f64) -> Vec<camb_core::DepthSample> {
    (0..count)
        .map(|i| {
            synth_scene(&SceneSpec {
                seed: base_seed + i as u64,
                height: 32,
                width: 32,
                n_shapes,
                depth_max,
            })
            .unwrap()
        })
        .collect()
}

fn config(use_camb: bool, wide: bool) -> ModelConfig {
    ModelConfig {
        stage_channels: if wide { vec![16, 32, 64, 128] } else { vec![8, 16, 32, 64] },
        input_channels: 3,
        reduction: 4,
        p: 3.0,
        use_camb,
    }
}

fn stratify(
    scenes: Vec<camb_core::DepthSample>,
    params: &ModelParams,
    loss_cfg: &LossConfig,
    batch: usize,
) -> Vec<camb_core::DepthSample> {
    let mut scored: Vec<(f64, camb_core::DepthSample)> = scenes
        .into_iter()
        .map(|s| {
            let pred3 = predict(params, &s.image).unwrap();
            let (h, w) = (s.depth.shape()[0], s.depth.shape()[1]);
            let pred = Tensor::new(vec![h, w], pred3.data().to_vec()).unwrap();
            let l = total_loss(&s.depth, &pred, loss_cfg, LossToggles::default()).unwrap();
            (l, s)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n_batches = scored.len() / batch;
    let mut groups: Vec<Vec<camb_core::DepthSample>> = (0..n_batches).map(|_| Vec::new()).collect();
    for (rank, (_, s)) in scored.into_iter().enumerate() {
        groups[rank % n_batches].push(s);
    }
    groups.into_iter().flatten().collect()
}

fn held_out_metrics(params: &ModelParams, eval_set: &[camb_core::DepthSample]) -> Option<(f64, f64)> {
    let mut reports = Vec::new();
    for s in eval_set {
        let pred3 = predict(params, &s.image).unwrap();
        let (h, w) = (s.depth.shape()[0], s.depth.shape()[1]);
        let pred = Tensor::new(vec![h, w], pred3.data().to_vec()).unwrap();
        match evaluate(&pred, &s.depth, 1e-3) {
            Ok(r) => reports.push(r),
            Err(_) => return None,
        }
    }
    let agg = aggregate(&reports).unwrap();
    Some((agg.abs_rel, agg.rmse))
}

fn run(
    seed: u64,
    use_camb: bool,
    train_set: &[camb_core::DepthSample],
    eval_set: &[camb_core::DepthSample],
    depth_range: f64,
    wide: bool,
    tag: &str,
) {
    let mut params = ModelParams::init(config(use_camb, wide), seed).unwrap();
    let strat = std::env::var("CAL_STRAT").is_ok();
    let owned: Vec<camb_core::DepthSample>;
    let train_set: &[camb_core::DepthSample] = if strat {
        let cfg_l = LossConfig::default().with_depth_range(depth_range);
        owned = stratify(train_set.to_vec(), &params, &cfg_l, 8);
        &owned
    } else {
        train_set
    };
    let mut state = AdamState::new(&params);
    let beta: f64 = std::env::var("CAL_BETA").ok().and_then(|v| v.parse().ok()).unwrap_or(0.8);
    let mut loss_cfg = LossConfig::default().with_depth_range(depth_range);
    loss_cfg.beta = beta;
    let toggles = LossToggles {
        no_grad_loss: std::env::var("CAL_NOGRAD").is_ok(),
        no_ssim_weight: std::env::var("CAL_NOSSIM").is_ok(),
        ..Default::default()
    };
    let cfg = TrainConfig {
        steps: 300,
        batch_size: 8,
        adam: AdamConfig::default(),
        loss: loss_cfg,
        toggles,
        seed,
        zeta: 0.0,
        eta: 0.0,
    };

    let t0 = std::time::Instant::now();
    let log = train(&mut params, &mut state, train_set, &cfg).unwrap();
    let secs = t0.elapsed().as_secs_f64();

    let totals: Vec<f64> = log.iter().map(|r| r.total).collect();
    let mut monos = String::new();
    for w in [16usize, 24, 32, 48, 64] {
        let sm = moving_average(&totals, w).unwrap();
        let mono = sm.windows(2).skip(9).all(|p| p[1] < p[0]);
        monos.push_str(&format!(" w{w}:{}", if mono { "Y" } else { "n" }));
    }
    if let Ok(dump) = std::env::var("CAL_DUMP") {
        let rows: Vec<String> = totals.iter().map(|t| format!("{t}")).collect();
        std::fs::write(format!("{dump}-s{seed}-c{use_camb}.csv"), rows.join("\n")).unwrap();
    }
    let metrics = held_out_metrics(&params, eval_set);
    let (abs_rel, rmse) = metrics.unwrap_or((f64::NAN, f64::NAN));
    println!(
        "{tag} w{} seed {seed} camb {use_camb} L {depth_range}: {secs:.0}s mono{monos} heldout abs_rel {abs_rel:.3} rmse {rmse:.3}",
        if wide { "ide" } else { "nar" }
    );
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_shapes: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let depth_max: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let seeds: Vec<u64> = args
        .get(3)
        .map(|s| s.split(',').map(|t| t.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![5, 9, 10]);
    let train_set = make_scenes(1000, 64, n_shapes, depth_max);
    let eval_set = make_scenes(5000, 16, n_shapes, depth_max);
    let tag = format!("n{n_shapes}-d{depth_max}");
    println!("widths [16,32,64,128] n_shapes {n_shapes} depth_max {depth_max}");

    let wide = args.get(4).map(|s| s == "wide").unwrap_or(false);
    for &seed in &seeds {
        run(seed, true, &train_set, &eval_set, depth_max, wide, &tag);
        run(seed, false, &train_set, &eval_set, depth_max, wide, &tag);
    }
}
